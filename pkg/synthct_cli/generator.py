import concurrent.futures
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Tuple

import click

from grid import Volume, read_volume, write_volume
from models import ConfigError, MissingArtifactError, PhantomSpec
from phantom import generate_pair

VOLUME_ROLES = ('mr', 'ct', 'labels')


def _generate_case_task(args):
    """Standalone function that can be pickled for multiprocessing"""
    split_dir, case_id, spec = args
    mr, ct, labels = generate_pair(spec)
    paths = []
    for role, volume in zip(VOLUME_ROLES, (mr, ct, labels)):
        path = Path(split_dir) / f"{case_id}_{role}.voxv"
        write_volume(volume, path)
        paths.append(path)
    sidecar = Path(split_dir) / f"{case_id}.manifest.txt"
    fields = dict(case_id=case_id, **spec.to_dict())
    sidecar.write_text("".join(f"{key}={value}\n" for key, value in fields.items()))
    paths.append(sidecar)
    return case_id, paths


@dataclass
class PhantomCase:
    case_id: str
    split: str
    mr: Volume
    ct: Volume
    labels: Volume


class DatasetGenerator:

    def __init__(self, out_dir, splits: Dict[str, List[Tuple[str, PhantomSpec]]], max_workers: int = 1):
        self.root = Path(out_dir) / "phantoms"
        self.splits = splits
        self.max_workers = max_workers

    def generate(self) -> List[Path]:
        tasks = [(self.root / split, case_id, spec)
                 for split, cases in self.splits.items() for case_id, spec in cases]
        if not tasks:
            click.secho("No phantom cases configured!", fg='red', bold=True)
            return []
        for split in self.splits:
            (self.root / split).mkdir(parents=True, exist_ok=True)

        written = []
        with click.progressbar(length=len(tasks), label="Generating phantoms", show_pos=True,
                               bar_template='%(label)s  %(bar)s | %(info)s', fill_char='=', empty_char=' ') as bar:
            if self.max_workers > 1:
                with concurrent.futures.ProcessPoolExecutor(max_workers=self.max_workers) as executor:
                    futures = [executor.submit(_generate_case_task, task) for task in tasks]
                    for future in concurrent.futures.as_completed(futures):
                        bar.update(1)
                        written.extend(future.result()[1])
            else:
                for task in tasks:
                    written.extend(_generate_case_task(task)[1])
                    bar.update(1)
        click.secho(f"✓ Wrote {len(tasks)} phantom cases under {self.root}", fg='green')
        return sorted(written)


def case_paths(out_dir, split: str, case_id: str) -> Dict[str, Path]:
    root = Path(out_dir) / "phantoms" / split
    return {role: root / f"{case_id}_{role}.voxv" for role in VOLUME_ROLES}


def load_case(out_dir, split: str, case_id: str) -> PhantomCase:
    paths = case_paths(out_dir, split, case_id)
    for role, path in paths.items():
        if not path.exists():
            raise MissingArtifactError(f"{role} volume for {case_id} (run `phantom` first)", path)
    return PhantomCase(case_id, split, *(read_volume(paths[role]) for role in VOLUME_ROLES))


def load_cases(out_dir, splits: Dict[str, List[Tuple[str, PhantomSpec]]], split: str) -> List[PhantomCase]:
    return [load_case(out_dir, split, case_id) for case_id, _ in splits.get(split, [])]


def find_case(splits: Dict[str, List[Tuple[str, PhantomSpec]]], case_id: str) -> str:
    for split, cases in splits.items():
        if any(cid == case_id for cid, _ in cases):
            return split
    known = ", ".join(cid for cases in splits.values() for cid, _ in cases)
    raise ConfigError(f"unknown case {case_id!r}; configured cases: {known}")
