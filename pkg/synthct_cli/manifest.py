import hashlib
import json
import time
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List

from models import CODE_VERSION

# the stages timed during synthesis, in pipeline order
SYNTH_STAGES = ('network_setup', 'sct_generation', 'fusion')


def file_digest(path, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


class StageTimer:
    """Accumulates wall-clock seconds per named stage."""

    def __init__(self):
        self.timings: Dict[str, float] = {}

    @contextmanager
    def stage(self, name: str):
        started = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - started

    def merge(self, other: "StageTimer"):
        for name, seconds in other.timings.items():
            self.timings[name] = self.timings.get(name, 0.0) + seconds


@dataclass
class RunManifest:
    command: str
    config_hash: str
    seed: int
    code_version: str = CODE_VERSION
    timings: Dict[str, float] = field(default_factory=dict)
    files: List[Dict[str, object]] = field(default_factory=list)
    notes: Dict[str, object] = field(default_factory=dict)

    def add_files(self, paths: Iterable[Path], root: Path):
        for path in sorted(Path(p) for p in paths):
            self.files.append({
                'path': str(path.relative_to(root)) if path.is_relative_to(root) else str(path),
                'bytes': path.stat().st_size,
                'sha256': file_digest(path),
            })

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifests" / f"{self.command}.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w') as f:
            json.dump(asdict(self), f, indent=2, sort_keys=True, default=str)
        return path
