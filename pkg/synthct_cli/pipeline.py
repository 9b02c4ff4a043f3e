"""Command orchestration: every CLI subcommand is one ``Pipeline`` method."""
import concurrent.futures
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import click
import numpy as np
import pandas as pd
import torch

from config import RunConfig
from fuse import EstimateAccumulator, accumulate_views, count_map, fuse
from gan.trainer import train_view
from gan.translator import Translator, translator_factory
from generator import DatasetGenerator, PhantomCase, find_case, load_case, load_cases
from grid import Volume, read_volume, write_volume
from manifest import RunManifest, StageTimer
from metrics import (constant_predictor_mae, drr, evaluate_case, expansion_for_spacing, region_mask, report,
                     write_pgm)
from models import (ClipPolicy, EmptyDatasetError, FusionMethod, FusionPolicy, MissingArtifactError, ModelKind,
                    RegionKind, RegionSpec, TileSpec, View)
from output import OutputFormatter
from phantom import apply_bias_field
from prep import BodyMask, build_body_mask, standardize
from sweep_visualization import SweepVisualization

TRANSLATOR_KINDS = ('model', 'oracle', 'identity')
DRR_VIEWS = (View.SAGITTAL, View.CORONAL)


def _train_view_task(args):
    """Standalone function that can be pickled for multiprocessing"""
    pairs, val_pairs, view, train_config, kind, augment, patch, out_dir = args
    torch.set_num_threads(1)
    result = train_view(pairs, view, train_config, kind, augment, patch, val_pairs, out_dir)
    return _summary(result)


def _summary(result) -> Dict[str, object]:
    # models hold torch generators, so workers hand back plain summaries
    return {
        'kind': result.kind.value,
        'view': result.view.value,
        'patches': result.patches,
        'parameters': sum(net.parameter_count() for net in result.model.nets.values()),
        'initial_val': float(result.log['val_loss'].iloc[0]),
        'final_val': float(result.log['val_loss'].iloc[-1]),
        'seconds': result.seconds,
        'checkpoint': str(result.checkpoint),
    }


def sweep_grid(patch: int) -> List[TileSpec]:
    """Naive tiling, then the overlapping stride/crop cells, scaled to ``patch``."""
    return [
        TileSpec(patch, patch, 0),
        TileSpec(patch, 3 * patch // 4, patch // 8),
        TileSpec(patch, patch // 4, patch // 8),
        TileSpec(patch, patch // 4, patch // 16),
    ]


def run_label(translator: str, kind: ModelKind) -> str:
    return kind.value if translator == "model" else translator


def parse_views(text: Optional[str], default: Sequence[View]) -> Tuple[View, ...]:
    if not text:
        return tuple(default)
    try:
        return tuple(View(name.strip().lower()) for name in text.split(",") if name.strip())
    except ValueError as e:
        raise click.BadParameter(str(e), param_hint="--views") from None


class Pipeline:

    def __init__(self, config: RunConfig):
        self.config = config
        self.out_dir = config.out_dir
        self.splits = config.phantom_splits()
        self.jobs = config['jobs']
        self.formatter = OutputFormatter(self.out_dir)
        self._model_translators: Dict[Tuple[ModelKind, View, int], Translator] = {}

    def _write_manifest(self, command: str, paths, timer: Optional[StageTimer] = None, **notes) -> Path:
        manifest = RunManifest(command, self.config.config_hash(), self.config['seed'],
                               timings=dict(timer.timings) if timer else {}, notes=notes)
        manifest.add_files(paths, self.out_dir)
        path = manifest.write(self.out_dir)
        click.secho(f"✓ Manifest written to {path}", fg='green')
        return path

    # ---- phantom ----------------------------------------------------------------

    def phantom(self) -> List[Path]:
        click.secho(f"Generating phantom splits under {self.out_dir}", fg='cyan', bold=True)
        written = DatasetGenerator(self.out_dir, self.splits, max_workers=self.jobs).generate()
        self._write_manifest("phantom", written,
                             cases={split: [cid for cid, _ in cases] for split, cases in self.splits.items()})
        return written

    # ---- preprocessing ----------------------------------------------------------

    def _prepared(self, mr: Volume, clip: Optional[ClipPolicy] = None) -> Tuple[Volume, BodyMask]:
        mask = build_body_mask(mr, self.config['prep.mask_dilate'])
        return standardize(mr, mask, clip or self.config.clip_policy()), mask

    def _training_pairs(self, split: str) -> List[Tuple[Volume, Volume]]:
        return [(self._prepared(case.mr)[0], case.ct) for case in load_cases(self.out_dir, self.splits, split)]

    # ---- train ------------------------------------------------------------------

    def train(self, kind: ModelKind) -> List[Dict[str, object]]:
        train_config = self.config.train_config()
        augment = self.config.augment_params()
        patch = self.config['tiles.patch']
        pairs = self._training_pairs('train')
        if not pairs:
            raise EmptyDatasetError("the train split is empty")
        val_pairs = self._training_pairs('val') or None
        views = train_config.views
        click.secho(f"Training {kind.value} on {len(pairs)} cases, views: "
                    f"{', '.join(v.value for v in views)}", fg='cyan', bold=True)

        summaries = []
        if self.jobs > 1 and len(views) > 1:
            tasks = [(pairs, val_pairs, view, train_config, kind, augment, patch, self.out_dir) for view in views]
            with concurrent.futures.ProcessPoolExecutor(max_workers=min(self.jobs, len(views))) as executor:
                summaries = list(executor.map(_train_view_task, tasks))
        else:
            for view in views:
                result = train_view(pairs, view, train_config, kind, augment, patch, val_pairs, self.out_dir,
                                    show_progress=True)
                summaries.append(_summary(result))

        self.formatter.print_training(summaries)
        written = [Path(s['checkpoint']) for s in summaries]
        written += [self.out_dir / "logs" / f"{kind.value}_{s['view']}.csv" for s in summaries]
        self._write_manifest(f"train_{kind.value}", written, summaries=summaries)
        return summaries

    # ---- synthesis --------------------------------------------------------------

    def _translators(self, case: PhantomCase, translator: str, kind: ModelKind, views: Sequence[View],
                     patch: int) -> Dict[View, Translator]:
        if translator not in TRANSLATOR_KINDS:
            raise click.BadParameter(f"unknown translator {translator!r}", param_hint="--translator")
        out = {}
        for view in views:
            if translator != "model":
                out[view] = translator_factory(translator, view, patch, labels=case.labels)
                continue
            key = (kind, view, patch)
            if key not in self._model_translators:
                self._model_translators[key] = translator_factory(
                    "model", view, patch, models_dir=self.out_dir / "models", model_kind=kind)
            out[view] = self._model_translators[key]
        return out

    def _view_estimates(self, mr: Volume, mask: BodyMask, translators: Dict[View, Translator],
                        spec: TileSpec) -> Dict[View, EstimateAccumulator]:
        return {view: accumulate_views(mr, mask, {view: t}, spec) for view, t in translators.items()}

    def synthesize(self, case: PhantomCase, translator: str, kind: ModelKind, spec: TileSpec,
                   policy: FusionPolicy, views: Sequence[View], timer: StageTimer,
                   mr: Optional[Volume] = None, clip: Optional[ClipPolicy] = None) -> Tuple[Volume, EstimateAccumulator]:
        """Standardize, translate every view and fuse; ``mr`` replaces the case MR when given."""
        with timer.stage('network_setup'):
            translators = self._translators(case, translator, kind, views, spec.patch)
            mr_std, mask = self._prepared(case.mr if mr is None else mr, clip)
        with timer.stage('sct_generation'):
            acc = accumulate_views(mr_std, mask, translators, spec, workers=self.jobs)
        with timer.stage('fusion'):
            sct = fuse(acc, policy, self.config['fusion.fill'])
        return sct, acc

    def synth_paths(self, case_id: str, label: str, spec: TileSpec, policy: FusionPolicy) -> Tuple[Path, Path]:
        stem = f"{case_id}_{label}_{spec.label}_{policy.label}"
        return self.out_dir / "synth" / f"{stem}.voxv", self.out_dir / "synth" / f"{stem}_count.voxv"

    def synth(self, case_id: str, kind: ModelKind, translator: str, spec: TileSpec, policy: FusionPolicy,
              views: Sequence[View]) -> Tuple[Path, Path]:
        case = load_case(self.out_dir, find_case(self.splits, case_id), case_id)
        label = run_label(translator, kind)
        click.secho(f"Synthesizing {case_id} with {label}, tiles {spec.label}, fusion {policy.label}", fg='cyan',
                    bold=True)
        timer = StageTimer()
        sct, acc = self.synthesize(case, translator, kind, spec, policy, views, timer)
        sct_path, count_path = self.synth_paths(case_id, label, spec, policy)
        write_volume(sct, sct_path)
        write_volume(count_map(acc), count_path)
        click.secho(f"✓ sCT written to {sct_path} ({acc.total} estimates)", fg='green')
        self.formatter.print_timings(timer.timings)
        self._write_manifest("synth", [sct_path, count_path], timer, case=case_id, label=label,
                             tilespec=spec.label, policy=policy.label)
        return sct_path, count_path

    # ---- eval -------------------------------------------------------------------

    def _metric_masks(self, case: PhantomCase) -> Tuple[np.ndarray, int]:
        body = build_body_mask(case.mr, 0).as_bool()
        return body, expansion_for_spacing(case.ct.spacing, self.config['metrics.expand_limit_mm'])

    def evaluate(self, kind: ModelKind, translator: str = "model") -> pd.DataFrame:
        cases = load_cases(self.out_dir, self.splits, 'test')
        if not cases:
            raise EmptyDatasetError("the test split is empty")
        spec = self.config.tile_spec()
        views = self.config.views()
        label = run_label(translator, kind)
        click.secho(f"Evaluating {label} on {len(cases)} test cases, tiles {spec.label}", fg='cyan', bold=True)

        timer = StageTimer()
        rows, baselines = [], {}
        for case in cases:
            body, expand = self._metric_masks(case)
            with timer.stage('network_setup'):
                translators = self._translators(case, translator, kind, views, spec.patch)
                mr_std, mask = self._prepared(case.mr)
            with timer.stage('sct_generation'):
                acc = accumulate_views(mr_std, mask, translators, spec, workers=self.jobs)
            for policy in self.config.fusion_policies():
                with timer.stage('fusion'):
                    sct = fuse(acc, policy, self.config['fusion.fill'])
                rows.extend(evaluate_case(case.case_id, case.ct, sct, body, expand, label, policy.label,
                                          spec.label))
            for region in (RegionSpec.body(expand), RegionSpec.bone(expand), RegionSpec.air(expand)):
                m = region_mask(case.ct, body, region)
                if (m.values > 0).any():
                    baselines[f"{case.case_id}/{region.kind.value}"] = constant_predictor_mae(case.ct, m)

        frame = report(rows)
        self.formatter.print_metrics(frame, baselines)
        self.formatter.print_timings(timer.timings)
        path = self.formatter.save_to_csv(frame, f"metrics/eval_{label}.csv")
        self._write_manifest(f"eval_{label}", [path], timer, constant_baseline_mae=baselines)
        return frame

    # ---- drr --------------------------------------------------------------------

    def drr(self, case_id: str, kind: ModelKind, translator: str, spec: TileSpec,
            policy: FusionPolicy) -> List[Path]:
        case = load_case(self.out_dir, find_case(self.splits, case_id), case_id)
        sct_path, _ = self.synth_paths(case_id, run_label(translator, kind), spec, policy)
        if not sct_path.exists():
            raise MissingArtifactError(f"sCT for {case_id} (run `synth` first)", sct_path)
        sct = read_volume(sct_path)
        written = []
        for source, volume in (('ct', case.ct), ('sct', sct)):
            for view in DRR_VIEWS:
                path = self.out_dir / "drr" / f"{case_id}_{source}_{view.value}.pgm"
                write_pgm(path, drr(volume, view))
                written.append(path)
        click.secho(f"✓ Wrote {len(written)} DRRs under {self.out_dir / 'drr'}", fg='green')
        self._write_manifest("drr", written, case=case_id, sct=str(sct_path))
        return written

    # ---- sweep ------------------------------------------------------------------

    def _body_errors(self, case: PhantomCase, sct: Volume) -> Tuple[float, float]:
        body, expand = self._metric_masks(case)
        rows = evaluate_case(case.case_id, case.ct, sct, body, expand)
        row = next(r for r in rows if r.region == RegionKind.BODY)
        return row.mae, row.me

    def sweep(self, kind: ModelKind, translator: str = "model") -> Dict[str, pd.DataFrame]:
        cases = load_cases(self.out_dir, self.splits, 'test')
        if not cases:
            raise EmptyDatasetError("the test split is empty")
        patch = self.config['tiles.patch']
        grid = sweep_grid(patch)
        fusion_spec = grid[2]
        config_views = self.config.views()
        view_sets = {'axial': (View.AXIAL,)}
        if config_views != (View.AXIAL,):
            view_sets['+'.join(v.value for v in config_views)] = config_views
        policies = self.config.fusion_policies()
        all_policies = [FusionPolicy(m, self.config['fusion.majority_frac'], self.config['fusion.minority_frac'])
                        for m in FusionMethod]
        label = run_label(translator, kind)
        fill = self.config['fusion.fill']
        click.secho(f"Sweeping {len(grid)} tilings x {len(view_sets)} view sets x {len(policies)} policies "
                    f"on {len(cases)} test cases", fg='cyan', bold=True)

        timer = StageTimer()
        cells: Dict[Tuple[str, str, str], List[Tuple[float, float]]] = {}
        fusion_cells: Dict[str, List[Tuple[float, float]]] = {}
        with click.progressbar(length=len(cases) * len(grid), label="Sweeping", show_pos=True) as bar:
            for case in cases:
                with timer.stage('network_setup'):
                    translators = self._translators(case, translator, kind, config_views + (View.AXIAL,), patch)
                    mr_std, mask = self._prepared(case.mr)
                for spec in grid:
                    with timer.stage('sct_generation'):
                        per_view = self._view_estimates(mr_std, mask, translators, spec)
                    for set_name, views in view_sets.items():
                        acc = EstimateAccumulator(mr_std.dims, mr_std.spacing)
                        for view in views:
                            acc.merge(per_view[view])
                        wanted = all_policies if spec == fusion_spec and views == config_views else policies
                        for policy in wanted:
                            with timer.stage('fusion'):
                                sct = fuse(acc, policy, fill)
                            errors = self._body_errors(case, sct)
                            if policy in policies:
                                cells.setdefault((spec.label, set_name, policy.label), []).append(errors)
                            if wanted is all_policies:
                                fusion_cells.setdefault(policy.label, []).append(errors)
                    bar.update(1)

        specs = {spec.label: spec for spec in grid}
        sweep_df = pd.DataFrame([
            {'tilespec': tl, 'scaled_label': specs[tl].scaled_label(), 'stride': specs[tl].stride,
             'crop': specs[tl].crop, 'views': vs, 'policy': pl, **self._cell_means(errors)}
            for (tl, vs, pl), errors in cells.items()])
        fusion_df = pd.DataFrame([{'tilespec': fusion_spec.label, 'policy': pl, **self._cell_means(errors)}
                                  for pl, errors in fusion_cells.items()])
        clip_timer = StageTimer()
        clip_df = self._clip_table(cases, translator, kind, clip_timer)
        self.formatter.print_timings(clip_timer.timings, title="Clip Table Timings")
        timer.merge(clip_timer)

        viz = SweepVisualization(sweep_df, clip_df, fusion_df, self.out_dir / "sweep", label, self.formatter.console)
        written = viz.save_tables()
        plot = viz.visualize()
        if plot:
            written.append(Path(plot))
        self.formatter.print_timings(timer.timings)
        self._write_manifest(f"sweep_{label}", written, timer)
        return {'sweep': sweep_df, 'clip': clip_df, 'fusion': fusion_df}

    @staticmethod
    def _cell_means(errors: List[Tuple[float, float]]) -> Dict[str, object]:
        values = np.asarray(errors, dtype=np.float64)
        return {'body_mae_hu': float(values[:, 0].mean()), 'body_me_hu': float(values[:, 1].mean()),
                'cases': len(errors)}

    def _clip_table(self, cases: List[PhantomCase], translator: str, kind: ModelKind,
                    timer: StageTimer) -> pd.DataFrame:
        """Dynamic vs static clipping, plus dynamic clipping of MR that still carries a bias field."""
        spec = self.config.tile_spec()
        policy = self.config.fusion_policies()[0]
        views = self.config.views()
        seeds = {cid: phantom.seed for cid, phantom in self.splits['test']}
        dynamic = ClipPolicy.dynamic(self.config['clip.percentile'])
        variants = [
            (dynamic.label, 'corrected', dynamic, False),
            (ClipPolicy.static(self.config['clip.value']).label, 'corrected',
             ClipPolicy.static(self.config['clip.value']), False),
            (dynamic.label, 'bias_field', dynamic, True),
        ]
        rows = []
        for clip_label, mr_label, clip, biased in variants:
            errors = []
            for case in cases:
                mr = apply_bias_field(case.mr, seeds[case.case_id]) if biased else case.mr
                sct, _ = self.synthesize(case, translator, kind, spec, policy, views, timer, mr=mr, clip=clip)
                errors.append(self._body_errors(case, sct))
            rows.append({'clip': clip_label, 'mr': mr_label, **self._cell_means(errors)})
        return pd.DataFrame(rows)

    # ---- report -----------------------------------------------------------------

    def report(self) -> List[Path]:
        found = sorted((self.out_dir / "metrics").glob("eval_*.csv")) + sorted((self.out_dir / "sweep").glob("*.csv"))
        if not found:
            raise MissingArtifactError("metric tables (run `eval` or `sweep` first)", self.out_dir / "metrics")
        self.formatter.print_header(f"synthct report: {self.out_dir}")
        self.formatter.print_config(self.config.canonical_text(), self.config.config_hash())
        for path in found:
            self.formatter.print_frame(pd.read_csv(path), path.relative_to(self.out_dir).as_posix())
        for path in sorted((self.out_dir / "manifests").glob("*.json")):
            click.secho(f"  • manifest: {path.relative_to(self.out_dir)}", fg='cyan')
        self._write_manifest("report", found)
        return found
