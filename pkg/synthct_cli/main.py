import os

import click

from config import RunConfig
from models import FusionMethod, FusionPolicy, ModelKind, SynthCTError, TileSpec
from pipeline import TRANSLATOR_KINDS, Pipeline, parse_views


class SynthCTGroup(click.Group):
    """Maps library errors onto their exit codes instead of tracebacks."""

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except SynthCTError as e:
            click.secho(f"✗ {e}", fg='red', bold=True, err=True)
            ctx.exit(e.exit_code)


kind_option = click.option('-k', '--kind', type=click.Choice([k.value for k in ModelKind]),
                           default=ModelKind.PIX2PIX.value, show_default=True, help="Model kind.")
translator_option = click.option('-t', '--translator', type=click.Choice(TRANSLATOR_KINDS), default='model',
                                 show_default=True,
                                 help="Patch translator: trained model, phantom oracle, or identity.")


def tiling_options(f):
    f = click.option('--stride', type=click.INT, default=None, help="Tile stride (defaults to tiles.stride).")(f)
    f = click.option('--crop', type=click.INT, default=None, help="Tile crop (defaults to tiles.crop).")(f)
    f = click.option('-p', '--policy', type=click.Choice([m.value for m in FusionMethod]), default=None,
                     help="Fusion policy (defaults to the first of fusion.policies).")(f)
    return f


def _tiling(config: RunConfig, stride, crop, policy):
    base = config.tile_spec()
    spec = TileSpec(base.patch, base.stride if stride is None else stride, base.crop if crop is None else crop)
    fusion = config.fusion_policies()[0]
    if policy is not None:
        fusion = FusionPolicy(FusionMethod(policy), fusion.majority_frac, fusion.minority_frac)
    return spec, fusion


@click.group(cls=SynthCTGroup)
@click.option('-c', '--config', 'config_path', type=click.Path(), default=None,
              help="Run configuration file (key = value).")
@click.option('-s', '--seed', type=click.INT, default=None, help="Override the configured seed.")
@click.option('-j', '--jobs', type=click.INT, default=None, help="Cap on worker processes/threads.")
@click.option('-o', '--out', type=click.Path(), default=None, help="Output directory.")
@click.option('--debug', is_flag=True, default=False, help="Guard every network op against NaN/Inf.")
@click.pass_context
def synthct_cli(ctx, config_path, seed, jobs, out, debug):
    if debug:
        os.environ["SYNTHCT_DEBUG"] = "1"
    config = RunConfig.load(config_path, seed=seed, jobs=jobs, out=out)
    click.secho("\n⚙️ Run parameters:", fg="cyan", bold=True)
    click.echo(f"  • Config: {click.style(config_path or '<defaults>', fg='yellow')}")
    click.echo(f"  • Seed: {click.style(config['seed'], fg='yellow')}")
    click.echo(f"  • Jobs: {click.style(config['jobs'], fg='yellow')}")
    click.echo(f"  • Output: {click.style(str(config.out_dir), fg='yellow')}")
    click.echo(f"  • Config hash: {click.style(config.config_hash()[:12], fg='yellow')}")
    ctx.obj = Pipeline(config)


@synthct_cli.command()
@click.pass_obj
def phantom(pipeline: Pipeline):
    """Generate the train/val/test phantom splits."""
    pipeline.phantom()


@synthct_cli.command()
@kind_option
@click.pass_obj
def train(pipeline: Pipeline, kind):
    """Train one model per configured view."""
    pipeline.train(ModelKind(kind))


@synthct_cli.command()
@click.option('--case', 'case_id', required=True, help="Case id, e.g. test00.")
@kind_option
@translator_option
@tiling_options
@click.option('--views', default=None, help="Comma-separated views (defaults to train.views).")
@click.pass_obj
def synth(pipeline: Pipeline, case_id, kind, translator, stride, crop, policy, views):
    """Produce an sCT volume and its estimate count map for one case."""
    spec, fusion = _tiling(pipeline.config, stride, crop, policy)
    pipeline.synth(case_id, ModelKind(kind), translator, spec, fusion, parse_views(views, pipeline.config.views()))


@synthct_cli.command(name='eval')
@kind_option
@translator_option
@click.pass_obj
def evaluate(pipeline: Pipeline, kind, translator):
    """Region metrics over the test split."""
    pipeline.evaluate(ModelKind(kind), translator)


@synthct_cli.command()
@click.option('--case', 'case_id', required=True, help="Case id, e.g. test00.")
@kind_option
@translator_option
@tiling_options
@click.pass_obj
def drr(pipeline: Pipeline, case_id, kind, translator, stride, crop, policy):
    """Sagittal and coronal DRRs of the CT and of a synthesized sCT."""
    spec, fusion = _tiling(pipeline.config, stride, crop, policy)
    pipeline.drr(case_id, ModelKind(kind), translator, spec, fusion)


@synthct_cli.command()
@kind_option
@translator_option
@click.pass_obj
def sweep(pipeline: Pipeline, kind, translator):
    """Tiling, view-count, fusion and clip-policy comparison on the test split."""
    pipeline.sweep(ModelKind(kind), translator)


@synthct_cli.command()
@click.pass_obj
def report(pipeline: Pipeline):
    """Print the metric and sweep tables already written under the output directory."""
    pipeline.report()


if __name__ == '__main__':
    synthct_cli()
