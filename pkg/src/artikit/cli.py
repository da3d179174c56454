"""Command-line interface.

Every pipeline stage has its own subcommand reading a bundle directory (or a
dataset of bundles) and an output directory shared across stages::

    artikit smooth DATA --out OUT
    artikit localize DATA --out OUT
    artikit lines DATA --out OUT
    artikit manhattan DATA --out OUT
    artikit prompts DATA --out OUT
    artikit infer DATA --out OUT --reasoner answers.json
    artikit aggregate DATA --out OUT
    artikit eval DATA --out OUT

``artikit run DATA --out OUT`` chains all of them and writes the same files.
Exit status is 0 when no clip errored (rejections are not errors), 1 when
some clip errored and 2 on invalid input.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import click

from . import pipeline, synth
from .core.config import Config
from .core.io import dump_json, write_clip_bundle
from .errors import ArtikitError, SchemaError
from .evaluation import dump_ground_truth

SEED_ENV = "ARTIKIT_SEED"

log = logging.getLogger("artikit")


def _env_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise click.UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def load_config(path=None):
    """Defaults, overridden by ``path`` field by field, then by ``ARTIKIT_SEED``."""
    cfg = Config.from_json(path) if path else Config()
    seed = _env_seed()
    return cfg.replace(seed=seed) if seed is not None else cfg


def _fail(exc):
    click.echo(f"artikit: {exc}", err=True)
    sys.exit(2)


def _finish(man):
    bad = {k: v for k, v in man.clips.items() if v.startswith("error")}
    counts = {}
    for v in man.clips.values():
        key = v.split(":", 1)[0]
        counts[key] = counts.get(key, 0) + 1
    click.echo(", ".join(f"{k}: {n}" for k, n in sorted(counts.items())) or "no clips")
    for cid, status in sorted(bad.items()):
        click.echo(f"{cid}: {status}", err=True)
    sys.exit(1 if bad else 0)


# shared options -----------------------------------------------------------------

def common(f):
    f = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
                     help="JSON file overriding configuration fields.")(f)
    f = click.option("--jobs", "-j", type=click.IntRange(min=1), default=1, show_default=True,
                     help="Worker processes for per-clip work.")(f)
    f = click.option("--out", "-o", "out", type=click.Path(file_okay=False), required=True,
                     help="Output directory shared by all stages.")(f)
    f = click.option("--bundle", "bundle_alias", type=click.Path(exists=True), expose_value=False,
                     callback=_store_bundle, is_eager=True,
                     help="Bundle or dataset directory (alternative to DATA).")(f)
    f = click.argument("data", type=click.Path(exists=True), required=False,
                       callback=_resolve_data)(f)
    return f


def _store_bundle(ctx, param, value):
    ctx.meta["bundle"] = value


def _resolve_data(ctx, param, value):
    alias = ctx.meta.get("bundle")
    if value and alias and Path(value) != Path(alias):
        raise click.UsageError("give the input either as DATA or with --bundle, not both")
    value = value or alias
    if not value:
        raise click.UsageError("missing input: DATA or --bundle DIR")
    return value


def scope_option(f):
    return click.option("--scope", type=click.Choice(pipeline.SCOPES), default="scene",
                        show_default=True,
                        help="Pool the Manhattan frame per scene or per clip.")(f)


def reasoner_option(f):
    return click.option("--reasoner", type=click.Path(exists=True, dir_okay=False),
                        help="Injected reasoner answers (JSON).")(f)


def _workspace(data, out, config_path, jobs):
    return pipeline.Workspace(data, out, load_config(config_path), jobs)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("-v", "--verbose", count=True, help="More log output (repeatable).")
@click.version_option(package_name="artikit")
def main(verbose):
    """Articulation inference from egocentric perception bundles."""
    level = logging.WARNING - 10 * min(verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


# synthetic data -----------------------------------------------------------------

def _synth_one(args):
    i, out, params = args
    bundle, gt = synth.gen_clip(i, **params)
    write_clip_bundle(bundle, Path(out) / bundle.clip_id)
    return gt


@main.command("synth")
@click.option("--spec", "spec_path", type=click.Path(exists=True, dir_okay=False),
              help="JSON with n_clips, kind, seed, clips_per_scene and generator fields.")
@click.option("--out", "-o", type=click.Path(file_okay=False), required=True)
@click.option("--jobs", "-j", type=click.IntRange(min=1), default=1, show_default=True)
def synth_cmd(spec_path, out, jobs):
    """Generate a synthetic dataset of clip bundles plus gt.json."""
    try:
        spec = {}
        if spec_path:
            with open(spec_path) as fh:
                spec = json.load(fh)
            if not isinstance(spec, dict):
                raise SchemaError("synthetic spec must be a JSON object")
        n = int(spec.pop("n_clips", 20))
        params = {"kind": spec.pop("kind", "revolute"), "seed": int(spec.pop("seed", 0)),
                  "clips_per_scene": int(spec.pop("clips_per_scene", 1))}
        seed = _env_seed()
        if seed is not None:
            params["seed"] = seed
        known = {f.name for f in dataclasses.fields(synth.SyntheticSpec)} - {"seed", "kind"}
        unknown = sorted(set(spec) - known)
        if unknown:
            raise SchemaError(f"unknown synthetic spec field(s): {', '.join(unknown)}")
        for k, v in spec.items():
            params[k] = tuple(v) if isinstance(v, list) else v
        # validate once before spawning workers
        synth.gen_dataset(0, **params)
        Path(out).mkdir(parents=True, exist_ok=True)
        tasks = [(i, out, params) for i in range(n)]
        if jobs > 1 and n > 1:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                gts = list(ex.map(_synth_one, tasks))
        else:
            gts = [_synth_one(t) for t in tasks]
        dump_json(dump_ground_truth(gts), Path(out) / "gt.json")
    except (ArtikitError, ValueError, TypeError) as exc:
        _fail(exc)
    click.echo(f"wrote {n} clips to {out}")


# stages -------------------------------------------------------------------------

def _stage(data, out, config_path, jobs, steps, injected=None):
    try:
        ws = _workspace(data, out, config_path, jobs)
        ws.run_steps(steps, injected)
    except ArtikitError as exc:
        _fail(exc)
    _finish(ws.manifest())


@main.command("smooth")
@common
def smooth_cmd(data, out, jobs, config_path):
    """Smooth fingertip trajectories (artifacts/<clip>/traj.json)."""
    _stage(data, out, config_path, jobs, ("smooth",))


@main.command("localize")
@common
def localize_cmd(data, out, jobs, config_path):
    """Confident voxel region and view reselection (region.json, views.json)."""
    _stage(data, out, config_path, jobs, ("localize",))


@main.command("lines")
@common
def lines_cmd(data, out, jobs, config_path):
    """Lift 2D segments and fit 3D axis candidates (lines3d.json)."""
    _stage(data, out, config_path, jobs, ("lines",))


@main.command("manhattan")
@common
@scope_option
def manhattan_cmd(data, out, jobs, config_path, scope):
    """Per-frame normal triads and the pooled Manhattan frame (triads.json, frame.json)."""
    try:
        ws = _workspace(data, out, config_path, jobs)
        ws.run_steps(("triads",))
        ws.pool_frames(scope)
    except ArtikitError as exc:
        _fail(exc)
    _finish(ws.manifest())


@main.command("prompts")
@common
def prompts_cmd(data, out, jobs, config_path):
    """Reasoner prompt payloads (prompt.json per clip, prompts.json overall)."""
    try:
        ws = _workspace(data, out, config_path, jobs)
        ws.run_steps(("prompts",))
        payloads = [a.prompt for a in ws.artifacts() if a.prompt is not None]
        dump_json({"version": 1, "clips": payloads}, Path(out) / "prompts.json")
    except ArtikitError as exc:
        _fail(exc)
    _finish(ws.manifest())


@main.command("infer")
@common
@reasoner_option
def infer_cmd(data, out, jobs, config_path, reasoner):
    """Resolve the motion type and estimate each articulation (estimates/)."""
    from .reason import load_injected_answers

    try:
        injected = load_injected_answers(reasoner) if reasoner else None
    except (ArtikitError, OSError) as exc:
        _fail(exc)
    _stage(data, out, config_path, jobs, ("infer",), injected)


@main.command("aggregate")
@common
def aggregate_cmd(data, out, jobs, config_path):
    """Fuse clips of the same object per scene (scene.json)."""
    try:
        ws = _workspace(data, out, config_path, jobs)
        ws.aggregate()
    except ArtikitError as exc:
        _fail(exc)
    _finish(ws.manifest())


@main.command("eval")
@common
@click.option("--gt", type=click.Path(exists=True, dir_okay=False),
              help="Ground truth (default: DATA/gt.json).")
@click.option("--micro", is_flag=True, help="Average over clips instead of per-scene means.")
def eval_cmd(data, out, jobs, config_path, gt, micro):
    """Score estimates against ground truth (report.json, report.txt)."""
    try:
        ws = _workspace(data, out, config_path, jobs)
        gt = gt or pipeline.default_gt(data)
        if gt is None:
            raise ArtikitError("no ground truth: pass --gt or put gt.json in DATA")
        report = ws.evaluate(gt, micro)
    except ArtikitError as exc:
        _fail(exc)
    click.echo(report.table())


@main.command("run")
@common
@scope_option
@reasoner_option
@click.option("--gt", type=click.Path(exists=True, dir_okay=False),
              help="Ground truth (default: DATA/gt.json when present).")
@click.option("--micro", is_flag=True, help="Average over clips instead of per-scene means.")
@click.option("--dry-run", is_flag=True, help="Write the manifest only.")
@click.option("--plot", is_flag=True, help="Write OBJ exports of paths and axes to plots/.")
def run_cmd(data, out, jobs, config_path, scope, reasoner, gt, micro, dry_run, plot):
    """Run every stage end to end."""
    try:
        man = pipeline.run_pipeline(data, out, load_config(config_path), reasoner=reasoner,
                                    gt=gt, jobs=jobs, dry_run=dry_run, plot=plot, scope=scope,
                                    micro=micro)
    except (ArtikitError, OSError) as exc:
        _fail(exc)
    if not dry_run and (Path(out) / "report.txt").is_file():
        click.echo((Path(out) / "report.txt").read_text().rstrip())
    _finish(man)


if __name__ == "__main__":  # pragma: no cover
    main()
