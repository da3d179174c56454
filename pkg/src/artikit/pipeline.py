"""End-to-end orchestration: smooth, localize, lines, Manhattan, reason, infer, score.

Per-clip work is split into steps (``smooth``, ``localize``, ``lines``,
``triads``, ``prompts``, ``infer``).  Between the per-clip steps the
Manhattan frame is pooled per scene (or per clip) from the stored triads.

On disk every step writes its outputs under ``artifacts/<clip>/`` and the
next step reads them back, both in ``run`` and in the stage-by-stage
subcommands, so the two produce identical files.  Clips are processed in
sorted order and results collected in that order, so outputs do not depend
on the number of workers.
"""

from __future__ import annotations

import json
import logging
import os
import re
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import lines3d, localize, manhattan, reason, trajectory
from .core.config import Config
from .core.io import dump_json, iter_bundle_dirs, load_clip_bundle
from .core.types import ClipBundle
from .errors import ArtikitError, NoInteractionError, RejectedEstimate, UnresolvedMotionType
from .evaluation import load_ground_truth, score_run
from .infer import ClipEstimate, aggregate_scene, group_clips, infer_clip

log = logging.getLogger(__name__)

SCOPES = ("scene", "clip")
FIRST_STEPS = ("smooth", "localize", "lines", "triads")
SECOND_STEPS = ("prompts", "infer")


def clip_seed(cfg: Config, clip_id: str) -> int:
    """Per-clip seed: the run seed mixed with a stable hash of the clip id."""
    return (cfg.seed * 1_000_003 + zlib.crc32(clip_id.encode())) % (2**31 - 1)


@dataclass
class ClipArtifacts:
    clip_id: str
    scene_id: str
    status: str = "ok"
    traj: trajectory.SmoothedTrajectory | None = None
    contact_frames: list = field(default_factory=list)
    region: localize.ConfidentRegion | None = None
    views: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    # world-frame triads: (frame indices, triads, per-axis weights)
    triads: tuple = ((), (), ())
    prompt_view: int | None = None
    presented: list = field(default_factory=list)
    prompt: dict | None = None
    answer: reason.ReasonerAnswer | None = None
    frame: manhattan.ManhattanFrame | None = None
    estimate: ClipEstimate | None = None
    warnings: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)


def _slug(text):
    return re.sub(r"[^a-z0-9]+", "-", str(text).lower()).strip("-")


def _status_for(exc):
    if isinstance(exc, NoInteractionError):
        return "rejected:no-interaction"
    if isinstance(exc, UnresolvedMotionType):
        return "rejected:motion-type-unresolved"
    if isinstance(exc, RejectedEstimate):
        return f"rejected:{_slug(exc.reason)}"
    return f"error:{exc}"


# stage helpers ----------------------------------------------------------------

def contact_frames_of(bundle: ClipBundle, traj: trajectory.SmoothedTrajectory):
    """Frame indices spanned by the retained contact run."""
    ts = np.array([fr.timestamp for fr in bundle.frames])
    lo, hi = traj.timestamps[0], traj.timestamps[-1]
    tol = 1e-6 * max(1.0, float(np.abs(ts).max()))
    return [int(i) for i in np.flatnonzero((ts >= lo - tol) & (ts <= hi + tol))]


def stage_smooth(bundle, cfg):
    return trajectory.smooth_fingertips(bundle.fingertips, cfg)


def stage_localize(bundle: ClipBundle, contact, cfg: Config, warnings):
    """Confident region and the reselected global views.

    Falls back to every depth frame when there is no cloud or the region
    comes out empty.
    """
    depth_frames = bundle.depth_frames()
    if bundle.cloud is None or not len(bundle.cloud):
        warnings.append("no point cloud: using every depth frame")
        return None, depth_frames
    flags = np.zeros(bundle.n_frames, dtype=bool)
    flags[contact] = True
    local = localize.select_local_frames(flags, cfg.n_local)
    masks = {fr.index: fr.mask.positive for fr in bundle.frames if fr.mask is not None}
    cloud = bundle.cloud
    if masks:
        cloud = localize.mask_filter_cloud(cloud, bundle.poses, bundle.intrinsics, masks)
    try:
        _, region = localize.localize(cloud, local, cfg)
    except ArtikitError as exc:
        warnings.append(f"localization failed ({exc}): using every depth frame")
        return None, depth_frames
    if not len(region):
        warnings.append("empty confident region: using every depth frame")
        return region, depth_frames
    views = localize.reselect_views(bundle.poses, bundle.intrinsics, region, depth_frames, cfg)
    if not views:
        warnings.append("no depth frame sees the confident region: using every depth frame")
        views = depth_frames
    return region, views


def stage_lines(bundle: ClipBundle, views, cfg: Config, seed):
    vs = set(views)
    segs = [s for s in bundle.lines if s.frame in vs]
    depth = {fr.index: fr.depth for fr in bundle.frames if fr.depth is not None and fr.index in vs}
    tracks = lines3d.lift_segments(segs, depth, bundle.intrinsics, bundle.poses, cfg.line_stride)
    _, merged = lines3d.merge_tracks_by_correspondence(segs, tracks)
    return lines3d.build_candidate_axes(merged, cfg, seed)


def stage_triads(bundle: ClipBundle, views, cfg: Config, seed):
    """Per-frame triads rotated into the world frame."""
    used, triads, weights = manhattan.frame_triads(bundle.normals, sorted(views), cfg.normal_k,
                                                   seed)
    world = [t @ bundle.poses[f].rotation.T for f, t in zip(used, triads)]
    return tuple(used), tuple(world), tuple(weights)


def present_candidates(bundle: ClipBundle, candidates, cfg: Config):
    """Mask-filter the candidates in the prompt view and keep the longest ``n_cand``."""
    view = reason.prompt_view(bundle)
    ids = list(range(len(candidates)))
    if view is not None:
        ids = reason.filter_candidates_by_mask(candidates, bundle.frames[view].mask,
                                               bundle.intrinsics, bundle.poses[view])
    presented = reason.select_top_candidates([candidates[i] for i in ids], cfg.n_cand, ids)
    return view, presented


def injection_for(bundle: ClipBundle, injected):
    if injected is not None and bundle.clip_id in injected:
        return injected[bundle.clip_id]
    if bundle.reasoner is not None:
        recs = reason.parse_injection(bundle.reasoner)
        return recs.get(bundle.clip_id)
    return None


# per-clip steps ------------------------------------------------------------------

def _step_smooth(bundle, art, cfg, injected):
    art.traj = stage_smooth(bundle, cfg)
    art.contact_frames = contact_frames_of(bundle, art.traj)


def _step_localize(bundle, art, cfg, injected):
    art.region, art.views = stage_localize(bundle, art.contact_frames, cfg, art.warnings)


def _step_lines(bundle, art, cfg, injected):
    art.candidates = stage_lines(bundle, art.views, cfg, clip_seed(cfg, bundle.clip_id))


def _step_triads(bundle, art, cfg, injected):
    art.triads = stage_triads(bundle, art.views, cfg, clip_seed(cfg, bundle.clip_id))


def _step_prompts(bundle, art, cfg, injected):
    art.prompt_view, art.presented = present_candidates(bundle, art.candidates, cfg)
    art.prompt = reason.build_prompt_payload(bundle, art.contact_frames, art.candidates,
                                             art.presented, art.prompt_view, cfg)


def _step_infer(bundle, art, cfg, injected):
    rec = injection_for(bundle, injected)
    art.answer = reason.resolve_answer(rec, art.traj, len(art.presented), cfg)
    art.estimate = infer_clip(bundle.clip_id, art.traj, art.answer, art.frame,
                              [(i, art.candidates[i]) for i in art.presented], cfg,
                              bundle.scene_id)


STEPS = {"smooth": _step_smooth, "localize": _step_localize, "lines": _step_lines,
         "triads": _step_triads, "prompts": _step_prompts, "infer": _step_infer}


def apply_step(name, bundle, art, cfg: Config, injected=None):
    """Run one step unless the clip already failed; failures set the status."""
    if art.status != "ok":
        return art
    t0 = time.perf_counter()
    try:
        STEPS[name](bundle, art, cfg, injected)
    except ArtikitError as exc:
        art.status = _status_for(exc)
    art.timings[name] = art.timings.get(name, 0.0) + time.perf_counter() - t0
    return art


def first_pass(bundle: ClipBundle, cfg: Config) -> ClipArtifacts:
    art = ClipArtifacts(bundle.clip_id, bundle.scene_id)
    for name in FIRST_STEPS:
        apply_step(name, bundle, art, cfg)
    return art


def pooled_frame(arts, cfg: Config):
    triads, weights = [], []
    for a in arts:
        _, t, w = a.triads
        triads += t
        weights += w
    if not triads:
        raise ArtikitError("degenerate Manhattan structure: no frame produced a triad")
    return manhattan.aggregate_manhattan(triads, None, weights, cfg.meanshift_bandwidth,
                                         cfg.manhattan_min_sep_deg)


def second_pass(bundle: ClipBundle, art: ClipArtifacts, cfg: Config, injected=None):
    for name in SECOND_STEPS:
        apply_step(name, bundle, art, cfg, injected)
    return art


def resolve_frames(arts, cfg: Config, scope="scene"):
    """Attach a Manhattan frame to every clip, pooled per scene or per clip."""
    if scope not in SCOPES:
        raise ArtikitError(f"scope must be one of {SCOPES}")
    groups = {}
    for a in arts:
        if a.status == "ok":
            groups.setdefault(a.scene_id if scope == "scene" else a.clip_id, []).append(a)
    for key in sorted(groups):
        try:
            frame = pooled_frame(groups[key], cfg)
        except ArtikitError as exc:
            for a in groups[key]:
                a.warnings.append(f"no Manhattan frame ({exc})")
            continue
        for a in groups[key]:
            a.frame = frame


def run_clips(bundles, cfg: Config, injected=None, scope="scene", jobs=1):
    """Run the pipeline on in-memory bundles; returns ClipArtifacts in input order."""
    bundles = list(bundles)
    if jobs > 1 and len(bundles) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            arts = list(ex.map(first_pass, bundles, [cfg] * len(bundles)))
    else:
        arts = [first_pass(b, cfg) for b in bundles]
    resolve_frames(arts, cfg, scope)
    return [second_pass(b, a, cfg, injected) for b, a in zip(bundles, arts)]


def scene_estimates(arts, cfg: Config):
    """Group detected clips per scene by region overlap and aggregate each group."""
    out = []
    by_scene = {}
    for a in arts:
        if a.estimate is not None:
            by_scene.setdefault(a.scene_id, []).append(a)
    for sid in sorted(by_scene):
        members = {a.clip_id: a for a in by_scene[sid]}
        regions = {cid: a.region for cid, a in members.items()}
        for gi, group in enumerate(group_clips(list(members), regions, cfg.scene_iou)):
            try:
                out.append(aggregate_scene([members[c].estimate for c in group],
                                           f"{sid}/{gi}"))
            except ArtikitError as exc:
                log.warning("scene %s group %d: %s", sid, gi, exc)
    return out


# serialization ------------------------------------------------------------------

def traj_to_dict(traj: trajectory.SmoothedTrajectory):
    return {"timestamps": traj.timestamps.tolist(), "positions": traj.positions.tolist(),
            "velocities": traj.velocities.tolist(),
            "gated": np.flatnonzero(traj.outlier_mask).tolist(),
            "source_indices": traj.source_indices.tolist()}


def traj_from_dict(d):
    pos = np.asarray(d["positions"], dtype=np.float64).reshape(-1, 3)
    n = pos.shape[0]
    gated = np.zeros(n, dtype=bool)
    gated[np.asarray(d.get("gated", []), dtype=np.int64)] = True
    return trajectory.SmoothedTrajectory(
        np.asarray(d["timestamps"], float), pos,
        np.asarray(d.get("velocities", np.zeros((n, 3))), float).reshape(-1, 3),
        np.zeros((n, 6, 6)), gated,
        np.asarray(d.get("source_indices", range(n)), dtype=np.int64))


def estimate_record(art: ClipArtifacts):
    return {"clip_id": art.clip_id, "scene_id": art.scene_id, "status": art.status,
            "estimate": None if art.estimate is None else art.estimate.to_dict()}


def write_plot(path, art: ClipArtifacts, half_length=0.5):
    """OBJ polyline of the contact path plus a segment along the estimated axis."""
    lines = ["# contact trajectory and estimated axis"]
    P = art.traj.positions
    for p in P:
        lines.append("v {:.6f} {:.6f} {:.6f}".format(*p))
    lines.append("l " + " ".join(str(i + 1) for i in range(len(P))))
    if art.estimate is not None:
        a = art.estimate.articulation
        for s in (-half_length, half_length):
            lines.append("v {:.6f} {:.6f} {:.6f}".format(*(a.origin + s * a.axis)))
        lines.append(f"l {len(P) + 1} {len(P) + 2}")
    Path(path).write_text("\n".join(lines) + "\n")


def _artifact_dir(root, clip_id):
    return Path(root) / "artifacts" / clip_id


def save_step(root, art: ClipArtifacts, step):
    """Write the outputs of ``step`` plus the clip status."""
    d = _artifact_dir(root, art.clip_id)
    d.mkdir(parents=True, exist_ok=True)
    ok = art.status == "ok"
    if step == "smooth" and ok:
        dump_json({**traj_to_dict(art.traj), "contact_frames": list(art.contact_frames)},
                  d / "traj.json")
    elif step == "localize" and ok:
        if art.region is not None:
            dump_json(art.region.to_dict(), d / "region.json")
        elif (d / "region.json").exists():
            (d / "region.json").unlink()
        dump_json({"views": list(art.views)}, d / "views.json")
    elif step == "lines" and ok:
        dump_json({"lines": [ln.to_dict() for ln in art.candidates]}, d / "lines3d.json")
    elif step == "triads" and ok:
        used, triads, weights = art.triads
        dump_json({"frames": list(used), "triads": [np.asarray(t).tolist() for t in triads],
                   "weights": [np.asarray(w).tolist() for w in weights]}, d / "triads.json")
    elif step == "frame":
        if art.frame is not None:
            dump_json(art.frame.to_dict(), d / "frame.json")
        elif (d / "frame.json").exists():
            (d / "frame.json").unlink()
    elif step == "prompts" and ok:
        dump_json({"prompt_view": art.prompt_view, "presented": list(art.presented),
                   "payload": art.prompt}, d / "prompt.json")
    elif step == "infer":
        if art.answer is not None:
            dump_json({"answer": art.answer.to_dict()}, d / "reasoning.json")
        est = Path(root) / "estimates"
        est.mkdir(exist_ok=True)
        dump_json(estimate_record(art), est / f"{art.clip_id}.json")
    dump_json({"clip_id": art.clip_id, "scene_id": art.scene_id, "status": art.status,
               "warnings": list(art.warnings)}, d / "status.json")


def _read(path):
    with open(path) as fh:
        return json.load(fh)


def load_artifacts(root, clip_id, scene_id="scene") -> ClipArtifacts:
    """Rebuild a clip's state from whatever steps have been saved."""
    d = _artifact_dir(root, clip_id)
    art = ClipArtifacts(clip_id, scene_id)
    if (d / "status.json").is_file():
        st = _read(d / "status.json")
        art.status, art.warnings = st["status"], list(st["warnings"])
        art.scene_id = st.get("scene_id", scene_id)
    if (d / "traj.json").is_file():
        t = _read(d / "traj.json")
        art.traj = traj_from_dict(t)
        art.contact_frames = list(t["contact_frames"])
    if (d / "region.json").is_file():
        art.region = localize.ConfidentRegion.from_dict(_read(d / "region.json"))
    if (d / "views.json").is_file():
        art.views = list(_read(d / "views.json")["views"])
    if (d / "lines3d.json").is_file():
        art.candidates = [lines3d.Line3D.from_dict(x) for x in _read(d / "lines3d.json")["lines"]]
    if (d / "triads.json").is_file():
        t = _read(d / "triads.json")
        art.triads = (tuple(t["frames"]), tuple(np.asarray(x, float) for x in t["triads"]),
                      tuple(np.asarray(x, float) for x in t["weights"]))
    if (d / "frame.json").is_file():
        art.frame = manhattan.ManhattanFrame.from_dict(_read(d / "frame.json"))
    if (d / "prompt.json").is_file():
        p = _read(d / "prompt.json")
        art.prompt_view, art.presented, art.prompt = p["prompt_view"], p["presented"], p["payload"]
    est = Path(root) / "estimates" / f"{clip_id}.json"
    if est.is_file():
        e = _read(est)["estimate"]
        art.estimate = None if e is None else ClipEstimate.from_dict(e)
    return art


# step -> (producing stage, file it must find)
_INPUTS = {"localize": ("smooth", "traj.json"), "lines": ("localize", "views.json"),
           "triads": ("localize", "views.json"), "prompts": ("lines", "lines3d.json"),
           "infer": ("prompts", "prompt.json")}


def _clip_worker(args):
    """Load one bundle and its saved state, run ``steps`` with save/reload between them."""
    path, root, steps, cfg, injected = args
    t0 = time.perf_counter()
    try:
        bundle = load_clip_bundle(path)
    except ArtikitError as exc:
        art = ClipArtifacts(Path(path).name, "scene", status=f"error:{exc}")
        save_step(root, art, "status")
        return art.clip_id, art.scene_id, art.status, art.warnings, {"load": 0.0}
    art = load_artifacts(root, bundle.clip_id, bundle.scene_id)
    timings = {"load": time.perf_counter() - t0}
    for step in steps:
        need = _INPUTS.get(step)
        if art.status == "ok" and need and not (_artifact_dir(root, art.clip_id) / need[1]).is_file():
            art.status = f"error:stage {step} needs the outputs of stage {need[0]}"
        try:
            apply_step(step, bundle, art, cfg, injected)
        except Exception as exc:  # noqa: BLE001 - a bug in one clip must not sink the run
            log.exception("clip %s: step %s crashed", bundle.clip_id, step)
            art.status = f"error:{type(exc).__name__}: {exc}"
        save_step(root, art, step)
        timings[step] = art.timings.get(step, 0.0)
        # continue from the saved state so that split and fused runs agree
        art = load_artifacts(root, bundle.clip_id, bundle.scene_id)
    return art.clip_id, art.scene_id, art.status, art.warnings, timings


def _map(fn, tasks, jobs):
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(fn, tasks))
    return [fn(t) for t in tasks]


# run-level --------------------------------------------------------------------

@dataclass
class RunManifest:
    config: dict
    clips: dict
    timings: dict
    warnings: dict
    dry_run: bool = False

    @property
    def ok(self):
        return not any(s.startswith("error") for s in self.clips.values())

    def to_dict(self):
        return {"config": self.config, "clips": self.clips, "timings": self.timings,
                "warnings": self.warnings, "dry_run": self.dry_run}


def discover(input_path):
    p = Path(input_path)
    if not p.exists():
        raise ArtikitError(f"missing file: {p}")
    dirs = list(iter_bundle_dirs(p))
    if not dirs:
        raise ArtikitError(f"no clip bundles under {p}")
    return dirs


class Workspace:
    """Output directory of a run, shared by the stage-by-stage subcommands."""

    def __init__(self, input_path, out_dir, cfg: Config, jobs=1):
        self.input = Path(input_path)
        self.out = Path(out_dir)
        self.cfg = cfg
        self.jobs = max(1, int(jobs))
        self.dirs = discover(input_path)
        self.timings = {}
        self.results = {}

    def run_steps(self, steps, injected=None):
        self.out.mkdir(parents=True, exist_ok=True)
        tasks = [(d, self.out, tuple(steps), self.cfg, injected) for d in self.dirs]
        for cid, sid, status, warns, tm in _map(_clip_worker, tasks, self.jobs):
            self.results[cid] = (sid, status, warns)
            for k, v in tm.items():
                self.timings[k] = self.timings.get(k, 0.0) + v

    def clip_ids(self):
        ids = []
        for d in self.dirs:
            man = d / "manifest.json"
            try:
                ids.append(str(_read(man)["clip_id"]))
            except (OSError, KeyError, ValueError):
                ids.append(d.name)
        return ids

    def artifacts(self):
        out = []
        for cid in self.clip_ids():
            out.append(load_artifacts(self.out, cid))
        return out

    def pool_frames(self, scope="scene"):
        """Pool the stored triads into Manhattan frames and save them."""
        t0 = time.perf_counter()
        arts = self.artifacts()
        for a in arts:
            a.frame = None
        missing = [a.clip_id for a in arts if a.status == "ok" and a.traj is None]
        if missing:
            raise ArtikitError(f"clips {missing} have no saved trajectory: run the earlier stages")
        resolve_frames(arts, self.cfg, scope)
        for a in arts:
            if a.status == "ok" or a.frame is not None:
                save_step(self.out, a, "frame")
        self.timings["manhattan"] = self.timings.get("manhattan", 0.0) + time.perf_counter() - t0

    def aggregate(self):
        arts = self.artifacts()
        dump_json({"scenes": [s.to_dict() for s in scene_estimates(arts, self.cfg)]},
                  self.out / "scene.json")
        return arts

    def evaluate(self, gt_path, micro=False):
        arts = self.artifacts()
        gts = load_ground_truth(gt_path)
        preds = {a.clip_id: (a.estimate.articulation if a.estimate is not None else None)
                 for a in arts if a.clip_id in gts}
        report = score_run(preds, gts, self.cfg, micro=micro)
        dump_json(report.to_dict(), self.out / "report.json")
        (self.out / "report.txt").write_text(report.table() + "\n")
        return report

    def write_plots(self):
        (self.out / "plots").mkdir(parents=True, exist_ok=True)
        for a in self.artifacts():
            if a.traj is not None:
                write_plot(self.out / "plots" / f"{a.clip_id}.obj", a)

    def manifest(self, dry_run=False):
        clips, warnings = {}, {}
        for a in self.artifacts():
            clips[a.clip_id] = "pending" if dry_run else a.status
            if a.warnings:
                warnings[a.clip_id] = list(a.warnings)
        man = RunManifest(self.cfg.to_dict(), dict(sorted(clips.items())),
                          dict(sorted(self.timings.items())), warnings, dry_run)
        self.out.mkdir(parents=True, exist_ok=True)
        dump_json(man.to_dict(), self.out / "manifest.json")
        return man


def default_gt(input_path):
    p = Path(input_path) / "gt.json"
    return p if p.is_file() else None


def run_pipeline(input_path, out_dir, cfg: Config, reasoner=None, gt=None, jobs=1,
                 dry_run=False, plot=False, scope="scene", micro=False):
    """Run every bundle under ``input_path`` and write results to ``out_dir``.

    Layout: ``artifacts/<clip>/*.json``, ``estimates/<clip>.json``,
    ``scene.json``, ``report.json`` and ``report.txt`` (when ground truth is
    given or ``input_path/gt.json`` exists) and ``manifest.json``.  With
    ``dry_run`` only the manifest is written, listing the clips that would run.
    """
    t_start = time.perf_counter()
    ws = Workspace(input_path, out_dir, cfg, jobs)
    if dry_run:
        return ws.manifest(dry_run=True)
    injected = reason.load_injected_answers(reasoner) if reasoner else None
    ws.run_steps(FIRST_STEPS)
    ws.pool_frames(scope)
    ws.run_steps(SECOND_STEPS, injected)
    ws.aggregate()
    gt_path = gt if gt is not None else default_gt(input_path)
    if gt_path is not None:
        ws.evaluate(gt_path, micro)
    if plot:
        ws.write_plots()
    ws.timings["total"] = time.perf_counter() - t_start
    return ws.manifest()


def default_jobs():
    return max(1, min(8, os.cpu_count() or 1))


__all__ = [
    "ClipArtifacts", "RunManifest", "Workspace", "apply_step", "clip_seed",
    "contact_frames_of", "first_pass", "load_artifacts", "present_candidates",
    "resolve_frames", "run_clips", "run_pipeline", "save_step", "scene_estimates",
    "second_pass", "stage_lines", "stage_localize", "stage_smooth", "stage_triads",
    "traj_from_dict", "traj_to_dict",
]
