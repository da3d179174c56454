"""Joint articulation inference and scene-level aggregation."""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .core.config import Config
from .core.types import Articulation, MotionType
from .errors import ArtikitError, DegenerateError, RejectedEstimate, UnresolvedMotionType

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClipEstimate:
    clip_id: str
    articulation: Articulation
    diagnostics: dict = field(default_factory=dict)
    provenance: str = "injected"
    scene_id: str = "scene"

    def to_dict(self):
        return {"clip_id": self.clip_id, "scene_id": self.scene_id,
                "articulation": self.articulation.to_dict(),
                "diagnostics": self.diagnostics, "provenance": self.provenance}

    @classmethod
    def from_dict(cls, d):
        return cls(d["clip_id"], Articulation.from_dict(d["articulation"]),
                   dict(d.get("diagnostics", {})), d.get("provenance", "injected"),
                   d.get("scene_id", "scene"))


@dataclass(frozen=True)
class SceneEstimate:
    group_id: str
    articulation: Articulation
    members: tuple
    axis_spread_deg: float
    origin_spread: float
    dropped: tuple = ()

    def to_dict(self):
        return {"group_id": self.group_id, "articulation": self.articulation.to_dict(),
                "members": list(self.members), "dropped": list(self.dropped),
                "axis_spread_deg": self.axis_spread_deg, "origin_spread": self.origin_spread}


def _positions(traj):
    return np.asarray(getattr(traj, "positions", traj), dtype=np.float64).reshape(-1, 3)


def principal_motion_direction(traj):
    """First principal component of the path, oriented along the net displacement."""
    P = _positions(traj)
    if P.shape[0] < 3:
        raise ArtikitError(f"principal_motion_direction needs at least 3 points, got {P.shape[0]}")
    X = P - P.mean(axis=0)
    _, s, vt = np.linalg.svd(X, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, float(np.abs(P).max())):
        raise DegenerateError("zero-variance trajectory")
    v = vt[0]
    if v @ (P[-1] - P[0]) < 0:
        v = -v
    return v


def infer_prismatic(traj, frame, cfg: Config):
    """Manhattan direction best aligned with the hand motion, anchored at the first contact.

    Raises
    ------
    RejectedEstimate
        When fewer than ``min_inlier_rate`` of the path lies within
        ``prism_tol`` of the axis line.
    """
    P = _positions(traj)
    v = principal_motion_direction(P)
    axes = np.asarray(frame.axes if hasattr(frame, "axes") else frame, dtype=np.float64)
    align = np.abs(axes @ v)
    # argmax returns the first maximum: ties go to the lower Manhattan index
    k = int(np.argmax(align))
    a = axes[k] if axes[k] @ v >= 0 else -axes[k]
    origin = P[0]
    d = np.linalg.norm(np.cross(P - origin, a), axis=1)
    rate = float(np.mean(d <= cfg.prism_tol))
    diag = {"manhattan_index": k, "alignment": float(align[k]), "inlier_rate": rate,
            "motion_direction": v.tolist()}
    if rate < cfg.min_inlier_rate:
        raise RejectedEstimate(f"prismatic inlier rate {rate:.3f} below {cfg.min_inlier_rate}",
                               diag)
    return Articulation(MotionType.PRISMATIC, a, origin), diag


def radius_stats(P, direction, origin):
    """Distances of ``P`` to a line: ``(d, mean, variance)``."""
    d = np.linalg.norm(np.cross(P - origin, direction), axis=1)
    return d, float(d.mean()), float(d.var())


def torus_band(r_mean, cfg: Config):
    return min(max(cfg.torus_tol_ratio * r_mean, cfg.torus_tol_min), cfg.torus_tol_max)


def infer_revolute(traj, candidates, cfg: Config, ids=None):
    """Candidate axis with the most constant rotation radius.

    Candidates with mean radius above ``max_radius`` or with fewer than
    ``min_inlier_rate`` of the points inside the torus band are discarded.
    The axis is oriented by the right-hand rule from the first to the last
    contact point, and the origin is the path centroid projected on it.

    Returns
    -------
    articulation : Articulation
    diagnostics : dict
        Per-candidate radius statistics and the chosen id.
    """
    P = _positions(traj)
    if P.shape[0] < 3:
        raise ArtikitError("infer_revolute needs at least 3 trajectory points")
    ids = list(range(len(candidates))) if ids is None else list(ids)
    if not candidates:
        raise RejectedEstimate("no plausible revolute axis", {"candidates": []})
    table, best = [], None
    for cid, ln in zip(ids, candidates):
        u = np.asarray(ln.direction, dtype=np.float64)
        d, r_mean, var = radius_stats(P, u, ln.origin)
        band = torus_band(r_mean, cfg)
        frac = float(np.mean(np.abs(d - r_mean) <= band))
        ok = r_mean <= cfg.max_radius and frac >= cfg.min_inlier_rate
        table.append({"id": int(cid), "radius_mean": r_mean, "radius_var": var,
                      "torus_inlier_rate": frac, "viable": bool(ok)})
        if ok and (best is None or var < best[0]):
            best = (var, cid, ln)
    diag = {"candidates": table}
    if best is None:
        raise RejectedEstimate("no plausible revolute axis", diag)
    var, cid, ln = best
    u = np.asarray(ln.direction, dtype=np.float64)
    q = np.asarray(ln.origin, dtype=np.float64)
    c = P.mean(axis=0)
    origin = q + ((c - q) @ u) * u
    if np.cross(P[0] - origin, P[-1] - origin) @ u < 0:
        u = -u
    entry = next(t for t in table if t["id"] == int(cid))
    diag.update({"chosen": int(cid), "radius_mean": entry["radius_mean"], "radius_var": var,
                 "inlier_rate": entry["torus_inlier_rate"]})
    return Articulation(MotionType.REVOLUTE, u, origin), diag


def infer_clip(clip_id, traj, answer, frame=None, presented=(), cfg: Config | None = None,
               scene_id="scene"):
    """Dispatch on the resolved motion type.

    Parameters
    ----------
    answer : ReasonerAnswer
        Motion type plus the selected subset of ``presented``.
    frame : ManhattanFrame, optional
        Required for prismatic clips.
    presented : sequence of (line_id, Line3D)
        Candidates shown to the reasoner, in presentation order.
    """
    cfg = cfg or Config()
    if answer.motion_type is None:
        raise UnresolvedMotionType()
    base = {"motion_label": answer.label, "selected": list(answer.selected)}
    if answer.motion_type is MotionType.PRISMATIC:
        if frame is None:
            raise RejectedEstimate("no Manhattan frame for a prismatic clip", base)
        art, diag = infer_prismatic(traj, frame, cfg)
    else:
        chosen = [presented[i] for i in answer.selected]
        if not chosen:
            raise RejectedEstimate("no plausible revolute axis", {**base, "candidates": []})
        art, diag = infer_revolute(traj, [ln for _, ln in chosen], cfg, [i for i, _ in chosen])
    return ClipEstimate(clip_id, art, {**base, **diag}, answer.provenance, scene_id)


# scene level ----------------------------------------------------------------

def region_iou(a, b):
    ka, kb = (a if isinstance(a, (set, frozenset)) else a.keyset(),
              b if isinstance(b, (set, frozenset)) else b.keyset())
    union = len(ka | kb)
    return len(ka & kb) / union if union else 0.0


def _components(n, linked):
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if linked(i, j):
                ri, rj = find(i), find(j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def group_clips(clip_ids, regions, iou_thresh=0.3):
    """Single-link groups of clips whose confident voxel sets overlap.

    ``regions`` maps clip id to a ConfidentRegion (or a voxel key set);
    clips without a region form singleton groups.  Groups are returned as
    sorted clip-id lists, ordered by their first member.
    """
    ids = sorted(clip_ids)
    keys = [None if regions.get(c) is None else
            (regions[c] if isinstance(regions[c], (set, frozenset)) else regions[c].keyset())
            for c in ids]

    def linked(i, j):
        return keys[i] is not None and keys[j] is not None and region_iou(keys[i], keys[j]) > iou_thresh

    return [[ids[i] for i in g] for g in _components(len(ids), linked)]


def group_clips_by_mesh(trajectories, meshes, max_dist=0.1):
    """Assign each clip to the object mesh nearest its hand path.

    ``meshes`` maps object id to mesh vertices; a clip joins the object with
    the smallest mean nearest-vertex distance if that is below ``max_dist``,
    otherwise it stays alone.
    """
    from scipy.spatial import cKDTree

    trees = {k: cKDTree(np.asarray(v, dtype=np.float64).reshape(-1, 3)) for k, v in meshes.items()}
    owner = {}
    for cid in sorted(trajectories):
        P = _positions(trajectories[cid])
        dists = {k: float(t.query(P)[0].mean()) for k, t in trees.items()}
        if dists:
            k = min(sorted(dists), key=lambda k: dists[k])
            owner[cid] = k if dists[k] <= max_dist else None
        else:
            owner[cid] = None
    groups = {}
    for cid in sorted(owner):
        groups.setdefault(owner[cid] if owner[cid] is not None else ("clip", cid), []).append(cid)
    return sorted(groups.values(), key=lambda g: g[0])


def aggregate_scene(estimates, group_id=None):
    """Fuse member estimates of one object.

    Members of the minority motion type are dropped (ties keep the type of
    the first member by clip id).  The axis is the normalized mean of the
    member axes sign-aligned to the first member; the origin is the
    componentwise median of member origins.
    """
    ests = sorted(estimates, key=lambda e: e.clip_id)
    if not ests:
        raise ArtikitError("aggregate_scene: empty group")
    counts = Counter(e.articulation.motion_type for e in ests)
    top = max(counts.values())
    mtype = next(e.articulation.motion_type for e in ests if counts[e.articulation.motion_type] == top)
    kept = [e for e in ests if e.articulation.motion_type is mtype]
    dropped = tuple(e.clip_id for e in ests if e.articulation.motion_type is not mtype)
    if dropped:
        log.warning("group %s: dropped minority-type members %s", group_id, dropped)
    A = np.array([e.articulation.axis for e in kept])
    ref = A[0]
    A = A * np.where(A @ ref < 0, -1.0, 1.0)[:, None]
    axis = A.sum(axis=0)
    axis /= np.linalg.norm(axis)
    O = np.array([e.articulation.origin for e in kept])
    origin = np.median(O, axis=0)
    if mtype is MotionType.REVOLUTE:
        # anchored at the median the aggregated line passes through it, so
        # the spread is measured as distance of member origins to that line
        spread = float(np.linalg.norm(np.cross(O - origin, axis), axis=1).max())
    else:
        spread = float(np.linalg.norm(O - origin, axis=1).max())
    cosines = np.clip(np.abs(A @ A.T), -1.0, 1.0)
    axis_spread = float(np.degrees(np.arccos(cosines.min())))
    gid = group_id if group_id is not None else kept[0].clip_id
    return SceneEstimate(gid, Articulation(mtype, axis, origin), tuple(e.clip_id for e in kept),
                         axis_spread, spread, dropped)


__all__ = [
    "ClipEstimate", "SceneEstimate", "aggregate_scene", "group_clips", "group_clips_by_mesh",
    "infer_clip", "infer_prismatic", "infer_revolute", "principal_motion_direction",
    "radius_stats", "region_iou", "torus_band",
]
