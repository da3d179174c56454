"""M / MA / MAO scoring of articulation estimates.

``M`` checks the motion type, ``MA`` additionally the axis direction (sign
free, angular threshold), ``MAO`` additionally the origin for revolute
joints (distance from the predicted origin to the ground-truth axis line).
Conditional scores average over clips with an estimate; unconditional
scores count missing estimates as failures.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core.config import Config
from .core.types import Articulation, MotionType
from .errors import ArtikitError, SchemaError

METRICS = ("m", "ma", "mao")
# absorbs rounding so that an axis exactly at the threshold angle is accepted
_BOUNDARY_EPS = 1e-12


def axis_threshold(deg):
    """Cosine-distance threshold ``1 - cos(deg)``."""
    return 1.0 - math.cos(math.radians(deg))


@dataclass(frozen=True)
class GroundTruthRecord:
    clip_id: str
    motion_type: MotionType
    axis: np.ndarray
    origin: np.ndarray
    scene_id: str = "scene"

    def __post_init__(self):
        a = np.asarray(self.axis, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(a) - 1.0) > 1e-9:
            raise ArtikitError(f"ground truth {self.clip_id}: axis must be unit")
        object.__setattr__(self, "motion_type", MotionType(self.motion_type))
        object.__setattr__(self, "axis", a)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))

    def to_dict(self):
        return {"clip_id": self.clip_id, "scene_id": self.scene_id,
                "motion_type": self.motion_type.value, "axis": self.axis.tolist(),
                "origin": self.origin.tolist()}

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(d["clip_id"], d["motion_type"], d["axis"], d["origin"],
                       d.get("scene_id", "scene"))
        except (KeyError, ValueError) as exc:
            raise SchemaError(f"ground-truth record: {exc}") from None


def load_ground_truth(path):
    with open(path) as fh:
        data = json.load(fh)
    records = data["records"] if isinstance(data, dict) else data
    out = {}
    for d in records:
        rec = GroundTruthRecord.from_dict(d)
        out[rec.clip_id] = rec
    return out


def dump_ground_truth(records):
    return {"records": [r.to_dict() for r in sorted(records, key=lambda r: r.clip_id)]}


def axis_error(a, b):
    """``1 - |cos|`` between two directions."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return 1.0 - abs(float(a @ b)) / (np.linalg.norm(a) * np.linalg.norm(b))


def origin_error(origin, gt: GroundTruthRecord):
    """Distance from ``origin`` to the ground-truth axis line."""
    v = np.asarray(origin, dtype=np.float64) - gt.origin
    return float(np.linalg.norm(np.cross(v, gt.axis)))


def score_pair(pred: Articulation, gt: GroundTruthRecord, cfg: Config | None = None):
    cfg = cfg or Config()
    m = pred.motion_type is gt.motion_type
    ma = m and (axis_error(pred.axis, gt.axis)
                 <= axis_threshold(cfg.axis_angle_thresh) + _BOUNDARY_EPS)
    if gt.motion_type is MotionType.REVOLUTE:
        mao = ma and origin_error(pred.origin, gt) <= cfg.origin_dist_thresh
    else:
        mao = ma
    return {"m": bool(m), "ma": bool(ma), "mao": bool(mao)}


@dataclass(frozen=True)
class ScoreReport:
    """Per-scene and overall scores; ``*_cond`` keys are the detected-only variants."""

    overall: dict
    scenes: dict
    per_clip: dict
    averaging: str = "macro"

    def to_dict(self):
        return {"averaging": self.averaging, "overall": self.overall, "scenes": self.scenes,
                "per_clip": self.per_clip}

    def table(self):
        cols = ("match", "m", "ma", "mao", "m_cond", "ma_cond", "mao_cond")
        heads = ("Scene", "Match %", "M", "MA", "MAO", "M†", "MA†", "MAO†")
        rows = [(name, s) for name, s in sorted(self.scenes.items())] + [("overall", self.overall)]
        width = max(len(heads[0]), *(len(r[0]) for r in rows))
        lines = ["  ".join([heads[0].ljust(width)] + [h.rjust(7) for h in heads[1:]])]
        for name, s in rows:
            vals = [f"{100 * s[c]:7.1f}" if s[c] is not None else "      -" for c in cols]
            lines.append("  ".join([name.ljust(width)] + vals))
        return "\n".join(lines)


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def _summ(clips):
    detected = [c for c in clips if c["detected"]]
    out = {"n_clips": len(clips), "n_detected": len(detected),
           "match": _mean([c["detected"] for c in clips])}
    for k in METRICS:
        out[k] = _mean([c[k] for c in clips])
        out[f"{k}_cond"] = _mean([c[k] for c in detected])
    return out


def score_run(preds, gts, cfg: Config | None = None, micro=False):
    """Score a run.

    Parameters
    ----------
    preds : mapping clip id -> Articulation or None
        Missing or ``None`` entries are undetected clips.
    gts : mapping clip id -> GroundTruthRecord
    micro : bool
        Average clips directly instead of averaging per-scene means.
    """
    cfg = cfg or Config()
    unknown = sorted(set(preds) - set(gts))
    if unknown:
        raise ArtikitError(f"prediction for unknown clip id(s): {unknown}")
    per_clip = {}
    for cid in sorted(gts):
        p = preds.get(cid)
        if p is None:
            s = {"m": False, "ma": False, "mao": False}
        else:
            s = score_pair(p, gts[cid], cfg)
        per_clip[cid] = {"detected": p is not None, "scene_id": gts[cid].scene_id, **s}
    by_scene = {}
    for cid, s in per_clip.items():
        by_scene.setdefault(s["scene_id"], []).append(s)
    scenes = {sid: _summ(clips) for sid, clips in sorted(by_scene.items())}
    if micro:
        overall = _summ(list(per_clip.values()))
    else:
        overall = {"n_clips": len(per_clip),
                   "n_detected": sum(s["detected"] for s in per_clip.values())}
        for k in ("match",) + METRICS + tuple(f"{m}_cond" for m in METRICS):
            vals = [s[k] for s in scenes.values() if s[k] is not None]
            overall[k] = _mean(vals)
    return ScoreReport(overall, scenes, per_clip, "micro" if micro else "macro")


__all__ = [
    "GroundTruthRecord", "ScoreReport", "axis_error", "axis_threshold", "dump_ground_truth",
    "load_ground_truth", "origin_error", "score_pair", "score_run",
]
