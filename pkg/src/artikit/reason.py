"""Motion-type decision and axis-candidate filtering.

Answers normally come from an external vision-language model and are fed in
through the injection file; :func:`heuristic_motion_type` is the offline
geometric fallback.

Injection file layout (``version`` 1)::

    {"version": 1,
     "records": [{"clip_id": "c1",
                  "votes": [{"frame": 3, "furniture": "cabinet", "motion": "rotation"}],
                  "axis_choice": [2]}]}

``axis_choice`` is a list of presented-candidate indices or ``"none"``; when
omitted every presented candidate stays selected.  A bare record or a bare
list of records is accepted as well.
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass

import numpy as np
from scipy.optimize import least_squares

from .core.config import Config
from .core.types import CameraPose, Intrinsics, Mask, MotionType
from .errors import ArtikitError, SchemaError

log = logging.getLogger(__name__)

MOTION_LABELS = ("rotation", "translation", "unknown")
INJECTION_VERSION = 1
_LABEL_TO_TYPE = {"rotation": MotionType.REVOLUTE, "translation": MotionType.PRISMATIC}
_TYPE_TO_LABEL = {v: k for k, v in _LABEL_TO_TYPE.items()}


@dataclass(frozen=True)
class FrameVote:
    frame: int
    furniture: str
    motion: str

    def __post_init__(self):
        if self.motion not in MOTION_LABELS:
            raise SchemaError(f"motion label must be one of {MOTION_LABELS}, got {self.motion!r}")
        object.__setattr__(self, "frame", int(self.frame))
        object.__setattr__(self, "furniture", str(self.furniture))

    def to_dict(self):
        return {"frame": self.frame, "furniture": self.furniture, "motion": self.motion}


@dataclass(frozen=True)
class InjectionRecord:
    clip_id: str
    votes: tuple
    # None: not given (keep all presented); (): "none"
    axis_choice: tuple | None = None

    def to_dict(self):
        d = {"clip_id": self.clip_id, "votes": [v.to_dict() for v in self.votes]}
        if self.axis_choice is not None:
            d["axis_choice"] = list(self.axis_choice) if self.axis_choice else "none"
        return d


@dataclass(frozen=True)
class ReasonerAnswer:
    motion_type: MotionType | None
    selected: tuple
    provenance: str
    label: str = "unknown"

    def to_dict(self):
        return {"motion_type": None if self.motion_type is None else self.motion_type.value,
                "label": self.label, "selected": list(self.selected),
                "provenance": self.provenance}


def label_to_motion_type(label):
    return _LABEL_TO_TYPE.get(label)


def motion_type_to_label(mt):
    return "unknown" if mt is None else _TYPE_TO_LABEL[MotionType(mt)]


def aggregate_votes(votes):
    """Majority motion label after discarding ``unknown`` votes.

    Ties and all-unknown inputs give ``"unknown"``.
    """
    votes = list(votes)
    if not votes:
        raise ArtikitError("aggregate_votes: empty vote list")
    counts = Counter(v.motion if isinstance(v, FrameVote) else str(v) for v in votes)
    counts.pop("unknown", None)
    if not counts:
        return "unknown"
    ranked = counts.most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return "unknown"
    return ranked[0][0]


def filter_candidates_by_mask(lines, mask: Mask, intr: Intrinsics, pose: CameraPose,
                              spacing=0.01):
    """Indices of lines with at least one projected support sample on the mask.

    Samples are taken every ``spacing`` meters along each line's inlier extent.
    """
    pos = mask.positive if isinstance(mask, Mask) else np.asarray(mask) > 0
    if pos.shape != (intr.height, intr.width):
        raise ArtikitError(f"mask shape {pos.shape} does not match image "
                           f"{(intr.height, intr.width)}")
    if not pos.any():
        log.warning("empty mask: every candidate rejected")
        return []
    keep = []
    for i, ln in enumerate(lines):
        uv, z = intr.project(pose.to_camera(ln.sample(spacing)))
        ok = (z > 0) & intr.in_bounds(uv)
        if not ok.any():
            continue
        px = np.rint(uv[ok]).astype(np.int64)
        if pos[px[:, 1], px[:, 0]].any():
            keep.append(i)
    return keep


def select_top_candidates(lines, n_cand, ids=None):
    """The ``n_cand`` longest lines by projected length; ties go to the lower id.

    Returns the chosen ids (positions in ``lines`` unless ``ids`` is given),
    longest first.
    """
    ids = list(range(len(lines))) if ids is None else list(ids)
    order = sorted(range(len(lines)), key=lambda k: (-lines[k].projected_length, ids[k]))
    return [ids[k] for k in order[:n_cand]]


# geometric fallback ---------------------------------------------------------

def _noise_floor(P):
    """Per-axis white-noise variance from second differences (var = 6 sigma^2)."""
    d2 = P[2:] - 2 * P[1:-1] + P[:-2]
    return float(np.mean(d2 * d2) / 6.0)


def _line_rms(P):
    X = P - P.mean(axis=0)
    _, _, vt = np.linalg.svd(X, full_matrices=False)
    r = X - np.outer(X @ vt[0], vt[0])
    return math.sqrt(np.mean(np.sum(r * r, axis=1))), vt


def _circle_rms(P, vt, max_radius):
    """RMS 3D distance to the best circle of radius at most ``max_radius``.

    The circle lies in the trajectory's best-fit plane; the out-of-plane
    offset counts toward the residual.
    """
    X = P - P.mean(axis=0)
    xy = np.column_stack([X @ vt[0], X @ vt[1]])
    h = X @ vt[2]

    def res(p):
        return np.hypot(np.hypot(xy[:, 0] - p[0], xy[:, 1] - p[1]) - p[2], h)

    # algebraic (Kasa) fit as one start; the two radius-capped sagging
    # circles as the others, which matter when the path is nearly straight
    A = np.column_stack([2 * xy, np.ones(len(xy))])
    a, b, c = np.linalg.lstsq(A, np.sum(xy * xy, axis=1), rcond=None)[0]
    r0 = math.sqrt(max(c + a * a + b * b, 1e-12))
    cap = max_radius * (1 - 1e-9)
    starts = [(a, b, min(r0, cap)), (0.0, cap, cap), (0.0, -cap, cap)]
    best = math.inf
    for p0 in starts:
        sol = least_squares(res, np.array(p0, float),
                            bounds=([-np.inf, -np.inf, 1e-9], [np.inf, np.inf, max_radius]))
        best = min(best, float(np.mean(sol.fun ** 2)))
    return math.sqrt(best)


def heuristic_motion_type(traj, cfg: Config | None = None):
    """Classify a smoothed path as translation, rotation or unknown.

    Both residuals are first stripped of the white-noise floor (two
    perpendicular noise dimensions, estimated from second differences).  A
    model wins when its excess residual is at most ``heuristic_ratio`` times
    the other's and the losing model misfits by more than the noise level.

    Parameters
    ----------
    traj : SmoothedTrajectory or (N, 3) array
    cfg : Config, optional
        Supplies ``heuristic_ratio`` and ``max_radius`` (circle radius cap).

    Returns
    -------
    str
        ``"translation"``, ``"rotation"`` or ``"unknown"``.
    """
    cfg = cfg or Config()
    P = np.asarray(getattr(traj, "positions", traj), dtype=np.float64).reshape(-1, 3)
    if P.shape[0] < 8:
        raise ArtikitError(f"heuristic_motion_type needs at least 8 points, got {P.shape[0]}")
    line, vt = _line_rms(P)
    circle = _circle_rms(P, vt, cfg.max_radius)
    var = _noise_floor(P)
    floor = 2 * var
    e_line = math.sqrt(max(0.0, line * line - floor))
    e_circle = math.sqrt(max(0.0, circle * circle - floor))
    sigma = math.sqrt(var)
    ratio = cfg.heuristic_ratio
    if e_line <= ratio * e_circle and e_circle > sigma:
        return "translation"
    if e_circle <= ratio * e_line and e_line > sigma:
        return "rotation"
    return "unknown"


# injection file -------------------------------------------------------------

def _parse_record(d, where):
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: record must be an object")
    unknown = set(d) - {"clip_id", "votes", "axis_choice"}
    if unknown:
        raise SchemaError(f"{where}: unknown field(s) {sorted(unknown)}")
    if not isinstance(d.get("clip_id"), str):
        raise SchemaError(f"{where}.clip_id: string required")
    raw_votes = d.get("votes", [])
    if not isinstance(raw_votes, list):
        raise SchemaError(f"{where}.votes: list required")
    votes = []
    for j, v in enumerate(raw_votes):
        if not isinstance(v, dict) or not {"frame", "motion"} <= set(v):
            raise SchemaError(f"{where}.votes[{j}]: needs frame and motion")
        if not isinstance(v["frame"], int) or isinstance(v["frame"], bool) or v["frame"] < 0:
            raise SchemaError(f"{where}.votes[{j}].frame: non-negative integer required")
        try:
            votes.append(FrameVote(v["frame"], v.get("furniture", "unknown"), v["motion"]))
        except SchemaError as exc:
            raise SchemaError(f"{where}.votes[{j}]: {exc}") from None
    choice = d.get("axis_choice")
    if choice is None:
        axis = None
    elif choice == "none":
        axis = ()
    elif isinstance(choice, list) and all(isinstance(c, int) and not isinstance(c, bool)
                                          and c >= 0 for c in choice):
        axis = tuple(dict.fromkeys(choice))
    else:
        raise SchemaError(f"{where}.axis_choice: list of non-negative ints or \"none\" required")
    return InjectionRecord(d["clip_id"], tuple(votes), axis)


def parse_injection(data):
    """Validate injection JSON data; returns ``{clip_id: InjectionRecord}``."""
    if isinstance(data, dict) and "records" in data:
        version = data.get("version", INJECTION_VERSION)
        if version != INJECTION_VERSION:
            raise SchemaError(f"unsupported reasoner file version {version}")
        records = data["records"]
    elif isinstance(data, dict):
        records = [data]
    else:
        records = data
    if not isinstance(records, list):
        raise SchemaError("reasoner file: records must be a list")
    out = {}
    for i, d in enumerate(records):
        rec = _parse_record(d, f"records[{i}]")
        if rec.clip_id in out:
            raise SchemaError(f"records[{i}]: duplicate clip_id {rec.clip_id!r}")
        out[rec.clip_id] = rec
    return out


def load_injected_answers(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"reasoner file {path}: invalid JSON ({exc})") from None
    return parse_injection(data)


def dump_injection(records):
    return {"version": INJECTION_VERSION,
            "records": [r.to_dict() for r in sorted(records, key=lambda r: r.clip_id)]}


def resolve_answer(record: InjectionRecord | None, traj, n_presented, cfg: Config):
    """Motion type and candidate selection for one clip.

    An injected record wins over the heuristic.  Selected indices refer to
    the presented candidate list and are validated against its length.
    """
    if record is not None:
        label = aggregate_votes(record.votes) if record.votes else "unknown"
        if record.axis_choice is None:
            selected = tuple(range(n_presented))
        else:
            bad = [c for c in record.axis_choice if c >= n_presented]
            if bad:
                raise SchemaError(f"clip {record.clip_id}: axis_choice index out of range "
                                  f"{bad} (presented {n_presented})")
            selected = record.axis_choice
        return ReasonerAnswer(label_to_motion_type(label), selected, "injected", label)
    label = heuristic_motion_type(traj, cfg)
    return ReasonerAnswer(label_to_motion_type(label), tuple(range(n_presented)), "heuristic",
                          label)


# prompt payloads ------------------------------------------------------------

def vote_frames(frame_indices, k):
    """``k`` uniformly spaced frames (all of them when fewer)."""
    idx = np.asarray(list(frame_indices), dtype=np.int64)
    if idx.size <= k:
        return idx.tolist()
    return idx[np.round(np.linspace(0, idx.size - 1, k)).astype(int)].tolist()


def prompt_view(bundle):
    """Frame with the largest mask area (ties: earliest); ``None`` without masks."""
    best, area = None, 0
    for fr in bundle.frames:
        if fr.mask is not None and fr.mask.area > area:
            best, area = fr.index, fr.mask.area
    return best


def project_candidate(line, intr: Intrinsics, pose: CameraPose, spacing=0.01):
    """Pixel endpoints of the visible part of a line's support, or ``None``."""
    uv, z = intr.project(pose.to_camera(line.sample(spacing)))
    ok = (z > 0) & intr.in_bounds(uv)
    if not ok.any():
        return None
    vis = uv[ok]
    return [vis[0].tolist(), vis[-1].tolist()]


def build_prompt_payload(bundle, frames, candidates, presented, view, cfg: Config):
    """What an external model client needs to answer for one clip."""
    entry = {"clip_id": bundle.clip_id, "vote_frames": vote_frames(frames, cfg.k_frames),
             "axis_view": view, "candidates": []}
    for slot, cid in enumerate(presented):
        px = None
        if view is not None:
            px = project_candidate(candidates[cid], bundle.intrinsics, bundle.poses[view])
        entry["candidates"].append({"index": slot, "line_id": int(cid), "pixels": px,
                                    "projected_length": candidates[cid].projected_length})
    entry["answer_schema"] = {"clip_id": bundle.clip_id,
                              "votes": [{"frame": "int", "furniture": "str",
                                         "motion": "|".join(MOTION_LABELS)}],
                              "axis_choice": "list[int] | \"none\""}
    return entry


__all__ = [
    "FrameVote", "InjectionRecord", "MOTION_LABELS", "ReasonerAnswer", "aggregate_votes",
    "build_prompt_payload", "dump_injection", "filter_candidates_by_mask",
    "heuristic_motion_type", "label_to_motion_type", "load_injected_answers",
    "motion_type_to_label", "parse_injection", "project_candidate", "prompt_view",
    "resolve_answer", "select_top_candidates", "vote_frames",
]
