"""Metric 3D line candidates from 2D segments and depth."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core.config import Config
from .core.types import CameraPose, DepthMap, Intrinsics, LineSegment2D, canonical_sign
from .errors import ArtikitError, DegenerateError

log = logging.getLogger(__name__)

LO_ROUNDS = 5
LO_WIDEN = 3.0
REFIT_GAIN = 2.0
REFIT_ROUNDS = 5
_SCORE_CHUNK = 64


@dataclass(frozen=True)
class PointTrack:
    points: np.ndarray
    views: tuple

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if pts.shape[0] < 2:
            raise ArtikitError("a point track needs at least 2 points")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "views", tuple(self.views))

    def __len__(self):
        return self.points.shape[0]


@dataclass(frozen=True)
class Line3D:
    direction: np.ndarray
    origin: np.ndarray
    support: int
    inlier_rate: float
    projected_length: float
    rms: float = 0.0
    # inlier extent along ``direction`` measured from ``origin``
    extent: tuple = (0.0, 0.0)

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        d = canonical_sign(d / np.linalg.norm(d))
        object.__setattr__(self, "direction", d)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64))

    def distances(self, pts):
        v = np.asarray(pts, dtype=np.float64) - self.origin
        return np.linalg.norm(np.cross(v, self.direction), axis=-1)

    def sample(self, spacing):
        lo, hi = self.extent
        n = max(2, int(math.ceil((hi - lo) / spacing)) + 1)
        t = np.linspace(lo, hi, n)
        return self.origin + t[:, None] * self.direction

    def to_dict(self):
        return {"direction": self.direction.tolist(), "origin": self.origin.tolist(),
                "support": int(self.support), "inlier_rate": float(self.inlier_rate),
                "projected_length": float(self.projected_length), "rms": float(self.rms),
                "extent": [float(self.extent[0]), float(self.extent[1])]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["direction"], d["origin"], int(d["support"]), float(d["inlier_rate"]),
                   float(d["projected_length"]), float(d.get("rms", 0.0)),
                   tuple(d.get("extent", (0.0, 0.0))))


# unprojection ---------------------------------------------------------------

def sample_segment_pixels(seg: LineSegment2D, stride: float):
    """Integer pixel centers visited when walking the segment every ``stride`` px."""
    p0 = np.asarray(seg.p0)
    p1 = np.asarray(seg.p1)
    n = max(2, int(math.floor(seg.length / stride)) + 1)
    t = np.linspace(0.0, 1.0, n)
    px = np.rint(p0 + t[:, None] * (p1 - p0)).astype(np.int64)
    keep = np.ones(len(px), dtype=bool)
    keep[1:] = np.any(px[1:] != px[:-1], axis=1)
    return px[keep]


def unproject_line_samples(seg: LineSegment2D, depth: DepthMap, intr: Intrinsics,
                           pose: CameraPose, stride: float = 2.0, view=None) -> PointTrack:
    """Lift a 2D segment to world points through the depth map.

    Samples at invalid depth are skipped, as are depth discontinuities: a
    sample whose depth is more than 3 MAD from the segment median is dropped.
    """
    px = sample_segment_pixels(seg, stride)
    inside = (px[:, 0] >= 0) & (px[:, 0] < intr.width) & (px[:, 1] >= 0) & (px[:, 1] < intr.height)
    px = px[inside]
    d = depth.values[px[:, 1], px[:, 0]].astype(np.float64)
    ok = np.isfinite(d) & (d > 0)
    px, d = px[ok], d[ok]
    if d.size >= 3:
        med = np.median(d)
        mad = np.median(np.abs(d - med))
        ok = np.abs(d - med) <= 3.0 * mad + 1e-9 * med
        px, d = px[ok], d[ok]
    if d.size < 2:
        raise ArtikitError(f"fewer than 2 valid depth samples on segment in frame {seg.frame}")
    cam = intr.unproject(px.astype(np.float64), d)
    return PointTrack(pose.to_world(cam), (seg.frame if view is None else view,))


def merge_tracks_by_correspondence(segments, tracks):
    """Pool per-view unprojections sharing a correspondence id.

    ``segments`` and ``tracks`` are parallel sequences.  Segments without an
    id each become their own track.  Returns ``(keys, tracks)`` ordered by
    id, id-less segments last in input order.
    """
    groups = defaultdict(list)
    loose = []
    for i, (seg, tr) in enumerate(zip(segments, tracks)):
        if tr is None:
            continue
        if seg.corr_id is None:
            loose.append((("seg", i), tr))
        else:
            groups[seg.corr_id].append(tr)
    keys, out = [], []
    for cid in sorted(groups):
        pts = np.concatenate([t.points for t in groups[cid]])
        if pts.shape[0] < 2:
            log.warning("correspondence %s has fewer than 2 points; dropped", cid)
            continue
        views = tuple(v for t in groups[cid] for v in t.views)
        keys.append(cid)
        out.append(PointTrack(pts, views))
    for key, tr in loose:
        keys.append(key)
        out.append(tr)
    return keys, out


# LO-RANSAC --------------------------------------------------------------------

def _tls_line(pts, weights=None):
    if weights is None:
        c = pts.mean(axis=0)
        _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
        return c, vt[0]
    w = weights / weights.sum()
    c = w @ pts
    _, _, vt = np.linalg.svd((pts - c) * np.sqrt(w)[:, None], full_matrices=False)
    return c, vt[0]


def _refit(pts, inl, tol):
    """TLS refit of an inlier set that tries not to shed its own members.

    Members pushed past ``tol`` by the plain refit are up-weighted and the fit
    repeated, which finds a nearby model that keeps the whole set whenever
    one exists.
    """
    sub = pts[inl]
    w = np.ones(sub.shape[0])
    best = None
    for _ in range(REFIT_ROUNDS):
        o, d = _tls_line(sub, w)
        res = _score(pts, o, d, tol)
        if best is None or _better(res[1], res[2], best[2][1], best[2][2]):
            best = (o, d, res)
        lost = ~res[0][inl]
        if not lost.any():
            break
        w[lost] *= REFIT_GAIN
    return best


def _local_opt(pts, origin, direction, tol):
    """Refit on inliers of a threshold shrinking from ``LO_WIDEN * tol`` to ``tol``.

    Every intermediate model is scored at ``tol`` and the best is kept, so
    the result never has fewer inliers than the starting model.
    """
    best = (origin, direction, _score(pts, origin, direction, tol))
    o, d = origin, direction
    prev = None
    for r in range(LO_ROUNDS):
        thr = tol * (LO_WIDEN - (LO_WIDEN - 1.0) * r / (LO_ROUNDS - 1))
        inl = _score(pts, o, d, thr)[0]
        if inl.sum() < 2 or (prev is not None and thr == tol and np.array_equal(inl, prev)):
            break
        prev = inl
        o, d = _tls_line(pts[inl])
        res = _score(pts, o, d, tol)
        if _better(res[1], res[2], best[2][1], best[2][2]):
            best = (o, d, res)
    if best[2][1] >= 2:
        polished = _refit(pts, best[2][0], tol)
        if _better(polished[2][1], polished[2][2], best[2][1], best[2][2]):
            best = polished
    return best


def _score(points, origin, direction, tol):
    v = points - origin
    along = v @ direction
    d2 = np.maximum(np.einsum("ij,ij->i", v, v) - along * along, 0.0)
    inl = d2 <= tol * tol
    return inl, int(inl.sum()), float(d2[inl].sum())


def _better(count, sse, best_count, best_sse):
    if count != best_count:
        return count > best_count
    return sse < best_sse


@dataclass(frozen=True)
class RansacReport:
    line: Line3D
    inliers: np.ndarray
    iterations: int
    best_minimal_support: int


def fit_line_lo_ransac(points, tol, max_iters=1000, seed=0, confidence=0.99) -> Line3D:
    return lo_ransac_line(points, tol, max_iters, seed, confidence).line


def lo_ransac_line(points, tol, max_iters=1000, seed=0, confidence=0.99) -> RansacReport:
    """RANSAC over 2-point samples with a total-least-squares local optimization.

    Each time a minimal sample beats the incumbent it is locally optimized:
    up to ``LO_ROUNDS`` PCA refits on the inliers of a threshold shrinking
    to ``tol``, then a weighted polish at ``tol``.  A refit replaces the
    model only if it ranks higher (more inliers, then lower RMS).  The iteration budget shrinks with the usual
    ``log(1 - confidence) / log(1 - w^2)`` rule.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=np.float64).reshape(-1, 3))
    n = pts.shape[0]
    if n < 2:
        raise ArtikitError("line fitting needs at least 2 points")
    if np.linalg.norm(pts - pts.mean(axis=0), axis=1).max() <= tol:
        raise DegenerateError("degenerate track: all points lie within tol of one location")

    rng = np.random.default_rng(seed)
    a = rng.integers(n, size=max_iters)
    b = rng.integers(n - 1, size=max_iters)
    b = b + (b >= a)
    pairs = np.column_stack([a, b]).astype(np.int64)

    best_count, best_sse = -1, math.inf
    best_model = None
    best_minimal = 0
    budget = max_iters
    it = 0
    while it < budget:
        stop = min(budget, it + _SCORE_CHUNK)
        counts, sse = kernels.line_scores(pts, pairs[it:stop], tol)
        for j in range(stop - it):
            if it + j >= budget:
                stop = it + j
                break
            c, s = int(counts[j]), float(sse[j])
            best_minimal = max(best_minimal, c)
            if c == 0 or not _better(c, s, best_count, best_sse):
                continue
            i0, i1 = pairs[it + j]
            origin = pts[i0]
            direction = (pts[i1] - origin) / np.linalg.norm(pts[i1] - origin)
            best_count, best_sse, best_model = c, s, (origin, direction)
            o2, d2, (_, c2, s2) = _local_opt(pts, origin, direction, tol)
            if _better(c2, s2, best_count, best_sse):
                best_count, best_sse, best_model = c2, s2, (o2, d2)
            w = best_count / n
            if w >= 1.0:
                budget = min(budget, it + j + 1)
            elif w > 0:
                need = math.log(1 - confidence) / math.log(1 - w * w)
                budget = min(budget, max(it + j + 1, int(math.ceil(need))))
        it = stop

    # the budget can run out mid-climb; one more pass from the winner
    o2, d2, (_, c2, s2) = _local_opt(pts, *best_model, tol)
    if _better(c2, s2, best_count, best_sse):
        best_model = (o2, d2)
    origin, direction = best_model
    inl, count, sse = _score(pts, origin, direction, tol)
    direction = canonical_sign(direction)
    centroid = pts[inl].mean(axis=0)
    # re-anchor on the inlier centroid projected onto the line
    origin = origin + ((centroid - origin) @ direction) * direction
    t = (pts[inl] - origin) @ direction
    line = Line3D(direction, origin, count, count / n, float(t.max() - t.min()),
                  math.sqrt(sse / count), (float(t.min()), float(t.max())))
    return RansacReport(line, inl, it, best_minimal)


# direction clustering -----------------------------------------------------------

def axial_angle_deg(u, v):
    c = abs(float(np.dot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.degrees(math.acos(min(1.0, c)))


def _weighted_direction(dirs, weights):
    ref = dirs[0]
    acc = np.zeros(3)
    for d, w in zip(dirs, weights):
        acc += w * (d if np.dot(d, ref) >= 0 else -d)
    return canonical_sign(acc / np.linalg.norm(acc))


def cluster_directions(lines, angle_tol=5.0):
    """Agglomerative clustering of line directions under the axial metric.

    Repeatedly merges the two clusters whose support-weighted representative
    directions are closest, while that angle is within ``angle_tol``.
    Returns ``(clusters, representatives)``: lists of line-index lists
    (sorted) and unit directions.
    """
    lines = list(lines)
    if not lines:
        return [], []
    members = [[i] for i in range(len(lines))]
    reps = [canonical_sign(ln.direction) for ln in lines]
    weights = [float(max(ln.support, 1)) for ln in lines]
    while len(members) > 1:
        best = (math.inf, -1, -1)
        for i in range(len(members)):
            for j in range(i + 1, len(members)):
                ang = axial_angle_deg(reps[i], reps[j])
                if ang < best[0]:
                    best = (ang, i, j)
        ang, i, j = best
        if ang > angle_tol:
            break
        merged = sorted(members[i] + members[j])
        rep = _weighted_direction([lines[k].direction for k in merged],
                                  [max(lines[k].support, 1) for k in merged])
        w = weights[i] + weights[j]
        del members[j], reps[j], weights[j]
        members[i], reps[i], weights[i] = merged, rep, w
    order = sorted(range(len(members)), key=lambda k: members[k][0])
    return [members[k] for k in order], [reps[k] for k in order]


def _line_distance(a: Line3D, b: Line3D):
    """Symmetric distance between two nearly parallel lines: mean origin-to-line offset."""
    return 0.5 * (float(a.distances(b.origin[None])[0]) + float(b.distances(a.origin[None])[0]))


def build_candidate_axes(tracks, cfg: Config, seed=0):
    """Fit every track, cluster by direction, and refit coincident groups.

    Within a direction cluster, lines closer than ``2 * tol`` are treated as
    the same physical edge and refit jointly on their pooled points, so that
    parallel but distinct edges stay separate candidates.
    """
    tol = cfg.ransac_tol
    fitted, pools = [], []
    for k, tr in enumerate(tracks):
        try:
            rep = lo_ransac_line(tr.points, tol, cfg.ransac_max_iters, seed + k, cfg.ransac_confidence)
        except (DegenerateError, ArtikitError) as exc:
            log.debug("track %d skipped: %s", k, exc)
            continue
        fitted.append(rep.line)
        pools.append(tr.points)
    if not fitted:
        return []
    clusters, _ = cluster_directions(fitted, cfg.direction_cluster_deg)
    out = []
    for ci, members in enumerate(clusters):
        groups = []
        for m in sorted(members, key=lambda i: (-fitted[i].support, i)):
            for g in groups:
                if _line_distance(fitted[g[0]], fitted[m]) <= 2 * tol:
                    g.append(m)
                    break
            else:
                groups.append([m])
        for gi, g in enumerate(groups):
            if len(g) == 1:
                out.append(fitted[g[0]])
                continue
            pts = np.concatenate([pools[i] for i in sorted(g)])
            out.append(fit_line_lo_ransac(pts, tol, cfg.ransac_max_iters,
                                          seed + 7919 * (ci + 1) + gi, cfg.ransac_confidence))
    return out


def lift_segments(segments, frames_depth, intr, poses, stride=2.0):
    """Unproject each segment whose frame has a depth map; ``None`` where lifting fails."""
    tracks = []
    for seg in segments:
        depth = frames_depth.get(seg.frame)
        if depth is None:
            tracks.append(None)
            continue
        try:
            tracks.append(unproject_line_samples(seg, depth, intr, poses[seg.frame], stride))
        except ArtikitError:
            tracks.append(None)
    return tracks
