"""Global Manhattan frame from per-frame surface normal samples.

Normals are axial data: ``n`` and ``-n`` describe the same surface
orientation.  Clustering therefore measures similarity by ``|cos|`` and
averages members after aligning their signs, which folds antipodes without
the seam artifacts a fixed sign convention has near its boundary plane.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .core.config import Config
from .core.types import canonical_sign
from .errors import ArtikitError, DegenerateError

log = logging.getLogger(__name__)

KMEANS_MAX_ITER = 100
MEANSHIFT_MAX_ITER = 200
# modes closer than this in cosine distance are the same mode
_MODE_MERGE = 1e-6
MAX_ORTHO_RESIDUAL = 0.1


@dataclass(frozen=True)
class ManhattanFrame:
    """Three orthonormal world directions, strongest first.

    ``residual`` is the largest ``|m_i . m_j|`` between the raw modes before
    orthonormalization; ``support`` is the weight fraction of each mode.
    """

    axes: np.ndarray
    residual: float
    support: tuple

    def __post_init__(self):
        a = np.array(self.axes, dtype=np.float64).reshape(3, 3)
        if np.abs(np.linalg.norm(a, axis=1) - 1.0).max() > 1e-9:
            raise ArtikitError("Manhattan axes must be unit vectors")
        a.setflags(write=False)
        object.__setattr__(self, "axes", a)
        object.__setattr__(self, "support", tuple(float(s) for s in self.support))

    @property
    def m1(self):
        return self.axes[0]

    @property
    def m2(self):
        return self.axes[1]

    @property
    def m3(self):
        return self.axes[2]

    @property
    def gram_offdiag(self):
        g = self.axes @ self.axes.T
        return float(np.abs(g - np.eye(3)).max())

    def to_dict(self):
        return {"axes": self.axes.tolist(), "residual": self.residual,
                "support": list(self.support)}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["axes"], float), float(d["residual"]), tuple(d["support"]))


def _axial_mean(X, ref):
    s = np.where(X @ ref < 0, -1.0, 1.0)
    m = (X * s[:, None]).sum(axis=0)
    return m / np.linalg.norm(m)


def cluster_normals(normals, k, seed=0):
    """Axial k-means with k-means++ seeding.

    Parameters
    ----------
    normals : (N, 3) array
        Unit vectors; sign is ignored.
    k : int
        Number of clusters requested.
    seed : int
        Seed of the k-means++ initialization.

    Returns
    -------
    centroids : (m, 3) array
        Sign-canonical unit centroids of the ``m <= k`` non-empty clusters,
        ordered by decreasing member count (ties: earlier seed first).
    weights : (m,) int array
        Member counts.
    """
    X = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    n = X.shape[0]
    if n < k:
        raise ArtikitError(f"cluster_normals needs at least {k} samples, got {n}")
    rng = np.random.default_rng(seed)
    centers = [X[int(rng.integers(n))]]
    dist = np.maximum(0.0, 1.0 - np.abs(X @ centers[0]))
    while len(centers) < k:
        total = dist.sum()
        if total <= 1e-15:
            break  # fewer distinct directions than k
        pick = int(rng.choice(n, p=dist / total))
        centers.append(X[pick])
        dist = np.minimum(dist, np.maximum(0.0, 1.0 - np.abs(X @ X[pick])))
    C = np.array(centers)
    labels = None
    for _ in range(KMEANS_MAX_ITER):
        new = np.argmax(np.abs(X @ C.T), axis=1)
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        for j in range(C.shape[0]):
            members = X[labels == j]
            if members.shape[0]:
                C[j] = _axial_mean(members, C[j])
    counts = np.bincount(labels, minlength=C.shape[0])
    order = sorted((j for j in range(C.shape[0]) if counts[j] > 0), key=lambda j: (-counts[j], j))
    cents = np.array([canonical_sign(C[j]) for j in order])
    return cents, counts[order].astype(np.int64)


def _pair_objective(m1, cs, ct):
    return abs(cs @ m1) + abs(m1 @ ct) + abs(cs @ ct)


def frame_from_clusters(centroids, weights):
    """Per-frame triad from weighted cluster centroids.

    ``m1`` is the heaviest centroid (ties: lower index); the remaining pair is
    the one minimizing ``|c_s.m1| + |m1.c_t| + |c_s.c_t|`` over all pairs.
    The triad is orthonormalized in that order.

    Returns
    -------
    triad : (3, 3) array
        Rows ``m1, m2, m3``.
    picked : tuple of int
        Centroid indices used for the three rows.
    objective : float
        The minimized pair objective.
    """
    C = np.asarray(centroids, dtype=np.float64).reshape(-1, 3)
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if C.shape[0] < 3:
        raise ArtikitError(f"frame_from_clusters needs at least 3 centroids, got {C.shape[0]}")
    i1 = int(np.argmax(w))
    m1 = C[i1]
    rest = [i for i in range(C.shape[0]) if i != i1]
    best = (math.inf, -1, -1)
    for s, t in itertools.combinations(rest, 2):
        val = _pair_objective(m1, C[s], C[t])
        if val < best[0]:
            best = (val, s, t)
    val, s, t = best
    return gram_schmidt(C[[i1, s, t]]), (i1, s, t), float(val)


def gram_schmidt(vectors):
    a = np.asarray(vectors, dtype=np.float64)
    out = np.empty((3, 3))
    out[0] = a[0] / np.linalg.norm(a[0])
    v = a[1] - (a[1] @ out[0]) * out[0]
    out[1] = v / np.linalg.norm(v)
    v = a[2] - (a[2] @ out[0]) * out[0] - (a[2] @ out[1]) * out[1]
    out[2] = v / np.linalg.norm(v)
    return out


def _merge_modes(modes, w):
    reps, mass = [], []
    for x, wi in zip(modes, w):
        for j, r in enumerate(reps):
            if 1.0 - abs(r @ x) < _MODE_MERGE:
                mass[j] += wi
                break
        else:
            reps.append(canonical_sign(x))
            mass.append(float(wi))
    return np.array(reps), np.array(mass)


def aggregate_manhattan(triads, poses, weights=None, bandwidth=0.05, min_sep_deg=45.0):
    """Fuse per-frame triads into one world frame by axial mean-shift.

    Parameters
    ----------
    triads : sequence of (3, 3) arrays
        Camera-frame triads, one row per axis.
    poses : sequence of CameraPose or None
        Camera-to-world pose of each triad's frame; ``None`` when the triads
        are already expressed in the world frame.
    weights : sequence of (3,) arrays, optional
        Per-axis weights (cluster member counts); uniform when omitted.
    bandwidth : float
        Cosine-distance support of the kernel ``max(0, 1 - (1 - |cos|) / h)``.
    min_sep_deg : float
        Minimum mutual angle between the selected modes.
    """
    triads = [np.asarray(t, dtype=np.float64).reshape(3, 3) for t in triads]
    if not triads:
        raise ArtikitError("aggregate_manhattan needs at least one triad")
    if poses is not None:
        if len(poses) != len(triads):
            raise ArtikitError("aggregate_manhattan: one pose per triad required")
        triads = [t @ p.rotation.T for t, p in zip(triads, poses)]
    X = np.concatenate(triads)
    X /= np.linalg.norm(X, axis=1)[:, None]
    if weights is None:
        w = np.ones(X.shape[0])
    else:
        w = np.concatenate([np.asarray(x, dtype=np.float64).reshape(3) for x in weights])
    modes = kernels.axial_mean_shift(np.ascontiguousarray(X), w, float(bandwidth),
                                     MEANSHIFT_MAX_ITER, 1e-13)
    reps, mass = _merge_modes(modes, w)
    # ties keep first-seen order, i.e. the row order of the earliest triad
    order = sorted(range(len(reps)), key=lambda j: (-mass[j], j))
    cos_sep = math.cos(math.radians(min_sep_deg))
    picked = []
    for j in order:
        if all(abs(reps[j] @ reps[i]) <= cos_sep + 1e-12 for i in picked):
            picked.append(j)
            if len(picked) == 3:
                break
    if len(picked) < 3:
        raise DegenerateError("degenerate Manhattan structure")
    raw = reps[picked]
    residual = max(abs(raw[0] @ raw[1]), abs(raw[0] @ raw[2]), abs(raw[1] @ raw[2]))
    if residual > MAX_ORTHO_RESIDUAL:
        log.warning("Manhattan modes far from orthogonal (residual %.3f)", residual)
    axes = np.array([canonical_sign(a) for a in gram_schmidt(raw)])
    assert np.abs(axes @ axes.T - np.eye(3)).max() <= 1e-9
    total = float(w.sum())
    return ManhattanFrame(axes, float(residual), tuple(mass[picked] / total))


def frame_triads(normals, frames, k, seed=0):
    """Cluster the normals of each listed frame into a triad.

    Frames with too few samples or fewer than three clusters are skipped.

    Returns
    -------
    used : list of int
    triads : list of (3, 3) arrays
    weights : list of (3,) arrays
    """
    used, triads, weights = [], [], []
    for f in frames:
        nf = normals.for_frame(f)
        if nf.shape[0] < k:
            log.debug("frame %d: %d normals < k=%d, skipped", f, nf.shape[0], k)
            continue
        cents, counts = cluster_normals(nf, k, seed + int(f))
        if cents.shape[0] < 3:
            log.debug("frame %d: only %d clusters, skipped", f, cents.shape[0])
            continue
        triad, picked, _ = frame_from_clusters(cents, counts)
        used.append(int(f))
        triads.append(triad)
        weights.append(counts[list(picked)].astype(np.float64))
    return used, triads, weights


def estimate_manhattan(bundles_and_frames, cfg: Config) -> ManhattanFrame:
    """Manhattan frame pooled over one or more ``(bundle, frames)`` pairs.

    A single pair gives the per-clip frame; several pairs from one scene give
    the scene frame.
    """
    all_triads, all_poses, all_w = [], [], []
    for bundle, frames in bundles_and_frames:
        used, triads, w = frame_triads(bundle.normals, frames, cfg.normal_k, cfg.seed)
        all_triads += triads
        all_poses += [bundle.poses[f] for f in used]
        all_w += w
    if not all_triads:
        raise DegenerateError("degenerate Manhattan structure: no frame produced a triad")
    return aggregate_manhattan(all_triads, all_poses, all_w, cfg.meanshift_bandwidth,
                               cfg.manhattan_min_sep_deg)


__all__ = [
    "ManhattanFrame", "aggregate_manhattan", "cluster_normals", "estimate_manhattan",
    "frame_from_clusters", "frame_triads", "gram_schmidt",
]
