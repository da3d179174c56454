"""Contact-trajectory refinement.

Fingertip landmarks are averaged into a single contact proxy, trimmed to
the interaction, then smoothed with an integrated Ornstein-Uhlenbeck prior:
per axis the state is ``[position, velocity]`` where the velocity reverts to
zero at rate ``1 / length_scale`` and is driven by white noise of magnitude
``process_noise``.  State order is ``[x, vx, y, vy, z, vz]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import factorial

import numpy as np
from scipy import stats

from . import kernels
from .core.config import Config
from .core.types import FingertipObservation
from .errors import ArtikitError, NoInteractionError

H_POS = np.kron(np.eye(3), np.array([[1.0, 0.0]]))
# Below this reversion-rate x interval product the closed forms lose digits
# to cancellation and the Taylor series takes over.
_SERIES_CUTOFF = 0.05
_SERIES_TERMS = 18


@dataclass(frozen=True)
class ObservedTrajectory:
    timestamps: np.ndarray
    points: np.ndarray
    contact: np.ndarray
    source_indices: np.ndarray

    def __len__(self):
        return self.timestamps.shape[0]

    def subset(self, idx):
        return ObservedTrajectory(self.timestamps[idx], self.points[idx], self.contact[idx],
                                  self.source_indices[idx])


@dataclass(frozen=True)
class OUModel:
    length_scale: float
    process_noise: float
    obs_noise: float
    dt: float
    F: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    R: np.ndarray

    @property
    def rate(self):
        return 1.0 / self.length_scale


@dataclass(frozen=True)
class FilterResult:
    timestamps: np.ndarray
    observations: np.ndarray
    transitions: np.ndarray
    process_covs: np.ndarray
    x_pred: np.ndarray
    P_pred: np.ndarray
    x_filt: np.ndarray
    P_filt: np.ndarray
    mahalanobis2: np.ndarray
    gated: np.ndarray
    source_indices: np.ndarray


@dataclass(frozen=True)
class SmoothedTrajectory:
    timestamps: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    covariances: np.ndarray
    outlier_mask: np.ndarray
    source_indices: np.ndarray

    def __len__(self):
        return self.positions.shape[0]

    @classmethod
    def from_points(cls, points, timestamps=None):
        """Wrap bare positions, e.g. for geometry that skips the smoother."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        n = pts.shape[0]
        ts = np.arange(n, dtype=np.float64) if timestamps is None else np.asarray(timestamps, float)
        return cls(ts, pts, np.zeros_like(pts), np.zeros((n, 6, 6)), np.zeros(n, dtype=bool),
                   np.arange(n))


def aggregate_fingertips(obs) -> ObservedTrajectory:
    """Per-frame mean of the thumb, index and middle fingertips."""
    obs = list(obs)
    if not obs:
        raise ArtikitError("aggregate_fingertips: empty observation list")
    tips = np.array([[o.thumb, o.index, o.middle] for o in obs], dtype=np.float64)
    return ObservedTrajectory(
        timestamps=np.array([o.timestamp for o in obs], dtype=np.float64),
        points=tips.mean(axis=1),
        contact=np.array([o.contact for o in obs], dtype=bool),
        source_indices=np.arange(len(obs)),
    )


def trim_by_contact(traj: ObservedTrajectory) -> ObservedTrajectory:
    """Keep the longest contiguous run of in-contact observations.

    Ties go to the earliest run.
    """
    c = np.asarray(traj.contact, dtype=bool)
    if not c.any():
        raise NoInteractionError()
    padded = np.concatenate([[False], c, [False]])
    edges = np.flatnonzero(np.diff(padded.astype(np.int8)))
    starts, stops = edges[::2], edges[1::2]
    best = int(np.argmax(stops - starts))
    return traj.subset(slice(starts[best], stops[best]))


def _series(coeff, x):
    return sum(coeff(n) * x**n for n in range(_SERIES_TERMS, 0, -1))


def ou_block(dt, rate, q):
    """Per-axis transition and process covariance of the integrated OU model.

    Returns ``(F, Q)`` as 2x2 arrays, exact for any ``dt > 0``.  ``Q`` is the
    integral of ``F(s) L q^2 L^T F(s)^T`` over ``[0, dt]`` with ``L = [0, 1]^T``.
    """
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    x = rate * dt
    decay = np.exp(-x)
    if x < _SERIES_CUTOFF:
        # g1(x) = (1 - e^-x) / x, and the two position integrals below, as
        # series in x so that tiny steps and very long length scales stay exact
        g1 = _series(lambda n: (-1) ** (n + 1) / factorial(n), x) / x
        # x - 2(1 - e^-x) + (1 - e^-2x)/2
        pp = _series(lambda n: 0.0 if n == 1 else (-1) ** n * (2 - 2 ** (n - 1)) / factorial(n), x)
        # (1 - e^-x) - (1 - e^-2x)/2
        pv = _series(lambda n: (-1) ** n * (2 ** (n - 1) - 1) / factorial(n), x)
        # (1 - e^-2x) / (2x)
        vv = _series(lambda n: (-1) ** (n + 1) * 2 ** (n - 1) / factorial(n), x) / x
    else:
        em1 = -np.expm1(-x)
        em2 = -np.expm1(-2 * x)
        g1 = em1 / x
        pp = x - 2 * em1 + em2 / 2
        pv = em1 - em2 / 2
        vv = em2 / (2 * x)
    q2 = q * q
    F = np.array([[1.0, dt * g1], [0.0, decay]])
    # rescale from the dimensionless integrals: position terms carry 1/rate^3
    # and 1/rate^2, the velocity term dt
    qpp = q2 * pp * dt**3 / x**3
    qpv = q2 * pv * dt**2 / x**2
    qvv = q2 * vv * dt
    Q = np.array([[qpp, qpv], [qpv, qvv]])
    return F, Q


def build_ou_model(dt, cfg: Config) -> OUModel:
    F2, Q2 = ou_block(dt, 1.0 / cfg.length_scale, cfg.process_noise)
    eye = np.eye(3)
    return OUModel(cfg.length_scale, cfg.process_noise, cfg.obs_noise, float(dt),
                   np.kron(eye, F2), np.kron(eye, Q2), H_POS.copy(), cfg.obs_noise**2 * eye)


def gate_threshold(gate_p, df=3):
    """Squared-Mahalanobis rejection threshold: the upper ``gate_p`` chi-square quantile."""
    return float(stats.chi2.isf(gate_p, df))


def initial_state(z0, cfg: Config):
    x0 = np.zeros(6)
    x0[0::2] = z0
    P0 = np.kron(np.eye(3), np.diag([cfg.obs_noise**2, cfg.init_velocity_std**2]))
    return x0, P0


def transition_stack(timestamps, cfg: Config):
    dts = np.diff(timestamps)
    if np.any(dts <= 0):
        raise ArtikitError("timestamps must be strictly increasing")
    rate = 1.0 / cfg.length_scale
    eye = np.eye(3)
    Fs = np.empty((dts.size, 6, 6))
    Qs = np.empty((dts.size, 6, 6))
    for k, dt in enumerate(dts):
        F2, Q2 = ou_block(dt, rate, cfg.process_noise)
        Fs[k] = np.kron(eye, F2)
        Qs[k] = np.kron(eye, Q2)
    return Fs, Qs


def kalman_filter(traj: ObservedTrajectory, cfg: Config, gate_p: float | None = None) -> FilterResult:
    """Forward pass with chi-square innovation gating.

    The first observation initializes the state (it is not re-applied as an
    update).  Gated observations get a prediction-only step.
    """
    n = len(traj)
    if n < 2:
        raise ArtikitError("kalman_filter needs at least 2 observations")
    ts = np.asarray(traj.timestamps, dtype=np.float64)
    zs = np.ascontiguousarray(traj.points, dtype=np.float64)
    Fs, Qs = transition_stack(ts, cfg)
    x0, P0 = initial_state(zs[0], cfg)
    R = cfg.obs_noise**2 * np.eye(3)
    gate = gate_threshold(cfg.gate_p if gate_p is None else gate_p)
    x_pred, P_pred, x_filt, P_filt, d2, gated = kernels.kalman_forward(
        zs, x0, P0, Fs, Qs, H_POS, R, gate)
    return FilterResult(ts, zs, Fs, Qs, x_pred, P_pred, x_filt, P_filt, d2, gated,
                        np.asarray(traj.source_indices))


def rts_smooth(filt: FilterResult) -> SmoothedTrajectory:
    """Backward RTS pass; gated steps are smoothed but dropped from the output."""
    xs, Ps = kernels.rts_backward(filt.transitions, filt.x_pred, filt.P_pred, filt.x_filt,
                                  filt.P_filt)
    keep = ~filt.gated
    return SmoothedTrajectory(
        timestamps=filt.timestamps[keep],
        positions=xs[keep][:, 0::2],
        velocities=xs[keep][:, 1::2],
        covariances=Ps[keep],
        outlier_mask=filt.gated.copy(),
        source_indices=filt.source_indices[keep],
    )


def smooth_fingertips(obs, cfg: Config) -> SmoothedTrajectory:
    traj = trim_by_contact(aggregate_fingertips(obs))
    return rts_smooth(kalman_filter(traj, cfg))


def observed_from_points(timestamps, points, contact=None) -> ObservedTrajectory:
    ts = np.asarray(timestamps, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c = np.ones(ts.size, dtype=bool) if contact is None else np.asarray(contact, dtype=bool)
    return ObservedTrajectory(ts, pts, c, np.arange(ts.size))


__all__ = [
    "FingertipObservation", "FilterResult", "OUModel", "ObservedTrajectory", "SmoothedTrajectory",
    "aggregate_fingertips", "build_ou_model", "gate_threshold", "kalman_filter",
    "observed_from_points", "ou_block", "rts_smooth", "smooth_fingertips", "trim_by_contact",
]
