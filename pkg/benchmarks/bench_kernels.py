"""Time the numba kernels against their numpy twins.

Usage::

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Each kernel runs on inputs of the size the pipeline feeds it; numba is
called once beforehand so compilation is not timed.  Outputs of the two
backends are compared and the largest absolute difference is reported.
"""

import argparse
import json
import time

import numpy as np

from artikit.core.config import Config
from artikit.kernels import get_backend
from artikit.synth import _plane_basis, hemisphere_grid
from artikit.trajectory import H_POS, initial_state, transition_stack


def kalman_inputs(rng, n=200):
    cfg = Config()
    ts = np.cumsum(rng.uniform(1 / 60, 1 / 20, n))
    t = ts - ts[0]
    zs = np.column_stack([0.4 * np.cos(t), 0.4 * np.sin(t), 0.1 * t]) + rng.normal(0, 0.02, (n, 3))
    Fs, Qs = transition_stack(ts, cfg)
    x0, P0 = initial_state(zs[0], cfg)
    return (np.ascontiguousarray(zs), x0, P0, Fs, Qs, H_POS, cfg.obs_noise**2 * np.eye(3),
            7.814727903251178)


def rts_inputs(rng, numpy_backend):
    args = kalman_inputs(rng)
    x_pred, P_pred, x_filt, P_filt, _, _ = numpy_backend.kalman_forward(*args)
    return args[3], x_pred, P_pred, x_filt, P_filt


def line_inputs(rng, n=400, m=1000):
    t = rng.uniform(-0.5, 0.5, n)
    pts = np.outer(t, [0.6, 0.0, 0.8]) + rng.normal(0, 0.01, (n, 3))
    pts[: n // 3] = rng.uniform(-0.5, 0.5, (n // 3, 3))
    pairs = rng.integers(0, n, (m, 2))
    return np.ascontiguousarray(pts), pairs, 0.025


def fps_inputs(rng, n=2000):
    return rng.uniform(-2, 2, (n, 3)), 0, 50


def search_inputs(rng, n=120, dir_step=5.0, pos_step=0.05, max_radius=1.0):
    ang = np.linspace(0, 1.5, n)
    pts = np.column_stack([0.4 * np.cos(ang), 0.4 * np.sin(ang), np.zeros(n)])
    pts += rng.normal(0, 0.02, pts.shape)
    X = np.ascontiguousarray(pts - pts.mean(axis=0))
    dirs = hemisphere_grid(dir_step)
    bases = np.ascontiguousarray(np.stack([_plane_basis(u) for u in dirs]))
    k = int(np.ceil(max_radius / pos_step))
    g = np.arange(-k, k + 1) * pos_step
    A, B = np.meshgrid(g, g, indexing="ij")
    offs = np.column_stack([A.ravel(), B.ravel()])
    offs = np.ascontiguousarray(offs[np.hypot(offs[:, 0], offs[:, 1]) <= max_radius])
    return X, bases, offs


def mean_shift_inputs(rng, n=600):
    axes = np.eye(3)
    X = axes[rng.integers(0, 3, n)] * rng.choice([-1.0, 1.0], (n, 1))
    X += rng.normal(0, 0.05, X.shape)
    X /= np.linalg.norm(X, axis=1)[:, None]
    return np.ascontiguousarray(X), np.ones(n), 0.05, 200, 1e-13


def _flat(out):
    if isinstance(out, tuple):
        return np.concatenate([np.asarray(o, dtype=np.float64).ravel() for o in out])
    return np.asarray(out, dtype=np.float64).ravel()


def max_abs_diff(a, b):
    a, b = _flat(a), _flat(b)
    same = a == b  # also matches equal infinities
    with np.errstate(invalid="ignore"):
        return float(np.max(np.where(same, 0.0, np.abs(a - b)), initial=0.0))


def _time(fn, args, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def run(repeat=5, seed=0):
    nb, npy = get_backend("numba"), get_backend("numpy")
    rng = np.random.default_rng(seed)
    cases = {
        "kalman_forward": kalman_inputs(rng),
        "rts_backward": rts_inputs(rng, npy),
        "line_scores": line_inputs(rng),
        "farthest_point_order": fps_inputs(rng),
        "radius_variance_search": search_inputs(rng),
        "axial_mean_shift": mean_shift_inputs(rng),
    }
    rows = []
    for name, args in cases.items():
        f_nb, f_np = getattr(nb, name), getattr(npy, name)
        diff = max_abs_diff(f_nb(*args), f_np(*args))
        t_nb = _time(f_nb, args, repeat)
        # the dense search is slow in numpy; one run is enough to rank it
        t_np = _time(f_np, args, 1 if name == "radius_variance_search" else repeat)
        rows.append({"kernel": name, "numba_s": t_nb, "numpy_s": t_np,
                     "speedup": t_np / t_nb, "max_abs_diff": diff})
    return rows


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--json", help="also write the rows to this file")
    args = ap.parse_args()
    rows = run(args.repeat, args.seed)
    print(f"{'kernel':<24}{'numba [ms]':>12}{'numpy [ms]':>12}{'speedup':>10}{'max |diff|':>13}")
    for r in rows:
        print(f"{r['kernel']:<24}{1e3 * r['numba_s']:>12.3f}{1e3 * r['numpy_s']:>12.3f}"
              f"{r['speedup']:>10.1f}{r['max_abs_diff']:>13.2e}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
