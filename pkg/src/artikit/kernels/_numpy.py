"""Pure-numpy implementations of the hot loops.

Every function here has a twin with an identical signature in ``_numba``.
The numpy versions vectorize where the algorithm allows it; the sequential
recursions (Kalman, RTS) are written as plain loops over small matrices.
"""

import numpy as np

_LINE_CHUNK = 256


def kalman_forward(zs, x0, P0, Fs, Qs, H, R, gate):
    n = zs.shape[0]
    dim = x0.shape[0]
    x_pred = np.empty((n, dim))
    P_pred = np.empty((n, dim, dim))
    x_filt = np.empty((n, dim))
    P_filt = np.empty((n, dim, dim))
    d2 = np.zeros(n)
    gated = np.zeros(n, dtype=np.bool_)
    eye = np.eye(dim)

    x_pred[0] = x0
    P_pred[0] = P0
    x_filt[0] = x0
    P_filt[0] = P0
    x, P = x0.copy(), P0.copy()
    for k in range(1, n):
        F = Fs[k - 1]
        x = F @ x
        P = F @ P @ F.T + Qs[k - 1]
        P = 0.5 * (P + P.T)
        x_pred[k] = x
        P_pred[k] = P

        y = zs[k] - H @ x
        S = H @ P @ H.T + R
        Sinv_y = np.linalg.solve(S, y)
        d2[k] = y @ Sinv_y
        if d2[k] > gate:
            gated[k] = True
        else:
            K = np.linalg.solve(S, H @ P).T
            x = x + K @ y
            A = eye - K @ H
            P = A @ P @ A.T + K @ R @ K.T
            P = 0.5 * (P + P.T)
        x_filt[k] = x
        P_filt[k] = P
    return x_pred, P_pred, x_filt, P_filt, d2, gated


def rts_backward(Fs, x_pred, P_pred, x_filt, P_filt):
    n = x_filt.shape[0]
    xs = x_filt.copy()
    Ps = P_filt.copy()
    for k in range(n - 2, -1, -1):
        # G = P_f F^T P_pred^-1, computed via a solve on the symmetric P_pred
        G = np.linalg.solve(P_pred[k + 1], Fs[k] @ P_filt[k]).T
        xs[k] = x_filt[k] + G @ (xs[k + 1] - x_pred[k + 1])
        P = P_filt[k] + G @ (Ps[k + 1] - P_pred[k + 1]) @ G.T
        Ps[k] = 0.5 * (P + P.T)
    return xs, Ps


def line_scores(points, pairs, tol):
    m = pairs.shape[0]
    counts = np.zeros(m, dtype=np.int64)
    sse = np.full(m, np.inf)
    tol2 = tol * tol
    for start in range(0, m, _LINE_CHUNK):
        sl = slice(start, min(start + _LINE_CHUNK, m))
        a = points[pairs[sl, 0]]
        d = points[pairs[sl, 1]] - a
        norm = np.linalg.norm(d, axis=1)
        ok = norm > 1e-12
        d[ok] /= norm[ok, None]
        v = points[None, :, :] - a[:, None, :]
        along = np.einsum("mnk,mk->mn", v, d)
        dist2 = np.maximum(np.einsum("mnk,mnk->mn", v, v) - along * along, 0.0)
        inl = dist2 <= tol2
        c = inl.sum(axis=1)
        s = np.where(inl, dist2, 0.0).sum(axis=1)
        counts[sl] = np.where(ok, c, 0)
        sse[sl] = np.where(ok, s, np.inf)
    return counts, sse


def farthest_point_order(points, first, k):
    n = points.shape[0]
    out = np.empty(k, dtype=np.int64)
    out[0] = first
    mind = np.sum((points - points[first]) ** 2, axis=1)
    # chosen points drop below every candidate so coincident ones are not re-picked
    mind[first] = -1.0
    for i in range(1, k):
        nxt = int(np.argmax(mind))
        out[i] = nxt
        mind = np.minimum(mind, np.sum((points - points[nxt]) ** 2, axis=1))
        mind[out[:i + 1]] = -1.0
    return out


def radius_variance_search(centered, bases, offsets):
    """Per-direction minimum of the radius variance over a grid of offsets.

    ``centered`` are points minus their centroid, ``bases`` holds two
    orthonormal vectors spanning the plane normal to each candidate
    direction, ``offsets`` are in-plane line positions in that basis.
    The points must have zero mean so that the second moment of the
    radius does not depend on the per-point cross term.
    """
    n_dir = bases.shape[0]
    best_val = np.empty(n_dir)
    best_idx = np.empty(n_dir, dtype=np.int64)
    for d in range(n_dir):
        p2 = centered @ bases[d].T
        diff = p2[None, :, :] - offsets[:, None, :]
        r = np.sqrt(np.einsum("cnk,cnk->cn", diff, diff))
        # centered points: E[r^2] = E|p|^2 + |o|^2
        var = np.mean(np.sum(p2 * p2, axis=1)) + np.sum(offsets * offsets, axis=1) - r.mean(axis=1) ** 2
        j = int(np.argmin(var))
        best_val[d] = max(var[j], 0.0)
        best_idx[d] = j
    return best_val, best_idx


def axial_mean_shift(X, w, bandwidth, max_iter, tol):
    modes = X.copy()
    active = np.ones(X.shape[0], dtype=np.bool_)
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        c = modes[idx] @ X.T
        k = w[None, :] * np.maximum(0.0, 1.0 - (1.0 - np.abs(c)) / bandwidth)
        s = np.where(c < 0.0, -1.0, 1.0)
        new = (k * s) @ X
        new /= np.linalg.norm(new, axis=1)[:, None]
        done = 1.0 - np.abs(np.sum(new * modes[idx], axis=1)) < tol
        modes[idx] = new
        active[idx[done]] = False
    return modes
