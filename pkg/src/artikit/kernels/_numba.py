"""numba-compiled twins of the kernels in ``_numpy``.

Signatures and semantics match the numpy module exactly; only the loop
structure differs.  Compiled lazily on first call and cached on disk.
"""

import numpy as np
from numba import njit


@njit(cache=True)
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
    x = x0.copy()
    P = P0.copy()
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


@njit(cache=True)
def rts_backward(Fs, x_pred, P_pred, x_filt, P_filt):
    n = x_filt.shape[0]
    xs = x_filt.copy()
    Ps = P_filt.copy()
    for k in range(n - 2, -1, -1):
        G = np.linalg.solve(P_pred[k + 1], Fs[k] @ P_filt[k]).T
        xs[k] = x_filt[k] + G @ (xs[k + 1] - x_pred[k + 1])
        P = P_filt[k] + G @ (Ps[k + 1] - P_pred[k + 1]) @ G.T
        Ps[k] = 0.5 * (P + P.T)
    return xs, Ps


@njit(cache=True)
def line_scores(points, pairs, tol):
    m = pairs.shape[0]
    n = points.shape[0]
    counts = np.zeros(m, dtype=np.int64)
    sse = np.full(m, np.inf)
    tol2 = tol * tol
    for h in range(m):
        a = points[pairs[h, 0]]
        d = points[pairs[h, 1]] - a
        norm = np.sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
        if norm <= 1e-12:
            continue
        d = d / norm
        c = 0
        s = 0.0
        for i in range(n):
            v0 = points[i, 0] - a[0]
            v1 = points[i, 1] - a[1]
            v2 = points[i, 2] - a[2]
            along = v0 * d[0] + v1 * d[1] + v2 * d[2]
            dist2 = v0 * v0 + v1 * v1 + v2 * v2 - along * along
            if dist2 < 0.0:
                dist2 = 0.0
            if dist2 <= tol2:
                c += 1
                s += dist2
        counts[h] = c
        sse[h] = s
    return counts, sse


@njit(cache=True)
def farthest_point_order(points, first, k):
    n = points.shape[0]
    out = np.empty(k, dtype=np.int64)
    out[0] = first
    mind = np.empty(n)
    for i in range(n):
        dx = points[i, 0] - points[first, 0]
        dy = points[i, 1] - points[first, 1]
        dz = points[i, 2] - points[first, 2]
        mind[i] = dx * dx + dy * dy + dz * dz
    # chosen points drop below every candidate so coincident ones are not re-picked
    mind[first] = -1.0
    for j in range(1, k):
        nxt = 0
        best = -1.0
        for i in range(n):
            if mind[i] > best:
                best = mind[i]
                nxt = i
        out[j] = nxt
        mind[nxt] = -1.0
        for i in range(n):
            dx = points[i, 0] - points[nxt, 0]
            dy = points[i, 1] - points[nxt, 1]
            dz = points[i, 2] - points[nxt, 2]
            dd = dx * dx + dy * dy + dz * dz
            if dd < mind[i]:
                mind[i] = dd
    return out


# fastmath lets the sqrt reduction vectorize; the result is a grid minimum,
# so reassociation only perturbs it at rounding level
@njit(cache=True, fastmath=True)
def radius_variance_search(centered, bases, offsets):
    n_dir = bases.shape[0]
    n_off = offsets.shape[0]
    n = centered.shape[0]
    best_val = np.empty(n_dir)
    best_idx = np.empty(n_dir, dtype=np.int64)
    px = np.empty(n)
    py = np.empty(n)
    for d in range(n_dir):
        m2 = 0.0
        for i in range(n):
            px[i] = (centered[i, 0] * bases[d, 0, 0] + centered[i, 1] * bases[d, 0, 1]
                     + centered[i, 2] * bases[d, 0, 2])
            py[i] = (centered[i, 0] * bases[d, 1, 0] + centered[i, 1] * bases[d, 1, 1]
                     + centered[i, 2] * bases[d, 1, 2])
            m2 += px[i] * px[i] + py[i] * py[i]
        m2 /= n
        bv = np.inf
        bi = 0
        for c in range(n_off):
            ox = offsets[c, 0]
            oy = offsets[c, 1]
            mean = 0.0
            for i in range(n):
                dx = px[i] - ox
                dy = py[i] - oy
                mean += np.sqrt(dx * dx + dy * dy)
            mean /= n
            # centered points: E[r^2] = E|p|^2 + |o|^2
            var = m2 + ox * ox + oy * oy - mean * mean
            if var < bv:
                bv = var
                bi = c
        best_val[d] = max(bv, 0.0)
        best_idx[d] = bi
    return best_val, best_idx


@njit(cache=True)
def axial_mean_shift(X, w, bandwidth, max_iter, tol):
    n = X.shape[0]
    modes = X.copy()
    for s in range(n):
        m0, m1, m2 = X[s, 0], X[s, 1], X[s, 2]
        for _ in range(max_iter):
            a0 = 0.0
            a1 = 0.0
            a2 = 0.0
            for j in range(n):
                c = m0 * X[j, 0] + m1 * X[j, 1] + m2 * X[j, 2]
                k = 1.0 - (1.0 - abs(c)) / bandwidth
                if k <= 0.0:
                    continue
                k *= w[j]
                if c < 0.0:
                    k = -k
                a0 += k * X[j, 0]
                a1 += k * X[j, 1]
                a2 += k * X[j, 2]
            norm = np.sqrt(a0 * a0 + a1 * a1 + a2 * a2)
            a0 /= norm
            a1 /= norm
            a2 /= norm
            shift = 1.0 - abs(a0 * m0 + a1 * m1 + a2 * m2)
            m0, m1, m2 = a0, a1, a2
            if shift < tol:
                break
        modes[s, 0] = m0
        modes[s, 1] = m1
        modes[s, 2] = m2
    return modes