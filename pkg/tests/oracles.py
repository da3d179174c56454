"""Independent reference implementations used as test oracles.

None of these call into the package's numerical code: they rebuild the
quantity under test from its definition with generic scipy tools.
"""

import itertools
import math

import numpy as np
from scipy import integrate, linalg, special


def ou_drift(rate):
    return np.array([[0.0, 1.0], [0.0, -rate]])


def ode_transition(dt, rate):
    """F(dt) by integrating dx/dt = A x from each unit vector."""
    A = ou_drift(rate)
    cols = []
    for e in np.eye(2):
        sol = integrate.solve_ivp(lambda t, x: A @ x, (0.0, dt), e, method="DOP853",
                                  rtol=1e-13, atol=1e-16)
        cols.append(sol.y[:, -1])
    return np.column_stack(cols)


def quad_process_cov(dt, rate, q):
    """Q(dt) as the adaptive-quadrature integral of F(s) L q^2 L^T F(s)^T."""
    A = ou_drift(rate)
    L = np.array([0.0, 1.0])

    def entry(i, j):
        def f(s):
            v = linalg.expm(A * s) @ L
            return q * q * v[i] * v[j]
        return integrate.quad(f, 0.0, dt, epsabs=0.0, epsrel=1e-13, limit=200)[0]

    pv = entry(0, 1)
    return np.array([[entry(0, 0), pv], [pv, entry(1, 1)]])


def van_loan(dt, rate, q):
    """(F, Q) from the matrix exponential of the Van Loan block matrix."""
    A = ou_drift(rate)
    G = q * q * np.array([[0.0, 0.0], [0.0, 1.0]])
    M = np.block([[-A, G], [np.zeros((2, 2)), A.T]]) * dt
    E = linalg.expm(M)
    F = E[2:, 2:].T
    return F, F @ E[:2, 2:]


def chi2_cdf_df3(x):
    return special.erf(math.sqrt(x / 2)) - math.sqrt(2 * x / math.pi) * math.exp(-x / 2)


def chi2_isf_df3(p, tol=1e-12):
    """Upper quantile of chi-square(3) by bisection on the closed-form CDF."""
    lo, hi = 0.0, 100.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if 1 - chi2_cdf_df3(mid) > p:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _blocks(ts, rate, q):
    eye = np.eye(3)
    out = []
    for dt in np.diff(ts):
        F2, Q2 = van_loan(dt, rate, q)
        out.append((np.kron(eye, F2), np.kron(eye, Q2)))
    return out


def batch_map(ts, zs, length_scale, q, obs_noise, v0_std, observed=None):
    """MAP states of the whole sequence from one dense linear solve.

    Prior: x_0 ~ N([z_0, 0], diag(obs_noise^2, v0_std^2)) per axis, Gaussian
    transitions, and position observations at every later step flagged in
    ``observed``.  States are ordered (p_x, v_x, p_y, v_y, p_z, v_z).
    """
    n = len(ts)
    observed = np.ones(n, bool) if observed is None else observed
    H = np.zeros((3, 6))
    H[[0, 1, 2], [0, 2, 4]] = 1.0
    Rinv = np.eye(3) / obs_noise**2
    Lam = np.zeros((6 * n, 6 * n))
    b = np.zeros(6 * n)
    m0 = np.zeros(6)
    m0[0::2] = zs[0]
    P0inv = np.linalg.inv(np.kron(np.eye(3), np.diag([obs_noise**2, v0_std**2])))
    Lam[:6, :6] += P0inv
    b[:6] += P0inv @ m0
    for k, (F, Q) in enumerate(_blocks(ts, 1.0 / length_scale, q), start=1):
        Qi = np.linalg.inv(Q)
        J = np.hstack([-F, np.eye(6)])  # x_k - F x_{k-1}
        s = slice(6 * (k - 1), 6 * (k + 1))
        Lam[s, s] += J.T @ Qi @ J
        if observed[k]:
            t = slice(6 * k, 6 * k + 6)
            Lam[t, t] += H.T @ Rinv @ H
            b[t] += H.T @ Rinv @ zs[k]
    x = linalg.solve(Lam, b, assume_a="pos")
    return x.reshape(n, 6)


def textbook_kalman_d2(ts, zs, length_scale, q, obs_noise, v0_std, threshold):
    """Plain forward filter; returns per-step squared Mahalanobis distances and gate flags."""
    H = np.zeros((3, 6))
    H[[0, 1, 2], [0, 2, 4]] = 1.0
    R = obs_noise**2 * np.eye(3)
    x = np.zeros(6)
    x[0::2] = zs[0]
    P = np.kron(np.eye(3), np.diag([obs_noise**2, v0_std**2]))
    d2 = [0.0]
    gated = [False]
    for k, (F, Q) in enumerate(_blocks(ts, 1.0 / length_scale, q), start=1):
        x = F @ x
        P = F @ P @ F.T + Q
        S = H @ P @ H.T + R
        r = zs[k] - H @ x
        m = float(r @ np.linalg.solve(S, r))
        d2.append(m)
        gated.append(m > threshold)
        if m > threshold:
            continue
        K = P @ H.T @ np.linalg.inv(S)
        x = x + K @ r
        P = (np.eye(6) - K @ H) @ P
    return np.array(d2), np.array(gated)


def max_min_subset(points, n, first):
    """Best max-min-distance subset containing ``first``, by enumeration."""
    pts = np.asarray(points, float)
    best, best_val = None, -1.0
    others = [i for i in range(len(pts)) if i != first]
    for combo in itertools.combinations(others, n - 1):
        idx = (first,) + combo
        d = min(np.linalg.norm(pts[a] - pts[b]) for a, b in itertools.combinations(idx, 2))
        if d > best_val:
            best, best_val = set(idx), d
    return best, best_val


def tls_direction(points):
    X = np.asarray(points, float)
    X = X - X.mean(axis=0)
    return np.linalg.svd(X, full_matrices=False)[2][0]


def angle_deg(u, v):
    c = abs(float(np.dot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v)))
    return math.degrees(math.acos(min(1.0, c)))
