"""Independent numerical oracles used by the test suite.

These deliberately avoid the implementation's code paths: quadrature-built cost
matrices instead of closed-form integrals, scipy optimizers / null-space solves
instead of the KKT route, brute-force scans instead of refined searches.
"""

from __future__ import annotations

import math

import numpy as np
import scipy.linalg
import scipy.optimize

_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(10)


def _gauss_on(a: float, b: float):
    t = 0.5 * (b - a) * (_GAUSS_NODES + 1.0) + a
    w = 0.5 * (b - a) * _GAUSS_WEIGHTS
    return t, w


def min_jerk_numeric_cost(p0, v0, a0, goal, duration) -> float:
    """Optimal squared-jerk integral found by per-axis numerical optimization.

    Degree-5 coefficients with the four boundary constraints eliminated; the two
    remaining free parameters per axis are optimized with BFGS on a quadrature cost.
    """
    T = float(duration)
    t, w = _gauss_on(0.0, T)
    total = 0.0
    for axis in range(3):
        p0a, v0a, a0a, ga = p0[axis], v0[axis], a0[axis], goal[axis]

        def cost(params):
            c4, c5 = params
            c3 = (ga - p0a - v0a * T - 0.5 * a0a * T**2 - c4 * T**4 - c5 * T**5) / T**3
            jerk = 6.0 * c3 + 24.0 * c4 * t + 60.0 * c5 * t**2
            return float(np.sum(w * jerk * jerk))

        res = scipy.optimize.minimize(cost, x0=np.zeros(2), method="BFGS", tol=1e-14)
        total += float(res.fun)
    return total


def quintic_full_stop_cost(p0, v0, a0, goal, duration) -> float:
    """Squared-jerk cost of the quintic hitting goal with zero end velocity/acceleration."""
    T = float(duration)
    t, w = _gauss_on(0.0, T)
    total = 0.0
    for axis in range(3):
        da = -a0[axis]
        dv = -v0[axis] - a0[axis] * T
        dp = goal[axis] - p0[axis] - v0[axis] * T - 0.5 * a0[axis] * T**2
        alpha = (60 * T**2 * da - 360 * T * dv + 720 * dp) / T**5
        beta = (-24 * T**3 * da + 168 * T**2 * dv - 360 * T * dp) / T**5
        gamma = (3 * T**4 * da - 24 * T**3 * dv + 60 * T**2 * dp) / T**5
        jerk = gamma + beta * t + 0.5 * alpha * t**2
        total += float(np.sum(w * jerk * jerk))
    return total


def _tspace_deriv_row(width: int, t: float, order: int) -> np.ndarray:
    row = np.zeros(width)
    for j in range(order, width):
        row[j] = (math.factorial(j) / math.factorial(j - order)) * t ** (j - order)
    return row


def min_snap_qp_cost(waypoints: np.ndarray, durations: np.ndarray, cyclic: bool) -> float:
    """Optimal snap cost from a dense QP in the raw t-space monomial basis.

    Cost matrix assembled by Gauss quadrature, constraints solved per axis by a
    particular solution plus a null-space reduction (SVD).
    """
    n = len(durations)
    width = 8
    nvar = n * width

    q = np.zeros((nvar, nvar))
    for i in range(n):
        t, w = _gauss_on(0.0, float(durations[i]))
        basis = np.zeros((len(t), width))
        for j in range(4, width):
            basis[:, j] = (math.factorial(j) / math.factorial(j - 4)) * t ** (j - 4)
        q[i * width : (i + 1) * width, i * width : (i + 1) * width] = basis.T @ (
            basis * w[:, None]
        )

    rows, rhs = [], []

    def add(terms, b):
        row = np.zeros(nvar)
        for seg, t, order, scale in terms:
            row[seg * width : (seg + 1) * width] += scale * _tspace_deriv_row(width, t, order)
        rows.append(row)
        rhs.append(b)

    m = len(waypoints)
    for i in range(n):
        w_start = waypoints[i]
        w_end = waypoints[(i + 1) % m] if cyclic else waypoints[i + 1]
        add([(i, 0.0, 0, 1.0)], w_start)
        add([(i, float(durations[i]), 0, 1.0)], w_end)
    joints = range(n) if cyclic else range(n - 1)
    for i in joints:
        nxt = (i + 1) % n
        for k in range(1, 5):
            add([(i, float(durations[i]), k, 1.0), (nxt, 0.0, k, -1.0)], np.zeros(3))
    if not cyclic:
        for k in (1, 2):
            add([(0, 0.0, k, 1.0)], np.zeros(3))
            add([(n - 1, float(durations[n - 1]), k, 1.0)], np.zeros(3))

    a = np.vstack(rows)
    b = np.vstack([np.atleast_1d(r) for r in rhs])
    if b.ndim == 1:
        b = b[:, None]

    nullsp = scipy.linalg.null_space(a)
    total = 0.0
    for axis in range(3):
        c_p = np.linalg.lstsq(a, b[:, axis], rcond=None)[0]
        if nullsp.shape[1]:
            reduced = nullsp.T @ q @ nullsp
            z = np.linalg.solve(reduced, -nullsp.T @ q @ c_p)
            c = c_p + nullsp @ z
        else:
            c = c_p
        total += float(c @ q @ c)
    return total


def brute_force_closest(eval_many, total_duration: float, p: np.ndarray, samples: int = 1_000_000):
    """Closest trajectory point to p by a dense scan (chunked to bound memory)."""
    best_d2, best_t = np.inf, 0.0
    chunk = 100_000
    for start in range(0, samples, chunk):
        count = min(chunk, samples - start)
        ts = (np.arange(start, start + count) + 0.5) * (total_duration / samples)
        pos = eval_many(ts)
        d2 = np.sum((pos - p) ** 2, axis=1)
        i = int(np.argmin(d2))
        if d2[i] < best_d2:
            best_d2, best_t = float(d2[i]), float(ts[i])
    return best_t, math.sqrt(best_d2)


def forward_scan_advance(eval_fn, t_from: float, d: float, total_duration: float, cyclic: bool,
                         steps: int = 400_000):
    """First forward point at Euclidean distance d, by a fine scan."""
    p0 = eval_fn(t_from)
    horizon = total_duration if cyclic else total_duration - t_from
    dt = horizon / steps
    prev_t = t_from
    for k in range(1, steps + 1):
        t = t_from + k * dt
        q = eval_fn(t)
        if np.linalg.norm(q - p0) >= d:
            for _ in range(60):
                mid = 0.5 * (prev_t + t)
                if np.linalg.norm(eval_fn(mid) - p0) >= d:
                    t = mid
                else:
                    prev_t = mid
            return eval_fn(0.5 * (prev_t + t))
        prev_t = t
    return eval_fn(t_from + horizon)
