"""Piecewise-polynomial trajectories: minimum-snap globals, minimum-jerk segments.

Global trajectories are degree-7 splines through waypoints, solved per axis as an
equality-constrained QP (KKT system) in normalized segment time, then uniformly
time-scaled until flatness-derived thrust, roll/pitch rate, and speed limits hold.
Interception segments are degree-5 closed forms with free terminal velocity and
acceleration.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .core import GRAVITY, QuadState, Vec3, clamp, ensure_finite

SEGMENT_T_MIN = 0.1
SEGMENT_T_MAX = 10.0

_FEAS_SAMPLES_PER_SEGMENT = 300
_FEAS_MARGIN = 1e-3
_THRUST_FLOOR = 1e-3


@dataclass(frozen=True)
class FeasibilityLimits:
    v_max_target: float
    max_normalized_thrust: float = 18.0
    max_rollpitch_rate: float = 1.5

    def __post_init__(self):
        if min(self.v_max_target, self.max_normalized_thrust, self.max_rollpitch_rate) <= 0:
            raise ValueError("all feasibility limits must be positive")


@dataclass(frozen=True)
class PolySegment:
    """Per-axis polynomial p_axis(t) = sum_k coeffs[axis, k] t^k, t in [0, duration]."""

    duration: float
    coeffs: np.ndarray  # (3, degree+1)

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError(f"segment duration must be positive, got {self.duration}")
        ensure_finite("segment coeffs", self.coeffs)

    @property
    def degree(self) -> int:
        return self.coeffs.shape[1] - 1

    def eval(self, t: float, order: int = 0) -> Vec3:
        c = _derive_coeffs(self.coeffs, order)
        return _horner(c, t)

    def eval_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        c = _derive_coeffs(self.coeffs, order)
        return _horner_many(c[None, :, :].repeat(len(ts), axis=0), np.asarray(ts, dtype=float))


def _derive_coeffs(coeffs: np.ndarray, order: int) -> np.ndarray:
    c = coeffs
    for _ in range(order):
        n = c.shape[-1]
        if n <= 1:
            return np.zeros(c.shape[:-1] + (1,))
        c = c[..., 1:] * np.arange(1, n)
    return c


def _horner(c: np.ndarray, t: float) -> np.ndarray:
    out = c[..., -1].astype(float).copy()
    for k in range(c.shape[-1] - 2, -1, -1):
        out = out * t + c[..., k]
    return out


def _horner_many(c: np.ndarray, ts: np.ndarray) -> np.ndarray:
    # c: (m, 3, K), ts: (m,) -> (m, 3)
    out = c[..., -1].copy()
    tcol = ts[:, None]
    for k in range(c.shape[-1] - 2, -1, -1):
        out = out * tcol + c[..., k]
    return out


class Trajectory:
    """Ordered polynomial segments, optionally cyclic, with cached evaluation tables."""

    def __init__(self, segments, cyclic: bool):
        segments = tuple(segments)
        if not segments:
            raise ValueError("trajectory needs at least one segment")
        self.segments = segments
        self.cyclic = bool(cyclic)
        self._durations = np.array([s.duration for s in segments])
        self._starts = np.concatenate([[0.0], np.cumsum(self._durations)])
        self.total_duration = float(self._starts[-1])
        width = max(s.coeffs.shape[1] for s in segments)
        coeffs = np.zeros((len(segments), 3, width))
        for i, s in enumerate(segments):
            coeffs[i, :, : s.coeffs.shape[1]] = s.coeffs
        self._dcoeffs = [coeffs]
        for order in range(1, 5):
            prev = self._dcoeffs[order - 1]
            self._dcoeffs.append(prev[..., 1:] * np.arange(1, prev.shape[-1]))
        self._grid_ts: np.ndarray | None = None
        self._grid_pos: np.ndarray | None = None
        self.v_max_achieved = self._compute_v_max()

    # -- evaluation ------------------------------------------------------

    def _locate(self, t: float) -> tuple[int, float]:
        if self.cyclic:
            t = t % self.total_duration
        else:
            t = clamp(t, 0.0, self.total_duration)
        idx = int(np.searchsorted(self._starts, t, side="right")) - 1
        idx = min(max(idx, 0), len(self.segments) - 1)
        return idx, t - self._starts[idx]

    def eval(self, t: float, order: int = 0) -> Vec3:
        idx, tau = self._locate(t)
        return _horner(self._dcoeffs[order][idx], tau)

    def eval_many(self, ts: np.ndarray, order: int = 0) -> np.ndarray:
        ts = np.asarray(ts, dtype=float)
        if self.cyclic:
            ts = np.mod(ts, self.total_duration)
        else:
            ts = np.clip(ts, 0.0, self.total_duration)
        idx = np.clip(
            np.searchsorted(self._starts, ts, side="right") - 1, 0, len(self.segments) - 1
        )
        tau = ts - self._starts[idx]
        return _horner_many(self._dcoeffs[order][idx], tau)

    def position(self, t: float) -> Vec3:
        return self.eval(t, 0)

    def velocity(self, t: float) -> Vec3:
        return self.eval(t, 1)

    def speed(self, t: float) -> float:
        return float(np.linalg.norm(self.eval(t, 1)))

    # -- cached dense grid (projection / advance) -------------------------

    def _grid(self) -> tuple[np.ndarray, np.ndarray]:
        if self._grid_ts is None:
            per_seg = max(128, math.ceil(1500 / len(self.segments)))
            ts = _segment_time_grid(self._durations, per_seg)
            self._grid_ts = ts
            self._grid_pos = self.eval_many(ts, 0)
        return self._grid_ts, self._grid_pos

    def _compute_v_max(self) -> float:
        ts = _segment_time_grid(self._durations, _FEAS_SAMPLES_PER_SEGMENT)
        speeds = np.linalg.norm(self.eval_many(ts, 1), axis=1)
        return float(np.max(speeds))

    # -- serialization -----------------------------------------------------

    def to_json_dict(self) -> dict:
        return {
            "version": 1,
            "cyclic": self.cyclic,
            "segments": [
                {"duration": s.duration, "coeffs": s.coeffs.tolist()} for s in self.segments
            ],
        }

    @staticmethod
    def from_json_dict(data: dict) -> "Trajectory":
        segs = [
            PolySegment(duration=s["duration"], coeffs=np.array(s["coeffs"], dtype=float))
            for s in data["segments"]
        ]
        return Trajectory(segs, cyclic=bool(data["cyclic"]))

    def dumps(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    @staticmethod
    def loads(text: str) -> "Trajectory":
        return Trajectory.from_json_dict(json.loads(text))


def _segment_time_grid(durations: np.ndarray, per_segment: int) -> np.ndarray:
    starts = np.concatenate([[0.0], np.cumsum(durations)])
    parts = [
        starts[i] + np.linspace(0.0, durations[i], per_segment, endpoint=False)
        for i in range(len(durations))
    ]
    parts.append(np.array([starts[-1] - 1e-12]))
    return np.concatenate(parts)


# --------------------------------------------------------------------------
# minimum snap


def _basis_row(width: int, u: float, order: int) -> np.ndarray:
    row = np.zeros(width)
    for j in range(order, width):
        fac = 1.0
        for m in range(j, j - order, -1):
            fac *= m
        row[j] = fac * u ** (j - order)
    return row


def _snap_gram_unit(width: int = 8) -> np.ndarray:
    """Gram matrix of 4th-derivative products of u^j on [0, 1]."""
    q = np.zeros((width, width))
    for a in range(4, width):
        fa = math.factorial(a) / math.factorial(a - 4)
        for b in range(4, width):
            fb = math.factorial(b) / math.factorial(b - 4)
            q[a, b] = fa * fb / (a + b - 7)
    return q


def _solve_min_snap(waypoints: np.ndarray, durations: np.ndarray, cyclic: bool) -> list[np.ndarray]:
    """Return per-segment (3, 8) t-space coefficient blocks for the optimal spline."""
    n = len(durations)
    width = 8
    nvar = width * n
    q_unit = _snap_gram_unit(width)

    q = np.zeros((nvar, nvar))
    for i in range(n):
        q[i * width : (i + 1) * width, i * width : (i + 1) * width] = q_unit / durations[i] ** 7

    rows: list[np.ndarray] = []
    rhs: list[np.ndarray] = []

    def add_row(seg_terms, b_vec):
        row = np.zeros(nvar)
        for seg, u, order, scale in seg_terms:
            row[seg * width : (seg + 1) * width] += scale * _basis_row(width, u, order)
        rows.append(row)
        rhs.append(np.asarray(b_vec, dtype=float))

    m = len(waypoints)
    for i in range(n):
        w_start = waypoints[i]
        w_end = waypoints[(i + 1) % m] if cyclic else waypoints[i + 1]
        add_row([(i, 0.0, 0, 1.0)], w_start)
        add_row([(i, 1.0, 0, 1.0)], w_end)

    joints = range(n) if cyclic else range(n - 1)
    for i in joints:
        nxt = (i + 1) % n
        for k in range(1, 5):
            add_row(
                [
                    (i, 1.0, k, 1.0 / durations[i] ** k),
                    (nxt, 0.0, k, -1.0 / durations[nxt] ** k),
                ],
                np.zeros(3),
            )

    if not cyclic:
        for k in (1, 2):
            add_row([(0, 0.0, k, 1.0 / durations[0] ** k)], np.zeros(3))
            add_row([(n - 1, 1.0, k, 1.0 / durations[n - 1] ** k)], np.zeros(3))

    a = np.vstack(rows)
    b = np.vstack(rhs)

    ncon = a.shape[0]
    kkt = np.zeros((nvar + ncon, nvar + ncon))
    kkt[:nvar, :nvar] = 2.0 * q
    kkt[:nvar, nvar:] = a.T
    kkt[nvar:, :nvar] = a
    kkt_rhs = np.vstack([np.zeros((nvar, 3)), b])
    try:
        sol = np.linalg.solve(kkt, kkt_rhs)
    except np.linalg.LinAlgError:
        sol = np.linalg.lstsq(kkt, kkt_rhs, rcond=None)[0]
    c = sol[:nvar]  # (nvar, 3), normalized-time coefficients

    blocks = []
    for i in range(n):
        cu = c[i * width : (i + 1) * width].T  # (3, 8)
        powers = durations[i] ** np.arange(width)
        blocks.append(cu / powers)
    return blocks


def flatness_quantities(vel: np.ndarray, acc: np.ndarray, jerk: np.ndarray):
    """Speed, mass-normalized thrust, and roll/pitch rate magnitude from flat outputs.

    Accepts (3,) vectors or (m, 3) batches.
    """
    vel = np.atleast_2d(vel)
    acc = np.atleast_2d(acc)
    jerk = np.atleast_2d(jerk)
    speed = np.linalg.norm(vel, axis=1)
    tvec = acc.copy()
    tvec[:, 2] += GRAVITY
    thrust = np.linalg.norm(tvec, axis=1)
    safe = np.maximum(thrust, _THRUST_FLOOR)
    b3 = tvec / safe[:, None]
    j_par = np.sum(jerk * b3, axis=1)[:, None] * b3
    rate = np.linalg.norm(jerk - j_par, axis=1) / safe
    return speed, thrust, rate


def _traj_feasible(traj: Trajectory, limits: FeasibilityLimits, margin: float) -> bool:
    ts = _segment_time_grid(traj._durations, _FEAS_SAMPLES_PER_SEGMENT)
    vel = traj.eval_many(ts, 1)
    acc = traj.eval_many(ts, 2)
    jerk = traj.eval_many(ts, 3)
    speed, thrust, rate = flatness_quantities(vel, acc, jerk)
    return bool(
        np.all(speed <= limits.v_max_target - margin)
        and np.all(thrust <= limits.max_normalized_thrust - margin)
        and np.all(rate <= limits.max_rollpitch_rate - margin)
    )


def time_scale(traj: Trajectory, k: float) -> Trajectory:
    """Uniformly stretch all segment durations by k (coefficients rescaled exactly)."""
    if k <= 0:
        raise ValueError("scale must be positive")
    segs = []
    for s in traj.segments:
        powers = float(k) ** np.arange(s.coeffs.shape[1])
        segs.append(PolySegment(duration=s.duration * k, coeffs=s.coeffs / powers))
    return Trajectory(segs, cyclic=traj.cyclic)


def min_snap(waypoints, cyclic: bool, limits: FeasibilityLimits) -> Trajectory:
    """Minimum-snap spline through waypoints, time-scaled to satisfy the limits."""
    pts = np.asarray([np.asarray(w, dtype=float) for w in waypoints])
    ensure_finite("waypoints", pts)
    if len(pts) < 2:
        raise ValueError("need at least 2 waypoints")
    if cyclic and len(pts) < 3:
        raise ValueError("cyclic tracks need at least 3 waypoints")
    m = len(pts)
    pairs = [(i, (i + 1) % m) for i in range(m)] if cyclic else [(i, i + 1) for i in range(m - 1)]
    dists = np.array([np.linalg.norm(pts[j] - pts[i]) for i, j in pairs])
    if np.any(dists < 1e-9):
        raise ValueError("consecutive waypoints must be distinct")

    durations = np.maximum(dists / limits.v_max_target, 1e-2)
    blocks = _solve_min_snap(pts, durations, cyclic)
    base = Trajectory(
        [PolySegment(duration=d, coeffs=c) for d, c in zip(durations, blocks)], cyclic=cyclic
    )

    if _traj_feasible(base, limits, _FEAS_MARGIN):
        return base
    k_hi = 2.0
    while not _traj_feasible(time_scale(base, k_hi), limits, _FEAS_MARGIN):
        k_hi *= 2.0
        if k_hi > 4096.0:
            raise RuntimeError("feasibility scaling failed to converge")
    k_lo = k_hi / 2.0
    for _ in range(48):
        mid = 0.5 * (k_lo + k_hi)
        if _traj_feasible(time_scale(base, mid), limits, _FEAS_MARGIN):
            k_hi = mid
        else:
            k_lo = mid
    return time_scale(base, k_hi)


def snap_cost(traj: Trajectory) -> float:
    """Integral of squared snap norm over the whole trajectory (closed form)."""
    total = 0.0
    for s in traj.segments:
        c4 = _derive_coeffs(s.coeffs, 4)  # (3, K-4)
        k = c4.shape[1]
        powers = np.arange(k)
        for axis in range(3):
            prod = np.outer(c4[axis], c4[axis])
            pw = powers[:, None] + powers[None, :] + 1
            total += float(np.sum(prod * s.duration**pw / pw))
    return total


# --------------------------------------------------------------------------
# minimum jerk interception segments


def min_jerk_segment(start: QuadState, goal: Vec3, duration: float) -> PolySegment:
    """Degree-5 segment from the full start state to ``goal`` with free end v and a.

    Closed-form optimum of the squared-jerk integral; no iterative solve.
    """
    if duration <= 0:
        raise ValueError("segment duration must be positive")
    goal = np.asarray(goal, dtype=float)
    ensure_finite("goal", goal)
    ensure_finite("start position", start.position)
    ensure_finite("start velocity", start.velocity)
    ensure_finite("start acceleration", start.acceleration)

    p0, v0, a0 = start.position, start.velocity, start.acceleration
    T = duration
    delta = goal - p0 - v0 * T - 0.5 * a0 * T * T
    alpha = 20.0 * delta / T**5
    beta = -20.0 * delta / T**4
    gamma = 10.0 * delta / T**3
    coeffs = np.stack(
        [p0, v0, 0.5 * a0, gamma / 6.0, beta / 24.0, alpha / 120.0], axis=1
    )
    return PolySegment(duration=T, coeffs=coeffs)


def min_jerk_cost(segment: PolySegment) -> float:
    """Integral of squared jerk norm over the segment (closed form)."""
    c3 = _derive_coeffs(segment.coeffs, 3)  # (3, K-3)
    k = c3.shape[1]
    powers = np.arange(k)
    total = 0.0
    for axis in range(3):
        prod = np.outer(c3[axis], c3[axis])
        pw = powers[:, None] + powers[None, :] + 1
        total += float(np.sum(prod * segment.duration**pw / pw))
    return total


def segment_duration(start: QuadState, goal: Vec3, v_des: float) -> float:
    """Execution time for an interception segment at the desired speed, clamped."""
    if v_des <= 0:
        raise ValueError("v_des must be positive")
    dist = float(np.linalg.norm(np.asarray(goal, dtype=float) - start.position))
    if dist == 0.0:
        return SEGMENT_T_MIN
    return clamp(dist / v_des, SEGMENT_T_MIN, SEGMENT_T_MAX)


# --------------------------------------------------------------------------
# projection and forward advance


def project_onto(traj: Trajectory, p: Vec3) -> tuple[float, Vec3, float]:
    """Globally closest point on the trajectory: (t*, point, speed at t*).

    Dense-grid scan refined by ternary search to <= 1e-4 s.
    """
    p = np.asarray(p, dtype=float)
    ts, pos = traj._grid()
    d2 = np.sum((pos - p) ** 2, axis=1)
    i = int(np.argmin(d2))
    step = ts[1] - ts[0] if len(ts) > 1 else traj.total_duration
    lo, hi = ts[i] - step, ts[i] + step
    if not traj.cyclic:
        lo, hi = max(lo, 0.0), min(hi, traj.total_duration)

    def dist2(t: float) -> float:
        dp = traj.eval(t, 0) - p
        return float(dp @ dp)

    while hi - lo > 1e-5:
        m1 = lo + (hi - lo) / 3.0
        m2 = hi - (hi - lo) / 3.0
        if dist2(m1) <= dist2(m2):
            hi = m2
        else:
            lo = m1
    t_star = 0.5 * (lo + hi)
    # Newton polish on d/dt |traj(t) - p|^2 for the tight idempotency contract
    for _ in range(6):
        q = traj.eval(t_star, 0)
        v = traj.eval(t_star, 1)
        a = traj.eval(t_star, 2)
        f = float((q - p) @ v)
        fp = float(v @ v + (q - p) @ a)
        if fp <= 0.0:
            break
        step_n = f / fp
        t_new = t_star - step_n
        if not lo - step <= t_new <= hi + step:
            break
        t_star = t_new
        if abs(step_n) < 1e-12:
            break
    if traj.cyclic:
        t_star %= traj.total_duration
    point = traj.eval(t_star, 0)
    return t_star, point, float(np.linalg.norm(traj.eval(t_star, 1)))


def advance_along(traj: Trajectory, t_from: float, d: float) -> Vec3:
    """First point forward along the trajectory at Euclidean distance d from traj(t_from).

    Wraps around on cyclic trajectories; clamps to the end point otherwise. If the
    curve never reaches distance d within one lap, the farthest point found wins.
    """
    if d < 0:
        raise ValueError("distance must be non-negative")
    p0 = traj.eval(t_from, 0)
    if d == 0.0:
        return p0
    ts, pos = traj._grid()
    n = len(ts)
    total = traj.total_duration

    if traj.cyclic:
        t_base = t_from % total
        start_idx = int(np.searchsorted(ts, t_base, side="right"))
        steps = n + 1
    else:
        t_base = clamp(t_from, 0.0, total)
        start_idx = int(np.searchsorted(ts, t_base, side="right"))
        steps = n - start_idx + 1

    best_t, best_d = t_from, 0.0
    prev_t = t_from
    for k in range(steps):
        idx = start_idx + k
        if traj.cyclic:
            # monotone forward time for the wrapped grid point
            t_k = t_from - t_base + ts[idx % n] + (idx // n) * total
            q = pos[idx % n]
        elif idx >= n:
            t_k, q = total, pos[-1]
        else:
            t_k, q = ts[idx], pos[idx]
        dist = float(np.linalg.norm(q - p0))
        if dist >= d:
            lo, hi = prev_t, t_k
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if float(np.linalg.norm(traj.eval(mid, 0) - p0)) >= d:
                    hi = mid
                else:
                    lo = mid
            return traj.eval(0.5 * (lo + hi), 0)
        if dist > best_d:
            best_d, best_t = dist, t_k
        prev_t = t_k
    return traj.eval(best_t, 0)
