"""Prediction-to-command pipeline: planning length, interception segments, tracking.

The planner turns a normalized {x, v} prediction into a goal point along the
camera ray at the speed-dependent planning length, plans a minimum-jerk segment
to it, and a thrust/body-rate tracker follows the active segment at a higher
rate, replacing it whenever a fresh prediction arrives.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GRAVITY,
    CameraModel,
    QuadState,
    Vec3,
    back_project,
    camera_pose_from_state,
    clamp,
    quat_to_matrix,
    rotation_vector_between,
)
from .trajectory import PolySegment, min_jerk_segment, segment_duration

THRUST_MAX = 25.0
BODY_RATE_MAX = 6.0
V_DES_FLOOR = 0.3
_A_DES_MIN = 0.1


@dataclass(frozen=True)
class PlannerConfig:
    v_max: float
    m_d: float = 0.5
    d_min: float = 2.0
    d_max: float = 5.0
    replan_rate: float = 30.0
    control_rate: float = 50.0

    def __post_init__(self):
        if not (0.0 < self.d_min <= self.d_max):
            raise ValueError("need 0 < d_min <= d_max")
        if self.m_d <= 0:
            raise ValueError("m_d must be positive")
        if self.control_rate < self.replan_rate:
            raise ValueError("control_rate must be >= replan_rate")
        if self.v_max <= 0:
            raise ValueError("v_max must be positive")


@dataclass(frozen=True)
class ControllerGains:
    kp_pos: float = 10.0
    kd_pos: float = 6.0
    kp_att: float = 8.0

    def __post_init__(self):
        if min(self.kp_pos, self.kd_pos, self.kp_att) <= 0:
            raise ValueError("gains must be positive")


@dataclass(frozen=True)
class ControlCommand:
    collective_thrust: float  # mass-normalized, m/s^2
    body_rates: np.ndarray  # rad/s, body frame

    def __post_init__(self):
        if not (0.0 <= self.collective_thrust <= THRUST_MAX):
            raise ValueError(f"thrust {self.collective_thrust} outside [0, {THRUST_MAX}]")
        if np.any(np.abs(self.body_rates) > BODY_RATE_MAX):
            raise ValueError(f"body rates {self.body_rates} outside clamp")


HOVER_COMMAND = ControlCommand(collective_thrust=GRAVITY, body_rates=np.zeros(3))


def d_test(v_des: float, cfg: PlannerConfig) -> float:
    """Planning length, linear in desired speed with clamps."""
    if v_des < 0:
        raise ValueError("v_des must be non-negative")
    return min(cfg.d_max, max(cfg.d_min, cfg.m_d * v_des))


def plan_from_prediction(
    state: QuadState, pred, cfg: PlannerConfig, cam: CameraModel
) -> PolySegment:
    """Interception segment toward the back-projected goal of a prediction."""
    v_des = max(cfg.v_max * pred.v, V_DES_FLOOR)
    d = d_test(v_des, cfg)
    pose = camera_pose_from_state(state, cam)
    p_goal = back_project(pred.x, d, pose, cam)
    duration = segment_duration(state, p_goal, v_des)
    return min_jerk_segment(state, p_goal, duration)


# --------------------------------------------------------------------------
# attitude and tracking


def yaw_of(attitude: np.ndarray) -> float:
    r = quat_to_matrix(attitude)
    return math.atan2(r[1, 0], r[0, 0])


def attitude_from_thrust_yaw(thrust_vec: Vec3, yaw: float) -> np.ndarray:
    """World-from-body quaternion aligning body z with thrust_vec at the given yaw."""
    z_b = thrust_vec / np.linalg.norm(thrust_vec)
    x_c = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    y_b = np.cross(z_b, x_c)
    n = np.linalg.norm(y_b)
    if n < 1e-6:
        # thrust parallel to the yaw heading; fall back to a level y axis
        y_b = np.array([-math.sin(yaw), math.cos(yaw), 0.0])
        n = 1.0
    y_b = y_b / n
    x_b = np.cross(y_b, z_b)
    r = np.column_stack([x_b, y_b, z_b])
    return _matrix_to_quat(r)


def _matrix_to_quat(r: np.ndarray) -> np.ndarray:
    tr = r[0, 0] + r[1, 1] + r[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (r[2, 1] - r[1, 2]) / s, (r[0, 2] - r[2, 0]) / s, (r[1, 0] - r[0, 1]) / s]
        )
    elif r[0, 0] >= r[1, 1] and r[0, 0] >= r[2, 2]:
        s = math.sqrt(1.0 + r[0, 0] - r[1, 1] - r[2, 2]) * 2.0
        q = np.array(
            [(r[2, 1] - r[1, 2]) / s, 0.25 * s, (r[0, 1] + r[1, 0]) / s, (r[0, 2] + r[2, 0]) / s]
        )
    elif r[1, 1] >= r[2, 2]:
        s = math.sqrt(1.0 + r[1, 1] - r[0, 0] - r[2, 2]) * 2.0
        q = np.array(
            [(r[0, 2] - r[2, 0]) / s, (r[0, 1] + r[1, 0]) / s, 0.25 * s, (r[1, 2] + r[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + r[2, 2] - r[0, 0] - r[1, 1]) * 2.0
        q = np.array(
            [(r[1, 0] - r[0, 1]) / s, (r[0, 2] + r[2, 0]) / s, (r[1, 2] + r[2, 1]) / s, 0.25 * s]
        )
    return q / np.linalg.norm(q)


def command_from_reference(
    state: QuadState,
    p_ref: Vec3,
    v_ref: Vec3,
    a_ref: Vec3,
    gains: ControllerGains,
    j_ref: Vec3 | None = None,
) -> ControlCommand:
    """Thrust + body-rate command driving the state toward a flat reference point.

    Body rates combine attitude-P feedback with the flatness feedforward from the
    reference jerk; without the feedforward, replanning from the measured state
    erases the turn command at every replan tick.
    """
    a_des = (
        a_ref
        + gains.kp_pos * (p_ref - state.position)
        + gains.kd_pos * (v_ref - state.velocity)
    )
    a_des = a_des + np.array([0.0, 0.0, GRAVITY])
    norm_a = float(np.linalg.norm(a_des))
    if norm_a < _A_DES_MIN:
        a_des = np.array([0.0, 0.0, GRAVITY])
        norm_a = GRAVITY

    z_body = quat_rotate_z(state.attitude)
    thrust = clamp(float(a_des @ z_body), 0.0, THRUST_MAX)

    v_h = math.hypot(v_ref[0], v_ref[1])
    yaw = math.atan2(v_ref[1], v_ref[0]) if v_h > 0.1 else yaw_of(state.attitude)
    q_des = attitude_from_thrust_yaw(a_des, yaw)
    err = rotation_vector_between(state.attitude, q_des)
    rates = gains.kp_att * err

    if j_ref is not None:
        r_des = quat_to_matrix(q_des)
        b3 = r_des[:, 2]
        h = (j_ref - float(j_ref @ b3) * b3) / norm_a
        rates = rates + np.array([-float(h @ r_des[:, 1]), float(h @ r_des[:, 0]), 0.0])

    rates = np.clip(rates, -BODY_RATE_MAX, BODY_RATE_MAX)
    return ControlCommand(collective_thrust=thrust, body_rates=rates)


def quat_rotate_z(q: np.ndarray) -> Vec3:
    """Body z axis in world frame (third column of the rotation matrix)."""
    w, x, y, z = q
    return np.array([2 * (x * z + w * y), 2 * (y * z - w * x), 1 - 2 * (x * x + y * y)])


def track_segment(
    state: QuadState, segment: PolySegment, t_in_segment: float, gains: ControllerGains
) -> ControlCommand:
    """Track the active interception segment at the elapsed segment time."""
    if t_in_segment < 0:
        raise ValueError("t_in_segment must be non-negative")
    tau = clamp(t_in_segment, 0.0, segment.duration)
    p_ref = segment.eval(tau)
    v_ref = segment.eval(tau, 1)
    a_ref = segment.eval(tau, 2)
    j_ref = segment.eval(tau, 3)
    return command_from_reference(state, p_ref, v_ref, a_ref, gains, j_ref=j_ref)


# --------------------------------------------------------------------------
# receding-horizon execution


@dataclass
class RecedingHorizonPlanner:
    """Owns the active segment; replans from the latest prediction at the replan rate."""

    cfg: PlannerConfig
    cam: CameraModel
    gains: ControllerGains = field(default_factory=ControllerGains)
    _segment: PolySegment | None = None
    _segment_start: float = 0.0
    _last_pred = None

    def set_prediction(self, pred) -> None:
        self._last_pred = pred

    def replan(self, state: QuadState, t: float) -> None:
        """Replace the active segment using the latest (possibly stale) prediction."""
        if self._last_pred is None:
            return
        self._segment = plan_from_prediction(state, self._last_pred, self.cfg, self.cam)
        self._segment_start = t

    def command(self, state: QuadState, t: float) -> ControlCommand:
        if self._segment is None:
            return command_from_reference(
                state, state.position, np.zeros(3), np.zeros(3), self.gains
            )
        return track_segment(state, self._segment, t - self._segment_start, self.gains)

    @property
    def active_segment(self) -> PolySegment | None:
        return self._segment
