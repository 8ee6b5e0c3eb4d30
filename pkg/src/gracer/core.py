"""Shared geometry: vectors, quaternions, vehicle state, camera model, seeded RNG streams.

Frame conventions used everywhere in this package:
  world  -- Z up, gravity along -Z.
  body   -- X forward, Y left, Z up; ``attitude`` is the world-from-body
            unit quaternion (scalar first), v_world = R(q) @ v_body.
  camera -- Z forward along the optical axis, X right, Y down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GRAVITY = 9.81

# Vectors are plain float64 ndarrays of shape (3,); quaternions shape (4,), scalar first.
Vec3 = np.ndarray


def vec3(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> Vec3:
    return np.array([float(x), float(y), float(z)])


def ensure_finite(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise ValueError(f"{name} must be finite, got {value!r}")


def clamp(x: float, lo: float, hi: float) -> float:
    return lo if x < lo else hi if x > hi else x


# --------------------------------------------------------------------------
# quaternions (w, x, y, z)

QUAT_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    return q / math.sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rotate(q: np.ndarray, v: Vec3) -> Vec3:
    """Rotate v by q without building the full rotation matrix."""
    qv = q[1:]
    t = 2.0 * np.cross(qv, v)
    return v + q[0] * t + np.cross(qv, t)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_axis_angle(axis: Vec3, angle: float) -> np.ndarray:
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), s * axis[0], s * axis[1], s * axis[2]])


def quat_exp(rotvec: Vec3) -> np.ndarray:
    """Exponential map: rotation vector (rad) -> unit quaternion."""
    angle = math.sqrt(rotvec[0] ** 2 + rotvec[1] ** 2 + rotvec[2] ** 2)
    if angle < 1e-12:
        # second-order series keeps the map smooth through zero
        half = 0.5
        return quat_normalize(
            np.array([1.0, half * rotvec[0], half * rotvec[1], half * rotvec[2]])
        )
    s = math.sin(0.5 * angle) / angle
    return np.array(
        [math.cos(0.5 * angle), s * rotvec[0], s * rotvec[1], s * rotvec[2]]
    )


def quat_from_yaw(yaw: float) -> np.ndarray:
    return np.array([math.cos(0.5 * yaw), 0.0, 0.0, math.sin(0.5 * yaw)])


def rotation_vector_between(q_from: np.ndarray, q_to: np.ndarray) -> Vec3:
    """Body-frame rotation vector taking q_from to q_to (log of the error quaternion)."""
    q_err = quat_multiply(quat_conjugate(q_from), q_to)
    if q_err[0] < 0.0:
        q_err = -q_err
    sin_half = math.sqrt(q_err[1] ** 2 + q_err[2] ** 2 + q_err[3] ** 2)
    if sin_half < 1e-12:
        return 2.0 * q_err[1:]
    angle = 2.0 * math.atan2(sin_half, q_err[0])
    return (angle / sin_half) * q_err[1:]


# --------------------------------------------------------------------------
# vehicle state


@dataclass(slots=True)
class QuadState:
    """Full kinematic state; attitude is the world-from-body unit quaternion."""

    t: float
    position: Vec3
    velocity: Vec3
    acceleration: Vec3
    attitude: np.ndarray
    body_rates: Vec3

    def validate(self) -> None:
        for name in ("position", "velocity", "acceleration", "attitude", "body_rates"):
            ensure_finite(name, getattr(self, name))
        norm = float(np.linalg.norm(self.attitude))
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"attitude norm {norm} deviates from 1 by > 1e-9")

    @staticmethod
    def hover(position: Vec3, yaw: float = 0.0, t: float = 0.0) -> "QuadState":
        return QuadState(
            t=t,
            position=np.asarray(position, dtype=float).copy(),
            velocity=np.zeros(3),
            acceleration=np.zeros(3),
            attitude=quat_from_yaw(yaw),
            body_rates=np.zeros(3),
        )


# --------------------------------------------------------------------------
# camera


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera; normalized image coordinates span [-1, 1] over each FOV."""

    horizontal_fov: float = math.radians(90.0)
    vertical_fov: float | None = None
    mount_pitch: float = 0.0
    image_width: int = 64
    image_height: int = 48

    def __post_init__(self):
        if self.vertical_fov is None:
            # match the raster aspect ratio on the tangent plane
            half = math.tan(0.5 * self.horizontal_fov) * self.image_height / self.image_width
            object.__setattr__(self, "vertical_fov", 2.0 * math.atan(half))
        if not (0.0 < self.horizontal_fov < math.pi):
            raise ValueError(f"horizontal_fov out of (0, pi): {self.horizontal_fov}")
        if not (0.0 < self.vertical_fov < math.pi):
            raise ValueError(f"vertical_fov out of (0, pi): {self.vertical_fov}")
        if self.image_width < 8 or self.image_height < 8:
            raise ValueError("raster must be at least 8x8")

    @property
    def tan_half_h(self) -> float:
        return math.tan(0.5 * self.horizontal_fov)

    @property
    def tan_half_v(self) -> float:
        return math.tan(0.5 * self.vertical_fov)


# camera axes expressed in the body frame (zero mount pitch):
# right = -Y_body, down = -Z_body, forward = +X_body
_R_BODY_FROM_CAM0 = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


def _rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


@dataclass(frozen=True)
class CameraPose:
    """Camera position and world-from-camera rotation."""

    position: Vec3
    r_wc: np.ndarray


def camera_pose_from_state(state: QuadState, cam: CameraModel) -> CameraPose:
    r_wb = quat_to_matrix(state.attitude)
    # positive mount pitch tilts the optical axis up (rotation about -Y_body)
    r_bc = _rot_y(-cam.mount_pitch) @ _R_BODY_FROM_CAM0
    return CameraPose(position=state.position.copy(), r_wc=r_wb @ r_bc)


BEHIND_CAMERA_Z = 1e-6


def project_to_image(
    p_world: Vec3, cam_pose: CameraPose, cam: CameraModel
) -> tuple[float, float] | None:
    """Project a world point to normalized image coordinates in [-1, 1]^2.

    Returns None when the point is not in front of the camera.
    """
    p_cam = cam_pose.r_wc.T @ (p_world - cam_pose.position)
    if p_cam[2] <= BEHIND_CAMERA_Z:
        return None
    x = (p_cam[0] / p_cam[2]) / cam.tan_half_h
    y = (p_cam[1] / p_cam[2]) / cam.tan_half_v
    return (clamp(x, -1.0, 1.0), clamp(y, -1.0, 1.0))


def back_project(
    x: tuple[float, float], d: float, cam_pose: CameraPose, cam: CameraModel
) -> Vec3:
    """Point at Euclidean distance d from the camera along the ray through x."""
    if d <= 0.0:
        raise ValueError(f"depth must be positive, got {d}")
    ray = np.array([cam.tan_half_h * x[0], cam.tan_half_v * x[1], 1.0])
    ray /= np.linalg.norm(ray)
    return cam_pose.position + d * (cam_pose.r_wc @ ray)


# --------------------------------------------------------------------------
# track geometry


@dataclass(frozen=True)
class Gate:
    """Framed opening; yaw gives the in-plane normal (direction of traversal)."""

    id: int
    center: Vec3
    yaw: float
    inner_width: float = 1.4
    inner_height: float = 1.4
    frame_thickness: float = 0.2
    shape_id: int = 0
    base_size: float = 1.3

    def __post_init__(self):
        if self.inner_width <= 0 or self.inner_height <= 0:
            raise ValueError("gate opening dimensions must be positive")
        if self.frame_thickness <= 0:
            raise ValueError("frame_thickness must be positive")
        ensure_finite("gate center", self.center)

    def normal(self) -> Vec3:
        return np.array([math.cos(self.yaw), math.sin(self.yaw), 0.0])

    def lateral(self) -> Vec3:
        return np.array([-math.sin(self.yaw), math.cos(self.yaw), 0.0])


def _apothem(poly: np.ndarray) -> float:
    best = math.inf
    n = len(poly)
    for i in range(n):
        a, b = poly[i], poly[(i + 1) % n]
        e = b - a
        d = abs(e[0] * (-a[1]) - e[1] * (-a[0])) / math.hypot(e[0], e[1])
        best = min(best, d)
    return best


def _unit_shape(poly: np.ndarray) -> np.ndarray:
    # normalize to apothem 1 so every shape offers the same minimum clearance
    return poly / _apothem(poly)


_GATE_SHAPE_UNITS: dict[int, np.ndarray] = {
    # convex CCW outlines in (lateral, up) coordinates, inscribed circle radius 1
    0: _unit_shape(np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=float)),
    1: _unit_shape(
        np.array(
            [
                [math.cos(math.radians(22.5 + 45 * k)), math.sin(math.radians(22.5 + 45 * k))]
                for k in range(8)
            ]
        )
    ),
    2: _unit_shape(
        np.array(
            [[math.cos(math.radians(60 * k)), math.sin(math.radians(60 * k))] for k in range(6)]
        )
    ),
    3: _unit_shape(np.array([[-0.7, -1], [0.7, -1], [0.7, 1], [-0.7, 1]], dtype=float)),
    4: _unit_shape(np.array([[-1, -0.7], [1, -0.7], [1, 0.7], [-1, 0.7]], dtype=float)),
    5: _unit_shape(np.array([[0, -1], [1, 0], [0, 1], [-1, 0]], dtype=float)),
}

GATE_SHAPE_COUNT = len(_GATE_SHAPE_UNITS)
HELD_OUT_GATE_SHAPE = 5


def gate_opening_polygon(gate: "Gate", shape_id: int | None = None) -> np.ndarray:
    """Opening outline in gate-local (lateral, up) meters, convex and CCW."""
    sid = gate.shape_id if shape_id is None else shape_id
    unit = _GATE_SHAPE_UNITS[sid % GATE_SHAPE_COUNT]
    return unit * np.array([0.5 * gate.inner_width, 0.5 * gate.inner_height])


def polygon_inner_distance(polygon: np.ndarray, u: float, w: float) -> float:
    """Signed distance to a convex CCW polygon boundary (positive inside)."""
    best = math.inf
    n = len(polygon)
    for i in range(n):
        ax, ay = polygon[i]
        bx, by = polygon[(i + 1) % n]
        ex, ey = bx - ax, by - ay
        length = math.hypot(ex, ey)
        # inward distance: positive on the interior side of the edge
        d = (ex * (w - ay) - ey * (u - ax)) / length
        if d < best:
            best = d
    return best


@dataclass(frozen=True)
class Track:
    gates: tuple[Gate, ...]
    extra_waypoints: tuple[tuple[int, Vec3], ...] = ()
    laps_for_success: int = 5
    bounds_side: float = 70.0

    def __post_init__(self):
        if len(self.gates) < 1:
            raise ValueError("track needs at least one gate")
        if self.bounds_side <= 0:
            raise ValueError("bounds_side must be positive")

    def waypoints(self) -> list[Vec3]:
        """Gate centers in passage order, with extra shaping waypoints spliced in."""
        extras: dict[int, list[Vec3]] = {}
        for after, point in self.extra_waypoints:
            extras.setdefault(after, []).append(np.asarray(point, dtype=float))
        out: list[Vec3] = []
        for i, gate in enumerate(self.gates):
            out.append(np.asarray(gate.center, dtype=float))
            out.extend(extras.get(i, []))
        return out

    def loop_length(self) -> float:
        """Closed polyline length through the waypoints."""
        pts = self.waypoints()
        total = 0.0
        for i in range(len(pts)):
            total += float(np.linalg.norm(pts[(i + 1) % len(pts)] - pts[i]))
        return total


# --------------------------------------------------------------------------
# seeded random streams


@dataclass(frozen=True)
class RngStream:
    """Value-type handle for a reproducible random stream.

    Identical (seed, stream_id) pairs always reproduce the same sequence;
    generator() hands out a fresh generator positioned at the start.
    """

    seed: int
    stream_id: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        return np.random.Generator(np.random.PCG64(ss))

    def derive(self, offset: int) -> "RngStream":
        """Deterministic child stream; offsets must be unique per parent."""
        child = (self.stream_id * 1_000_003 + offset + 1) % (2**63)
        return RngStream(seed=self.seed, stream_id=child)
