"""Deterministic drone-racing stack: simulation, expert supervision, perception, control."""

from .core import (
    CameraModel,
    CameraPose,
    Gate,
    QuadState,
    RngStream,
    Track,
    Vec3,
    back_project,
    camera_pose_from_state,
    project_to_image,
    vec3,
)
from .trajectory import (
    FeasibilityLimits,
    PolySegment,
    Trajectory,
    advance_along,
    min_jerk_segment,
    min_snap,
    project_onto,
    segment_duration,
)

__all__ = [
    "CameraModel",
    "CameraPose",
    "FeasibilityLimits",
    "Gate",
    "PolySegment",
    "QuadState",
    "RngStream",
    "Track",
    "Trajectory",
    "Vec3",
    "advance_along",
    "back_project",
    "camera_pose_from_state",
    "min_jerk_segment",
    "min_snap",
    "project_onto",
    "project_to_image",
    "segment_duration",
    "vec3",
]
