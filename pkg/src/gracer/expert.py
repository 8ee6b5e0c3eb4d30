"""Expert policy: ground-truth labels {x_g, v_g} from the global trajectory.

The prediction horizon grows with clearance from the surrounding gates,
d = max(d_min, min(|s_last|, |s_next|)), which keeps it continuous through a
gate pass; the goal point is found by advancing along the trajectory from the
closest-point projection and projecting it into the onboard camera.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import (
    CameraModel,
    QuadState,
    Track,
    Vec3,
    camera_pose_from_state,
    clamp,
    ensure_finite,
    project_to_image,
)
from .trajectory import Trajectory, advance_along, project_onto


@dataclass(frozen=True)
class ExpertConfig:
    d_min_train: float = 1.5
    camera: CameraModel = field(default_factory=CameraModel)

    def __post_init__(self):
        if self.d_min_train <= 0:
            raise ValueError("d_min_train must be positive")


@dataclass(frozen=True)
class Label:
    x_g: tuple[float, float]
    v_g: float
    valid: bool


def d_train(s_last: Vec3, s_next: Vec3, cfg: ExpertConfig) -> float:
    """Training-time prediction horizon from gate clearance vectors."""
    ensure_finite("s_last", s_last)
    ensure_finite("s_next", s_next)
    return max(
        cfg.d_min_train,
        min(float(np.linalg.norm(s_last)), float(np.linalg.norm(s_next))),
    )


def gate_passage_times(track: Track, traj: Trajectory) -> np.ndarray:
    """Arc time of each gate center along the global trajectory (waypoint order)."""
    starts = np.concatenate([[0.0], np.cumsum([s.duration for s in traj.segments])])
    extras_after: dict[int, int] = {}
    for after, _ in track.extra_waypoints:
        extras_after[after] = extras_after.get(after, 0) + 1
    times = []
    wp_index = 0
    for i in range(len(track.gates)):
        times.append(starts[wp_index])
        wp_index += 1 + extras_after.get(i, 0)
    return np.array(times)


def infer_gate_indices(track: Track, gate_times: np.ndarray, t_star: float, total: float):
    """(last, next) gate indices from the arc position, assuming on-trajectory flight."""
    t = t_star % total
    nxt = int(np.searchsorted(gate_times, t, side="right")) % len(track.gates)
    last = (nxt - 1) % len(track.gates)
    return last, nxt


def expert_label(
    state: QuadState,
    traj: Trajectory,
    track: Track,
    cfg: ExpertConfig,
    last_gate_index: int | None = None,
    next_gate_index: int | None = None,
    gate_offsets: np.ndarray | None = None,
) -> Label:
    """Ground-truth label for the state; invalid (not raised) when the goal is behind the camera.

    Gate indices default to the ones implied by the closest-point projection; an
    episode's gate cursor may pass them explicitly. ``gate_offsets`` (n_gates, 3)
    shifts the clearance reference points for moving gates.
    """
    t_star, p_closest, speed_at = project_onto(traj, state.position)
    if last_gate_index is None or next_gate_index is None:
        gate_times = gate_passage_times(track, traj)
        last_gate_index, next_gate_index = infer_gate_indices(
            track, gate_times, t_star, traj.total_duration
        )

    def gate_center(i: int) -> Vec3:
        c = track.gates[i].center
        if gate_offsets is not None:
            c = c + gate_offsets[i]
        return c

    s_last = gate_center(last_gate_index) - state.position
    s_next = gate_center(next_gate_index) - state.position
    d = d_train(s_last, s_next, cfg)

    p_goal = advance_along(traj, t_star, d)
    pose = camera_pose_from_state(state, cfg.camera)
    x = project_to_image(p_goal, pose, cfg.camera)
    v_g = clamp(speed_at / traj.v_max_achieved, 0.0, 1.0)
    if x is None:
        return Label(x_g=(0.0, 0.0), v_g=v_g, valid=False)
    return Label(x_g=x, v_g=v_g, valid=True)
