"""Deterministic fixed-step quadrotor simulation with multi-rate scheduling.

Dynamics integrate at dt_dynamics with first-order body-rate lag and exp-map
attitude updates; the controller runs at 50 Hz against the active segment and
perception (render -> predict -> replan) at 30 Hz. Gate passes and crashes are
segment/plane crossing tests against the opening polygon inflated by the drone
radius. Everything is a pure function of configuration and seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .control import (
    ControlCommand,
    ControllerGains,
    PlannerConfig,
    RecedingHorizonPlanner,
    attitude_from_thrust_yaw,
    command_from_reference,
)
from .core import (
    GRAVITY,
    CameraModel,
    Gate,
    QuadState,
    RngStream,
    Track,
    Vec3,
    camera_pose_from_state,
    gate_opening_polygon,
    polygon_inner_distance,
    quat_exp,
    quat_multiply,
    quat_normalize,
)
from .perception import ExpertContext, Prediction
from .render import SceneConfig, render
from .trajectory import Trajectory

TRACE_VERSION = 1


@dataclass(frozen=True)
class SimConfig:
    dt_dynamics: float = 0.002
    rate_ctrl: float = 50.0
    rate_percep: float = 30.0
    body_rate_tau: float = 0.03
    drone_radius: float = 0.3
    gravity: float = GRAVITY
    timeout_factor: float = 3.0
    # perception results are applied one frame late, modeling onboard inference time
    perception_latency_ticks: int = 1
    # platform thrust envelope (mass-normalized, Hummingbird-like thrust-to-weight ~2);
    # commands beyond it saturate in the dynamics, not in the command interface
    max_thrust: float = 22.0
    # white acceleration disturbance (gusts / unmodeled aerodynamics), seeded per episode
    wind_accel_sigma: float = 0.4

    def __post_init__(self):
        if min(
            self.dt_dynamics,
            self.rate_ctrl,
            self.rate_percep,
            self.body_rate_tau,
            self.drone_radius,
            self.gravity,
            self.timeout_factor,
        ) <= 0:
            raise ValueError("all simulation parameters must be positive")
        if self.perception_latency_ticks < 0:
            raise ValueError("perception_latency_ticks must be >= 0")
        if self.wind_accel_sigma < 0 or self.max_thrust <= 0:
            raise ValueError("bad disturbance/thrust envelope parameters")
        if self.dt_dynamics > 1.0 / self.rate_ctrl:
            raise ValueError("dt_dynamics must not exceed the control period")
        steps = 1.0 / self.dt_dynamics
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("1/dt_dynamics must be an integer step rate")
        if abs(steps / self.rate_ctrl - round(steps / self.rate_ctrl)) > 1e-9:
            raise ValueError("control rate must divide the dynamics rate")


@dataclass(frozen=True)
class GateMotion:
    amplitude_multiplier: float
    omega: np.ndarray  # (3,) rad/s
    phase: np.ndarray  # (3,) rad

    def __post_init__(self):
        if self.amplitude_multiplier < 0:
            raise ValueError("amplitude multiplier must be >= 0")


def gate_offset(motion: GateMotion, t: float, base_size: float = 1.3) -> Vec3:
    """Per-axis sinusoidal displacement with amplitude multiplier x base size."""
    if t < 0:
        raise ValueError("time must be non-negative")
    amp = motion.amplitude_multiplier * base_size
    return amp * np.sin(motion.omega * t + motion.phase)


def sample_gate_motions(track: Track, multiplier: float, stream: RngStream) -> list[GateMotion]:
    """Per-gate random sinusoids, slow relative to one approach (quasi-static aim)."""
    gen = stream.generator()
    motions = []
    for _ in track.gates:
        motions.append(
            GateMotion(
                amplitude_multiplier=multiplier,
                omega=gen.uniform(0.05, 0.15, size=3),
                phase=gen.uniform(0.0, 2.0 * math.pi, size=3),
            )
        )
    return motions


@dataclass
class DriftModel:
    """Position-estimate drift: Brownian in distance traveled.

    After s meters the per-axis bias std is sigma_per_meter * sqrt(s * 1 m), so
    drift accumulates with distance regardless of the integration step.
    """

    rng: RngStream
    sigma_per_meter: float = 0.01

    def __post_init__(self):
        if self.sigma_per_meter < 0:
            raise ValueError("sigma_per_meter must be >= 0")


@dataclass
class EpisodeTrace:
    seed: int
    outcome: str
    gates_passed: int
    lap_times: list[float]
    gate_events: list[tuple[float, int, str]]
    rows: list[dict]
    trace_version: int = TRACE_VERSION

    def to_jsonl(self) -> str:
        return "".join(json.dumps(row, sort_keys=True) + "\n" for row in self.rows)

    def summary_dict(self, track: Track) -> dict:
        return {
            "trace_version": self.trace_version,
            "seed": self.seed,
            "outcome": self.outcome,
            "gates_passed": self.gates_passed,
            "completion_rate": completion_rate(self, track),
            "lap_times": self.lap_times,
            "best_lap_s": min(self.lap_times) if self.lap_times else None,
            "gate_events": [
                {"t": t, "gate": g, "event": e} for t, g, e in self.gate_events
            ],
        }


def completion_rate(trace: EpisodeTrace, track: Track) -> float:
    """Fraction of the laps_for_success x gate-count passes achieved, capped at 1."""
    target = track.laps_for_success * len(track.gates)
    return min(1.0, trace.gates_passed / target)


# --------------------------------------------------------------------------
# rigid-body step


def dynamics_step(
    state: QuadState, cmd: ControlCommand, dt: float, cfg: SimConfig = SimConfig()
) -> QuadState:
    """Semi-implicit Euler step with first-order body-rate lag and exp-map attitude."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    w = state.body_rates + (dt / cfg.body_rate_tau) * (cmd.body_rates - state.body_rates)
    q = quat_normalize(quat_multiply(state.attitude, quat_exp(w * dt)))
    # body z in world frame
    qw, qx, qy, qz = q
    z_b = np.array(
        [2 * (qx * qz + qw * qy), 2 * (qy * qz - qw * qx), 1 - 2 * (qx * qx + qy * qy)]
    )
    accel = min(cmd.collective_thrust, cfg.max_thrust) * z_b
    accel[2] -= cfg.gravity
    v = state.velocity + accel * dt
    p = state.position + v * dt
    return QuadState(
        t=state.t + dt,
        position=p,
        velocity=v,
        acceleration=accel,
        attitude=q,
        body_rates=w,
    )


# --------------------------------------------------------------------------
# gate events


def gate_event(
    prev_pos: Vec3,
    new_pos: Vec3,
    gate: Gate,
    offset: Vec3,
    drone_radius: float,
    shape_id: int | None = None,
) -> str | None:
    """'pass' | 'crash' | None for one motion segment against one (possibly moved) gate."""
    n = gate.normal()
    c = gate.center + offset
    s0 = float((prev_pos - c) @ n)
    s1 = float((new_pos - c) @ n)
    if not (s0 < 0.0 <= s1):
        return None
    alpha = s0 / (s0 - s1)
    hit = prev_pos + alpha * (new_pos - prev_pos)
    rel = hit - c
    u = float(rel @ gate.lateral())
    w = float(rel[2])
    poly = gate_opening_polygon(gate, shape_id=shape_id)
    s = polygon_inner_distance(poly, u, w)
    if s >= drone_radius:
        return "pass"
    if s >= -(gate.frame_thickness + drone_radius):
        return "crash"
    return None


def _out_of_bounds(p: Vec3, bounds_side: float) -> bool:
    half = 0.5 * bounds_side
    return p[2] <= 0.0 or abs(p[0]) > half or abs(p[1]) > half or p[2] > bounds_side


# --------------------------------------------------------------------------
# episode execution


def flying_start(traj: Trajectory, t0: float) -> QuadState:
    """Flatness-consistent state on the global trajectory at arc time t0."""
    pos = traj.eval(t0, 0)
    vel = traj.eval(t0, 1)
    acc = traj.eval(t0, 2)
    thrust_vec = acc + np.array([0.0, 0.0, GRAVITY])
    yaw = math.atan2(vel[1], vel[0]) if math.hypot(vel[0], vel[1]) > 0.1 else 0.0
    return QuadState(
        t=0.0,
        position=pos,
        velocity=vel,
        acceleration=acc,
        attitude=attitude_from_thrust_yaw(thrust_vec, yaw),
        body_rates=np.zeros(3),
    )


def start_arc_time(traj: Trajectory) -> float:
    """Start 70% of a segment before the first gate: runway to the first gate while
    staying clear of the previous gate's displaced frame."""
    return traj.total_duration - 0.7 * traj.segments[-1].duration


def _trace_row(t, state, pred, cmd):
    return {
        "t": t,
        "p": [float(x) for x in state.position],
        "v": [float(x) for x in state.velocity],
        "q": [float(x) for x in state.attitude],
        "w": [float(x) for x in state.body_rates],
        "thrust": float(cmd.collective_thrust),
        "rates": [float(x) for x in cmd.body_rates],
        "pred_x": [float(pred.x[0]), float(pred.x[1])] if pred is not None else None,
        "pred_v": float(pred.v) if pred is not None else None,
    }


def run_episode(
    track: Track,
    scene: SceneConfig | None,
    backend,
    planner_cfg: PlannerConfig,
    sim_cfg: SimConfig,
    seed: int,
    global_traj: Trajectory,
    camera: CameraModel | None = None,
    gains: ControllerGains | None = None,
    gate_motion_multiplier: float = 0.0,
    record_rows: bool = True,
) -> EpisodeTrace:
    """Closed-loop episode: perception at 30 Hz, control at 50 Hz, fixed-step dynamics."""
    camera = camera or CameraModel()
    gains = gains or ControllerGains()
    if backend.needs_raster and scene is None:
        raise ValueError("raster-consuming backend requires a scene")

    steps_per_sec = round(1.0 / sim_cfg.dt_dynamics)
    ctrl_every = round(steps_per_sec / sim_cfg.rate_ctrl)
    dt = sim_cfg.dt_dynamics

    n_gates = len(track.gates)
    motions = (
        sample_gate_motions(track, gate_motion_multiplier, RngStream(seed, stream_id=7))
        if gate_motion_multiplier > 0.0
        else None
    )
    base_sizes = np.array([g.base_size for g in track.gates])
    normals = np.stack([g.normal() for g in track.gates])
    centers = np.stack([g.center for g in track.gates])
    shape_id = scene.gate_shape_id if scene is not None else None

    t0 = start_arc_time(global_traj)
    state = flying_start(global_traj, t0)
    # per-seed start perturbation: runs differ by their random seed
    jitter_gen = RngStream(seed, stream_id=11).generator()
    state.position = state.position + jitter_gen.normal(0.0, 0.05, size=3)
    state.velocity = state.velocity + jitter_gen.normal(0.0, 0.05, size=3)
    wind_gen = RngStream(seed, stream_id=13).generator()
    wind_step = sim_cfg.wind_accel_sigma * math.sqrt(dt)
    planner = RecedingHorizonPlanner(cfg=planner_cfg, cam=camera, gains=gains)

    target_passes = track.laps_for_success * n_gates
    timeout_s = sim_cfg.timeout_factor * track.laps_for_success * (
        track.loop_length() / planner_cfg.v_max
    )
    max_steps = int(math.ceil(timeout_s * steps_per_sec))

    next_gate = 0
    gates_passed = 0
    lap_start = 0.0
    lap_times: list[float] = []
    gate_events: list[tuple[float, int, str]] = []
    rows: list[dict] = []
    outcome = "timeout"

    percep_count = 0
    next_percep_step = 0
    cmd = ControlCommand(collective_thrust=sim_cfg.gravity, body_rates=np.zeros(3))
    pred: Prediction | None = None
    pending: list[Prediction] = []

    for step in range(max_steps):
        t = step * dt
        if motions is not None:
            offsets = np.stack(
                [gate_offset(m, t, bs) for m, bs in zip(motions, base_sizes)]
            )
        else:
            offsets = None

        if step == next_percep_step:
            if backend.needs_raster:
                pose = camera_pose_from_state(state, camera)
                raster = render(track, offsets, pose, camera, scene)
                fresh = backend.predict(raster)
            else:
                if motions is not None:
                    # aim where the next gate will be when its plane is crossed
                    n_hat = normals[next_gate]
                    plane_pt = centers[next_gate] + offsets[next_gate]
                    gap = float((plane_pt - state.position) @ n_hat)
                    closing = max(float(state.velocity @ n_hat), 1.0)
                    lead = min(max(gap, 0.0) / closing, 1.2)
                    offsets_ahead = np.stack(
                        [gate_offset(m, t + lead, bs) for m, bs in zip(motions, base_sizes)]
                    )
                else:
                    offsets_ahead = None
                ctx = ExpertContext(
                    state=state,
                    last_gate_index=(next_gate - 1) % n_gates,
                    next_gate_index=next_gate,
                    gate_offsets=offsets,
                    gate_offsets_ahead=offsets_ahead,
                )
                fresh = backend.predict(ctx)
            pending.append(fresh)
            pred = pending.pop(0) if len(pending) > sim_cfg.perception_latency_ticks else pending[0]
            planner.set_prediction(pred)
            planner.replan(state, t)
            percep_count += 1
            next_percep_step = int(percep_count * steps_per_sec // sim_cfg.rate_percep)

        if step % ctrl_every == 0:
            cmd = planner.command(state, t)
            if record_rows:
                rows.append(_trace_row(t, state, pred, cmd))

        new_state = dynamics_step(state, cmd, dt, sim_cfg)
        if wind_step > 0.0:
            new_state.velocity = new_state.velocity + wind_gen.normal(0.0, wind_step, size=3)

        # events on the true motion segment
        crashed = False
        if _out_of_bounds(new_state.position, track.bounds_side):
            gate_events.append((new_state.t, -1, "crash"))
            crashed = True
        else:
            s_prev = normals @ state.position
            s_new = normals @ new_state.position
            if offsets is None:
                plane = np.einsum("ij,ij->i", normals, centers)
            else:
                plane = np.einsum("ij,ij->i", normals, centers + offsets)
            crossing = (s_prev - plane < 0.0) & (s_new - plane >= 0.0)
            for gi in np.nonzero(crossing)[0]:
                off = offsets[gi] if offsets is not None else np.zeros(3)
                result = gate_event(
                    state.position,
                    new_state.position,
                    track.gates[gi],
                    off,
                    sim_cfg.drone_radius,
                    shape_id=shape_id,
                )
                if result == "crash":
                    gate_events.append((new_state.t, int(gi), "crash"))
                    crashed = True
                    break
                if result == "pass" and gi == next_gate:
                    gates_passed += 1
                    gate_events.append((new_state.t, int(gi), "pass"))
                    next_gate = (next_gate + 1) % n_gates
                    if gates_passed % n_gates == 0:
                        lap_times.append(new_state.t - lap_start)
                        lap_start = new_state.t
        if crashed:
            outcome = "crashed"
            state = new_state
            break
        state = new_state
        if gates_passed >= target_passes:
            outcome = "completed"
            break

    return EpisodeTrace(
        seed=seed,
        outcome=outcome,
        gates_passed=gates_passed,
        lap_times=lap_times,
        gate_events=gate_events,
        rows=rows,
    )


def vio_baseline_episode(
    track: Track,
    drift: DriftModel,
    sim_cfg: SimConfig,
    global_traj: Trajectory,
    gains: ControllerGains | None = None,
    record_rows: bool = False,
) -> EpisodeTrace:
    """Feedforward tracking of the global trajectory against a drifting state estimate.

    The position estimate accumulates a random-walk bias whose per-step standard
    deviation is sigma_per_meter x distance traveled; gate events use the true state.
    """
    gains = gains or ControllerGains()
    steps_per_sec = round(1.0 / sim_cfg.dt_dynamics)
    ctrl_every = round(steps_per_sec / sim_cfg.rate_ctrl)
    dt = sim_cfg.dt_dynamics

    n_gates = len(track.gates)
    normals = np.stack([g.normal() for g in track.gates])
    centers = np.stack([g.center for g in track.gates])
    plane = np.einsum("ij,ij->i", normals, centers)

    t0 = start_arc_time(global_traj)
    state = flying_start(global_traj, t0)
    gen = drift.rng.generator()
    bias = np.zeros(3)
    wind_gen = RngStream(drift.rng.seed, stream_id=13).generator()
    wind_step = sim_cfg.wind_accel_sigma * math.sqrt(dt)

    v_ref_speed = global_traj.v_max_achieved
    timeout_s = sim_cfg.timeout_factor * track.laps_for_success * (
        track.loop_length() / v_ref_speed
    )
    max_steps = int(math.ceil(timeout_s * steps_per_sec))

    target_passes = track.laps_for_success * n_gates
    next_gate = 0
    gates_passed = 0
    lap_start = 0.0
    lap_times: list[float] = []
    gate_events: list[tuple[float, int, str]] = []
    rows: list[dict] = []
    outcome = "timeout"
    cmd = ControlCommand(collective_thrust=sim_cfg.gravity, body_rates=np.zeros(3))

    for step in range(max_steps):
        t = step * dt
        if step % ctrl_every == 0:
            t_ref = t0 + t
            est = QuadState(
                t=state.t,
                position=state.position + bias,
                velocity=state.velocity,
                acceleration=state.acceleration,
                attitude=state.attitude,
                body_rates=state.body_rates,
            )
            cmd = command_from_reference(
                est,
                global_traj.eval(t_ref, 0),
                global_traj.eval(t_ref, 1),
                global_traj.eval(t_ref, 2),
                gains,
                j_ref=global_traj.eval(t_ref, 3),
            )
            if record_rows:
                rows.append(_trace_row(t, state, None, cmd))

        new_state = dynamics_step(state, cmd, dt, sim_cfg)
        if wind_step > 0.0:
            new_state.velocity = new_state.velocity + wind_gen.normal(0.0, wind_step, size=3)
        dist_step = float(np.linalg.norm(new_state.position - state.position))
        if drift.sigma_per_meter > 0.0 and dist_step > 0.0:
            bias = bias + gen.normal(
                0.0, drift.sigma_per_meter * math.sqrt(dist_step), size=3
            )

        crashed = False
        if _out_of_bounds(new_state.position, track.bounds_side):
            gate_events.append((new_state.t, -1, "crash"))
            crashed = True
        else:
            s_prev = normals @ state.position - plane
            s_new = normals @ new_state.position - plane
            for gi in np.nonzero((s_prev < 0.0) & (s_new >= 0.0))[0]:
                result = gate_event(
                    state.position,
                    new_state.position,
                    track.gates[gi],
                    np.zeros(3),
                    sim_cfg.drone_radius,
                )
                if result == "crash":
                    gate_events.append((new_state.t, int(gi), "crash"))
                    crashed = True
                    break
                if result == "pass" and gi == next_gate:
                    gates_passed += 1
                    gate_events.append((new_state.t, int(gi), "pass"))
                    next_gate = (next_gate + 1) % n_gates
                    if gates_passed % n_gates == 0:
                        lap_times.append(new_state.t - lap_start)
                        lap_start = new_state.t
        if crashed:
            outcome = "crashed"
            state = new_state
            break
        state = new_state
        if gates_passed >= target_passes:
            outcome = "completed"
            break

    return EpisodeTrace(
        seed=drift.rng.seed,
        outcome=outcome,
        gates_passed=gates_passed,
        lap_times=lap_times,
        gate_events=gate_events,
        rows=rows,
    )
