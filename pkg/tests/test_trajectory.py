import numpy as np
import pytest

from gracer.core import QuadState, vec3
from gracer.trajectory import (
    SEGMENT_T_MAX,
    SEGMENT_T_MIN,
    FeasibilityLimits,
    Trajectory,
    advance_along,
    flatness_quantities,
    min_jerk_cost,
    min_jerk_segment,
    min_snap,
    project_onto,
    segment_duration,
    snap_cost,
    time_scale,
)

from oracles import (
    forward_scan_advance,
    min_jerk_numeric_cost,
    min_snap_qp_cost,
    quintic_full_stop_cost,
)


def _random_state(rng) -> QuadState:
    return QuadState(
        t=0.0,
        position=rng.normal(scale=3.0, size=3),
        velocity=rng.normal(scale=2.0, size=3),
        acceleration=rng.normal(scale=1.5, size=3),
        attitude=np.array([1.0, 0.0, 0.0, 0.0]),
        body_rates=np.zeros(3),
    )


def _random_track_waypoints(rng, count):
    # well-separated points so consecutive-distinct always holds
    angles = np.sort(rng.uniform(0, 2 * np.pi, size=count))
    radius = rng.uniform(6.0, 12.0)
    pts = [
        np.array(
            [
                radius * np.cos(a) + rng.normal(scale=0.8),
                radius * np.sin(a) + rng.normal(scale=0.8),
                rng.uniform(2.0, 6.0),
            ]
        )
        for a in angles
    ]
    return pts


# -- minimum jerk -----------------------------------------------------------


def test_min_jerk_rest_at_goal_is_constant():
    start = QuadState.hover(vec3(1, -2, 3))
    seg = min_jerk_segment(start, vec3(1, -2, 3), 2.5)
    assert min_jerk_cost(seg) == 0.0
    for t in (0.0, 0.7, 2.5):
        assert np.allclose(seg.eval(t), [1, -2, 3], atol=1e-12)


def test_min_jerk_boundary_conditions():
    rng = np.random.default_rng(11)
    for _ in range(20):
        start = _random_state(rng)
        goal = rng.normal(scale=4.0, size=3)
        T = rng.uniform(0.3, 4.0)
        seg = min_jerk_segment(start, goal, T)
        assert np.abs(seg.eval(0.0) - start.position).max() <= 1e-10
        assert np.abs(seg.eval(0.0, 1) - start.velocity).max() <= 1e-10
        assert np.abs(seg.eval(0.0, 2) - start.acceleration).max() <= 1e-10
        assert np.abs(seg.eval(T) - goal).max() <= 1e-10


def test_min_jerk_cost_matches_numerical_oracle():
    rng = np.random.default_rng(7)
    for _ in range(60):
        start = _random_state(rng)
        goal = rng.normal(scale=4.0, size=3)
        T = rng.uniform(0.3, 4.0)
        seg = min_jerk_segment(start, goal, T)
        impl = min_jerk_cost(seg)
        oracle = min_jerk_numeric_cost(start.position, start.velocity, start.acceleration, goal, T)
        assert impl == pytest.approx(oracle, rel=1e-6, abs=1e-9)


def test_min_jerk_beats_full_stop_competitor():
    rng = np.random.default_rng(13)
    for _ in range(30):
        start = _random_state(rng)
        goal = rng.normal(scale=4.0, size=3)
        T = rng.uniform(0.3, 4.0)
        impl = min_jerk_cost(min_jerk_segment(start, goal, T))
        competitor = quintic_full_stop_cost(
            start.position, start.velocity, start.acceleration, goal, T
        )
        assert impl <= competitor + 1e-9


def test_min_jerk_rejects_bad_inputs():
    start = QuadState.hover(vec3(0, 0, 1))
    with pytest.raises(ValueError):
        min_jerk_segment(start, vec3(1, 0, 0), 0.0)
    with pytest.raises(ValueError):
        min_jerk_segment(start, np.array([np.nan, 0, 0]), 1.0)


# -- segment duration --------------------------------------------------------


def test_segment_duration_ratio():
    start = QuadState.hover(vec3(0, 0, 0))
    assert segment_duration(start, vec3(2, 0, 0), 2.0) == pytest.approx(1.0)


def test_segment_duration_clamps():
    start = QuadState.hover(vec3(0, 0, 0))
    assert segment_duration(start, vec3(0, 0, 0), 1.0) == SEGMENT_T_MIN
    assert segment_duration(start, vec3(100, 0, 0), 1.0) == SEGMENT_T_MAX
    with pytest.raises(ValueError):
        segment_duration(start, vec3(1, 0, 0), 0.0)


# -- minimum snap ------------------------------------------------------------


def test_min_snap_straight_line_stays_on_axis():
    traj = min_snap(
        [vec3(0, 0, 0), vec3(1, 0, 0)], cyclic=False, limits=FeasibilityLimits(v_max_target=5.0)
    )
    ts = np.linspace(0, traj.total_duration, 211)
    pos = traj.eval_many(ts)
    assert np.abs(pos[:, 1]).max() == 0.0
    assert np.abs(pos[:, 2]).max() == 0.0


def test_min_snap_hits_waypoints():
    rng = np.random.default_rng(3)
    wps = _random_track_waypoints(rng, 6)
    traj = min_snap(wps, cyclic=True, limits=FeasibilityLimits(v_max_target=8.0))
    starts = np.concatenate([[0.0], np.cumsum([s.duration for s in traj.segments])])
    for i, w in enumerate(wps):
        assert np.linalg.norm(traj.eval(starts[i]) - w) <= 1e-6


def test_min_snap_cost_matches_qp_oracle():
    rng = np.random.default_rng(21)
    for trial in range(4):
        count = int(rng.integers(4, 9))
        cyclic = trial % 2 == 0
        wps = _random_track_waypoints(rng, count)
        traj = min_snap(wps, cyclic=cyclic, limits=FeasibilityLimits(v_max_target=8.0))
        durations = np.array([s.duration for s in traj.segments])
        impl = snap_cost(traj)
        oracle = min_snap_qp_cost(np.asarray(wps), durations, cyclic)
        assert impl == pytest.approx(oracle, rel=1e-6)


def test_min_snap_feasibility_limits_hold():
    rng = np.random.default_rng(5)
    limits = FeasibilityLimits(v_max_target=10.0)
    for _ in range(3):
        wps = _random_track_waypoints(rng, 7)
        traj = min_snap(wps, cyclic=True, limits=limits)
        ts = np.linspace(0, traj.total_duration, 4001)
        speed, thrust, rate = flatness_quantities(
            traj.eval_many(ts, 1), traj.eval_many(ts, 2), traj.eval_many(ts, 3)
        )
        assert speed.max() <= limits.v_max_target + 1e-6
        assert thrust.max() <= limits.max_normalized_thrust + 1e-6
        assert rate.max() <= limits.max_rollpitch_rate + 1e-6


def test_min_snap_rejects_degenerate():
    limits = FeasibilityLimits(v_max_target=5.0)
    with pytest.raises(ValueError):
        min_snap([vec3(0, 0, 0)], cyclic=False, limits=limits)
    with pytest.raises(ValueError):
        min_snap([vec3(0, 0, 0), vec3(1, 0, 0)], cyclic=True, limits=limits)
    with pytest.raises(ValueError):
        min_snap([vec3(0, 0, 0), vec3(0, 0, 0), vec3(1, 0, 0)], cyclic=True, limits=limits)
    with pytest.raises(ValueError):
        min_snap([vec3(0, 0, 0), np.array([np.inf, 0, 0])], cyclic=False, limits=limits)


def test_time_scaling_scales_speed_exactly():
    rng = np.random.default_rng(17)
    wps = _random_track_waypoints(rng, 5)
    traj = min_snap(wps, cyclic=True, limits=FeasibilityLimits(v_max_target=8.0))
    for k in (0.5, 2.0, 3.7):
        scaled = time_scale(traj, k)
        assert scaled.v_max_achieved * k == pytest.approx(traj.v_max_achieved, rel=1e-9)


def test_trajectory_json_round_trip():
    traj = min_snap(
        [vec3(0, 0, 2), vec3(5, 1, 3), vec3(9, -2, 2)],
        cyclic=False,
        limits=FeasibilityLimits(v_max_target=6.0),
    )
    clone = Trajectory.loads(traj.dumps())
    assert clone.dumps() == traj.dumps()
    ts = np.linspace(0, traj.total_duration, 50)
    assert np.array_equal(clone.eval_many(ts), traj.eval_many(ts))


# -- projection --------------------------------------------------------------


@pytest.fixture(scope="module")
def square_traj():
    wps = [vec3(0, 0, 5), vec3(10, 0, 5), vec3(10, 10, 5), vec3(0, 10, 5)]
    return min_snap(wps, cyclic=True, limits=FeasibilityLimits(v_max_target=8.0))


def test_project_onto_self_projection(square_traj):
    for t in np.linspace(0.1, square_traj.total_duration - 0.1, 7):
        p = square_traj.eval(t)
        _, point, _ = project_onto(square_traj, p)
        assert np.linalg.norm(point - p) <= 1e-3


def test_project_onto_perpendicular_foot():
    traj = min_snap(
        [vec3(0, 0, 0), vec3(10, 0, 0)], cyclic=False, limits=FeasibilityLimits(v_max_target=5.0)
    )
    _, point, _ = project_onto(traj, vec3(5.0, 2.0, 0.0))
    assert np.linalg.norm(point - vec3(5.0, 0.0, 0.0)) <= 1e-3


def test_project_onto_matches_brute_force(square_traj):
    from oracles import brute_force_closest

    rng = np.random.default_rng(23)
    for _ in range(15):
        p = np.array([rng.uniform(-3, 13), rng.uniform(-3, 13), rng.uniform(3, 7)])
        t_star, point, _ = project_onto(square_traj, p)
        _, best_d = brute_force_closest(
            square_traj.eval_many, square_traj.total_duration, p, samples=1_000_000
        )
        assert np.linalg.norm(point - p) <= best_d + 1e-3


def test_project_onto_idempotent(square_traj):
    _, point, _ = project_onto(square_traj, vec3(12.0, 5.0, 5.0))
    _, point2, _ = project_onto(square_traj, point)
    assert np.linalg.norm(point2 - point) <= 1e-6


# -- forward advance ---------------------------------------------------------


def test_advance_zero_distance_is_identity(square_traj):
    q = advance_along(square_traj, 1.234, 0.0)
    assert np.array_equal(q, square_traj.eval(1.234))


def test_advance_straight_line():
    traj = min_snap(
        [vec3(0, 0, 0), vec3(10, 0, 0)], cyclic=False, limits=FeasibilityLimits(v_max_target=5.0)
    )
    t_mid, p_mid, _ = project_onto(traj, vec3(4.0, 0.0, 0.0))
    q = advance_along(traj, t_mid, 1.0)
    assert np.allclose(q, p_mid + vec3(1.0, 0.0, 0.0), atol=1e-6)


def test_advance_matches_forward_scan(square_traj):
    rng = np.random.default_rng(29)
    for _ in range(8):
        t0 = rng.uniform(0, square_traj.total_duration)
        d = rng.uniform(0.5, 6.0)
        q = advance_along(square_traj, t0, d)
        p0 = square_traj.eval(t0)
        assert abs(np.linalg.norm(q - p0) - d) <= 1e-3
        q_ref = forward_scan_advance(
            lambda t: square_traj.eval(t), t0, d, square_traj.total_duration, cyclic=True
        )
        assert np.linalg.norm(q - q_ref) <= 1e-3


def test_advance_wraps_on_cyclic(square_traj):
    total = square_traj.total_duration
    q = advance_along(square_traj, total - 0.05, 2.0)
    p0 = square_traj.eval(total - 0.05)
    assert abs(np.linalg.norm(q - p0) - 2.0) <= 1e-6
