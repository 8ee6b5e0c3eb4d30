import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gracer.core import (
    CameraModel,
    Gate,
    QuadState,
    RngStream,
    Track,
    back_project,
    camera_pose_from_state,
    project_to_image,
    quat_from_axis_angle,
    quat_from_yaw,
    quat_multiply,
    quat_normalize,
    vec3,
)


def _pose(yaw=0.0, pitch=0.0, position=(0.0, 0.0, 5.0), cam=None):
    q = quat_multiply(quat_from_yaw(yaw), quat_from_axis_angle(np.array([0.0, 1.0, 0.0]), pitch))
    state = QuadState(
        t=0.0,
        position=np.asarray(position, dtype=float),
        velocity=np.zeros(3),
        acceleration=np.zeros(3),
        attitude=quat_normalize(q),
        body_rates=np.zeros(3),
    )
    return camera_pose_from_state(state, cam or CameraModel())


def test_optical_axis_projects_to_center():
    cam = CameraModel()
    pose = _pose(yaw=0.7, cam=cam)
    p = pose.position + 5.0 * pose.r_wc @ np.array([0.0, 0.0, 1.0])
    x = project_to_image(p, pose, cam)
    assert x is not None
    assert abs(x[0]) < 1e-12 and abs(x[1]) < 1e-12


def test_fov_edge_maps_to_unit_coordinate():
    cam = CameraModel(horizontal_fov=math.pi / 2)
    pose = _pose(cam=cam)
    # camera frame (X=1, Y=0, Z=1): exactly on the horizontal FOV edge
    p = pose.position + pose.r_wc @ np.array([1.0, 0.0, 1.0])
    x = project_to_image(p, pose, cam)
    assert x == pytest.approx((1.0, 0.0), abs=1e-12)


def test_behind_camera_returns_marker():
    cam = CameraModel()
    pose = _pose(cam=cam)
    p = pose.position + pose.r_wc @ np.array([0.0, 0.0, -3.0])
    assert project_to_image(p, pose, cam) is None


@settings(max_examples=200, deadline=None)
@given(
    x1=st.floats(-1.0, 1.0),
    x2=st.floats(-1.0, 1.0),
    d=st.floats(0.1, 50.0),
    yaw=st.floats(-math.pi, math.pi),
    pitch=st.floats(-0.6, 0.6),
)
def test_projection_round_trip(x1, x2, d, yaw, pitch):
    cam = CameraModel()
    pose = _pose(yaw=yaw, pitch=pitch)
    p = back_project((x1, x2), d, pose, cam)
    assert abs(np.linalg.norm(p - pose.position) - d) <= 1e-12 * max(1.0, d)
    x = project_to_image(p, pose, cam)
    assert x is not None
    assert abs(x[0] - x1) <= 1e-9 and abs(x[1] - x2) <= 1e-9


def test_back_project_center_ray():
    cam = CameraModel()
    pose = _pose()
    p = back_project((0.0, 0.0), 2.0, pose, cam)
    expected = pose.position + 2.0 * pose.r_wc @ np.array([0.0, 0.0, 1.0])
    assert np.allclose(p, expected, atol=1e-12)


def test_back_project_fov_edge_ray():
    cam = CameraModel(horizontal_fov=math.pi / 2)
    pose = _pose(cam=cam)
    p = back_project((1.0, 0.0), math.sqrt(2.0), pose, cam)
    cam_frame = pose.r_wc.T @ (p - pose.position)
    assert cam_frame == pytest.approx([1.0, 0.0, 1.0], abs=1e-12)


def test_back_project_rejects_nonpositive_depth():
    cam = CameraModel()
    with pytest.raises(ValueError):
        back_project((0.0, 0.0), 0.0, _pose(cam=cam), cam)


def test_camera_model_validation():
    with pytest.raises(ValueError):
        CameraModel(horizontal_fov=math.pi)
    with pytest.raises(ValueError):
        CameraModel(image_width=4)


def test_quad_state_validation():
    state = QuadState.hover(vec3(0, 0, 1))
    state.validate()
    bad = QuadState.hover(vec3(0, 0, 1))
    bad.attitude = np.array([1.0, 0.0, 0.0, 1e-4])
    with pytest.raises(ValueError):
        bad.validate()


def test_gate_and_track_validation():
    gate = Gate(id=0, center=vec3(1, 2, 3), yaw=0.5)
    assert np.allclose(gate.normal(), [math.cos(0.5), math.sin(0.5), 0.0])
    with pytest.raises(ValueError):
        Gate(id=0, center=vec3(0, 0, 0), yaw=0.0, inner_width=-1.0)
    with pytest.raises(ValueError):
        Track(gates=())
    track = Track(gates=(gate,))
    assert track.laps_for_success == 5
    assert track.bounds_side == 70.0


def test_track_extra_waypoints_order():
    gates = tuple(
        Gate(id=i, center=vec3(float(i), 0, 2), yaw=0.0) for i in range(3)
    )
    track = Track(gates=gates, extra_waypoints=((0, vec3(0.5, 1.0, 2.0)),))
    wps = track.waypoints()
    assert len(wps) == 4
    assert np.allclose(wps[1], [0.5, 1.0, 2.0])


def test_rng_stream_reproducible():
    a = RngStream(seed=1234, stream_id=5).generator().uniform(size=64)
    b = RngStream(seed=1234, stream_id=5).generator().uniform(size=64)
    assert np.array_equal(a, b)


def test_rng_streams_differ():
    a = RngStream(seed=1234, stream_id=5).generator().uniform(size=64)
    b = RngStream(seed=1234, stream_id=6).generator().uniform(size=64)
    assert not np.array_equal(a, b)


def test_rng_derive_deterministic():
    parent = RngStream(seed=99)
    c1 = parent.derive(3).generator().uniform(size=8)
    c2 = parent.derive(3).generator().uniform(size=8)
    c3 = parent.derive(4).generator().uniform(size=8)
    assert np.array_equal(c1, c2)
    assert not np.array_equal(c1, c3)
