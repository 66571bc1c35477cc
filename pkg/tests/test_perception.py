import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cooplane.errors import DomainError, InsufficientHistory, NoDetection, NoSample, OrderingError
from cooplane.perception import (DETECTOR_PROFILES, THROTTLE_MAX_ERROR, CameraModel, DetectorProfile,
                                 SpeedSensor, TrackState, depth_to_disparity, disparity_to_depth,
                                 estimate_object_speed_p1, pipeline_cadence, pixel_to_camera,
                                 safety_features, synthesize_observation, tilt_compensate,
                                 track_update_p2, vehicle_to_camera)

CAM = CameraModel()


def test_depth_examples():
    assert disparity_to_depth(5.9945, CAM) == pytest.approx(10.0, rel=1e-12)
    assert disparity_to_depth(CAM.fx * CAM.baseline, CAM) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(DomainError):
        disparity_to_depth(0.0, CAM)


@given(st.floats(0.3, 50.0))
def test_depth_round_trip(z):
    assert disparity_to_depth(depth_to_disparity(z, CAM), CAM) == pytest.approx(z, rel=1e-12)


@given(st.floats(0.1, 100.0), st.floats(0.1, 100.0))
def test_depth_strictly_decreasing(d1, d2):
    if d1 < d2:
        assert disparity_to_depth(d1, CAM) > disparity_to_depth(d2, CAM)


def test_back_projection():
    assert pixel_to_camera(CAM.cx, CAM.cy, 10.0, CAM) == (0.0, 0.0, 10.0)
    assert pixel_to_camera(386, CAM.cy, 10.0, CAM)[0] == pytest.approx(1.0)
    left = pixel_to_camera(CAM.cx - 40, CAM.cy, 7.0, CAM)[0]
    right = pixel_to_camera(CAM.cx + 40, CAM.cy, 7.0, CAM)[0]
    assert left == -right
    with pytest.raises(DomainError):
        pixel_to_camera(0, 0, 0.0, CAM)


def test_tilt_examples():
    assert tilt_compensate((1.0, 2.0, 3.0), 0.0) == (1.0, 2.0, 3.0)
    x, y, z = tilt_compensate((0.0, 0.0, 1.0), 90.0)
    assert (x, abs(y), z) == pytest.approx((0.0, 1.0, 0.0), abs=1e-12)
    assert tilt_compensate((0.0, 0.0, 10.0), 15.0)[2] == pytest.approx(9.659, abs=1e-3)


@given(st.tuples(st.floats(-20, 20), st.floats(-20, 20), st.floats(-20, 20)), st.floats(-90, 90))
def test_tilt_preserves_norm(p, tilt):
    assert math.dist(tilt_compensate(p, tilt), (0, 0, 0)) == pytest.approx(math.dist(p, (0, 0, 0)), abs=1e-9)


@given(st.tuples(st.floats(-5, 5), st.floats(-3, 3), st.floats(0.5, 20)))
def test_mount_transform_inverts(p):
    assert tilt_compensate(vehicle_to_camera(p, CAM), CAM.tilt, CAM) == pytest.approx(p, abs=1e-9)


def test_noiseless_observation_round_trip():
    rng = np.random.default_rng(0)
    for z in (0.5, 3.0, 12.0, 19.0):
        det = synthesize_observation((0.0, 0.0, z), CAM, rng, quantum=0.0, sigma_d=0.0)
        assert disparity_to_depth(det.disparity, CAM) == pytest.approx(z, rel=1e-12)


def test_observation_out_of_range():
    rng = np.random.default_rng(0)
    with pytest.raises(NoDetection):
        synthesize_observation((0.0, 0.0, 25.0), CAM, rng)
    with pytest.raises(NoDetection):
        synthesize_observation((0.0, 0.0, 0.2), CAM, rng)
    with pytest.raises(NoDetection):
        synthesize_observation((50.0, 0.0, 5.0), CAM, rng)


def test_quantization_bound_grows_quadratically():
    q = 0.25
    bound = lambda z: z * (q / 2) / CAM.fb  # relative error bound
    assert bound(3.0) < 0.01
    assert bound(12.0) >= 4 * bound(3.0)


def _track(points, dt=0.1):
    tr = TrackState()
    for i, p in enumerate(points):
        tr.push_point(p, i * dt)
    return tr


def test_radial_speed_examples():
    tr = TrackState(point=(0.0, 0.0, 10.0), prev_point=(0.0, 0.0, 10.1), v_x=0.0, v_z=-1.0)
    assert estimate_object_speed_p1(tr) == pytest.approx(1.0)
    tr = TrackState(point=(3.0, 0.0, 4.0), prev_point=(0.0, 0.0, 0.0), v_x=3.0, v_z=4.0)
    assert estimate_object_speed_p1(tr) == pytest.approx(-5.0)
    assert estimate_object_speed_p1(_track([(1.0, 0.0, 5.0)] * 2)) == 0.0
    with pytest.raises(InsufficientHistory):
        estimate_object_speed_p1(_track([(1.0, 0.0, 5.0)]))


@given(st.floats(-3, 3), st.floats(2, 15), st.floats(-2, 2), st.floats(-3, 3))
def test_radial_speed_matches_range_derivative(x0, z0, vx, vz):
    dt = 1e-4
    tr = _track([(x0, 0.0, z0), (x0 + vx * dt, 0.0, z0 + vz * dt)], dt)
    r0, r1 = math.hypot(x0, z0), math.hypot(x0 + vx * dt, z0 + vz * dt)
    assert estimate_object_speed_p1(tr) == pytest.approx(-(r1 - r0) / dt, abs=1e-3)


def test_push_point_ordering():
    tr = _track([(0, 0, 1)])
    with pytest.raises(OrderingError):
        tr.push_point((0, 0, 1), 0.0)


def test_tracker_examples():
    tr = TrackState()
    for i, d in enumerate((10.0, 9.9, 9.8)):
        track_update_p2(tr, d, i * 0.1)
    # anchor raw velocity is -1.0 at both updates
    assert tr.ema_velocity == pytest.approx(0.3 * -1.0 + 0.7 * (0.3 * -1.0))
    tr = TrackState()
    track_update_p2(tr, 10.0, 0.0)
    track_update_p2(tr, 9.9, 0.1)
    assert tr.ema_velocity == pytest.approx(-0.3)
    assert tr.smoothed_depth == pytest.approx(9.95)
    with pytest.raises(OrderingError):
        track_update_p2(tr, 9.8, 0.1)


def test_tracker_static_target_and_window():
    tr = TrackState()
    for i in range(20):
        track_update_p2(tr, 5.0, i * 0.1)
    assert tr.ema_velocity == 0.0
    assert len(tr.window) == tr.capacity
    assert tr.smoothed_depth == 5.0


def test_safety_examples():
    sf = safety_features(10.0, 2.5, 1.5)
    assert (sf.ttc, sf.thw) == pytest.approx((10.0, 4.0))
    assert safety_features(10.0, 2.0, 2.0).ttc == math.inf
    sf = safety_features(0.0, 2.0, 1.0)
    assert (sf.ttc, sf.thw) == (0.0, 0.0)
    with pytest.raises(DomainError):
        safety_features(-1.0, 1.0, 0.0)


@given(st.floats(0.1, 40), st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0, 3))
def test_ttc_thw_monotone(d, v_a, v_b, v_pv):
    lo, hi = sorted((v_a, v_b))
    assert safety_features(d, v_pv + hi, v_pv).ttc <= safety_features(d, v_pv + lo, v_pv).ttc
    assert safety_features(d, hi, 0.0).thw <= safety_features(d, lo, 0.0).thw


def test_throttle_sensor():
    s = SpeedSensor("throttle", sigma=0.0)
    assert s.sample(1.2, 0.3) == 1.2
    s = SpeedSensor("throttle", rng=np.random.default_rng(1), sigma=2.0)
    assert THROTTLE_MAX_ERROR <= 0.8334
    for k in range(5000):
        assert abs(s.sample(5.0, k * 0.1) - 5.0) <= 0.8334


def test_gps_sensor():
    s = SpeedSensor("gps")
    with pytest.raises(NoSample):
        s.sample(1.0, 0.5)
    with pytest.raises(NoSample):
        s.sample(1.0, 0.0)
    assert s.sample(2.0, 1.0) == 1.0
    assert s.sample(3.0, 2.0) == 2.0
    with pytest.raises(ValueError):
        SpeedSensor("lidar")


def test_cadence_targets():
    prof = DETECTOR_PROFILES["YOLOv8-n"]
    p1 = pipeline_cadence(prof, "P1", n_frames=2000, rng=np.random.default_rng(3))
    p2 = pipeline_cadence(prof, "P2", n_frames=2000, rng=np.random.default_rng(3))
    assert p2.mean_fps > p1.mean_fps
    assert p1.mean_fps == pytest.approx(3.75, rel=0.1)
    assert p2.mean_fps == pytest.approx(5.3, rel=0.1)
    assert np.all(np.diff(p2.frame_times()) > 0)


def test_zero_latency_capped_at_camera_rate():
    prof = DetectorProfile("none", 0.0, 0.0, 0.5, 0.0)
    sched = pipeline_cadence(prof, "P2", stages={})
    assert sched.mean_fps == pytest.approx(10.0)
    assert sched.max_fps == pytest.approx(10.0)


def test_invalid_profiles():
    with pytest.raises(DomainError):
        DetectorProfile("x", -1.0, 0.0, 0.5, 0.0)
    with pytest.raises(DomainError):
        CameraModel(baseline=0.0)
