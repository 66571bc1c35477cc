"""Synthetic stereo perception for the target vehicle.

Deep detectors are not run; they are represented by latency/confidence
profiles. The geometric estimators (disparity to depth, back-projection, tilt
compensation, radial speed, EMA tracker, TTC/THW) are implemented exactly.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DomainError, InsufficientHistory, NoDetection, NoSample, OrderingError

KMH = 1.0 / 3.6
THROTTLE_MAX_ERROR = 3.0 * KMH


@dataclass(frozen=True)
class CameraModel:
    fx: float = 500.0
    fy: float = 500.0
    cx: float = 336.0
    cy: float = 188.0
    baseline: float = 0.11989
    tilt: float = 15.0
    resolution: tuple = (672, 376)
    nominal_fps: float = 10.0
    mount_height: float = 1.8
    mount_lateral: float = 0.2
    mount_forward: float = 0.0

    def __post_init__(self):
        w, h = self.resolution
        if self.fx <= 0 or self.fy <= 0 or self.baseline <= 0:
            raise DomainError("focal lengths and baseline must be positive")
        if not (0 <= self.cx < w and 0 <= self.cy < h):
            raise DomainError("principal point outside the image")

    @property
    def fb(self) -> float:
        return self.fx * self.baseline


@dataclass(frozen=True)
class DetectorProfile:
    name: str
    latency_mean: float  # ms
    latency_std: float
    confidence_mean: float
    confidence_std: float

    def __post_init__(self):
        if self.latency_mean < 0:
            raise DomainError("latency_mean must be non-negative")
        if not 0.0 <= self.confidence_mean <= 1.0:
            raise DomainError("confidence_mean must be in [0, 1]")


# 100-frame benchmark on the target vehicle's laptop
DETECTOR_PROFILES = {
    "YOLOv8-n": DetectorProfile("YOLOv8-n", 18.4, 3.5, 0.70, 0.05),
    "Faster R-CNN": DetectorProfile("Faster R-CNN", 127.8, 3.7, 0.22, 0.03),
    "SSDLite320": DetectorProfile("SSDLite320", 101.2, 12.1, 0.07, 0.01),
}

# Per-variant stage latencies (mean ms, std ms) on top of the detector.
# P1: RAFT-Stereo disparity; P2: ROI segmentation + SDK disparity + EMA tracker.
# Means are set so the online averages come out at 3.75 and 5.3 FPS with YOLOv8-n.
PIPELINE_STAGES = {
    "P1": {"raft_stereo": (248.27, 45.0)},
    "P2": {"roi_segmentation": (11.2, 1.1), "sdk_depth_tracking": (159.08, 12.0)},
}


@dataclass
class Detection:
    track_id: int
    u: float
    v: float
    disparity: float
    confidence: float


@dataclass(frozen=True)
class SafetyFeatures:
    ttc: float
    thw: float
    d: float
    v_rel: float


@dataclass
class TrackState:
    track_id: int = 0
    capacity: int = 5
    alpha: float = 0.3
    window: deque = field(default_factory=deque)
    smoothed_depth: float = math.nan
    ema_velocity: float = 0.0
    point: Optional[tuple] = None
    point_t: Optional[float] = None
    prev_point: Optional[tuple] = None
    prev_point_t: Optional[float] = None
    v_x: float = 0.0
    v_z: float = 0.0

    def push_point(self, point, t: float) -> "TrackState":
        """Record a camera-frame 3D point; finite-difference velocity from the last two."""
        if self.point_t is not None and t <= self.point_t:
            raise OrderingError(f"t={t} not after {self.point_t}")
        self.prev_point, self.prev_point_t = self.point, self.point_t
        self.point, self.point_t = tuple(point), t
        if self.prev_point is not None:
            dt = t - self.prev_point_t
            self.v_x = (self.point[0] - self.prev_point[0]) / dt
            self.v_z = (self.point[2] - self.prev_point[2]) / dt
        return self


def disparity_to_depth(d: float, cam: CameraModel) -> float:
    if not d > 0:
        raise DomainError(f"disparity must be positive, got {d}")
    return cam.fx * cam.baseline / d


def depth_to_disparity(z: float, cam: CameraModel) -> float:
    if not z > 0:
        raise DomainError(f"depth must be positive, got {z}")
    return cam.fx * cam.baseline / z


def pixel_to_camera(u: float, v: float, z: float, cam: CameraModel) -> tuple:
    if not z > 0:
        raise DomainError(f"depth must be positive, got {z}")
    return ((u - cam.cx) * z / cam.fx, (v - cam.cy) * z / cam.fy, z)


def camera_to_pixel(p, cam: CameraModel) -> tuple:
    x, y, z = p
    return (cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy)


def _pitch(p, angle_deg: float) -> tuple:
    # rotation about the camera X (lateral) axis; camera axes are X right, Y down, Z forward
    c, s = math.cos(math.radians(angle_deg)), math.sin(math.radians(angle_deg))
    x, y, z = p
    return (x, c * y + s * z, -s * y + c * z)


def tilt_compensate(p, tilt: float, cam: Optional[CameraModel] = None) -> tuple:
    """Camera-frame point to the level vehicle frame.

    The vehicle frame keeps the camera axis directions (X right, Y down,
    Z forward) with the origin on the ground below the vehicle centre. A camera
    pitched down by ``tilt`` sees a point on its optical axis below the horizon,
    so undoing the tilt maps (0, 0, Z) to (0, Z sin(tilt), Z cos(tilt)).
    """
    x, y, z = _pitch(p, tilt)
    if cam is None:
        return (x, y, z)
    return (x - cam.mount_lateral, y - cam.mount_height, z + cam.mount_forward)


def vehicle_to_camera(p, cam: CameraModel) -> tuple:
    """Inverse of :func:`tilt_compensate` for a given mount."""
    x, y, z = p
    q = (x + cam.mount_lateral, y + cam.mount_height, z - cam.mount_forward)
    return _pitch(q, -cam.tilt)


def synthesize_observation(rel_pose, cam: CameraModel, rng: np.random.Generator,
                           quantum: float = 0.25, sigma_d: float = 0.1,
                           sensing_max: float = 20.0, track_id: int = 1,
                           profile: Optional[DetectorProfile] = None) -> Detection:
    """Stand-in for the detector and stereo matcher.

    ``rel_pose`` is the true target point in the camera frame. The ideal
    disparity is quantised to ``quantum`` px and perturbed with N(0, sigma_d).
    """
    x, y, z = rel_pose
    if not (0.3 < z <= sensing_max):
        raise NoDetection(f"depth {z:.2f} m outside (0.3, {sensing_max}]")
    u, v = camera_to_pixel(rel_pose, cam)
    w, h = cam.resolution
    if not (0 <= u < w and 0 <= v < h):
        raise NoDetection(f"pixel ({u:.1f}, {v:.1f}) outside the image")
    d = cam.fb / z
    if quantum > 0:
        d = round(d / quantum) * quantum
    if sigma_d > 0:
        d += rng.normal(0.0, sigma_d)
    if d <= 0:
        raise NoDetection("disparity collapsed to zero")
    profile = profile or DETECTOR_PROFILES["YOLOv8-n"]
    conf = float(np.clip(rng.normal(profile.confidence_mean, profile.confidence_std), 0.0, 1.0))
    return Detection(track_id=track_id, u=u, v=v, disparity=d, confidence=conf)


def estimate_object_speed_p1(track: TrackState) -> float:
    """Radial speed from the latest camera-frame position and its rate.

    Positive when the range is closing.
    """
    if track.prev_point is None:
        raise InsufficientHistory("need two positions for a velocity estimate")
    x, _, z = track.point
    r = math.hypot(x, z)
    return -(track.v_x * x + track.v_z * z) / r


def track_update_p2(track: TrackState, depth: float, t: float) -> TrackState:
    if track.window and t <= track.window[-1][0]:
        raise OrderingError(f"t={t} not after {track.window[-1][0]}")
    track.window.append((t, depth))
    while len(track.window) > track.capacity:
        track.window.popleft()
    track.smoothed_depth = sum(d for _, d in track.window) / len(track.window)
    if len(track.window) >= 2:
        (t0, d0), (t1, d1) = track.window[0], track.window[-1]
        raw = (d1 - d0) / (t1 - t0)
        track.ema_velocity = track.alpha * raw + (1.0 - track.alpha) * track.ema_velocity
    return track


def safety_features(d: float, v_tv: float, v_pv: float) -> SafetyFeatures:
    """TTC and THW; infinities mean there is no closing risk."""
    if d < 0:
        raise DomainError("gap must be non-negative")
    v_rel = v_tv - v_pv
    ttc = d / v_rel if v_rel > 0 else (0.0 if d == 0 else math.inf)
    thw = d / v_tv if v_tv > 0 else (0.0 if d == 0 else math.inf)
    return SafetyFeatures(ttc=ttc, thw=thw, d=d, v_rel=v_rel)


class SpeedSensor:
    """Ego speed source: calibrated throttle reading or 1 Hz phone GPS.

    Throttle samples every tick with a bounded error. GPS only reports on the
    1-second grid and returns the previous grid value (one-sample lag).
    """

    def __init__(self, kind: str, rng: Optional[np.random.Generator] = None,
                 sigma: float = 0.35, max_error: float = THROTTLE_MAX_ERROR):
        if kind not in ("throttle", "gps"):
            raise ValueError(f"unknown sensor {kind!r}")
        self.kind = kind
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.sigma = sigma
        self.max_error = max_error
        self._held = None

    def sample(self, true_speed: float, t: float) -> float:
        if true_speed < 0:
            raise DomainError("speed must be non-negative")
        if self.kind == "throttle":
            e = 0.0
            if self.sigma > 0:
                e = float(np.clip(self.rng.normal(0.0, self.sigma), -self.max_error, self.max_error))
            return max(0.0, true_speed + e)
        if abs(t - round(t)) > 1e-6:
            raise NoSample(f"gps has no reading at t={t}")
        held, self._held = self._held, true_speed
        if held is None:
            raise NoSample("gps warming up")
        return held


def sample_speed_sensor(true_speed: float, sensor: SpeedSensor, t: float) -> float:
    return sensor.sample(true_speed, t)


@dataclass
class CadenceSchedule:
    variant: str
    latencies_ms: np.ndarray
    periods_ms: np.ndarray

    @property
    def mean_fps(self) -> float:
        return 1000.0 * len(self.periods_ms) / float(np.sum(self.periods_ms))

    @property
    def max_fps(self) -> float:
        return 1000.0 / float(np.min(self.periods_ms))

    def frame_times(self, t0: float = 0.0) -> np.ndarray:
        return t0 + np.cumsum(self.periods_ms) / 1000.0


def pipeline_cadence(profile: DetectorProfile, variant: str, n_frames: int = 200,
                     rng: Optional[np.random.Generator] = None, nominal_fps: float = 10.0,
                     stages: Optional[dict] = None) -> CadenceSchedule:
    """Per-frame processing latencies and the implied frame periods.

    A frame cannot be processed faster than the camera delivers it, so the
    period is floored at 1/nominal_fps.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    stages = PIPELINE_STAGES[variant] if stages is None else stages
    lat = np.clip(rng.normal(profile.latency_mean, profile.latency_std, n_frames), 0.0, None)
    for mean, std in stages.values():
        lat = lat + np.clip(rng.normal(mean, std, n_frames), 0.0, None)
    periods = np.maximum(lat, 1000.0 / nominal_fps)
    return CadenceSchedule(variant=variant, latencies_ms=lat, periods_ms=periods)
