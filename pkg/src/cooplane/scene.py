"""Ground-truth world model for the straight-track three-vehicle scenario.

Coordinates: +x along the track, +y to the left, lane 0 is the rightmost lane.
Vehicles are point masses longitudinally; lane changes are a cosine ramp of
the lateral position between lane centres.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

from .errors import InputError

ROLES = ("EV", "TV", "PV")

# length, width in metres
ROLE_DIMENSIONS = {
    "PV": (4.5, 1.8),
    "TV": (3.0, 1.5),
    "EV": (1.2, 0.7),
}


@dataclass(frozen=True)
class LaneGeometry:
    lane_count: int = 2
    lane_width: float = 3.5
    track_length: float = 40.0

    def __post_init__(self):
        if self.lane_count < 1:
            raise InputError("lane_count must be >= 1")
        if self.lane_width <= 0:
            raise InputError("lane_width must be positive")

    def lane_center(self, lane_id: int) -> float:
        return (lane_id + 0.5) * self.lane_width

    def lane_of(self, y: float) -> int:
        lane = int(math.floor(y / self.lane_width))
        return min(max(lane, 0), self.lane_count - 1)

    def marking_between(self, lane_a: int, lane_b: int) -> float:
        """Lateral position of the marking separating two adjacent lanes."""
        return max(lane_a, lane_b) * self.lane_width


@dataclass(frozen=True)
class LateralRamp:
    """Cosine lateral profile from ``y_start`` to ``y_end`` over ``duration`` s."""

    t_start: float
    duration: float
    y_start: float
    y_end: float

    def y_at(self, t: float) -> float:
        s = (t - self.t_start) / self.duration
        s = min(max(s, 0.0), 1.0)
        return self.y_start + (self.y_end - self.y_start) * 0.5 * (1.0 - math.cos(math.pi * s))

    def done(self, t: float) -> bool:
        return t >= self.t_start + self.duration


@dataclass(frozen=True)
class VehicleState:
    id: str
    role: str
    x: float
    y: float
    lane_id: int
    heading: float = 0.0
    speed: float = 0.0
    accel: float = 0.0
    length: float = 0.0
    width: float = 0.0

    @classmethod
    def for_role(cls, role: str, x: float, y: float, lane_id: int, speed: float = 0.0, **kw) -> "VehicleState":
        length, width = ROLE_DIMENSIONS[role]
        return cls(id=kw.pop("id", role), role=role, x=x, y=y, lane_id=lane_id,
                   speed=speed, length=length, width=width, **kw)

    @property
    def front(self) -> float:
        return self.x + 0.5 * self.length

    @property
    def rear(self) -> float:
        return self.x - 0.5 * self.length


@dataclass
class SimClock:
    timestep: float
    step_index: int = 0

    @property
    def t(self) -> float:
        return self.step_index * self.timestep

    def tick(self) -> float:
        self.step_index += 1
        return self.t


@dataclass
class VehicleInit:
    x: float
    lane_id: int
    speed: float = 0.0


def _default_inits():
    return {
        "TV": VehicleInit(x=0.0, lane_id=0),
        "PV": VehicleInit(x=13.75, lane_id=0),
        "EV": VehicleInit(x=11.0, lane_id=1),
    }


@dataclass
class ScenarioConfig:
    """All knobs of one scenario run. Serialised as flat JSON."""

    initial: dict = field(default_factory=_default_inits)
    ev_cruise_speed: float = 1.5
    tv_pv_cruise_speed: float = 2.5
    launch_accel: float = 1.0
    pv_brake_time: float = 12.0
    pv_brake_decel: float = -3.0
    prediction_enabled: bool = True
    pipeline_variant: str = "P2"
    detector: str = "YOLOv8-n"
    topology: str = "relay"
    rng_seed: int = 0
    timestep: float = 0.1
    duration: float = 22.0
    lanes: LaneGeometry = field(default_factory=LaneGeometry)
    # TV driver
    tv_reaction_time: float = 0.4
    tv_drift_speed: float = 0.35
    tv_drift_offset: float = 0.9
    lane_change_duration: float = 3.0
    tv_emergency_decel: float = -4.0
    tv_comfort_decel: float = -1.0
    tv_gap_margin: float = 2.0
    tv_merge_horizon: float = 2.0
    driver_speed_noise: float = 0.05
    # comm
    comm_delay_ms: Optional[float] = None
    networked: bool = False
    # EV control
    ev_resume_after_merge: bool = False

    def __post_init__(self):
        if self.timestep <= 0:
            raise InputError("timestep must be positive")
        if self.ev_cruise_speed < 0 or self.tv_pv_cruise_speed < 0:
            raise InputError("cruise speeds must be non-negative")
        if self.pipeline_variant not in ("P1", "P2"):
            raise InputError(f"unknown pipeline variant {self.pipeline_variant!r}")
        if self.topology not in ("direct", "relay"):
            raise InputError(f"unknown topology {self.topology!r}")
        inits = {}
        for role in ROLES:
            v = self.initial.get(role)
            if v is None:
                raise InputError(f"missing initial state for {role}")
            inits[role] = v if isinstance(v, VehicleInit) else VehicleInit(**v)
        self.initial = inits
        if isinstance(self.lanes, dict):
            self.lanes = LaneGeometry(**self.lanes)

    @property
    def tv_gap_threshold(self) -> float:
        return ROLE_DIMENSIONS["TV"][0] + self.tv_gap_margin

    @property
    def one_way_delay_ms(self) -> float:
        if self.comm_delay_ms is not None:
            return self.comm_delay_ms
        return 7.25 if self.topology == "relay" else 3.25

    def to_dict(self) -> dict:
        return asdict(self)

    def with_(self, **changes) -> "ScenarioConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise InputError(f"unknown scenario keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def dump(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))


def step_kinematics(state: VehicleState, commanded_accel: float, dt: float,
                    y: Optional[float] = None) -> VehicleState:
    """Advance a point-mass vehicle by one fixed step.

    Acceleration is clipped so the speed never goes negative; the position update
    then uses the clipped value. ``y`` overrides the lateral position when a lane
    change ramp is active.
    """
    if dt <= 0:
        raise InputError("dt must be positive")
    a = commanded_accel
    if state.speed + a * dt < 0.0:
        a = -state.speed / dt
    speed = max(0.0, state.speed + a * dt)
    x = state.x + state.speed * dt + 0.5 * a * dt * dt
    return replace(state, x=x, speed=speed, accel=a, y=state.y if y is None else y)


def ground_truth_gap(follower: VehicleState, leader: VehicleState) -> float:
    """Bumper-to-bumper longitudinal gap; negative when the bodies overlap."""
    return (leader.x - 0.5 * leader.length) - (follower.x + 0.5 * follower.length)
