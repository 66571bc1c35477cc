"""EV longitudinal planning, PWM state machine, PID speed loop, heading hold and actuator plant."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

from .errors import InputError

V_MAX = 1.5  # m/s at full duty
TICK = 0.1  # s
DUTY_STEP_UP = 4.0
DUTY_STEP_DOWN = 8.0
ENCODER_PULSES = 600
WHEEL_RADIUS = 0.2  # m


class LongitudinalState(str, enum.Enum):
    ACCELERATE = "Accelerate"
    DECELERATE = "Decelerate"
    STOP = "Stop"


@dataclass(frozen=True)
class PwmCommand:
    duty: float = 0.0
    mapped: int = 0

    def __post_init__(self):
        if not 0.0 <= self.duty <= 100.0:
            raise InputError(f"duty {self.duty} outside [0, 100]")
        if not 0 <= self.mapped <= 255:
            raise InputError(f"mapped {self.mapped} outside [0, 255]")

    @classmethod
    def from_duty(cls, duty: float) -> "PwmCommand":
        duty = min(100.0, max(0.0, duty))
        return cls(duty, int(round(duty / 100.0 * 255)))


def apply_state(state: LongitudinalState, pwm: PwmCommand) -> PwmCommand:
    """One 100 ms tick of the duty state machine."""
    if state == LongitudinalState.ACCELERATE:
        return PwmCommand.from_duty(pwm.duty + DUTY_STEP_UP)
    if state == LongitudinalState.DECELERATE:
        return PwmCommand.from_duty(pwm.duty - DUTY_STEP_DOWN)
    return PwmCommand.from_duty(0.0)


@dataclass
class EvContext:
    """What the planner knows about the traffic around the EV at one tick."""

    frontal_ttc: float = math.inf
    tv_rel_x: Optional[float] = None  # TV centre minus EV centre, m
    tv_adjacent: bool = False
    cruise_duty: float = 100.0


@dataclass
class PlannerConfig:
    emergency_ttc: float = 0.5
    window_behind: float = -8.0
    window_ahead: float = 2.0
    latch_yield: bool = True


@dataclass
class Planner:
    """Prediction-triggered state selection.

    With ``latch_yield`` a yield, once started, is held until the EV stops.
    """

    config: PlannerConfig = field(default_factory=PlannerConfig)
    yielding: bool = False

    def __call__(self, prediction, ctx: EvContext) -> LongitudinalState:
        state = plan_state(prediction, ctx, self.config)
        if state == LongitudinalState.DECELERATE and self.config.latch_yield:
            self.yielding = True
        if self.yielding and state == LongitudinalState.ACCELERATE:
            state = LongitudinalState.DECELERATE
        return state


def plan_state(prediction, ctx: EvContext, config: Optional[PlannerConfig] = None) -> LongitudinalState:
    """Stop on imminent frontal collision, yield to a predicted merge, otherwise accelerate."""
    config = config or PlannerConfig()
    if ctx.frontal_ttc < config.emergency_ttc:
        return LongitudinalState.STOP
    if prediction is not None and _argmax(prediction) == "leftLaneChange":
        if ctx.tv_adjacent and ctx.tv_rel_x is not None and \
                config.window_behind <= ctx.tv_rel_x <= config.window_ahead:
            return LongitudinalState.DECELERATE
    return LongitudinalState.ACCELERATE


def _argmax(prediction) -> str:
    if isinstance(prediction, str):
        return prediction
    if hasattr(prediction, "maneuver"):
        return prediction.maneuver
    return prediction.argmax


@dataclass(frozen=True)
class PidGains:
    k_p: float = 2.0
    k_i: float = 2.0
    k_d: float = 0.05
    t_s: float = TICK
    integral_limit: Optional[float] = None

    def __post_init__(self):
        if self.t_s <= 0:
            raise InputError("T_s must be positive")

    @property
    def windup_bound(self) -> float:
        """Integral clamp so the integral term alone cannot exceed full scale."""
        if self.integral_limit is not None:
            return self.integral_limit
        return V_MAX / self.k_i if self.k_i else math.inf


@dataclass(frozen=True)
class PidState:
    integral: float = 0.0
    prev_error: float = 0.0


def pid_step(gains: PidGains, state: PidState, v_d: float, v_a: float):
    """Trapezoidal-integral PID; returns (raw output, new state)."""
    e = v_d - v_a
    integral = state.integral
    if gains.k_i:
        integral += 0.5 * (e + state.prev_error) * gains.t_s
        bound = gains.windup_bound
        integral = min(bound, max(-bound, integral))
    x = gains.k_p * e + gains.k_i * integral + gains.k_d * (e - state.prev_error) / gains.t_s
    return x, PidState(integral=integral, prev_error=e)


def map_to_pwm(x: float, v_max: float = V_MAX) -> PwmCommand:
    mapped = int(min(255, max(0, round(x * 255.0 / v_max))))
    return PwmCommand(duty=mapped / 255.0 * 100.0, mapped=mapped)


@dataclass(frozen=True)
class HeadingController:
    reference: float = 0.0
    margin: float = 2.0
    increment: float = 1.0

    def __post_init__(self):
        if self.margin <= 0:
            raise InputError("margin must be positive")


def lateral_correct(yaw: float, ctl: HeadingController) -> Optional[float]:
    """Steering increment toward the reference, or None inside the margin."""
    err = yaw - ctl.reference
    if abs(err) <= ctl.margin:
        return None
    return -math.copysign(ctl.increment, err)


@dataclass(frozen=True)
class PlantConfig:
    tau: float = 0.5
    v_max: float = V_MAX
    wheel_radius: float = WHEEL_RADIUS
    pulses: int = ENCODER_PULSES
    standstill: float = 0.01  # m/s; below this with zero duty the brake holds the cart


def actuator_plant(pwm: PwmCommand, speed: float, dt: float, config: Optional[PlantConfig] = None) -> float:
    """First-order lag toward v_max * duty / 100 (exact discretisation)."""
    if dt <= 0:
        raise InputError("dt must be positive")
    config = config or PlantConfig()
    v_ss = config.v_max * pwm.duty / 100.0
    v = v_ss + (speed - v_ss) * math.exp(-dt / config.tau)
    if v_ss == 0.0 and v < config.standstill:
        return 0.0
    return v


class Encoder:
    """Incremental encoder: cumulative whole pulses, differenced per tick."""

    def __init__(self, config: Optional[PlantConfig] = None):
        self.config = config or PlantConfig()
        self.per_pulse = 2.0 * math.pi * self.config.wheel_radius / self.config.pulses
        self.distance = 0.0
        self.count = 0

    def read(self, distance_step: float, dt: float) -> float:
        self.distance += distance_step
        count = math.floor(self.distance / self.per_pulse)
        speed = (count - self.count) * self.per_pulse / dt
        self.count = count
        return speed


def plant_distance(v0: float, v1: float, dt: float) -> float:
    return 0.5 * (v0 + v1) * dt


@dataclass
class SpeedLoop:
    """Planner duty -> v_d, PID on encoder speed, mapped PWM drives the plant."""

    gains: PidGains = field(default_factory=PidGains)
    plant: PlantConfig = field(default_factory=PlantConfig)
    pid: PidState = field(default_factory=PidState)
    planner_pwm: PwmCommand = field(default_factory=PwmCommand)
    speed: float = 0.0
    measured: float = 0.0

    def __post_init__(self):
        self.encoder = Encoder(self.plant)

    def tick(self, state: LongitudinalState, dt: float = TICK) -> dict:
        self.planner_pwm = apply_state(state, self.planner_pwm)
        v_d = self.plant.v_max * self.planner_pwm.duty / 100.0
        v_a = self.measured
        if state == LongitudinalState.STOP or v_d == 0.0:
            # zero commanded duty leaves the motor unpowered; the integral must not keep driving it
            out = PwmCommand(0.0, 0)
            self.pid = PidState(integral=0.0, prev_error=v_d - v_a)
        else:
            x, self.pid = pid_step(self.gains, self.pid, v_d, v_a)
            out = map_to_pwm(x, self.plant.v_max)
        v0 = self.speed
        self.speed = actuator_plant(out, v0, dt, self.plant)
        self.measured = self.encoder.read(plant_distance(v0, self.speed, dt), dt)
        return {"state": state.value, "duty": self.planner_pwm.duty, "mapped": out.mapped,
                "v_d": v_d, "v_a": v_a, "e": v_d - v_a}


def closed_loop_step(v_target: float, duration: float = 5.0, gains: Optional[PidGains] = None,
                     plant: Optional[PlantConfig] = None):
    """Step response of the PID on the plant with encoder feedback; returns (times, speeds)."""
    gains = gains or PidGains()
    plant = plant or PlantConfig()
    enc = Encoder(plant)
    st, v, meas = PidState(), 0.0, 0.0
    ts, vs = [0.0], [0.0]
    for k in range(1, int(round(duration / gains.t_s)) + 1):
        x, st = pid_step(gains, st, v_target, meas)
        v0, v = v, actuator_plant(map_to_pwm(x, plant.v_max), v, gains.t_s, plant)
        meas = enc.read(plant_distance(v0, v, gains.t_s), gains.t_s)
        ts.append(k * gains.t_s)
        vs.append(v)
    return ts, vs
