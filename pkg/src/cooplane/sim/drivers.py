"""Scripted human-driver models for the preceding and target vehicles."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

from ..perception import SafetyFeatures
from ..scene import LateralRamp, ScenarioConfig, VehicleState

FOLLOW_GAIN = 1.0  # 1/s, speed-tracking gain of the cruise controller
RISK_HIGH_TTC = 2.0


def cruise_accel(v: float, v_target: float, launch_accel: float, noise: float = 0.0) -> float:
    return max(-launch_accel, min(launch_accel, FOLLOW_GAIN * (v_target - v))) + noise


def pv_driver(t: float, state: VehicleState, config: ScenarioConfig, brake_time: Optional[float] = None,
              noise: float = 0.0) -> float:
    """Cruise until the brake time, then constant deceleration to a stop."""
    brake_time = config.pv_brake_time if brake_time is None else brake_time
    if t >= brake_time:
        return config.pv_brake_decel if state.speed > 0 else 0.0
    return cruise_accel(state.speed, config.tv_pv_cruise_speed, config.launch_accel, noise)


@dataclass
class TvDecision:
    accel: float
    phase: str
    lane_change: bool = False
    harsh_brake: bool = False


@dataclass
class TvDriver:
    """Car-following TV that reacts to PV braking.

    Phases: ``follow`` (cruise), ``drift`` (after the reaction time the driver
    edges toward the left marking while keeping speed), then at a highRisk
    frontal TTC either ``lane_change`` (projected gap to the EV accepted) or
    ``brake`` (harsh emergency deceleration to a stop).
    """

    config: ScenarioConfig
    brake_seen_at: float
    phase: str = "follow"
    ramp: Optional[LateralRamp] = None
    decision_time: Optional[float] = None
    crossing_at: float = math.inf

    def lateral_target(self, state: VehicleState, lane_center: float, t: float, dt: float) -> float:
        """Next lateral position; drift is rate-limited, the lane change follows the ramp."""
        if self.ramp is not None:
            return self.ramp.y_at(t + dt)
        if self.phase == "drift":
            goal = lane_center + self.config.tv_drift_offset
            step = min(self.config.tv_drift_speed * dt, max(0.0, goal - state.y))
            return state.y + step
        return state.y

    def __call__(self, t: float, state: VehicleState, perception: Optional[SafetyFeatures],
                 adjacent_gap: float, ev_speed: float, target_center: float, marking: float,
                 pv_gap: float, noise: float = 0.0) -> TvDecision:
        cfg = self.config
        if self.phase == "follow" and t >= self.brake_seen_at:
            self.phase = "drift"
        if self.phase in ("follow", "drift"):
            ttc = perception.ttc if perception is not None else math.inf
            if self.phase == "drift" and ttc < RISK_HIGH_TTC:
                projected = adjacent_gap + (state.speed - ev_speed) * cfg.tv_merge_horizon
                self.decision_time = t
                if projected >= cfg.tv_gap_threshold:
                    self.phase = "lane_change"
                    self.ramp = LateralRamp(t, cfg.lane_change_duration, state.y, target_center)
                    self.crossing_at = ramp_crossing_time(self.ramp, marking)
                else:
                    self.phase = "brake"
        if self.phase == "brake":
            return TvDecision(cfg.tv_emergency_decel if state.speed > 0 else 0.0, self.phase, harsh_brake=True)
        if self.phase == "lane_change":
            return TvDecision(self._merge_accel(t, state, pv_gap), self.phase, lane_change=True)
        return TvDecision(cruise_accel(state.speed, cfg.tv_pv_cruise_speed, cfg.launch_accel, noise), self.phase)

    def _merge_accel(self, t: float, state: VehicleState, pv_gap: float) -> float:
        """Hold speed unless the PV would be reached before the crossing; then brake gently."""
        left = self.crossing_at - t
        margin = 0.5
        if left <= 0 or state.speed * left <= pv_gap - margin:
            return 0.0
        need = -state.speed ** 2 / (2.0 * max(pv_gap - margin, 1e-3))
        return max(self.config.tv_comfort_decel, need)


def ramp_crossing_time(ramp: LateralRamp, marking: float) -> float:
    """Time at which the cosine ramp passes ``marking``."""
    s = (marking - ramp.y_start) / (ramp.y_end - ramp.y_start)
    s = min(max(s, 0.0), 1.0)
    return ramp.t_start + ramp.duration * math.acos(1.0 - 2.0 * s) / math.pi
