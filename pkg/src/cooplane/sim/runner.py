"""Fixed-step scenario runner: ground truth, TV perception, relay prediction and EV control.

Time is virtual. Perception frames complete on the pipeline cadence; each
frame's prediction reaches the EV after the configured one-way delay and is
picked up at the next 10 Hz control tick (latest wins).
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from ..control import EvContext, Planner, PlannerConfig, SpeedLoop
from ..corpus import load_fixture
from ..errors import NoDetection
from ..inference import default_rules
from ..lookup import build_table
from ..perception import (DETECTOR_PROFILES, CameraModel, SafetyFeatures, SpeedSensor, TrackState,
                          disparity_to_depth, estimate_object_speed_p1, pipeline_cadence,
                          pixel_to_camera, safety_features, synthesize_observation, tilt_compensate,
                          track_update_p2, vehicle_to_camera)
from ..scene import ROLES, ScenarioConfig, VehicleState, ground_truth_gap, step_kinematics
from ..semantics import NumericFeatures, categorize, frame_key
from .drivers import TvDriver, pv_driver

SENSING_RANGE = 20.0
TARGET_HEIGHT = 0.9  # m above ground, point tracked on the PV's rear
STALENESS_S = 0.5


@lru_cache(maxsize=4)
def default_predictor(lane_count: int = 2):
    """Compiled table, thresholds and ontology from the shipped likelihood fixture."""
    model, th = load_fixture(lane_count)
    onto = model.ontology
    return build_table(onto, default_rules(onto), model), th, onto


@dataclass
class RunLog:
    config: dict
    states: list = field(default_factory=list)
    perception: list = field(default_factory=list)
    comm: list = field(default_factory=list)
    predictions: list = field(default_factory=list)
    control: list = field(default_factory=list)
    events: dict = field(default_factory=dict)

    TABLES = ("states", "perception", "comm", "predictions", "control")

    def __len__(self):
        return len(self.states)


@dataclass
class RunMetrics:
    anticipation_horizon: float
    tv_min_accel: float
    ev_stop_time: float
    min_ttc: float
    collision: bool
    prediction_time: float
    crossing_time: float
    harsh_brake_time: float
    t0: float

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_log(cls, log: "RunLog") -> "RunMetrics":
        return cls(**log.events["metrics"])


def _nan(v):
    return math.nan if v is None else float(v)


class _Perception:
    """TV-side stereo perception of the PV, at the pipeline cadence."""

    def __init__(self, config: ScenarioConfig, rng: np.random.Generator):
        self.cam = CameraModel()
        self.profile = DETECTOR_PROFILES[config.detector]
        self.variant = config.pipeline_variant
        n = int(config.duration * 12) + 10
        sched = pipeline_cadence(self.profile, self.variant, n, rng)
        self.done_at = sched.frame_times(0.0)
        self.latency = sched.latencies_ms / 1000.0
        self.rng = rng
        self.track = TrackState(track_id=1)
        self.sensor = SpeedSensor("throttle", rng)
        self.next = 0
        self.latest: Optional[SafetyFeatures] = None

    def due(self, t: float):
        """Frames finishing in (t - dt, t]; yields (index, capture time)."""
        while self.next < len(self.done_at) and self.done_at[self.next] <= t + 1e-9:
            k = self.next
            self.next += 1
            yield k, max(0.0, float(self.done_at[k] - max(self.latency[k], 0.1)))

    def observe(self, tv: VehicleState, pv: VehicleState, t_capture: float) -> Optional[SafetyFeatures]:
        gap = ground_truth_gap(tv, pv)
        # camera on the TV's front bumper; vehicle frame X right, Y down, Z forward
        p_vehicle = (-(pv.y - tv.y), -TARGET_HEIGHT, gap)
        try:
            if gap <= 0:
                raise NoDetection("overlap")
            det = synthesize_observation(vehicle_to_camera(p_vehicle, self.cam), self.cam, self.rng,
                                         sensing_max=SENSING_RANGE, profile=self.profile)
        except NoDetection:
            return self.latest
        z = disparity_to_depth(det.disparity, self.cam)
        p = tilt_compensate(pixel_to_camera(det.u, det.v, z, self.cam), self.cam.tilt, self.cam)
        depth = max(0.0, p[2])
        v_tv = self.sensor.sample(tv.speed, t_capture)
        if self.variant == "P2":
            track_update_p2(self.track, depth, t_capture)
            d_est = self.track.smoothed_depth
            v_rel = -self.track.ema_velocity
        else:
            self.track.push_point(p, t_capture)
            d_est = depth
            try:
                v_rel = estimate_object_speed_p1(self.track)
            except Exception:
                v_rel = 0.0
        self.latest = safety_features(max(0.0, d_est), v_tv, v_tv - v_rel)
        return self.latest


def _neighbour(tv: VehicleState, ev: VehicleState):
    """(preceding?, bumper gap >= 0, TTC) of the EV relative to the TV in the adjacent lane."""
    if ev.x >= tv.x:
        gap = max(0.0, ground_truth_gap(tv, ev))
        closing = tv.speed - ev.speed
        ahead = True
    else:
        gap = max(0.0, ground_truth_gap(ev, tv))
        closing = ev.speed - tv.speed
        ahead = False
    ttc = gap / closing if closing > 0 else (0.0 if gap == 0 else math.inf)
    return ahead, gap, ttc


def numeric_features(tv: VehicleState, ev: VehicleState, sf: Optional[SafetyFeatures],
                     lat_vel: float, lat_acc: float, lanes) -> NumericFeatures:
    lane = lanes.lane_of(tv.y)
    offset = tv.y - lanes.lane_center(lane)
    ahead, ev_gap, ev_ttc = _neighbour(tv, ev)
    ev_lane = lanes.lane_of(ev.y)
    side = "left" if ev_lane == lane + 1 else "right" if ev_lane == lane - 1 else None
    ttc = {"ttc_left_preceding": math.inf, "ttc_right_preceding": math.inf,
           "ttc_left_following": math.inf, "ttc_right_following": math.inf}
    gaps = {"left": SENSING_RANGE if lane < lanes.lane_count - 1 else None, "current": SENSING_RANGE,
            "right": SENSING_RANGE if lane > 0 else None}
    speeds = {"left": None, "current": None, "right": None}
    if side is not None:
        ttc[f"ttc_{side}_{'preceding' if ahead else 'following'}"] = ev_ttc
        if ahead:
            gaps[side] = min(ev_gap, SENSING_RANGE)
            speeds[side] = ev.speed
    if sf is not None:
        gaps["current"] = min(sf.d, SENSING_RANGE)
        speeds["current"] = max(0.0, tv.speed - sf.v_rel)
    return NumericFeatures(
        lat_vel=lat_vel, lat_acc=lat_acc,
        ttc_preceding=sf.ttc if sf is not None else math.inf,
        lane_index=lane, lane_count=lanes.lane_count, lane_offset=offset, lane_width=lanes.lane_width,
        thw=sf.thw if sf is not None else math.inf,
        frontal_gaps=gaps, lane_speeds=speeds, **ttc)


class _NetworkPredictor:
    """Prediction through real relay and server nodes; timing stays virtual."""

    def __init__(self, client):
        self.client = client

    def __call__(self, nf):
        rec = self.client.request(nf, timeout=2.0)
        if rec is None:
            return None, math.nan
        return (rec.maneuver, rec.probs), rec.one_way_ms


def run_scenario(config: Optional[ScenarioConfig] = None, network_client=None):
    """Simulate one run; returns (RunLog, RunMetrics).

    With ``config.networked`` and no ``network_client``, relay and server
    processes are launched for the duration of the run and every prediction
    travels over the wire protocol. Delivery timing stays on the virtual clock.
    """
    cfg = config or ScenarioConfig()
    if cfg.networked and network_client is None and cfg.prediction_enabled:
        from .network import launched_nodes

        with launched_nodes(cfg.topology, cfg.lanes.lane_count, seed=cfg.rng_seed) as client:
            return run_scenario(cfg, network_client=client)
    lanes = cfg.lanes
    dt = cfg.timestep
    table, thresholds, onto = default_predictor(lanes.lane_count)
    root = np.random.default_rng(cfg.rng_seed)
    rng_percep, rng_driver, rng_jitter = root.spawn(3)
    percep = _Perception(cfg, rng_percep)
    pv_brake = cfg.pv_brake_time + float(rng_jitter.uniform(-0.25, 0.25))
    reaction = max(0.1, cfg.tv_reaction_time + float(rng_jitter.uniform(-0.1, 0.1)))
    tv_driver = TvDriver(cfg, brake_seen_at=pv_brake + reaction)
    planner = Planner(PlannerConfig(latch_yield=not cfg.ev_resume_after_merge))
    ev_loop = SpeedLoop()
    net = _NetworkPredictor(network_client) if network_client is not None else None

    veh = {}
    for role in ROLES:
        init = cfg.initial[role]
        veh[role] = VehicleState.for_role(role, init.x, lanes.lane_center(init.lane_id), init.lane_id,
                                          speed=init.speed)
    ev_loop.speed = veh["EV"].speed
    log = RunLog(config=cfg.to_dict())
    history = []
    pending = []  # (delivery time, maneuver, probs, origin time)
    latest = None  # (received time, maneuver, probs)
    prediction_time = None
    collision = False
    min_ttc = math.inf
    tv_lat_vel, tv_lat_acc = 0.0, 0.0
    seq = 0
    n_steps = int(round(cfg.duration / dt))

    for k in range(n_steps + 1):
        t = k * dt
        history.append(dict(veh))
        for role in ROLES:
            v = veh[role]
            log.states.append({"t": t, "vehicle": role, "x": v.x, "y": v.y, "lane": lanes.lane_of(v.y),
                               "speed": v.speed, "accel": v.accel})
        tv, pv, ev = veh["TV"], veh["PV"], veh["EV"]

        # ground-truth collision and risk bookkeeping
        for a in ROLES:
            for b in ROLES:
                if a < b and lanes.lane_of(veh[a].y) == lanes.lane_of(veh[b].y):
                    f, l = (veh[a], veh[b]) if veh[a].x <= veh[b].x else (veh[b], veh[a])
                    if ground_truth_gap(f, l) < 0:
                        collision = True
        if lanes.lane_of(tv.y) == lanes.lane_of(pv.y) and pv.x > tv.x:
            min_ttc = min(min_ttc, safety_features(max(0.0, ground_truth_gap(tv, pv)), tv.speed, pv.speed).ttc)

        # perception frames completing now
        for idx, t_cap in percep.due(t):
            snap = history[min(len(history) - 1, int(math.floor(t_cap / dt + 1e-9)))]
            sf = percep.observe(snap["TV"], snap["PV"], t_cap)
            nf = numeric_features(snap["TV"], snap["EV"], sf, tv_lat_vel, tv_lat_acc, lanes)
            frame = categorize(nf, thresholds, onto)
            log.perception.append({"t": t, "t_capture": t_cap, "frame_index": idx,
                                   "gap": _nan(sf.d if sf else None), "ttc": _nan(sf.ttc if sf else None),
                                   "thw": _nan(sf.thw if sf else None), "v_rel": _nan(sf.v_rel if sf else None),
                                   "frame": frame_key(frame)})
            if not cfg.prediction_enabled:
                continue
            measured = math.nan
            if net is not None:
                got, measured = net(nf)
                if got is None:
                    continue
                maneuver, probs = got
            else:
                pred = table.get(frame_key(frame))
                maneuver, probs = pred.maneuver, pred.probs
            delay = cfg.one_way_delay_ms / 1000.0
            pending.append((t + delay, maneuver, probs, t))
            log.comm.append({"seq": seq, "t_send": t, "t_deliver": t + delay,
                             "latency_ms": cfg.one_way_delay_ms, "measured_ms": measured})
            log.predictions.append({"t": t + delay, "seq": seq, "argmax": maneuver,
                                    **{f"p_{m}": p for m, p in zip(onto.maneuvers, probs)}})
            seq += 1

        # EV control tick
        while pending and pending[0][0] <= t + 1e-9:
            t_del, maneuver, probs, _ = pending.pop(0)
            latest = (t_del, maneuver, probs)
            if maneuver == "leftLaneChange" and prediction_time is None:
                prediction_time = t_del
        fresh = latest if latest is not None and t - latest[0] <= STALENESS_S else None
        ctx = EvContext(frontal_ttc=_frontal_ttc(ev, veh, lanes), tv_rel_x=tv.x - ev.x,
                        tv_adjacent=abs(lanes.lane_of(tv.y) - lanes.lane_of(ev.y)) == 1)
        state = planner(fresh[1] if fresh else None, ctx)
        row = ev_loop.tick(state, dt)
        log.control.append({"t": t, **row})

        if k == n_steps:
            break
        # drivers
        ev_gap = _adjacent_gap(tv, ev)
        tv_pv_gap = ground_truth_gap(tv, pv) if lanes.lane_of(tv.y) == lanes.lane_of(pv.y) else math.inf
        target_lane = min(lanes.lane_of(tv.y) + 1, lanes.lane_count - 1)
        decision = tv_driver(t, tv, percep.latest, ev_gap, ev.speed, lanes.lane_center(target_lane),
                             lanes.marking_between(target_lane - 1, target_lane), tv_pv_gap,
                             noise=float(rng_driver.normal(0.0, cfg.driver_speed_noise)))
        if decision.harsh_brake and "harsh_brake_time" not in log.events:
            log.events["harsh_brake_time"] = t
        y_next = tv_driver.lateral_target(tv, lanes.lane_center(tv.lane_id), t, dt)
        new_lat_vel = (y_next - tv.y) / dt
        tv_lat_acc = (new_lat_vel - tv_lat_vel) / dt
        tv_lat_vel = new_lat_vel
        pv_acc = pv_driver(t, pv, cfg, brake_time=pv_brake,
                           noise=float(rng_driver.normal(0.0, cfg.driver_speed_noise)))
        ev_x = ev.x + 0.5 * (ev.speed + ev_loop.speed) * dt
        veh = {
            "TV": step_kinematics(tv, decision.accel, dt, y=y_next),
            "PV": step_kinematics(pv, pv_acc, dt),
            "EV": VehicleState.for_role("EV", ev_x, ev.y, ev.lane_id, speed=ev_loop.speed,
                                        accel=(ev_loop.speed - ev.speed) / dt),
        }

    crossing = tv_driver.crossing_at if tv_driver.phase == "lane_change" and \
        tv_driver.crossing_at <= cfg.duration else None
    harsh = log.events.get("harsh_brake_time")
    log.events.update({"crossing_time": crossing, "prediction_time": prediction_time,
                       "pv_brake_time": pv_brake, "tv_decision_time": tv_driver.decision_time})
    t0 = crossing if crossing is not None else harsh
    ev_speeds = [(r["t"], r["speed"]) for r in log.states if r["vehicle"] == "EV"]
    stop_from = prediction_time if prediction_time is not None else 0.0
    ev_stop = next((tt for tt, v in ev_speeds if tt >= stop_from and v == 0.0 and tt > 0), None)
    tv_acc = [r["accel"] for r in log.states if r["vehicle"] == "TV"]
    metrics = RunMetrics(
        anticipation_horizon=_nan(crossing - prediction_time if crossing is not None and prediction_time is not None
                                  else None),
        tv_min_accel=min(tv_acc),
        ev_stop_time=_nan(ev_stop),
        min_ttc=min_ttc,
        collision=collision,
        prediction_time=_nan(prediction_time),
        crossing_time=_nan(crossing),
        harsh_brake_time=_nan(harsh),
        t0=_nan(t0),
    )
    log.events["t0"] = t0
    log.events["metrics"] = metrics.as_dict()
    return log, metrics


def _adjacent_gap(tv: VehicleState, ev: VehicleState) -> float:
    """Space the TV would have in front of the EV after merging (negative when alongside)."""
    return ground_truth_gap(ev, tv)


def _frontal_ttc(ev: VehicleState, veh: dict, lanes) -> float:
    lane = lanes.lane_of(ev.y)
    best = math.inf
    for role, v in veh.items():
        if role == "EV" or lanes.lane_of(v.y) != lane or v.x <= ev.x:
            continue
        gap = max(0.0, ground_truth_gap(ev, v))
        best = min(best, safety_features(gap, ev.speed, v.speed).ttc)
    return best
