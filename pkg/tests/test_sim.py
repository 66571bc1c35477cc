import filecmp
import math
from itertools import combinations

import pytest

from cooplane.cli import main
from cooplane.errors import InputError
from cooplane.perception import SafetyFeatures
from cooplane.scene import ROLE_DIMENSIONS, ScenarioConfig, VehicleState
from cooplane.sim import compare_runs, export, read_log_csv, run_scenario, write_log_csv, write_report
from cooplane.sim.drivers import TvDriver, pv_driver, ramp_crossing_time
from cooplane.sim.export import CROSSING_GID, PREDICTION_GID
from cooplane.sim.runner import RunMetrics

CFG = ScenarioConfig()


@pytest.fixture(scope="module")
def run_on():
    return run_scenario(CFG)


@pytest.fixture(scope="module")
def run_off():
    return run_scenario(CFG.with_(prediction_enabled=False))


def ev_after_prediction(log, metrics):
    return [r["speed"] for r in log.states if r["vehicle"] == "EV" and r["t"] >= metrics.prediction_time]


def overlap_in_lane(log) -> bool:
    """Independent collision oracle over the logged states."""
    by_t = {}
    for r in log.states:
        by_t.setdefault(r["t"], []).append(r)
    for rows in by_t.values():
        for a, b in combinations(rows, 2):
            if a["lane"] != b["lane"]:
                continue
            f, l = (a, b) if a["x"] <= b["x"] else (b, a)
            gap = (l["x"] - 0.5 * ROLE_DIMENSIONS[l["vehicle"]][0]) - (f["x"] + 0.5 * ROLE_DIMENSIONS[f["vehicle"]][0])
            if gap < 0:
                return True
    return False


# ---- drivers ----

def test_pv_driver_examples():
    pv = VehicleState.for_role("PV", 10.0, 1.75, 0, speed=2.5)
    assert pv_driver(5.0, pv, CFG) == 0.0
    assert pv_driver(12.5, pv, CFG) == CFG.pv_brake_decel == -3.0
    stopped = VehicleState.for_role("PV", 10.0, 1.75, 0, speed=0.0)
    assert pv_driver(14.0, stopped, CFG) == 0.0


def _tv_call(drv, t, ttc, gap, pv_gap=30.0, ev_speed=0.0):
    tv = VehicleState.for_role("TV", 0.0, 1.75, 0, speed=2.5)
    sf = SafetyFeatures(ttc=ttc, thw=math.inf, d=10.0, v_rel=1.0)
    return drv(t, tv, sf, adjacent_gap=gap, ev_speed=ev_speed, target_center=5.25, marking=3.5, pv_gap=pv_gap)


def test_tv_follows_at_low_risk():
    drv = TvDriver(CFG, brake_seen_at=5.0)
    d = _tv_call(drv, 6.0, math.inf, 50.0)
    assert not d.lane_change and not d.harsh_brake
    assert d.accel == 0.0


def test_tv_changes_lane_when_gap_accepted():
    drv = TvDriver(CFG, brake_seen_at=5.0)
    d = _tv_call(drv, 6.0, 1.0, CFG.tv_gap_threshold + 5.0)
    assert d.lane_change and abs(d.accel) < 0.5
    assert drv.crossing_at > 6.0


def test_tv_brakes_when_gap_rejected():
    drv = TvDriver(CFG, brake_seen_at=5.0)
    # EV keeps pace with the TV, so the projected gap stays below the acceptance threshold
    d = _tv_call(drv, 6.0, 1.0, 0.5, ev_speed=2.5)
    assert d.harsh_brake and d.accel == CFG.tv_emergency_decel


def test_ramp_crossing_is_midpoint_for_centred_marking():
    from cooplane.scene import LateralRamp
    assert ramp_crossing_time(LateralRamp(2.0, 3.0, 1.75, 5.25), 3.5) == pytest.approx(3.5)


# ---- scenario ----

def test_prediction_on_outcome(run_on):
    log, m = run_on
    assert m.tv_min_accel > -1.5
    assert 3.0 <= m.anticipation_horizon <= 5.0
    assert not m.collision
    speeds = ev_after_prediction(log, m)
    assert speeds[-1] == 0.0
    assert all(b <= a for a, b in zip(speeds, speeds[1:]))


def test_prediction_off_outcome(run_on, run_off):
    _, on = run_on
    _, off = run_off
    assert off.tv_min_accel <= 2 * on.tv_min_accel
    assert math.isnan(off.crossing_time)
    assert off.t0 == off.harsh_brake_time
    assert on.t0 == on.crossing_time


def test_tick_grid_and_row_count(run_on):
    log, _ = run_on
    ticks = sorted({r["t"] for r in log.states})
    assert len(log.states) == 3 * len(ticks)
    assert all(abs(t - k * CFG.timestep) < 1e-9 for k, t in enumerate(ticks))


def test_collision_flag_matches_oracle(run_on, run_off):
    for log, m in (run_on, run_off):
        assert m.collision == overlap_in_lane(log)
    log, m = run_scenario(CFG.with_(prediction_enabled=False, tv_emergency_decel=-0.3))
    assert m.collision and overlap_in_lane(log)


def test_same_seed_same_bytes(tmp_path):
    a, _ = run_scenario(CFG.with_(rng_seed=11))
    b, _ = run_scenario(CFG.with_(rng_seed=11))
    write_log_csv(a, tmp_path / "a")
    write_log_csv(b, tmp_path / "b")
    names = [p.name for p in (tmp_path / "a").iterdir()]
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", names, shallow=False)
    assert not mismatch and not errors
    c, _ = run_scenario(CFG.with_(rng_seed=12))
    assert c.states != a.states


def test_metrics_stored_with_log(run_on):
    log, m = run_on
    assert RunMetrics.from_log(log) == m


# ---- export and compare ----

def test_csv_round_trip_bit_exact(run_on, tmp_path):
    log, _ = run_on
    write_log_csv(log, tmp_path)
    back = read_log_csv(tmp_path)
    for name in log.TABLES:
        assert [{k: repr(v) for k, v in r.items()} for r in getattr(back, name)] == \
               [{k: repr(v) for k, v in r.items()} for r in getattr(log, name)]
    assert back.config == log.config
    assert RunMetrics.from_log(back).as_dict().keys() == RunMetrics.from_log(log).as_dict().keys()


def test_export_rejects_empty_log(run_on, tmp_path):
    from cooplane.sim import RunLog
    with pytest.raises(ValueError):
        export(RunLog(config={}), tmp_path)
    with pytest.raises(ValueError):
        export(run_on[0], tmp_path, formats=("pdfx",))


def test_svg_has_markers(run_on, tmp_path):
    paths = export(run_on[0], tmp_path, formats=("svg",))
    svg = paths[0].read_text()
    assert f'id="{CROSSING_GID}"' in svg
    assert f'id="{PREDICTION_GID}"' in svg


def test_compare_identical_is_zero(run_on):
    log, _ = run_on
    rep = compare_runs(log, log)
    assert all(d == 0 for d in rep.deltas.values())


def test_compare_on_off(run_on, run_off, tmp_path):
    rep = compare_runs(run_on[0], run_off[0])
    for role in ("EV", "TV", "PV"):
        assert len(rep.series_for(role, "accel")) == 2
        assert len(rep.series_for(role, "speed")) == 2
    assert abs(rep.metrics_on["tv_min_accel"]) < 0.5 * abs(rep.metrics_off["tv_min_accel"])
    assert rep.prediction_marker < 0
    paths = write_report(rep, tmp_path, formats=("svg",))
    assert (tmp_path / "metrics_delta.csv").exists() and paths[-1].suffix == ".svg"


def test_compare_rejects_different_configs(run_on):
    other, _ = run_scenario(CFG.with_(rng_seed=99))
    with pytest.raises(InputError):
        compare_runs(run_on[0], other)


def test_networked_matches_in_process(run_on):
    _, local = run_on
    _, net = run_scenario(CFG.with_(networked=True))
    assert net.collision == local.collision
    for k in ("prediction_time", "crossing_time", "ev_stop_time", "anticipation_horizon"):
        assert getattr(net, k) == pytest.approx(getattr(local, k), abs=CFG.timestep)
    assert net.tv_min_accel == pytest.approx(local.tv_min_accel, abs=0.1)


# ---- CLI ----

def test_cli_simulate_and_export(tmp_path, capsys):
    out = tmp_path / "run"
    assert main(["simulate", "--seed", "3", "--out", str(out), "--format", "csv,svg"]) == 0
    assert (out / "states.csv").exists() and (out / "profiles.svg").exists()
    assert main(["export", str(out), "--out", str(tmp_path / "again"), "--format", "png"]) == 0
    assert (tmp_path / "again" / "profiles.png").exists()
    assert "anticipation_horizon" in capsys.readouterr().out


def test_cli_compare(tmp_path):
    assert main(["compare", "--out", str(tmp_path), "--format", "csv,svg"]) == 0
    for p in ("on/states.csv", "off/states.csv", "metrics_delta.csv", "comparison.svg"):
        assert (tmp_path / p).exists()


def test_run_checks_flags_violations(run_on):
    from dataclasses import replace

    from cooplane.cli import run_checks
    log, m = run_on
    assert run_checks(log, m, CFG) == []
    assert run_checks(log, replace(m, collision=True), CFG) == ["collision with prediction enabled"]
    assert run_checks(log, replace(m, collision=True), CFG.with_(prediction_enabled=False)) == []
    short = type(log)(config=log.config, states=log.states[:-1])
    assert "state row count differs from ticks x vehicles" in run_checks(short, m, CFG)


def test_cli_simulate_collision_off_still_exits_zero(tmp_path):
    cfg = tmp_path / "soft_brakes.json"
    CFG.with_(tv_emergency_decel=-0.3).dump(cfg)
    assert main(["simulate", "--config", str(cfg), "--prediction", "off"]) == 0


def test_cli_build_table(tmp_path):
    assert main(["build-table", "--lanes", "2", "--csv", str(tmp_path / "t.csv"),
                 "--snapshot", str(tmp_path / "t.lut")]) == 0
    assert (tmp_path / "t.csv").read_text().count("\n") == 17496 + 1


def test_cli_train_kge_and_rtt(tmp_path):
    assert main(["train-kge", "--epochs", "5", "--out", str(tmp_path / "kge")]) == 0
    assert (tmp_path / "kge" / "model.json").exists()
    assert main(["rtt", "--n", "5", "--inject-delay-ms", "0", "1", "--out", str(tmp_path / "rtt")]) == 0
    assert (tmp_path / "rtt" / "rtt.csv").read_text().count("\n") == 11


def test_cli_node_requires_peer(capsys):
    assert main(["node", "--role", "relay", "--listen", "127.0.0.1:0"]) == 2
