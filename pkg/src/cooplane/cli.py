"""Command-line entry point: one subcommand per experiment."""

from __future__ import annotations

import argparse
import json
import logging
import signal
import sys
import threading
import time
from pathlib import Path

import numpy as np


def _addr(text: str):
    host, _, port = text.rpartition(":")
    return (host or "127.0.0.1", int(port))


def _formats(text: str):
    return tuple(f for f in text.split(",") if f)


def _scenario(args):
    from .scene import ScenarioConfig

    cfg = ScenarioConfig.load(args.config) if args.config else ScenarioConfig()
    changes = {}
    if args.seed is not None:
        changes["rng_seed"] = args.seed
    if getattr(args, "networked", False):
        changes["networked"] = True
    if getattr(args, "topology", None):
        changes["topology"] = args.topology
    return cfg.with_(**changes) if changes else cfg


def run_checks(log, metrics, config) -> list:
    """Invariant violations for one run; empty when the run is sound."""
    problems = []
    ticks = sorted({r["t"] for r in log.states})
    dt = config.timestep
    if any(abs(t - k * dt) > 1e-9 for k, t in enumerate(ticks)):
        problems.append("tick times are off the fixed grid")
    if len(log.states) != len(ticks) * 3:
        problems.append("state row count differs from ticks x vehicles")
    if config.prediction_enabled and metrics.collision:
        problems.append("collision with prediction enabled")
    return problems


def _print_metrics(label, metrics):
    d = metrics.as_dict()
    print(label + " " + " ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}" for k, v in d.items()))


def cmd_simulate(args) -> int:
    from .sim import export, run_scenario

    cfg = _scenario(args)
    if args.prediction is not None:
        cfg = cfg.with_(prediction_enabled=args.prediction == "on")
    log, metrics = run_scenario(cfg)
    _print_metrics("run", metrics)
    if args.out:
        for p in export(log, args.out, _formats(args.format)):
            print(f"wrote {p}")
    problems = run_checks(log, metrics, cfg)
    for p in problems:
        print(f"check failed: {p}", file=sys.stderr)
    return 0 if not problems else 1


def cmd_compare(args) -> int:
    from .sim import compare_runs, export, run_scenario, write_report

    base = _scenario(args)
    runs = {}
    problems = []
    for label, on in (("on", True), ("off", False)):
        cfg = base.with_(prediction_enabled=on)
        log, metrics = run_scenario(cfg)
        runs[label] = log
        _print_metrics(label, metrics)
        problems += [f"{label}: {p}" for p in run_checks(log, metrics, cfg)]
        if args.out:
            export(log, Path(args.out) / label, _formats(args.format))
    rep = compare_runs(runs["on"], runs["off"])
    for row in rep.delta_rows():
        print(f"{row['metric']:>22} on={row['on']!s:>22} off={row['off']!s:>22} delta={row['delta']}")
    if args.out:
        figs = tuple(f for f in _formats(args.format) if f != "csv")
        for p in write_report(rep, args.out, figs):
            print(f"wrote {p}")
    for p in problems:
        print(f"check failed: {p}", file=sys.stderr)
    return 0 if not problems else 1


def cmd_build_table(args) -> int:
    from .corpus import load_fixture
    from .inference import default_rules
    from .lookup import build_table, write_snapshot, write_table_csv

    model, _ = load_fixture(args.lanes)
    onto = model.ontology
    t0 = time.perf_counter()
    table = build_table(onto, default_rules(onto), model)
    print(f"{len(table)} feasible frames compiled in {time.perf_counter() - t0:.2f} s")
    if args.csv:
        write_table_csv(table, args.csv)
        print(f"wrote {args.csv}")
    if args.snapshot:
        write_snapshot(table, args.snapshot)
        print(f"wrote {args.snapshot}")
    return 0


def _plot_bench(stats, path):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for backend in ("scan", "hash"):
        rows = [s for s in stats if s.backend == backend]
        ax.plot([s.table_size for s in rows], [s.mean for s in rows], "o-", label=backend)
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel("table entries")
    ax.set_ylabel("mean latency [s/query]")
    ax.legend()
    ax.grid(alpha=0.3, which="both")
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)


def cmd_bench_lookup(args) -> int:
    from .corpus import load_fixture
    from .inference import default_rules
    from .lookup import bench_query, bench_summary, build_table, scan_table_from, write_bench_csv

    tables = []
    for lanes in args.lanes:
        model, _ = load_fixture(lanes)
        tables.append(build_table(model.ontology, default_rules(model.ontology), model))
    tables.sort(key=len)
    hashed = bench_query(tables, "hash", args.queries, args.seed)
    scan = bench_query([scan_table_from(t) for t in tables], "scan", args.queries, args.seed)
    print(bench_summary(scan, hashed))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        write_bench_csv(scan + hashed, out / "bench_lookup.csv")
        for fmt in _formats(args.format):
            _plot_bench(scan + hashed, out / f"bench_lookup.{fmt}")
        print(f"wrote results to {out}")
    return 0


def _stream_features(client, lanes, count, seed, stop):
    from .corpus import sample_numeric
    from .perception import DETECTOR_PROFILES, pipeline_cadence

    rng = np.random.default_rng(seed)
    sched = pipeline_cadence(DETECTOR_PROFILES["YOLOv8-n"], "P2", max(count, 1), rng)
    for k in range(count):
        if stop.is_set():
            return
        nf, _ = sample_numeric(rng, lanes)
        seq = client.send_features(nf)
        rec = client.wait_for(seq, 1.0) if seq is not None else None
        if rec is not None:
            print(f"seq={seq} maneuver={rec.maneuver} one_way_ms={rec.one_way_ms:.3f}", flush=True)
        else:
            print(f"seq={seq} no prediction", flush=True)
        stop.wait(sched.periods_ms[k] / 1000.0)


def cmd_node(args) -> int:
    from .comm import PerceptionClient, PredictionServer, Relay, table_predictor
    from .sim.network import READY_PREFIX
    from .sim.runner import default_predictor

    table, th, onto = default_predictor(args.lanes)
    stop = threading.Event()
    signal.signal(signal.SIGTERM, lambda *_: stop.set())
    signal.signal(signal.SIGINT, lambda *_: stop.set())
    kw = dict(inject_delay_ms=args.inject_delay_ms, drop_prob=args.drop_prob, seed=args.seed)
    if args.role == "prediction_server":
        node = PredictionServer(table_predictor(table), onto.fingerprint(), listen=_addr(args.listen), **kw)
    elif args.role == "relay":
        if not args.peer:
            print("relay needs --peer (prediction server address)", file=sys.stderr)
            return 2
        node = Relay(_addr(args.peer), onto, th, listen=_addr(args.listen), **kw)
    else:
        if not args.peer:
            print("perception_client needs --peer", file=sys.stderr)
            return 2
        client = PerceptionClient(_addr(args.peer), mode=args.topology, ontology=onto, thresholds=th, **kw)
        client.connect()
        try:
            _stream_features(client, args.lanes, args.count, args.seed or 0, stop)
        finally:
            client.close()
        return 0
    node.start()
    host, port = node.address
    print(f"{READY_PREFIX} {host} {port}", flush=True)
    try:
        while not stop.wait(0.2):
            pass
    finally:
        node.stop()
    return 0


def cmd_rtt(args) -> int:
    """Symmetric delay: the probe sender and the local echo server each delay their sends."""
    from .comm import PredictionServer, measure_rtt

    rows = []
    for delay in args.inject_delay_ms:
        server = None
        if args.peer:
            peer = _addr(args.peer)
        else:
            server = PredictionServer(lambda frame: None, inject_delay_ms=delay).start()
            peer = server.address
        try:
            stats = measure_rtt(peer, n=args.n, inject_delay_ms=delay, seed=args.seed)
        finally:
            if server is not None:
                server.stop()
        rows.append((delay, stats))
        print(f"injected={delay:g} ms  rtt_median={float(np.median(stats.rtt_ms)):.3f} ms  "
              f"one_way={stats.one_way_ms:.3f} ms  drops={stats.drops}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "rtt.csv", "w") as fh:
            fh.write("injected_ms,probe,rtt_ms\n")
            for delay, stats in rows:
                for i, r in enumerate(stats.rtt_ms):
                    fh.write(f"{delay!r},{i},{r!r}\n")
        print(f"wrote {out / 'rtt.csv'}")
    return 0


def cmd_train_kge(args) -> int:
    from .kge import TrainConfig, beats_mean_corruption, config_dict, mrr, toy_store, train

    store = toy_store(args.seed)
    cfg = TrainConfig(max_epochs=args.epochs)
    t0 = time.perf_counter()
    res = train(store, cfg, rng_seed=args.seed, return_result=True)
    n = len(store.entities)
    baseline = sum(1.0 / k for k in range(1, n + 1)) / n
    valid_mrr = mrr(res.model, store.valid)
    print(f"trained in {time.perf_counter() - t0:.1f} s, best epoch {res.best_epoch}")
    print(f"valid MRR {valid_mrr:.3f} (random {baseline:.3f}); "
          f"beats mean corruption {beats_mean_corruption(res.model, store.valid):.3f}")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        res.model.save(out / "model.json")
        (out / "train_config.json").write_text(json.dumps(config_dict(cfg), indent=2))
        with open(out / "history.csv", "w") as fh:
            fh.write("epoch,loss,valid_mrr\n")
            for epoch, loss, m in res.history:
                fh.write(f"{epoch},{loss!r},{'' if m is None else repr(m)}\n")
        print(f"wrote results to {out}")
    return 0


def cmd_export(args) -> int:
    from .sim import export, read_log_csv

    log = read_log_csv(args.run)
    for p in export(log, args.out or args.run, _formats(args.format)):
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cooplane", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def scenario_args(sp):
        sp.add_argument("--config", help="scenario JSON file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--networked", action="store_true", help="route predictions through node processes")
        sp.add_argument("--topology", choices=("relay", "direct"))
        sp.add_argument("--out", help="output directory for CSV and figures")
        sp.add_argument("--format", default="csv,svg,png", help="comma list of csv, svg, png")

    sp = sub.add_parser("simulate", help="run one scenario")
    scenario_args(sp)
    sp.add_argument("--prediction", choices=("on", "off"))
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("compare", help="run prediction ON and OFF and compare")
    scenario_args(sp)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("build-table", help="compile the lookup table")
    sp.add_argument("--lanes", type=int, default=2)
    sp.add_argument("--csv")
    sp.add_argument("--snapshot")
    sp.set_defaults(func=cmd_build_table)

    sp = sub.add_parser("bench-lookup", help="scan vs hash query latency")
    sp.add_argument("--lanes", type=int, nargs="+", default=[2, 3])
    sp.add_argument("--queries", type=int, default=1000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.add_argument("--format", default="svg,png")
    sp.set_defaults(func=cmd_bench_lookup)

    sp = sub.add_parser("node", help="run one communication node")
    sp.add_argument("--role", required=True, choices=("perception_client", "relay", "prediction_server"))
    sp.add_argument("--listen", default="127.0.0.1:0")
    sp.add_argument("--peer")
    sp.add_argument("--topology", choices=("relay", "direct"), default="relay")
    sp.add_argument("--inject-delay-ms", type=float, default=0.0)
    sp.add_argument("--drop-prob", type=float, default=0.0)
    sp.add_argument("--lanes", type=int, default=2)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--count", type=int, default=100, help="frames streamed by a perception client")
    sp.set_defaults(func=cmd_node)

    sp = sub.add_parser("rtt", help="echo round-trip measurement")
    sp.add_argument("--peer", help="node address; a local echo server is started when omitted")
    sp.add_argument("--n", type=int, default=50)
    sp.add_argument("--inject-delay-ms", type=float, nargs="+", default=[0.0])
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_rtt)

    sp = sub.add_parser("train-kge", help="train TransE on the toy corpus")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--epochs", type=int, default=3000)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_train_kge)

    sp = sub.add_parser("export", help="re-render figures from an exported run")
    sp.add_argument("run", help="directory written by simulate --out")
    sp.add_argument("--out")
    sp.add_argument("--format", default="svg,png")
    sp.set_defaults(func=cmd_export)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
