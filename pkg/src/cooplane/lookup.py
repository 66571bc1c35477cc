"""Compiled prediction tables and the two query backends.

A table maps every feasible linguistic frame to its predicted maneuver and
posterior. It is stored two ways: a CSV with one column per feature (searched
row by row, like a dataframe filter) and a keyed snapshot (one dict lookup on
the concatenated frame key).
"""

from __future__ import annotations

import csv
import io
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .errors import CorruptTable, InfeasibleFrame, InputError
from .inference import LikelihoodModel, ManeuverPosterior, encode_frames, enumerate_feasible
from .semantics import KEY_SEP, Ontology, frame_key

SNAPSHOT_MAGIC = "COOPLANE-LUT"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class Prediction:
    maneuver: str
    probs: tuple


class LookupTable:
    """Keyed table: frame_key -> Prediction. Immutable after construction."""

    def __init__(self, ontology: Ontology, entries: dict, fingerprint: Optional[str] = None):
        self.ontology = ontology
        self.fingerprint = fingerprint or ontology.fingerprint()
        self._entries = entries

    def __len__(self):
        return len(self._entries)

    def __contains__(self, key):
        return key in self._entries

    def items(self):
        return self._entries.items()

    def keys(self):
        return self._entries.keys()

    def get(self, key: str) -> Prediction:
        try:
            return self._entries[key]
        except KeyError:
            raise InfeasibleFrame(key) from None


class ScanTable:
    """Row store for the linear-search backend: feature columns plus results."""

    def __init__(self, feature_names: Sequence[str], rows: list, results: list):
        self.feature_names = tuple(feature_names)
        self.rows = rows
        self.results = results

    def __len__(self):
        return len(self.rows)


def build_table(ontology: Ontology, rules, predictor: Callable) -> LookupTable:
    """Run ``predictor`` on every feasible frame, in enumeration order.

    A :class:`LikelihoodModel` predictor is evaluated in one vectorised batch.
    """
    frames = list(enumerate_feasible(ontology, rules))
    maneuvers = ontology.maneuvers
    entries = {}
    if isinstance(predictor, LikelihoodModel):
        probs = predictor.posterior_batch(encode_frames(frames, ontology))
        arg = probs.argmax(axis=1)
        for frame, p, a in zip(frames, probs.tolist(), arg.tolist()):
            entries[frame_key(frame)] = Prediction(maneuvers[a], tuple(p))
    else:
        for frame in frames:
            try:
                post = predictor(frame)
            except Exception as e:
                raise InputError(f"predictor failed on frame {frame_key(frame)}: {e}") from e
            if isinstance(post, ManeuverPosterior):
                entries[frame_key(frame)] = Prediction(post.argmax, tuple(post.probs))
            else:
                entries[frame_key(frame)] = Prediction(*post)
    return LookupTable(ontology, entries)


# ---- CSV artifact -------------------------------------------------------------

def _csv_header(ontology: Ontology) -> list:
    return list(ontology.names) + ["maneuver"] + [f"p_{m}" for m in ontology.maneuvers]


def write_table_csv(table: LookupTable, path=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(_csv_header(table.ontology))
    for key, pred in table.items():
        w.writerow(key.split(KEY_SEP) + [pred.maneuver] + [repr(p) for p in pred.probs])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def load_scan_table(source, ontology: Ontology) -> ScanTable:
    """Parse the CSV artifact (a path, or the CSV text itself); duplicated feature rows are rejected here."""
    if isinstance(source, Path) or (isinstance(source, str) and "\n" not in source):
        source = Path(source).read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(source))
    header = next(reader, None)
    if header != _csv_header(ontology):
        raise CorruptTable("CSV header does not match the ontology")
    n = len(ontology.features)
    rows, results, seen = [], [], set()
    # one shared object per category label keeps the row store compact and scan cost linear in size
    labels = {}
    for line, rec in enumerate(reader, start=2):
        if len(rec) != n + 1 + len(ontology.maneuvers):
            raise CorruptTable(f"line {line}: wrong column count")
        feats = tuple(labels.setdefault(c, c) for c in rec[:n])
        if feats in seen:
            raise CorruptTable(f"line {line}: duplicate frame")
        seen.add(feats)
        rows.append(feats)
        results.append(Prediction(rec[n], tuple(float(x) for x in rec[n + 1:])))
    return ScanTable(ontology.names, rows, results)


def scan_table_from(table: LookupTable) -> ScanTable:
    return load_scan_table(write_table_csv(table), table.ontology)


def query_scan(table: ScanTable, frame) -> Prediction:
    """Linear search: rows are tested in file order until all twelve columns match."""
    return table.results[scan_index(table, frame)]


def scan_index(table: ScanTable, frame) -> int:
    """Row position of ``frame``; rows inspected is this plus one."""
    # row-at-a-time interpreter loop, like reading records back from the CSV;
    # tuple equality is the conjunction of the per-column equality tests
    target = tuple(frame)
    for i, row in enumerate(table.rows):
        if row == target:
            return i
    raise InfeasibleFrame(frame_key(frame))


def query_hash(table: LookupTable, frame) -> Prediction:
    return table.get(frame_key(frame))


# ---- keyed snapshot -----------------------------------------------------------

def write_snapshot(table: LookupTable, path) -> None:
    """Flat text file: a header line, then one tab-separated entry per line.

    Header: ``COOPLANE-LUT <version> <fingerprint> <count>``.
    Entry: ``<frame key>\\t<maneuver>\\t<p_1>\\t<p_2>\\t<p_3>``.
    """
    lines = [f"{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION} {table.fingerprint} {len(table)}"]
    for key, pred in table.items():
        lines.append("\t".join([key, pred.maneuver, *map(repr, pred.probs)]))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_snapshot(path, ontology: Ontology) -> LookupTable:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text:
        raise CorruptTable("empty snapshot")
    head = text[0].split()
    if len(head) != 4 or head[0] != SNAPSHOT_MAGIC or head[1] != str(SNAPSHOT_VERSION):
        raise CorruptTable("not a lookup snapshot")
    if head[2] != ontology.fingerprint():
        raise CorruptTable(f"snapshot built for ontology {head[2]}, expected {ontology.fingerprint()}")
    entries = {}
    for line in text[1:]:
        parts = line.split("\t")
        if len(parts) != 2 + len(ontology.maneuvers):
            raise CorruptTable(f"bad snapshot line: {line[:60]!r}")
        if parts[0] in entries:
            raise CorruptTable(f"duplicate key {parts[0]}")
        entries[parts[0]] = Prediction(parts[1], tuple(float(x) for x in parts[2:]))
    if len(entries) != int(head[3]):
        raise CorruptTable(f"snapshot declares {head[3]} entries, found {len(entries)}")
    return LookupTable(ontology, entries, fingerprint=head[2])


# ---- benchmark ----------------------------------------------------------------

@dataclass
class LatencyStats:
    table_size: int
    backend: str
    n: int
    mean: float  # seconds
    p50: float
    p99: float

    def as_row(self) -> dict:
        return {"table_size": self.table_size, "backend": self.backend, "n": self.n,
                "mean_s": self.mean, "p50_s": self.p50, "p99_s": self.p99}


def _percentile(sorted_vals, q):
    k = min(len(sorted_vals) - 1, max(0, int(round(q * (len(sorted_vals) - 1)))))
    return sorted_vals[k]


def bench_query(tables: Iterable, backend: str, n_queries: int = 1000, seed: int = 0,
                warmup: int = 50) -> list:
    """Per-query latencies on a monotonic clock for each table.

    ``tables`` holds :class:`LookupTable` (hash) or :class:`ScanTable` (scan)
    objects. Queries are feasible frames drawn uniformly with a seeded RNG.
    """
    if n_queries < 1000:
        raise InputError("at least 1000 queries per table are required")
    if backend not in ("scan", "hash"):
        raise InputError(f"unknown backend {backend!r}")
    out = []
    for table in tables:
        rng = np.random.default_rng(seed)
        if backend == "scan":
            population = table.rows
            query = query_scan
        else:
            population = [tuple(k.split(KEY_SEP)) for k in table.keys()]
            query = query_hash
        picks = rng.integers(0, len(population), size=n_queries + warmup)
        frames = [population[i] for i in picks]
        for f in frames[:warmup]:
            query(table, f)
        lat = []
        clock = time.perf_counter_ns
        for f in frames[warmup:]:
            t0 = clock()
            query(table, f)
            lat.append(clock() - t0)
        lat_s = sorted(x * 1e-9 for x in lat)
        out.append(LatencyStats(len(table), backend, n_queries, statistics.fmean(lat_s),
                                _percentile(lat_s, 0.5), _percentile(lat_s, 0.99)))
    return out


def write_bench_csv(stats: Sequence[LatencyStats], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(stats[0].as_row()))
        w.writeheader()
        for s in stats:
            w.writerow(s.as_row())


def bench_summary(scan: Sequence[LatencyStats], hashed: Sequence[LatencyStats]) -> str:
    lines = [f"{'entries':>9} {'backend':>7} {'mean s/query':>14} {'p50':>11} {'p99':>11}"]
    for s in list(scan) + list(hashed):
        lines.append(f"{s.table_size:>9} {s.backend:>7} {s.mean:>14.3e} {s.p50:>11.3e} {s.p99:>11.3e}")
    if len(scan) >= 2 and len(hashed) >= 2:
        small, large = 0, -1
        lines.append(f"scan ratio large/small  = {scan[large].mean / scan[small].mean:.2f}")
        lines.append(f"hash ratio large/small  = {hashed[large].mean / hashed[small].mean:.2f}")
        lines.append(f"hash speed-up at largest = {scan[large].mean / hashed[large].mean:.3g}x")
    return "\n".join(lines)
