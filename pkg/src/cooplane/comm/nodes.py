"""Node runtimes: perception client, relay and prediction server.

Each node owns a listening socket (except the client) and one :class:`Link`
per connection. Nodes run in threads so tests can host all three in one
process; the CLI runs each as its own process.
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional

from ..errors import CoopLaneError, InputError
from ..semantics import LinguisticFrame, NumericFeatures, Ontology, Thresholds, categorize, frame_key
from .codec import ECHO, ECHO_REPLY, FEATURES, HELLO, LINGUISTIC, PREDICTION, now_us
from .link import Counters, Link, backoff_delays, connect
from .schema import features_from_body, features_to_body

log = logging.getLogger(__name__)

ROLES = ("perception_client", "relay", "prediction_server")
STALENESS_S = 0.5


@dataclass
class TopologyConfig:
    """Endpoints per role and test-only impairments.

    ``endpoints`` maps role to (host, port). The client's entry is its local
    bind address and may use port 0.
    """

    mode: str = "relay"
    endpoints: dict = field(default_factory=dict)
    inject_delay_ms: float = 0.0
    drop_prob: float = 0.0

    def __post_init__(self):
        if self.mode not in ("direct", "relay"):
            raise InputError(f"unknown topology {self.mode!r}")
        need = ROLES if self.mode == "relay" else ("perception_client", "prediction_server")
        missing = [r for r in need if r not in self.endpoints]
        if missing:
            raise InputError(f"{self.mode} topology needs endpoints for {missing}")
        self.endpoints = {k: (str(v[0]), int(v[1])) for k, v in self.endpoints.items()}
        if self.inject_delay_ms < 0 or not 0 <= self.drop_prob < 1:
            raise InputError("invalid impairment settings")

    def upstream_of(self, role: str):
        if role == "perception_client":
            return self.endpoints["relay" if self.mode == "relay" else "prediction_server"]
        if role == "relay":
            return self.endpoints["prediction_server"]
        return None


class _Server:
    """Accept loop shared by the relay and the prediction server."""

    role = "server"

    def __init__(self, listen=("127.0.0.1", 0), inject_delay_ms: float = 0.0, drop_prob: float = 0.0,
                 seed: Optional[int] = None):
        self.listen_addr = tuple(listen)
        self.inject_delay_ms = inject_delay_ms
        self.drop_prob = drop_prob
        self.seed = seed
        self.counters = Counters()
        self._links = set()
        self._lock = threading.Lock()
        self._sock = None
        self._stop = threading.Event()
        self._thread = None

    @property
    def address(self):
        return self._sock.getsockname()[:2]

    def start(self):
        s = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        s.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        s.bind(self.listen_addr)
        s.listen(16)
        s.settimeout(0.1)
        self._sock = s
        self._thread = threading.Thread(target=self._accept_loop, daemon=True, name=f"{self.role}-accept")
        self._thread.start()
        return self

    def _accept_loop(self):
        while not self._stop.is_set():
            try:
                conn, _ = self._sock.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            conn.settimeout(None)
            link = Link(conn, self.handle, self.inject_delay_ms, self.drop_prob, self.seed,
                        on_close=self._forget, counters=self.counters, name=self.role)
            with self._lock:
                self._links.add(link)

    def _forget(self, link):
        with self._lock:
            self._links.discard(link)

    def handle(self, link: Link, msg):
        raise NotImplementedError

    def _echo(self, link: Link, msg) -> bool:
        if msg.type == ECHO:
            link.send(ECHO_REPLY, {"probe": msg.payload["probe"], "echo_ts_us": now_us()})
            return True
        return msg.type == HELLO

    def stop(self):
        self._stop.set()
        if self._sock is not None:
            self._sock.close()
        with self._lock:
            links = list(self._links)
        for link in links:
            link.close()
        if self._thread is not None:
            self._thread.join(timeout=1.0)

    def __enter__(self):
        return self.start() if self._sock is None else self

    def __exit__(self, *exc):
        self.stop()


class PredictionServer(_Server):
    """Answers LINGUISTIC frames with PREDICTION (argmax and posterior).

    ``predictor`` maps a frame to an object with ``maneuver`` and ``probs``
    attributes, e.g. a bound lookup-table query.
    """

    role = "prediction_server"

    def __init__(self, predictor: Callable, ontology_fingerprint: Optional[str] = None, **kw):
        super().__init__(**kw)
        self.predictor = predictor
        self.fingerprint = ontology_fingerprint

    def handle(self, link: Link, msg):
        if self._echo(link, msg):
            return
        if msg.type != LINGUISTIC:
            self.counters.incr("unexpected")
            return
        rx = now_us()
        p = msg.payload
        if self.fingerprint is not None and p["ontology"] != self.fingerprint:
            self.counters.incr("ontology_mismatch")
            return
        try:
            pred = self.predictor(LinguisticFrame(p["frame"]))
        except (CoopLaneError, KeyError) as e:
            self.counters.incr("prediction_faults")
            log.warning("no prediction for frame: %s", e)
            return
        link.send(PREDICTION, {
            "maneuver": pred.maneuver,
            "probs": [float(x) for x in pred.probs],
            "origin_seq": p["origin_seq"],
            "origin_ts_us": p["origin_ts_us"],
            "request_seq": msg.seq,
            "server_rx_us": rx,
            "server_tx_us": now_us(),
        })
        self.counters.incr("predictions")


class Relay(_Server):
    """Converts FEATURES to LINGUISTIC, forwards upstream and routes PREDICTION back."""

    role = "relay"

    def __init__(self, server_addr, ontology: Ontology, thresholds: Thresholds, **kw):
        super().__init__(**kw)
        self.server_addr = tuple(server_addr)
        self.ontology = ontology
        self.fingerprint = ontology.fingerprint()
        self.thresholds = thresholds
        self._up: Optional[Link] = None
        self._up_lock = threading.Lock()
        self._pending = {}

    def start(self):
        super().start()
        self._ensure_upstream(block=False)
        return self

    def _ensure_upstream(self, block: bool = True, max_wait: float = 5.0) -> Optional[Link]:
        with self._up_lock:
            if self._up is not None and not self._up.closed:
                return self._up
            deadline = time.monotonic() + max_wait
            for wait in backoff_delays():
                try:
                    sock = connect(self.server_addr)
                except OSError:
                    if not block or time.monotonic() + wait > deadline or self._stop.is_set():
                        return None
                    time.sleep(wait)
                    continue
                self._up = Link(sock, self._from_upstream, self.inject_delay_ms, self.drop_prob,
                                self.seed, counters=self.counters, name="relay-up")
                return self._up

    def _from_upstream(self, link: Link, msg):
        if msg.type != PREDICTION:
            return
        client = self._pending.pop(msg.payload["request_seq"], None)
        if client is None or client.closed:
            self.counters.incr("unroutable")
            return
        client.send(PREDICTION, msg.payload)

    def process(self, msg) -> Optional[dict]:
        """FEATURES message to a LINGUISTIC payload, or None when malformed."""
        ingress = now_us()
        try:
            nf = features_from_body(msg.payload["schema"], msg.payload["body"])
            frame = categorize(nf, self.thresholds, self.ontology)
        except (InputError, CoopLaneError, KeyError, TypeError, ValueError) as e:
            self.counters.incr("malformed_features")
            log.warning("dropping malformed FEATURES seq=%s: %s", msg.seq, e)
            return None
        return {
            "frame": list(frame),
            "ontology": self.fingerprint,
            "origin_seq": msg.seq,
            "origin_ts_us": msg.ts_us,
            "relay_ingress_us": ingress,
        }

    def handle(self, link: Link, msg):
        if self._echo(link, msg):
            return
        if msg.type != FEATURES:
            self.counters.incr("unexpected")
            return
        payload = self.process(msg)
        if payload is None:
            return
        up = self._ensure_upstream()
        if up is None:
            self.counters.incr("upstream_down")
            return
        payload["relay_egress_us"] = now_us()
        # the route is registered before the frame is queued so a fast reply always finds it
        up.send(LINGUISTIC, payload, on_seq=lambda seq: self._pending.__setitem__(seq, link))
        self.counters.incr("forwarded")

    def stop(self):
        super().stop()
        with self._up_lock:
            if self._up is not None:
                self._up.close()


@dataclass
class PredictionRecord:
    origin_seq: int
    origin_ts_us: int
    maneuver: str
    probs: tuple
    server_rx_us: int
    server_tx_us: int
    received_us: int

    @property
    def one_way_ms(self) -> float:
        """FEATURES emission to PREDICTION emission, on the shared monotonic clock."""
        return (self.server_tx_us - self.origin_ts_us) / 1000.0


class PerceptionClient:
    """Streams features upstream and keeps the latest prediction (latest wins).

    In relay mode numeric FEATURES are sent; in direct mode the client
    categorises locally and sends LINGUISTIC straight to the server. A lost
    connection is re-established in the background with exponential backoff;
    sends while disconnected are counted as dropped.
    """

    def __init__(self, peer, mode: str = "relay", ontology: Optional[Ontology] = None,
                 thresholds: Optional[Thresholds] = None, inject_delay_ms: float = 0.0,
                 drop_prob: float = 0.0, seed: Optional[int] = None, schema: int = 1,
                 staleness: float = STALENESS_S):
        if mode not in ("direct", "relay"):
            raise InputError(f"unknown topology {mode!r}")
        if mode == "direct" and (ontology is None or thresholds is None):
            raise InputError("direct mode categorises locally and needs ontology and thresholds")
        self.peer = tuple(peer)
        self.mode = mode
        self.ontology = ontology
        self.thresholds = thresholds
        self.inject_delay_ms = inject_delay_ms
        self.drop_prob = drop_prob
        self.seed = seed
        self.schema = schema
        self.staleness = staleness
        self.counters = Counters()
        self.records = []
        self._by_seq = {}
        self._cond = threading.Condition()
        self._link: Optional[Link] = None
        self._link_lock = threading.Lock()
        self._stopped = threading.Event()
        self._reconnecting = threading.Event()
        self.reconnects = 0

    def connect(self, max_wait: float = 5.0):
        deadline = time.monotonic() + max_wait
        for wait in backoff_delays():
            try:
                sock = connect(self.peer)
                break
            except OSError:
                if time.monotonic() + wait > deadline:
                    raise
                time.sleep(wait)
        link = Link(sock, self._on_message, self.inject_delay_ms, self.drop_prob, self.seed,
                    on_close=self._on_close, counters=self.counters, name="client")
        with self._link_lock:
            self._link = link
        link.send(HELLO, {"role": "perception_client"})
        return self

    def _on_close(self, link):
        if self._stopped.is_set() or self._reconnecting.is_set():
            return
        self._reconnecting.set()
        threading.Thread(target=self._reconnect_loop, daemon=True, name="client-reconnect").start()

    def _reconnect_loop(self):
        try:
            for wait in backoff_delays():
                if self._stopped.is_set():
                    return
                time.sleep(wait)
                try:
                    self.connect(max_wait=0)
                    self.reconnects += 1
                    return
                except OSError:
                    continue
        finally:
            self._reconnecting.clear()

    @property
    def connected(self) -> bool:
        link = self._link
        return link is not None and not link.closed

    def _on_message(self, link, msg):
        if msg.type != PREDICTION:
            return
        p = msg.payload
        rec = PredictionRecord(p["origin_seq"], p["origin_ts_us"], p["maneuver"], tuple(p["probs"]),
                               p["server_rx_us"], p["server_tx_us"], now_us())
        with self._cond:
            self.records.append(rec)
            self._by_seq[rec.origin_seq] = rec
            self._cond.notify_all()

    def send_features(self, nf: NumericFeatures) -> Optional[int]:
        """Send one feature vector; returns its sequence number or None when disconnected."""
        link = self._link
        if link is None or link.closed:
            self.counters.incr("send_dropped")
            return None
        try:
            if self.mode == "relay":
                msg = link.send(FEATURES, {"schema": self.schema, "body": features_to_body(nf, self.schema)})
            else:
                ts = now_us()
                frame = list(categorize(nf, self.thresholds, self.ontology))
                fp = self.ontology.fingerprint()
                msg = link.send(LINGUISTIC, lambda seq: {"frame": frame, "ontology": fp,
                                                         "origin_seq": seq, "origin_ts_us": ts}, ts_us=ts)
        except OSError:
            self.counters.incr("send_dropped")
            return None
        return msg.seq

    def send_raw(self, mtype: str, payload: dict) -> Optional[int]:
        link = self._link
        if link is None or link.closed:
            return None
        return link.send(mtype, payload).seq

    def wait_for(self, seq: int, timeout: float = 1.0) -> Optional[PredictionRecord]:
        deadline = time.monotonic() + timeout
        with self._cond:
            while seq not in self._by_seq:
                left = deadline - time.monotonic()
                if left <= 0:
                    return None
                self._cond.wait(left)
            return self._by_seq[seq]

    def request(self, nf: NumericFeatures, timeout: float = 1.0) -> Optional[PredictionRecord]:
        seq = self.send_features(nf)
        return None if seq is None else self.wait_for(seq, timeout)

    def latest(self, staleness: Optional[float] = None) -> Optional[PredictionRecord]:
        """Most recent prediction, or None when older than the staleness window."""
        window = self.staleness if staleness is None else staleness
        with self._cond:
            if not self.records:
                return None
            rec = self.records[-1]
        if (now_us() - rec.received_us) / 1e6 > window:
            return None
        return rec

    def close(self):
        self._stopped.set()
        link = self._link
        if link is not None:
            link.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def table_predictor(table) -> Callable:
    """Predictor backed by a compiled lookup table (keyed query)."""
    return lambda frame: table.get(frame_key(frame))


__all__ = ["TopologyConfig", "PredictionServer", "Relay", "PerceptionClient", "PredictionRecord",
           "table_predictor"]
