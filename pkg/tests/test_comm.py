import socket
import statistics
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cooplane.comm.codec import (ECHO, ECHO_REPLY, FEATURES, HEADER, HELLO, LINGUISTIC, MAX_FRAME, PREDICTION,
                                 FrameReader, Message, declared_length, frame_decode, frame_encode, make)
from cooplane.comm.link import backoff_delays
from cooplane.comm.nodes import PerceptionClient, PredictionServer, Relay, TopologyConfig, table_predictor
from cooplane.comm.rtt import LinkStats, measure_rtt
from cooplane.comm.schema import features_from_body, features_to_body
from cooplane.corpus import sample_numeric
from cooplane.errors import DecodeError, FrameTooLarge, InputError, LinkUnusable
from cooplane.semantics import categorize
from cooplane.sim.network import NodeProcess

from test_semantics import features


def wait_until(cond, timeout=3.0):
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        if cond():
            return True
        time.sleep(0.01)
    return False


@pytest.fixture(scope="module")
def predict2(table2):
    return table_predictor(table2)


@pytest.fixture
def server(predict2, onto2):
    with PredictionServer(predict2, onto2.fingerprint()) as srv:
        yield srv


# ---- codec ----

def test_hello_round_trip_bit_exact():
    m = Message(HELLO, 0, 123, {})
    data = frame_encode(m)
    assert frame_decode(data) == m
    assert frame_encode(frame_decode(data)) == data


def test_oversize_declared_length():
    with pytest.raises(FrameTooLarge):
        declared_length(HEADER.pack(2 << 20))
    reader = FrameReader()
    with pytest.raises(FrameTooLarge):
        reader.feed(HEADER.pack(2 << 20))
    assert reader.faulted
    with pytest.raises(DecodeError):
        reader.feed(b"")


def test_encode_rejects_oversize_body():
    with pytest.raises(FrameTooLarge):
        frame_encode(Message(HELLO, 0, 0, {"role": "x" * (MAX_FRAME + 1)}))


def test_payload_type_correspondence():
    with pytest.raises(DecodeError):
        Message(PREDICTION, 0, 0, {"maneuver": "laneKeep"})
    with pytest.raises(DecodeError):
        Message("BOGUS", 0, 0, {})
    with pytest.raises(DecodeError):
        Message(HELLO, -1, 0, {})
    with pytest.raises(DecodeError):
        frame_decode(HEADER.pack(2) + b"[]")
    with pytest.raises(DecodeError):
        frame_decode(b"\x00\x00")


messages = st.one_of(
    st.builds(lambda s, t: Message(HELLO, s, t, {"role": "relay"}), st.integers(0, 2**40), st.integers(0, 2**50)),
    st.builds(lambda s, p: Message(ECHO, s, 1, {"probe": p}), st.integers(0, 10**6), st.integers(0, 10**6)),
    st.builds(lambda s, f: Message(LINGUISTIC, s, 5, {"frame": f, "ontology": "abc", "origin_seq": s,
                                                      "origin_ts_us": 5}),
              st.integers(0, 10**6), st.lists(st.text(max_size=12), max_size=12)),
    st.builds(lambda s, pr: Message(PREDICTION, s, 9, {"maneuver": "laneKeep", "probs": pr, "origin_seq": 1,
                                                       "origin_ts_us": 2, "request_seq": 3, "server_rx_us": 4,
                                                       "server_tx_us": 5}),
              st.integers(0, 10**6), st.lists(st.floats(0, 1), min_size=1, max_size=3)),
)


@given(messages)
def test_codec_round_trip(m):
    data = frame_encode(m)
    assert frame_decode(data) == m
    assert FrameReader().feed(data[:3]) == []


@settings(max_examples=300)
@given(st.binary(max_size=64))
def test_fuzz_never_panics(data):
    try:
        m = frame_decode(data)
    except (DecodeError, FrameTooLarge):
        return
    assert isinstance(m, Message)


def test_stream_reader_splits_frames():
    msgs = [make(ECHO, i, {"probe": i}) for i in range(5)]
    blob = b"".join(frame_encode(m) for m in msgs)
    reader = FrameReader()
    got = []
    for i in range(0, len(blob), 7):
        got += reader.feed(blob[i:i + 7])
    assert got == msgs


# ---- schema ----

@pytest.mark.parametrize("schema", [1, 2])
def test_schema_versions_map_to_same_features(schema):
    nf = features(ttc_preceding=1.0, lat_vel=0.4)
    assert features_from_body(schema, features_to_body(nf, schema)) == nf


def test_schema_errors():
    with pytest.raises(InputError):
        features_to_body(features(), 3)
    with pytest.raises(InputError):
        features_from_body(2, {"lateral": {}})


# ---- rtt ----

def test_loopback_floor(server):
    stats = measure_rtt(server.address, n=20)
    assert stats.one_way_ms < 1.0
    assert stats.drops == 0


def test_asymmetric_delay_is_averaged(predict2, onto2):
    with PredictionServer(predict2, onto2.fingerprint(), inject_delay_ms=8.0) as srv:
        stats = measure_rtt(srv.address, n=10, inject_delay_ms=2.0)
    assert stats.one_way_ms == pytest.approx(5.0, abs=0.2 * 5 + 0.5)


def test_rtt_errors(server, tmp_path):
    with pytest.raises(InputError):
        measure_rtt(server.address, n=2)
    with pytest.raises(LinkUnusable):
        LinkStats().one_way_ms
    s = LinkStats([1.0, 3.0, 2.0])
    assert s.one_way_ms == 1.0
    s.to_csv(tmp_path / "rtt.csv")
    assert "one_way_ms" in (tmp_path / "rtt.csv").read_text()


def test_unresponsive_peer_is_unusable():
    listener = socket.socket()
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    try:
        with pytest.raises(LinkUnusable):
            measure_rtt(listener.getsockname(), n=5, timeout=0.05)
    finally:
        listener.close()


# ---- relay and server ----

def test_relay_process_examples(fixture2):
    model, th = fixture2
    relay = Relay(("127.0.0.1", 1), model.ontology, th)
    payload = relay.process(Message(FEATURES, 4, 77, {"schema": 1, "body": features(ttc_preceding=1.0).to_payload()}))
    assert payload["frame"][model.ontology.index("ttc_preceding")] == "highRisk"
    assert (payload["origin_seq"], payload["origin_ts_us"]) == (4, 77)
    assert relay.process(Message(FEATURES, 5, 0, {"schema": 1, "body": {}})) is None
    assert relay.counters.get("malformed_features") == 1


def test_relay_stream_in_order(server, fixture2):
    model, th = fixture2
    with Relay(server.address, model.ontology, th) as relay, \
            PerceptionClient(relay.address, ontology=model.ontology, thresholds=th).connect() as client:
        rng = np.random.default_rng(0)
        sent = []
        expected = []
        for _ in range(100):
            nf, _ = sample_numeric(rng, 2)
            sent.append(client.send_features(nf))
            expected.append(categorize(nf, th, model.ontology))
        assert wait_until(lambda: len(client.records) == 100)
        recs = client.records
        assert [r.origin_seq for r in recs] == sent == list(range(1, 101))
        for rec, frame in zip(recs, expected):
            assert rec.maneuver == server.predictor(frame).maneuver
            assert rec.server_tx_us >= rec.server_rx_us
        assert relay.counters.get("forwarded") == 100


def test_relay_timestamps_monotone(server, fixture2):
    model, th = fixture2
    seen = []
    orig = server.handle

    def spy(link, msg):
        if msg.type == LINGUISTIC:
            seen.append(msg)
        orig(link, msg)

    server.handle = spy
    with Relay(server.address, model.ontology, th) as relay, \
            PerceptionClient(relay.address, ontology=model.ontology, thresholds=th).connect() as client:
        rng = np.random.default_rng(1)
        for _ in range(20):
            assert client.request(sample_numeric(rng, 2)[0]) is not None
    assert len(seen) == 20
    for m in seen:
        assert m.payload["relay_egress_us"] >= m.payload["relay_ingress_us"]
        assert m.seq == seen.index(m)


def test_schema_v2_needs_no_server_change(server, fixture2):
    model, th = fixture2
    with Relay(server.address, model.ontology, th) as relay:
        preds = []
        for schema in (1, 2):
            with PerceptionClient(relay.address, schema=schema).connect() as client:
                rec = client.request(features(ttc_preceding=1.0, lat_vel=0.5))
                assert rec is not None
                preds.append((rec.maneuver, rec.probs))
        assert preds[0] == preds[1]


def test_direct_mode_matches_relay(server, fixture2):
    model, th = fixture2
    nf = features(ttc_preceding=1.5, lat_vel=-0.4)
    with PerceptionClient(server.address, mode="direct", ontology=model.ontology, thresholds=th).connect() as c:
        direct = c.request(nf)
    with Relay(server.address, model.ontology, th) as relay, PerceptionClient(relay.address).connect() as c:
        relayed = c.request(nf)
    assert direct.maneuver == relayed.maneuver and direct.probs == relayed.probs


def test_malformed_frame_faults_connection_only(server):
    sock = socket.create_connection(server.address)
    sock.sendall(HEADER.pack(5) + b"nope!")
    assert wait_until(lambda: server.counters.get("decode_faults") == 1)
    sock.close()
    assert measure_rtt(server.address, n=5).drops == 0


def test_ontology_mismatch_and_unexpected(server):
    with PerceptionClient(server.address).connect() as c:
        c.send_raw(LINGUISTIC, {"frame": ["x"], "ontology": "other", "origin_seq": 0, "origin_ts_us": 0})
        c.send_raw(ECHO_REPLY, {"probe": 0, "echo_ts_us": 0})
        assert wait_until(lambda: server.counters.get("ontology_mismatch") == 1)
        assert wait_until(lambda: server.counters.get("unexpected") == 1)


def test_latest_respects_staleness(server, fixture2):
    model, th = fixture2
    with PerceptionClient(server.address, mode="direct", ontology=model.ontology, thresholds=th,
                          staleness=0.05).connect() as c:
        assert c.latest() is None
        assert c.request(features()) is not None
        assert c.latest() is not None
        time.sleep(0.1)
        assert c.latest() is None


def test_topology_config():
    ep = {"perception_client": ("127.0.0.1", 0), "prediction_server": ("127.0.0.1", 9)}
    cfg = TopologyConfig("direct", ep)
    assert cfg.upstream_of("perception_client") == ("127.0.0.1", 9)
    with pytest.raises(InputError):
        TopologyConfig("relay", ep)
    with pytest.raises(InputError):
        TopologyConfig("mesh", ep)
    with pytest.raises(InputError):
        PerceptionClient(("127.0.0.1", 1), mode="direct")


def test_backoff_is_bounded():
    gen = backoff_delays(0.05, 1.0)
    waits = [next(gen) for _ in range(10)]
    assert waits[:3] == [0.05, 0.1, 0.2]
    assert max(waits) == 1.0


def test_one_way_latency_relay_and_direct(server, fixture2):
    model, th = fixture2
    with Relay(server.address, model.ontology, th, inject_delay_ms=3.25) as relay, \
            PerceptionClient(relay.address, inject_delay_ms=3.5).connect() as c:
        lat = [c.request(features()).one_way_ms for _ in range(30)]
    assert statistics.median(lat) == pytest.approx(7.25, abs=1.5)
    with PerceptionClient(server.address, mode="direct", ontology=model.ontology, thresholds=th,
                          inject_delay_ms=3.25).connect() as c:
        lat = [c.request(features()).one_way_ms for _ in range(30)]
    assert statistics.median(lat) == pytest.approx(3.25, abs=1.0)


def test_relay_restart_client_reconnects(fixture2):
    model, th = fixture2
    srv = NodeProcess("prediction_server").start()
    relay = NodeProcess("relay", peer=srv.address).start()
    port = relay.address[1]
    try:
        with PerceptionClient(relay.address).connect() as c:
            assert c.request(features(), timeout=2.0) is not None
            relay.stop()
            assert wait_until(lambda: not c.connected)
            assert c.send_features(features()) is None
            relay = NodeProcess("relay", listen=("127.0.0.1", port), peer=srv.address).start()
            assert wait_until(lambda: c.connected, timeout=10.0)
            assert c.reconnects >= 1
            assert c.request(features(), timeout=2.0) is not None
            assert srv.alive()
    finally:
        relay.stop()
        srv.stop()
