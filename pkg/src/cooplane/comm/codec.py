"""Length-prefixed JSON wire format.

Frame: 4-byte big-endian unsigned body length, then a UTF-8 JSON object with
exactly the keys ``type``, ``seq``, ``ts_us`` and ``payload``. Bodies are
encoded with sorted keys and no whitespace so encoding is bit-exact.
"""

from __future__ import annotations

import json
import math
import struct
import time
from dataclasses import dataclass
from typing import Optional

from ..errors import DecodeError, FrameTooLarge

MAX_FRAME = 1 << 20
HEADER = struct.Struct(">I")

HELLO = "HELLO"
FEATURES = "FEATURES"
LINGUISTIC = "LINGUISTIC"
PREDICTION = "PREDICTION"
ECHO = "ECHO"
ECHO_REPLY = "ECHO_REPLY"
MESSAGE_TYPES = (HELLO, FEATURES, LINGUISTIC, PREDICTION, ECHO, ECHO_REPLY)


def now_us() -> int:
    """Monotonic clock in microseconds, comparable across processes on one host."""
    return time.monotonic_ns() // 1000


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _is_num(v) -> bool:
    return (_is_int(v) or isinstance(v, float)) and math.isfinite(v)


def _require(cond: bool, msg: str):
    if not cond:
        raise DecodeError(msg)


def _check_ints(p: dict, keys, optional=False):
    for k in keys:
        if k not in p:
            _require(optional, f"payload lacks {k!r}")
            continue
        _require(_is_int(p[k]) and p[k] >= 0, f"{k!r} must be a non-negative integer")


def validate_payload(mtype: str, p) -> None:
    """Type-payload correspondence; raises DecodeError."""
    _require(isinstance(p, dict), "payload must be an object")
    if mtype == HELLO:
        if "role" in p:
            _require(isinstance(p["role"], str), "HELLO role must be a string")
    elif mtype == FEATURES:
        _require(_is_int(p.get("schema")) and p["schema"] >= 1, "FEATURES needs an integer schema")
        _require(isinstance(p.get("body"), dict), "FEATURES needs an object body")
    elif mtype == LINGUISTIC:
        frame = p.get("frame")
        _require(isinstance(frame, list) and all(isinstance(c, str) for c in frame),
                 "LINGUISTIC frame must be a list of strings")
        _require(isinstance(p.get("ontology"), str), "LINGUISTIC needs an ontology fingerprint")
        _check_ints(p, ("origin_seq", "origin_ts_us"))
        _check_ints(p, ("relay_ingress_us", "relay_egress_us"), optional=True)
    elif mtype == PREDICTION:
        _require(isinstance(p.get("maneuver"), str), "PREDICTION needs a maneuver")
        probs = p.get("probs")
        _require(isinstance(probs, list) and len(probs) > 0 and all(_is_num(x) for x in probs),
                 "PREDICTION probs must be a list of numbers")
        _check_ints(p, ("origin_seq", "origin_ts_us", "request_seq", "server_rx_us", "server_tx_us"))
    elif mtype == ECHO:
        _check_ints(p, ("probe",))
    elif mtype == ECHO_REPLY:
        _check_ints(p, ("probe", "echo_ts_us"))
    else:
        raise DecodeError(f"unknown message type {mtype!r}")


@dataclass(frozen=True)
class Message:
    type: str
    seq: int
    ts_us: int
    payload: dict

    def __post_init__(self):
        _require(self.type in MESSAGE_TYPES, f"unknown message type {self.type!r}")
        _require(_is_int(self.seq) and self.seq >= 0, "seq must be a non-negative integer")
        _require(_is_int(self.ts_us) and self.ts_us >= 0, "ts_us must be a non-negative integer")
        validate_payload(self.type, self.payload)

    def to_dict(self) -> dict:
        return {"type": self.type, "seq": self.seq, "ts_us": self.ts_us, "payload": self.payload}


def encode_body(msg: Message) -> bytes:
    try:
        return json.dumps(msg.to_dict(), sort_keys=True, separators=(",", ":"),
                          ensure_ascii=False, allow_nan=False).encode("utf-8")
    except ValueError as e:
        raise DecodeError(f"payload not encodable: {e}") from None


def frame_encode(msg: Message) -> bytes:
    body = encode_body(msg)
    if len(body) > MAX_FRAME:
        raise FrameTooLarge(f"body of {len(body)} bytes exceeds {MAX_FRAME}")
    return HEADER.pack(len(body)) + body


def _reject_constant(name):
    raise ValueError(f"{name} is not valid JSON")


def decode_body(body: bytes) -> Message:
    try:
        obj = json.loads(body.decode("utf-8"), parse_constant=_reject_constant)
    except (UnicodeDecodeError, ValueError, RecursionError) as e:
        raise DecodeError(f"malformed body: {e}") from None
    _require(isinstance(obj, dict), "body must be a JSON object")
    _require(set(obj) == {"type", "seq", "ts_us", "payload"}, "body must have exactly type, seq, ts_us, payload")
    _require(isinstance(obj["type"], str), "type must be a string")
    return Message(obj["type"], obj["seq"], obj["ts_us"], obj["payload"])


def declared_length(header: bytes) -> int:
    (n,) = HEADER.unpack(header)
    if n > MAX_FRAME:
        raise FrameTooLarge(f"declared length {n} exceeds {MAX_FRAME}")
    return n


def frame_decode(data: bytes) -> Message:
    """Decode exactly one complete frame."""
    if len(data) < HEADER.size:
        raise DecodeError("truncated header")
    n = declared_length(data[:HEADER.size])
    if len(data) != HEADER.size + n:
        raise DecodeError(f"frame holds {len(data) - HEADER.size} body bytes, header says {n}")
    return decode_body(data[HEADER.size:])


class FrameReader:
    """Incremental decoder for a byte stream. After an error the stream is faulted."""

    def __init__(self):
        self._buf = bytearray()
        self.faulted = False

    def feed(self, data: bytes) -> list:
        if self.faulted:
            raise DecodeError("stream is in fault state")
        self._buf += data
        out = []
        try:
            while len(self._buf) >= HEADER.size:
                n = declared_length(bytes(self._buf[:HEADER.size]))
                if len(self._buf) < HEADER.size + n:
                    break
                body = bytes(self._buf[HEADER.size:HEADER.size + n])
                del self._buf[:HEADER.size + n]
                out.append(decode_body(body))
        except (DecodeError, FrameTooLarge):
            self.faulted = True
            raise
        return out


def recv_exact(sock, n: int) -> Optional[bytes]:
    """Read exactly n bytes; None on orderly EOF before the first byte."""
    chunks, got = [], 0
    while got < n:
        chunk = sock.recv(n - got)
        if not chunk:
            if got == 0:
                return None
            raise DecodeError("connection closed mid-frame")
        chunks.append(chunk)
        got += len(chunk)
    return b"".join(chunks)


def read_message(sock) -> Optional[Message]:
    """Blocking read of one message; None on EOF. Oversized frames fail before the body is read."""
    head = recv_exact(sock, HEADER.size)
    if head is None:
        return None
    n = declared_length(head)
    body = recv_exact(sock, n) if n else b""
    if body is None:
        raise DecodeError("connection closed mid-frame")
    return decode_body(body)


def make(mtype: str, seq: int, payload: Optional[dict] = None, ts_us: Optional[int] = None) -> Message:
    return Message(mtype, seq, now_us() if ts_us is None else ts_us, payload or {})
