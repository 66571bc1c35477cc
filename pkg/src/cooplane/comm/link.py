"""Framed message connection with an outbound delay/drop shim.

The shim sits between the codec and the socket: every outbound frame is held
until ``send time + delay`` by a writer thread, or dropped with the configured
probability. With zero delay and zero drop it is a plain FIFO writer, so
production and test paths are identical.
"""

from __future__ import annotations

import logging
import queue
import socket
import threading
import time
from typing import Callable, Optional

import numpy as np

from ..errors import DecodeError, FrameTooLarge
from .codec import Message, frame_encode, now_us, read_message

log = logging.getLogger(__name__)

_STOP = object()


class Counters:
    """Fault and traffic counters shared between connection threads."""

    def __init__(self):
        self._lock = threading.Lock()
        self.values = {}

    def incr(self, name: str, n: int = 1):
        with self._lock:
            self.values[name] = self.values.get(name, 0) + n

    def get(self, name: str) -> int:
        with self._lock:
            return self.values.get(name, 0)


class DelayShim:
    """Outbound scheduler: frames leave in order, each no earlier than its due time."""

    def __init__(self, sock: socket.socket, delay_ms: float = 0.0, drop_prob: float = 0.0,
                 seed: Optional[int] = None, on_error: Optional[Callable] = None):
        if delay_ms < 0 or not 0.0 <= drop_prob < 1.0:
            raise ValueError("delay must be >= 0 and drop probability in [0, 1)")
        self.sock = sock
        self.delay_ns = int(delay_ms * 1e6)
        self.drop_prob = drop_prob
        self._rng = np.random.default_rng(seed)
        self._q = queue.Queue()
        self._on_error = on_error
        self.dropped = 0
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def submit(self, data: bytes):
        if self.drop_prob and self._rng.random() < self.drop_prob:
            self.dropped += 1
            return
        self._q.put((time.monotonic_ns() + self.delay_ns, data))

    def close(self):
        self._q.put(_STOP)

    def _run(self):
        while True:
            item = self._q.get()
            if item is _STOP:
                return
            due, data = item
            wait = (due - time.monotonic_ns()) / 1e9
            if wait > 0:
                time.sleep(wait)
            try:
                self.sock.sendall(data)
            except OSError as e:
                if self._on_error:
                    self._on_error(e)
                return


class Link:
    """One framed connection: shimmed writer plus a reader thread dispatching to ``handler``.

    ``handler(link, msg)`` runs on the reader thread. A malformed frame puts the
    connection in fault state: it is closed and ``counters['decode_faults']``
    is incremented; the owning node keeps running.
    """

    def __init__(self, sock: socket.socket, handler: Optional[Callable] = None,
                 delay_ms: float = 0.0, drop_prob: float = 0.0, seed: Optional[int] = None,
                 on_close: Optional[Callable] = None, counters: Optional[Counters] = None,
                 name: str = "link"):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.sock = sock
        self.name = name
        self.handler = handler
        self.on_close = on_close
        self.counters = counters or Counters()
        self._seq = 0
        self._seq_lock = threading.Lock()
        self._closed = threading.Event()
        self.shim = DelayShim(sock, delay_ms, drop_prob, seed, on_error=lambda e: self.close())
        self._reader = None
        if handler is not None:
            self._reader = threading.Thread(target=self._read_loop, daemon=True, name=f"{name}-rx")
            self._reader.start()

    @property
    def closed(self) -> bool:
        return self._closed.is_set()

    def send(self, mtype: str, payload, ts_us: Optional[int] = None,
             on_seq: Optional[Callable] = None) -> Message:
        """Stamp the next sequence number and the send time, then queue the frame.

        ``payload`` may be a callable taking the sequence number. ``on_seq`` runs
        with the sequence number before the frame is queued.
        """
        with self._seq_lock:
            seq = self._seq
            body = payload(seq) if callable(payload) else payload
            msg = Message(mtype, seq, now_us() if ts_us is None else ts_us, body)
            if on_seq is not None:
                on_seq(seq)
            self._seq += 1
            data = frame_encode(msg)
            self.shim.submit(data)
        return msg

    def receive(self) -> Optional[Message]:
        """Blocking read for links without a reader thread."""
        return read_message(self.sock)

    def _read_loop(self):
        try:
            while not self.closed:
                msg = read_message(self.sock)
                if msg is None:
                    break
                try:
                    self.handler(self, msg)
                except Exception:
                    self.counters.incr("handler_faults")
                    log.exception("%s: handler failed on %s", self.name, msg.type)
        except (DecodeError, FrameTooLarge) as e:
            self.counters.incr("decode_faults")
            log.warning("%s: closing faulted connection: %s", self.name, e)
        except OSError:
            pass
        finally:
            self.close()

    def close(self):
        if self._closed.is_set():
            return
        self._closed.set()
        self.shim.close()
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()
        if self.on_close:
            self.on_close(self)


def connect(addr, timeout: float = 2.0) -> socket.socket:
    sock = socket.create_connection(tuple(addr), timeout=timeout)
    sock.settimeout(None)
    return sock


def backoff_delays(initial: float = 0.05, cap: float = 1.0, factor: float = 2.0):
    """Unbounded generator of reconnect waits, doubling up to ``cap`` seconds."""
    d = initial
    while True:
        yield d
        d = min(cap, d * factor)
