"""Launching relay and prediction-server nodes as separate OS processes."""

from __future__ import annotations

import subprocess
import sys
import time
from contextlib import contextmanager
from typing import Optional

from ..comm.nodes import PerceptionClient
from ..errors import CoopLaneError
from .runner import default_predictor

READY_PREFIX = "LISTENING"


class NodeLaunchError(CoopLaneError, RuntimeError):
    """A node process exited or never reported its listening address."""


class NodeProcess:
    """One ``cooplane node`` subprocess; the bound address is read from its first stdout line."""

    def __init__(self, role: str, listen=("127.0.0.1", 0), peer=None, inject_delay_ms: float = 0.0,
                 drop_prob: float = 0.0, lanes: int = 2, seed: Optional[int] = None):
        self.role = role
        self.args = [sys.executable, "-m", "cooplane.cli", "node", "--role", role,
                     "--listen", f"{listen[0]}:{listen[1]}", "--lanes", str(lanes),
                     "--inject-delay-ms", str(inject_delay_ms), "--drop-prob", str(drop_prob)]
        if peer is not None:
            self.args += ["--peer", f"{peer[0]}:{peer[1]}"]
        if seed is not None:
            self.args += ["--seed", str(seed)]
        self.proc: Optional[subprocess.Popen] = None
        self.address = None

    def start(self, timeout: float = 20.0) -> "NodeProcess":
        self.proc = subprocess.Popen(self.args, stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True)
        deadline = time.monotonic() + timeout
        line = self.proc.stdout.readline()
        if not line.startswith(READY_PREFIX) or time.monotonic() > deadline:
            self.stop()
            err = self.proc.stderr.read() if self.proc.stderr else ""
            raise NodeLaunchError(f"{self.role} node failed to start: {line.strip()} {err.strip()}")
        _, host, port = line.split()
        self.address = (host, int(port))
        return self

    def alive(self) -> bool:
        return self.proc is not None and self.proc.poll() is None

    def stop(self):
        if self.proc is not None and self.proc.poll() is None:
            self.proc.terminate()
            try:
                self.proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdout, self.proc.stderr) if self.proc else ():
            if stream:
                stream.close()


@contextmanager
def launched_nodes(mode: str = "relay", lanes: int = 2, inject_delay_ms: float = 0.0, seed: Optional[int] = None):
    """Start server (and relay) processes and yield a connected :class:`PerceptionClient`."""
    nodes = []
    client = None
    try:
        server = NodeProcess("prediction_server", lanes=lanes, seed=seed).start()
        nodes.append(server)
        peer = server.address
        if mode == "relay":
            relay = NodeProcess("relay", peer=server.address, lanes=lanes, seed=seed).start()
            nodes.append(relay)
            peer = relay.address
        _, th, onto = default_predictor(lanes)
        client = PerceptionClient(peer, mode=mode, ontology=onto, thresholds=th,
                                  inject_delay_ms=inject_delay_ms, seed=seed).connect()
        yield client
    finally:
        if client is not None:
            client.close()
        for node in reversed(nodes):
            node.stop()
