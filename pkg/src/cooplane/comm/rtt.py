"""Round-trip echo probes and the RTT/2 one-way estimate."""

from __future__ import annotations

import csv
import socket
import statistics
import time
from dataclasses import dataclass, field
from typing import Optional

from ..errors import InputError, LinkUnusable
from .codec import ECHO, ECHO_REPLY, read_message
from .link import Link, connect


@dataclass
class LinkStats:
    rtt_ms: list = field(default_factory=list)
    drops: int = 0

    @property
    def one_way_ms(self) -> float:
        """Median RTT halved. Asymmetric links are averaged, not resolved."""
        if not self.rtt_ms:
            raise LinkUnusable("no successful probes")
        return statistics.median(self.rtt_ms) / 2.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["probe", "rtt_ms"])
            for i, r in enumerate(self.rtt_ms):
                w.writerow([i, repr(r)])
            w.writerow(["drops", self.drops])
            w.writerow(["one_way_ms", repr(self.one_way_ms) if self.rtt_ms else ""])


def measure_rtt(peer, n: int = 50, timeout: float = 1.0, inject_delay_ms: float = 0.0,
                drop_prob: float = 0.0, seed: Optional[int] = None, gap_s: float = 0.0) -> LinkStats:
    """Send ``n`` ECHO probes one at a time and time each ECHO_REPLY.

    RTT is measured on this process's monotonic clock. A probe without a reply
    within ``timeout`` counts as a drop; more than half dropped raises
    :class:`LinkUnusable`.
    """
    if n < 5:
        raise InputError("at least 5 probes are required")
    sock = connect(peer)
    link = Link(sock, None, inject_delay_ms, drop_prob, seed, name="rtt")
    stats = LinkStats()
    try:
        for probe in range(n):
            t0 = time.monotonic_ns()
            link.send(ECHO, {"probe": probe})
            deadline = t0 + int(timeout * 1e9)
            got = False
            while True:
                left = (deadline - time.monotonic_ns()) / 1e9
                if left <= 0:
                    break
                sock.settimeout(left)
                try:
                    msg = read_message(sock)
                except socket.timeout:
                    break
                if msg is None:
                    raise LinkUnusable("peer closed the connection")
                if msg.type == ECHO_REPLY and msg.payload["probe"] == probe:
                    got = True
                    break
            if got:
                stats.rtt_ms.append((time.monotonic_ns() - t0) / 1e6)
            else:
                stats.drops += 1
            if gap_s:
                time.sleep(gap_s)
    finally:
        link.close()
    if stats.drops * 2 > n:
        raise LinkUnusable(f"{stats.drops} of {n} probes lost")
    return stats
