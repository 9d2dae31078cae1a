"""Shared rigs: a wired two-node setup and small stubs for layer tests."""

from __future__ import annotations

from types import SimpleNamespace

import pytest

from tinystack.buffers import GlobalBuffer
from tinystack.netdev import VirtualLink
from tinystack.stack import StackNode
from tinystack.timers import Clock

ADDR_A, MAC_A = "10.0.0.1", "02:00:00:00:00:01"
ADDR_B, MAC_B = "10.0.0.2", "02:00:00:00:00:02"


class TwoNodeRig:
    """Two stacks on one link, stepped with the same loop the simulator uses."""

    def __init__(self, *, seed=1, loss=0.0, dup=0.0, delay=0, force_drop=(), **tcp_options):
        self.clock = Clock()
        self.link = VirtualLink(
            seed=seed, loss_rate=loss, duplicate_rate=dup, delay=delay, force_drop=force_drop
        )
        self.a = StackNode(
            "a", addr=ADDR_A, mac=MAC_A, clock=self.clock, link=self.link,
            seed=seed + 1, neighbors={ADDR_B: MAC_B}, **tcp_options,
        )
        self.b = StackNode(
            "b", addr=ADDR_B, mac=MAC_B, clock=self.clock, link=self.link,
            seed=seed + 2, neighbors={ADDR_A: MAC_A}, **tcp_options,
        )
        self.nodes = (self.a, self.b)

    def tick(self) -> None:
        self.link.step(self.clock)
        for node in self.nodes:
            node.poll()
            node.step_timers()
            node.run_threads()
        self.clock.advance(1)

    def spin(self, ticks: int) -> None:
        for _ in range(ticks):
            self.tick()

    def spin_until(self, condition, limit: int = 5000) -> None:
        for _ in range(limit):
            if condition():
                return
            self.tick()
        raise AssertionError(f"condition not reached within {limit} ticks")


@pytest.fixture
def rig():
    return TwoNodeRig()


class StubIp:
    """Collects datagrams a TcpLayer tries to emit."""

    def __init__(self, local_addr: int):
        self.config = SimpleNamespace(local_addr=local_addr, neighbors={})
        self.sent = []

    def send(self, dst, proto, payload):
        self.sent.append((dst, proto, bytes(payload)))


def segment_view(data: bytes):
    """Wrap raw segment bytes the way the IP layer hands them to TCP."""
    g = GlobalBuffer()
    g.load(data)
    return g.view()
