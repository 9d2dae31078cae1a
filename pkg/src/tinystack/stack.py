"""One stack instance: NIC + frame buffers + IP + TCP + sockets, wired to a
link and driven by the harness event loop.

Each node owns two frame buffers — the receive buffer the driver fills on
poll, and a transmit scratch buffer for assembling outgoing frames (replies
are emitted while the received frame is still being processed, so they
cannot share one buffer) — plus a small block pool for retransmit copies
and application snapshots.
"""

from __future__ import annotations

import struct
from types import SimpleNamespace
from typing import Callable, Optional

from .buffers import MTU, BlockPool, GlobalBuffer
from .ip import (
    ETHERTYPE_IPV4,
    Disposition,
    DropReason,
    IpConfig,
    IpLayer,
    fill_packet,
    parse_ipv4,
)
from .netdev import BROADCAST_MAC, ETH_HEADER_LEN, SimulatedNic, VirtualLink
from .protothread import Protothread, PtStatus, resume
from .sockets import SocketManager
from .tcp import TcpLayer
from .timers import Clock


def parse_mac(text: str) -> bytes:
    parts = text.split(":")
    if len(parts) != 6:
        raise ValueError(f"bad MAC address {text!r}")
    return bytes(int(p, 16) for p in parts)


def format_mac(mac: bytes) -> str:
    return ":".join(f"{b:02x}" for b in mac)


class StackNode:
    """A complete stack attached to one port of a virtual link."""

    def __init__(
        self,
        name: str,
        *,
        addr: str,
        mac: str,
        clock: Clock,
        link: VirtualLink,
        seed: int = 0,
        neighbors: Optional[dict[str, str]] = None,
        pool_blocks: int = 4,
        **tcp_options,
    ):
        self.name = name
        self.clock = clock
        self.addr = parse_ipv4(addr)
        self.mac = parse_mac(mac)
        self.nic = SimulatedNic(self.mac, clock)
        link.attach(self.nic)
        self.nic.init()
        self.rx_buf = GlobalBuffer()
        self.tx_buf = GlobalBuffer()
        self.pool = BlockPool(MTU, pool_blocks)
        neighbor_map = {parse_ipv4(a): parse_mac(m) for a, m in (neighbors or {}).items()}
        self.ip = IpLayer(
            IpConfig(self.addr, neighbors=neighbor_map), transmit=self._transmit
        )
        self.tcp = TcpLayer(ip=self.ip, clock=clock, pool=self.pool, seed=seed, **tcp_options)
        self.ip.bind_tcp(self.tcp)
        self.sockets = SocketManager(self)
        self.threads: list[tuple[Protothread, Callable, SimpleNamespace]] = []
        self.link_drops: dict[str, int] = {}
        self.frames_received = 0

    # -- frame output -------------------------------------------------------

    def _transmit(self, dst_addr: int, ip_header: bytes, payload: bytes) -> None:
        dst_mac = self.ip.config.neighbors.get(dst_addr)
        if dst_mac is None:
            self.link_drops["no-neighbor"] = self.link_drops.get("no-neighbor", 0) + 1
            return
        g = self.tx_buf
        fill_packet(g, ip_header, payload)
        g.write(0, struct.pack("!6s6sH", dst_mac, self.mac, ETHERTYPE_IPV4))
        self.nic.send(g)

    # -- frame input ----------------------------------------------------------

    def poll(self) -> Optional[Disposition]:
        """Driver poll; returns the disposition of a delivered frame, if any."""
        if not self.nic.poll(self.rx_buf):
            return None
        return self.handle_frame(self.rx_buf)

    def handle_frame(self, g: GlobalBuffer) -> Disposition:
        """Check the Ethernet envelope, then hand the frame to IP."""
        self.frames_received += 1
        if g.len < ETH_HEADER_LEN:
            return self.ip.count_drop(DropReason.RUNT_FRAME)
        eth = g.view(0, ETH_HEADER_LEN).tobytes()
        if eth[:6] not in (self.mac, BROADCAST_MAC):
            return self.ip.count_drop(DropReason.NOT_OUR_MAC)
        if struct.unpack_from("!H", eth, 12)[0] != ETHERTYPE_IPV4:
            return self.ip.count_drop(DropReason.NON_IPV4)
        return self.ip.handle_frame(g)

    # -- event loop hooks --------------------------------------------------------

    def step_timers(self) -> None:
        self.tcp.on_timer(self.clock)

    def add_thread(self, body: Callable) -> SimpleNamespace:
        """Register a bare driver protothread (no socket); returns its locals."""
        env = SimpleNamespace()
        self.threads.append((Protothread(), body, env))
        return env

    def run_threads(self) -> None:
        self.sockets.step()
        for pt, body, env in self.threads:
            if pt.status is not PtStatus.EXITED:
                resume(pt, body, env)

    def done(self) -> bool:
        return self.sockets.all_exited() and all(
            pt.status is PtStatus.EXITED for pt, _, _ in self.threads
        )
