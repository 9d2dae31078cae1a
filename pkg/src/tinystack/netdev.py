"""Simulated register-mapped Ethernet controller, its driver surface, and
the seeded two-node medium that joins a pair of them.

The device models the smallest register file that exercises the driver
verbs: 16 eight-bit registers, a 1-frame receive buffer (overrun keeps the
newest frame), and separate tx/rx memories standing in for DMA regions.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

from .buffers import MTU, GlobalBuffer
from .errors import (
    FrameSizeError,
    InvalidRegisterError,
    NotReadyError,
    ReadOnlyRegisterError,
)
from .rng import SplitMix64
from .timers import Clock

# register map
REG_CTRL = 0
REG_STATUS = 1
REG_TXLEN_LO = 2
REG_TXLEN_HI = 3
REG_RXLEN_LO = 4
REG_RXLEN_HI = 5
REG_IRQ = 6
NUM_REGS = 16
_DEFINED_REGS = frozenset(range(REG_IRQ + 1))

STATUS_INITIALIZED = 0x01
STATUS_RX_PENDING = 0x02

ETH_HEADER_LEN = 14
MIN_FRAME = 14
BROADCAST_MAC = b"\xff" * 6

_ETH_HDR = struct.Struct("!6s6sH")


class DevStatus(enum.Enum):
    READY = "ready"
    NOT_ATTACHED = "not-attached"


@dataclass(frozen=True)
class Frame:
    """Ethernet II frame: dst(6) src(6) ethertype(2, big-endian) payload."""

    dst: bytes
    src: bytes
    ethertype: int
    payload: bytes

    def pack(self) -> bytes:
        raw = _ETH_HDR.pack(self.dst, self.src, self.ethertype) + self.payload
        if not MIN_FRAME <= len(raw) <= MTU:
            raise FrameSizeError(f"frame of {len(raw)} B outside {MIN_FRAME}..{MTU}")
        return raw

    @classmethod
    def parse(cls, raw: bytes) -> "Frame":
        if not MIN_FRAME <= len(raw) <= MTU:
            raise FrameSizeError(f"frame of {len(raw)} B outside {MIN_FRAME}..{MTU}")
        dst, src, ethertype = _ETH_HDR.unpack_from(raw)
        return cls(dst, src, ethertype, bytes(raw[ETH_HEADER_LEN:]))


class RegisterFile:
    """16 x 8-bit registers.  STATUS is device-owned; 7..15 are reserved."""

    def __init__(self):
        self._regs = bytearray(NUM_REGS)

    def read(self, addr: int) -> int:
        if not 0 <= addr < NUM_REGS:
            raise InvalidRegisterError(f"register {addr} out of range")
        if addr not in _DEFINED_REGS:
            return 0  # reserved registers always read as zero
        return self._regs[addr]

    def write(self, addr: int, value: int) -> None:
        if not 0 <= addr < NUM_REGS:
            raise InvalidRegisterError(f"register {addr} out of range")
        if addr == REG_STATUS:
            raise ReadOnlyRegisterError("STATUS is read-only")
        if addr in _DEFINED_REGS:
            self._regs[addr] = value & 0xFF

    def clear(self) -> None:
        self._regs = bytearray(NUM_REGS)

    # device-side mutation, not reachable through write()
    def _set_status(self, bit: int, on: bool) -> None:
        if on:
            self._regs[REG_STATUS] |= bit
        else:
            self._regs[REG_STATUS] &= ~bit & 0xFF


class SimulatedNic:
    """Register-file Ethernet controller with a depth-1 receive buffer."""

    def __init__(self, mac: bytes, clock: Clock):
        if len(mac) != 6:
            raise ValueError("MAC must be 6 bytes")
        self.mac = bytes(mac)
        self.clock = clock
        self.regs = RegisterFile()
        self.tx_memory = bytearray(MTU)
        self.rx_memory = bytearray(MTU)
        self._rx_len = 0
        self._link: Optional[VirtualLink] = None
        self._port = -1
        self.overruns = 0
        self.trace: Optional[Callable[[str], None]] = None  # send-pipeline probe

    # -- direct hardware access -----------------------------------------

    def hard_reset(self) -> None:
        self.regs.clear()
        self.tx_memory = bytearray(MTU)
        self.rx_memory = bytearray(MTU)
        self._rx_len = 0  # pending frame, if any, is gone

    def read_register(self, addr: int) -> int:
        return self.regs.read(addr)

    def write_register(self, addr: int, value: int) -> None:
        self.regs.write(addr, value)

    # -- init / data transfer --------------------------------------------

    def init(self) -> DevStatus:
        if self._link is None:
            return DevStatus.NOT_ATTACHED
        self.regs._set_status(STATUS_INITIALIZED, True)
        return DevStatus.READY

    @property
    def initialized(self) -> bool:
        return bool(self.regs.read(REG_STATUS) & STATUS_INITIALIZED)

    def send(self, g: GlobalBuffer) -> None:
        """Three modeled steps, in order: length registers, DMA copy, transfer."""
        if not self.initialized:
            raise NotReadyError("device not initialized")
        if not MIN_FRAME <= g.len <= MTU:
            raise FrameSizeError(f"frame of {g.len} B outside {MIN_FRAME}..{MTU}")
        self.regs.write(REG_TXLEN_LO, g.len & 0xFF)
        self.regs.write(REG_TXLEN_HI, g.len >> 8)
        if self.trace:
            self.trace("txlen")
        data = g.tobytes()
        self.tx_memory[: len(data)] = data
        if self.trace:
            self.trace("dma-copy")
        self._link.transmit(self._port, data, self.clock.now)
        if self.trace:
            self.trace("transfer")

    def poll(self, g: GlobalBuffer) -> bool:
        """Move a pending frame into the global buffer; False when idle."""
        if not self.initialized:
            raise NotReadyError("device not initialized")
        if not self.regs.read(REG_STATUS) & STATUS_RX_PENDING:
            return False
        g.load(self.rx_memory[: self._rx_len])
        self.regs.write(REG_RXLEN_LO, self._rx_len & 0xFF)
        self.regs.write(REG_RXLEN_HI, self._rx_len >> 8)
        self.regs._set_status(STATUS_RX_PENDING, False)  # slot released
        return True

    # link-side delivery
    def _deliver(self, data: bytes) -> None:
        if self.regs.read(REG_STATUS) & STATUS_RX_PENDING:
            self.overruns += 1  # depth-1 buffer: newest frame wins
        self.rx_memory[: len(data)] = data
        self._rx_len = len(data)
        self.regs._set_status(STATUS_RX_PENDING, True)


@dataclass
class WireRecord:
    """One transmission as seen at the sender-side capture tap."""

    tick: int
    ordinal: int  # 1-based transmit count
    data: bytes
    fate: str  # "sent", "lost", "forced-drop", "sent+dup"


@dataclass
class _InFlight:
    due: int
    order: int
    dest_port: int
    data: bytes


class VirtualLink:
    """Seeded lossy/delaying medium between exactly two controllers.

    Per transmitted frame the generator is drawn as follows: one float for
    the loss decision; if the frame survives, one more float for the
    duplicate decision (drawn even when duplicate_rate is 0, so toggling
    duplication never shifts the loss schedule).  Frames named in
    force_drop are discarded without consuming any draws.  Duplicate
    copies are queued right behind the original and are never re-dropped.

    The medium serializes: step() hands each port at most one due frame,
    oldest first; anything else stays in flight until a later tick.  This
    keeps the depth-1 receive buffer of a promptly polled controller from
    overrunning on back-to-back transmissions.
    """

    def __init__(
        self,
        *,
        seed: int = 0,
        loss_rate: float = 0.0,
        duplicate_rate: float = 0.0,
        delay: int = 0,
        force_drop: tuple = (),
    ):
        if not 0.0 <= loss_rate <= 1.0 or not 0.0 <= duplicate_rate <= 1.0:
            raise ValueError("rates must be within [0, 1]")
        if delay < 0:
            raise ValueError("delay must be >= 0")
        self.loss_rate = loss_rate
        self.duplicate_rate = duplicate_rate
        self.delay = delay
        self.force_drop = frozenset(force_drop)
        self._rng = SplitMix64(seed)
        self._ports: list[Optional[SimulatedNic]] = [None, None]
        self._in_flight: list[_InFlight] = []
        self._order = 0
        self.transcript: list[WireRecord] = []
        # accounting
        self.frames_sent = 0
        self.frames_dropped = 0
        self.frames_delivered = 0
        self.frames_duplicated = 0

    def attach(self, nic: SimulatedNic) -> int:
        for port in (0, 1):
            if self._ports[port] is None:
                self._ports[port] = nic
                nic._link = self
                nic._port = port
                return port
        raise ValueError("link already has two endpoints")

    def transmit(self, port: int, data: bytes, now: int) -> None:
        self.frames_sent += 1
        ordinal = self.frames_sent
        if ordinal in self.force_drop:
            self.frames_dropped += 1
            self.transcript.append(WireRecord(now, ordinal, bytes(data), "forced-drop"))
            return
        if self._rng.random() < self.loss_rate:
            self.frames_dropped += 1
            self.transcript.append(WireRecord(now, ordinal, bytes(data), "lost"))
            return
        duplicated = self._rng.random() < self.duplicate_rate
        fate = "sent+dup" if duplicated else "sent"
        self.transcript.append(WireRecord(now, ordinal, bytes(data), fate))
        dest = 1 - port
        self._enqueue(now, dest, data)
        if duplicated:
            self.frames_duplicated += 1
            self._enqueue(now, dest, data)

    def _enqueue(self, now: int, dest: int, data: bytes) -> None:
        self._order += 1
        self._in_flight.append(_InFlight(now + self.delay, self._order, dest, bytes(data)))

    def step(self, clock: Clock) -> None:
        """Deliver, per port, the oldest frame that is due by the current tick."""
        for port in (0, 1):
            best = None
            for f in self._in_flight:
                if f.dest_port != port or f.due > clock.now:
                    continue
                if best is None or (f.due, f.order) < (best.due, best.order):
                    best = f
            if best is None:
                continue
            self._in_flight.remove(best)
            nic = self._ports[port]
            if nic is not None:
                nic._deliver(best.data)
            self.frames_delivered += 1

    @property
    def in_flight_count(self) -> int:
        return len(self._in_flight)
