"""TCP: connection state machine, segment codec, stop-and-wait transmission,
retransmission timing, and application notification.

Flow control is stop-and-wait — at most one unacknowledged SYN, FIN, or
data segment per connection — which is what a single frame buffer per stack
can support.  The receiver defers its data ACK until the application has
consumed the delivered bytes, so the peer cannot overwrite the frame buffer
the application is still reading.

Retransmission uses binary exponential backoff from a base interval,
capped at 8x base, and gives up after a fixed retry count.  Retransmitted
segments are the stored original bytes, never re-serialized.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass
from typing import Optional

from .buffers import BlockHandle, BlockPool, BufferView
from .errors import (
    AddrInUseError,
    NoSlotError,
    NotConnectedError,
    WouldBlockError,
)
from .ip import PROTO_TCP, IpLayer, internet_checksum
from .rng import SplitMix64
from .timers import Clock, Timer

TCP_HEADER_LEN = 20
MSS_DEFAULT = 1460
EPHEMERAL_BASE = 49152

_TCP_HDR = struct.Struct("!HHIIBBHHH")
_PSEUDO = struct.Struct("!IIBBH")


class TcpFlags(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10


class TcpState(enum.Enum):
    CLOSED = "Closed"
    LISTEN = "Listen"
    SYN_SENT = "SynSent"
    SYN_RCVD = "SynRcvd"
    ESTABLISHED = "Established"
    FIN_WAIT_1 = "FinWait1"
    FIN_WAIT_2 = "FinWait2"
    CLOSING = "Closing"
    TIME_WAIT = "TimeWait"
    CLOSE_WAIT = "CloseWait"
    LAST_ACK = "LastAck"


def u32(x: int) -> int:
    return x & 0xFFFFFFFF


def seq_lt(a: int, b: int) -> bool:
    """a < b in 32-bit modular sequence space."""
    return 0 < u32(b - a) < 0x80000000


def seq_le(a: int, b: int) -> bool:
    return a == b or seq_lt(a, b)


@dataclass(frozen=True)
class TcpHeader:
    src_port: int
    dst_port: int
    seq: int
    ack: int
    data_offset: int
    flags: TcpFlags
    window: int
    checksum: int
    mss: Optional[int] = None  # from the SYN-only MSS option


def pseudo_header(src_addr: int, dst_addr: int, seg_len: int) -> bytes:
    return _PSEUDO.pack(src_addr, dst_addr, 0, PROTO_TCP, seg_len)


def pack_segment(
    *,
    src_addr: int,
    dst_addr: int,
    src_port: int,
    dst_port: int,
    seq: int,
    ack: int,
    flags: TcpFlags,
    window: int,
    payload: bytes = b"",
    mss: Optional[int] = None,
) -> bytes:
    """Serialize header (+ MSS option on SYN) + payload with a valid checksum."""
    opts = struct.pack("!BBH", 2, 4, mss) if mss is not None else b""
    offset_words = (TCP_HEADER_LEN + len(opts)) // 4
    hdr = _TCP_HDR.pack(src_port, dst_port, seq, ack, offset_words << 4, int(flags), window, 0, 0)
    seg = hdr + opts + payload
    ck = internet_checksum(pseudo_header(src_addr, dst_addr, len(seg)) + seg)
    return seg[:16] + struct.pack("!H", ck) + seg[18:]


def parse_segment(raw: bytes) -> Optional[TcpHeader]:
    """Decode a segment header; None when structurally malformed."""
    if len(raw) < TCP_HEADER_LEN:
        return None
    sp, dp, seq, ack, off_byte, flag_bits, window, ck, _urg = _TCP_HDR.unpack_from(raw)
    offset = off_byte >> 4
    if offset < 5 or offset * 4 > len(raw):
        return None
    mss = None
    i = TCP_HEADER_LEN
    end = offset * 4
    while i < end:
        kind = raw[i]
        if kind == 0:  # end of options
            break
        if kind == 1:  # no-op
            i += 1
            continue
        if i + 1 >= end:
            return None
        length = raw[i + 1]
        if length < 2 or i + length > end:
            return None
        if kind == 2 and length == 4:
            mss = struct.unpack_from("!H", raw, i + 2)[0]
        i += length  # all other options ignored
    return TcpHeader(sp, dp, seq, ack, offset, TcpFlags(flag_bits), window, ck, mss)


class EventKind(enum.Enum):
    CONNECTED = "Connected"
    DATA_ARRIVED = "DataArrived"
    ACKED_SENT = "AckedSent"
    REMOTE_CLOSED = "RemoteClosed"
    ABORTED = "Aborted"
    TIMED_OUT = "TimedOut"


@dataclass(frozen=True)
class TcpEvent:
    kind: EventKind
    length: int = 0
    data: Optional[BufferView] = None  # DataArrived carries the payload region


class Tcb:
    """Per-connection control block."""

    def __init__(self, slot: int, mss: int):
        self.slot = slot
        self.state = TcpState.CLOSED
        self.local_port = 0
        self.remote_port = 0
        self.remote_addr = 0
        self.passive = False
        self.iss = 0
        self.irs = 0
        self.snd_una = 0
        self.snd_nxt = 0
        self.rcv_nxt = 0
        self.mss = mss
        # single retransmittable segment in flight
        self.inflight: Optional[str] = None  # "syn" | "synack" | "data" | "fin"
        self.rtx_handle: Optional[BlockHandle] = None
        self.rtx_timer: Optional[Timer] = None
        self.retries = 0
        self.unacked_len = 0
        # receive side
        self.ack_pending = False  # data delivered, ACK deferred until consumed
        self.mailbox: Optional[TcpEvent] = None
        self.sink = None  # optional eager event consumer (the owning socket)
        self.linebuf = bytearray()

    def take_event(self) -> Optional[TcpEvent]:
        ev, self.mailbox = self.mailbox, None
        return ev


class TcpLayer:
    """Connection table plus the segment receive/transmit/timer machinery."""

    def __init__(
        self,
        *,
        ip: IpLayer,
        clock: Clock,
        pool: BlockPool,
        seed: int = 0,
        max_conns: int = 4,
        mss: int = MSS_DEFAULT,
        rto_base: int = 10,
        max_retries: int = 4,
        backoff_cap: int = 8,
        time_wait_ticks: int = 120,
    ):
        self.ip = ip
        self.clock = clock
        self.pool = pool  # secondary pool holding retransmit copies
        self.mss = mss
        self.rto_base = rto_base
        self.max_retries = max_retries
        self.backoff_cap = backoff_cap
        self.time_wait_ticks = time_wait_ticks
        self.slots: list[Optional[Tcb]] = [None] * max_conns
        self._iss_rng = SplitMix64(seed)
        self._next_port = EPHEMERAL_BASE
        # accounting
        self.segments_sent = 0
        self.retransmissions = 0
        self.rsts_sent = 0
        self.overruns = 0
        self.delivered_bytes = 0
        self.invariant_checks = 0
        self.drop_counts: dict[str, int] = {}

    # -- connection table --------------------------------------------------

    def reserve(self) -> Tcb:
        """Claim a free slot; connect()/listen() bind it later."""
        for i, tcb in enumerate(self.slots):
            if tcb is None:
                tcb = Tcb(i, self.mss)
                self.slots[i] = tcb
                return tcb
        raise NoSlotError(f"all {len(self.slots)} connection slots in use")

    def listen(self, port: int, tcb: Optional[Tcb] = None) -> Tcb:
        for other in self.slots:
            if other is not None and other is not tcb and other.local_port == port:
                raise AddrInUseError(f"port {port} already bound")
        tcb = tcb if tcb is not None else self.reserve()
        tcb.local_port = port
        tcb.passive = True
        tcb.state = TcpState.LISTEN
        return tcb

    def connect(self, remote_addr: int, remote_port: int, tcb: Optional[Tcb] = None) -> Tcb:
        tcb = tcb if tcb is not None else self.reserve()
        tcb.local_port = self._next_port
        self._next_port += 1
        tcb.remote_addr = remote_addr
        tcb.remote_port = remote_port
        tcb.passive = False
        tcb.iss = self._iss_rng.next_u32()
        tcb.snd_una = tcb.iss
        tcb.snd_nxt = tcb.iss
        tcb.rcv_nxt = 0
        tcb.state = TcpState.SYN_SENT
        self._emit(tcb, TcpFlags.SYN, kind="syn", consumes=1)
        return tcb

    def release(self, tcb: Tcb) -> None:
        """Local teardown: free the slot without any wire traffic."""
        self._clear_inflight(tcb)
        tcb.state = TcpState.CLOSED
        if self.slots[tcb.slot] is tcb:
            self.slots[tcb.slot] = None

    def _lookup(self, src_addr: int, src_port: int, dst_port: int) -> Optional[Tcb]:
        listener = None
        for tcb in self.slots:
            if tcb is None or tcb.local_port != dst_port:
                continue
            if (
                tcb.state is not TcpState.LISTEN
                and tcb.remote_addr == src_addr
                and tcb.remote_port == src_port
            ):
                return tcb
            if tcb.state is TcpState.LISTEN:
                listener = tcb
        return listener

    # -- transmit ------------------------------------------------------------

    def tx(self, tcb: Tcb, flags: TcpFlags, payload: bytes = b"") -> None:
        """Send one segment.  Nonempty payload requires an established,
        idle (nothing in flight) connection."""
        payload = bytes(payload)
        if len(payload) > tcb.mss:
            raise ValueError(f"payload of {len(payload)} B exceeds mss {tcb.mss}")
        if payload:
            if tcb.state is not TcpState.ESTABLISHED:
                raise NotConnectedError(f"cannot send data in {tcb.state.value}")
            if tcb.inflight is not None:
                raise WouldBlockError("one segment already awaiting ACK")
            self._emit(tcb, flags | TcpFlags.ACK, payload, kind="data", consumes=len(payload))
        else:
            self._emit(tcb, flags)

    def send_fin(self, tcb: Tcb) -> None:
        if tcb.state not in (TcpState.ESTABLISHED, TcpState.CLOSE_WAIT):
            raise NotConnectedError(f"cannot close from {tcb.state.value}")
        if tcb.inflight is not None:
            raise WouldBlockError("one segment already awaiting ACK")
        was_established = tcb.state is TcpState.ESTABLISHED
        self._emit(tcb, TcpFlags.FIN | TcpFlags.ACK, kind="fin", consumes=1)
        tcb.state = TcpState.FIN_WAIT_1 if was_established else TcpState.LAST_ACK

    def putch(self, tcb: Tcb, byte: int) -> None:
        """Buffer one byte; a full buffer (mss bytes) flushes as one segment."""
        if tcb.state is not TcpState.ESTABLISHED:
            raise NotConnectedError(f"putch in {tcb.state.value}")
        tcb.linebuf.append(byte)
        if len(tcb.linebuf) >= tcb.mss:
            self.flush(tcb)

    def flush(self, tcb: Tcb) -> None:
        if tcb.linebuf:
            data = bytes(tcb.linebuf)
            tcb.linebuf.clear()
            self.tx(tcb, TcpFlags.ACK, data)

    def consume(self, tcb: Tcb) -> None:
        """Application has taken the delivered bytes; send the deferred ACK."""
        if tcb.ack_pending:
            tcb.ack_pending = False
            self._emit(tcb, TcpFlags.ACK)

    def _emit(
        self,
        tcb: Tcb,
        flags: TcpFlags,
        payload: bytes = b"",
        *,
        seq: Optional[int] = None,
        kind: Optional[str] = None,
        consumes: int = 0,
    ) -> None:
        seg = pack_segment(
            src_addr=self.ip.config.local_addr,
            dst_addr=tcb.remote_addr,
            src_port=tcb.local_port,
            dst_port=tcb.remote_port,
            seq=seq if seq is not None else tcb.snd_nxt,
            ack=tcb.rcv_nxt if flags & TcpFlags.ACK else 0,
            flags=flags,
            window=tcb.mss,
            payload=payload,
            mss=self.mss if flags & TcpFlags.SYN else None,
        )
        if kind is not None:
            if tcb.inflight is not None:
                raise WouldBlockError("one segment already awaiting ACK")
            tcb.rtx_handle = self.pool.store(seg)
            tcb.inflight = kind
            tcb.unacked_len = len(payload)
            tcb.retries = 0
            tcb.rtx_timer = Timer(self.clock, self.rto_base)
            tcb.snd_nxt = u32(tcb.snd_nxt + consumes)
        self.segments_sent += 1
        self.ip.send(tcb.remote_addr, PROTO_TCP, seg)
        self._check(tcb)

    def _clear_inflight(self, tcb: Tcb) -> None:
        if tcb.rtx_handle is not None:
            self.pool.free(tcb.rtx_handle)
            tcb.rtx_handle = None
        if tcb.rtx_timer is not None:
            tcb.rtx_timer.cancel()
        tcb.inflight = None
        tcb.unacked_len = 0

    def _send_rst_reply(self, src_addr: int, hdr: TcpHeader, seg_len: int) -> None:
        """RST for a segment that matched no connection."""
        if hdr.flags & TcpFlags.ACK:
            seq, ack, flags = hdr.ack, 0, TcpFlags.RST
        else:
            consumed = seg_len + (1 if hdr.flags & TcpFlags.SYN else 0) + (
                1 if hdr.flags & TcpFlags.FIN else 0
            )
            seq, ack, flags = 0, u32(hdr.seq + consumed), TcpFlags.RST | TcpFlags.ACK
        seg = pack_segment(
            src_addr=self.ip.config.local_addr,
            dst_addr=src_addr,
            src_port=hdr.dst_port,
            dst_port=hdr.src_port,
            seq=seq,
            ack=ack,
            flags=flags,
            window=0,
        )
        self.rsts_sent += 1
        self.segments_sent += 1
        self.ip.send(src_addr, PROTO_TCP, seg)

    # -- receive ---------------------------------------------------------------

    def handle_segment(self, src_addr: int, seg: BufferView) -> None:
        """Verify and process one segment; bad input is counted, never raised."""
        raw = seg.tobytes()
        if len(raw) < TCP_HEADER_LEN:
            self._drop("tcp-truncated")
            return
        if internet_checksum(pseudo_header(src_addr, self.ip.config.local_addr, len(raw)) + raw) != 0:
            self._drop("tcp-bad-checksum")
            return
        hdr = parse_segment(raw)
        if hdr is None:
            self._drop("tcp-malformed")
            return
        payload_len = len(raw) - hdr.data_offset * 4
        tcb = self._lookup(src_addr, hdr.src_port, hdr.dst_port)
        if tcb is None:
            self._drop("tcp-no-connection")
            if not hdr.flags & TcpFlags.RST:
                self._send_rst_reply(src_addr, hdr, payload_len)
            return
        payload = seg.subview(hdr.data_offset * 4, payload_len)
        self._segment_arrives(tcb, src_addr, hdr, payload, payload_len)

    def _segment_arrives(
        self, tcb: Tcb, src_addr: int, hdr: TcpHeader, payload: BufferView, payload_len: int
    ) -> None:
        flags = hdr.flags

        if tcb.state is TcpState.LISTEN:
            if flags & TcpFlags.RST:
                return
            if flags & TcpFlags.ACK:
                self._send_rst_reply(src_addr, hdr, payload_len)
                return
            if flags & TcpFlags.SYN:
                tcb.remote_addr = src_addr
                tcb.remote_port = hdr.src_port
                tcb.irs = hdr.seq
                tcb.rcv_nxt = u32(hdr.seq + 1)
                if hdr.mss is not None:
                    tcb.mss = min(tcb.mss, hdr.mss)
                tcb.iss = self._iss_rng.next_u32()
                tcb.snd_una = tcb.iss
                tcb.snd_nxt = tcb.iss
                tcb.state = TcpState.SYN_RCVD
                self._emit(tcb, TcpFlags.SYN | TcpFlags.ACK, kind="synack", consumes=1)
            return

        if tcb.state is TcpState.SYN_SENT:
            if flags & TcpFlags.RST:
                if flags & TcpFlags.ACK and hdr.ack == tcb.snd_nxt:
                    self._abort(tcb, EventKind.ABORTED)
                return
            if flags & TcpFlags.SYN and flags & TcpFlags.ACK:
                if hdr.ack != tcb.snd_nxt:
                    self._send_rst_reply(src_addr, hdr, payload_len)
                    return
                tcb.irs = hdr.seq
                tcb.rcv_nxt = u32(hdr.seq + 1)
                if hdr.mss is not None:
                    tcb.mss = min(tcb.mss, hdr.mss)
                tcb.snd_una = hdr.ack
                self._clear_inflight(tcb)
                tcb.state = TcpState.ESTABLISHED
                self._emit(tcb, TcpFlags.ACK)
                self._notify(tcb, EventKind.CONNECTED)
                return
            if flags & TcpFlags.SYN:
                # simultaneous open: answer with SYN|ACK re-using our ISS
                tcb.irs = hdr.seq
                tcb.rcv_nxt = u32(hdr.seq + 1)
                if hdr.mss is not None:
                    tcb.mss = min(tcb.mss, hdr.mss)
                self._clear_inflight(tcb)
                tcb.state = TcpState.SYN_RCVD
                self._emit(tcb, TcpFlags.SYN | TcpFlags.ACK, seq=tcb.iss, kind="synack", consumes=0)
            return

        # synchronized states ------------------------------------------------

        if flags & TcpFlags.RST:
            if hdr.seq != tcb.rcv_nxt:
                self._drop("tcp-rst-bad-seq")
                return
            if tcb.state is TcpState.SYN_RCVD and tcb.passive:
                # passive open falls back to listening
                self._clear_inflight(tcb)
                tcb.remote_addr = 0
                tcb.remote_port = 0
                tcb.state = TcpState.LISTEN
                return
            self._abort(tcb, EventKind.ABORTED)
            return

        if flags & TcpFlags.SYN:
            self._drop("tcp-unexpected-syn")
            return

        acked_kind: Optional[str] = None
        if (
            flags & TcpFlags.ACK
            and tcb.inflight is not None
            and seq_lt(tcb.snd_una, hdr.ack)
            and seq_le(hdr.ack, tcb.snd_nxt)
        ):
            acked_kind = tcb.inflight
            tcb.snd_una = hdr.ack
            self._clear_inflight(tcb)
            self._check(tcb)

        if tcb.state is TcpState.SYN_RCVD:
            if acked_kind == "synack":
                tcb.state = TcpState.ESTABLISHED
                self._notify(tcb, EventKind.CONNECTED)
            elif flags & TcpFlags.ACK and hdr.ack != tcb.snd_nxt:
                self._send_rst_reply(src_addr, hdr, payload_len)
                return
        elif acked_kind == "data":
            self._notify(tcb, EventKind.ACKED_SENT)
        elif acked_kind == "fin":
            if tcb.state is TcpState.FIN_WAIT_1:
                tcb.state = TcpState.FIN_WAIT_2
            elif tcb.state is TcpState.CLOSING:
                self._enter_time_wait(tcb)
            elif tcb.state is TcpState.LAST_ACK:
                self._close_slot(tcb)
                return

        if payload_len:
            self._data_arrives(tcb, hdr, payload, payload_len)

        if flags & TcpFlags.FIN:
            self._fin_arrives(tcb, hdr, payload_len)

    def _data_arrives(self, tcb: Tcb, hdr: TcpHeader, payload: BufferView, n: int) -> None:
        if tcb.state is TcpState.ESTABLISHED:
            if hdr.seq == tcb.rcv_nxt:
                tcb.rcv_nxt = u32(tcb.rcv_nxt + n)
                tcb.ack_pending = True  # ACK goes out when the app consumes
                self.delivered_bytes += n
                self._notify(tcb, EventKind.DATA_ARRIVED, length=n, data=payload)
            elif seq_le(u32(hdr.seq + n), tcb.rcv_nxt):
                # stale duplicate: our ACK was lost; re-ACK unless one is pending
                self._drop("tcp-duplicate-data")
                if not tcb.ack_pending:
                    self._emit(tcb, TcpFlags.ACK)
            else:
                self._drop("tcp-out-of-order")
                if not tcb.ack_pending:
                    self._emit(tcb, TcpFlags.ACK)
        elif tcb.state in (TcpState.FIN_WAIT_1, TcpState.FIN_WAIT_2):
            # we are done reading: accept and discard so the peer can finish
            if hdr.seq == tcb.rcv_nxt:
                tcb.rcv_nxt = u32(tcb.rcv_nxt + n)
            self._emit(tcb, TcpFlags.ACK)
        else:
            self._drop("tcp-data-in-" + tcb.state.value.lower())

    def _fin_arrives(self, tcb: Tcb, hdr: TcpHeader, payload_len: int) -> None:
        fin_seq = u32(hdr.seq + payload_len)
        if fin_seq != tcb.rcv_nxt:
            if seq_lt(fin_seq, tcb.rcv_nxt):
                # duplicate FIN: our ACK was lost
                self._emit(tcb, TcpFlags.ACK)
                if tcb.state is TcpState.TIME_WAIT and tcb.rtx_timer is not None:
                    tcb.rtx_timer.restart(self.clock)
            return
        tcb.rcv_nxt = u32(tcb.rcv_nxt + 1)
        if tcb.state is TcpState.ESTABLISHED:
            self._emit(tcb, TcpFlags.ACK)
            tcb.state = TcpState.CLOSE_WAIT
            self._notify(tcb, EventKind.REMOTE_CLOSED)
        elif tcb.state is TcpState.FIN_WAIT_1:
            # simultaneous close: both FINs crossed
            self._emit(tcb, TcpFlags.ACK)
            tcb.state = TcpState.CLOSING
            self._notify(tcb, EventKind.REMOTE_CLOSED)
        elif tcb.state is TcpState.FIN_WAIT_2:
            self._emit(tcb, TcpFlags.ACK)
            self._enter_time_wait(tcb)
            self._notify(tcb, EventKind.REMOTE_CLOSED)
        else:
            self._drop("tcp-fin-in-" + tcb.state.value.lower())

    # -- timers ---------------------------------------------------------------

    def on_timer(self, clock: Clock) -> None:
        """Retransmit expired in-flight segments; reap TIME_WAIT connections."""
        for tcb in list(self.slots):
            if tcb is None or tcb.rtx_timer is None or not tcb.rtx_timer.armed:
                continue
            if not tcb.rtx_timer.expired(clock):
                continue
            if tcb.state is TcpState.TIME_WAIT:
                self._close_slot(tcb)
                continue
            if tcb.inflight is None:
                tcb.rtx_timer.cancel()
                continue
            if tcb.retries >= self.max_retries:
                self._abort(tcb, EventKind.TIMED_OUT)
                continue
            tcb.retries += 1
            stored = self.pool.fetch(tcb.rtx_handle)
            self.retransmissions += 1
            self.segments_sent += 1
            self.ip.send(tcb.remote_addr, PROTO_TCP, stored)
            tcb.rtx_timer.interval = self.rto_base * min(2**tcb.retries, self.backoff_cap)
            tcb.rtx_timer.restart(clock)

    # -- events / teardown ------------------------------------------------------

    def _notify(self, tcb: Tcb, kind: EventKind, length: int = 0, data=None) -> None:
        ev = TcpEvent(kind, length, data)
        if tcb.mailbox is not None:
            self.overruns += 1  # depth-1 mailbox: newest event wins
        tcb.mailbox = ev
        if tcb.sink is not None:
            tcb.sink(ev)  # sockets absorb events the moment they happen

    def _enter_time_wait(self, tcb: Tcb) -> None:
        tcb.state = TcpState.TIME_WAIT
        tcb.rtx_timer = Timer(self.clock, self.time_wait_ticks)

    def _abort(self, tcb: Tcb, kind: EventKind) -> None:
        self._clear_inflight(tcb)
        tcb.state = TcpState.CLOSED
        if self.slots[tcb.slot] is tcb:
            self.slots[tcb.slot] = None
        self._notify(tcb, kind)

    def _close_slot(self, tcb: Tcb) -> None:
        self._clear_inflight(tcb)
        tcb.state = TcpState.CLOSED
        if self.slots[tcb.slot] is tcb:
            self.slots[tcb.slot] = None

    def _drop(self, reason: str) -> None:
        self.drop_counts[reason] = self.drop_counts.get(reason, 0) + 1

    def _check(self, tcb: Tcb) -> None:
        # stop-and-wait bookkeeping: outstanding sequence space matches the
        # single in-flight segment exactly
        self.invariant_checks += 1
        expected = tcb.unacked_len + (1 if tcb.inflight in ("syn", "synack", "fin") else 0)
        assert u32(tcb.snd_nxt - tcb.snd_una) == expected, (
            f"sequence window {u32(tcb.snd_nxt - tcb.snd_una)} != in-flight {expected}"
        )
