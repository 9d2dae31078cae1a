"""Socket layer: a connection endpoint bound to one protothread.

Every verb that can wait (connect, listen, send, recv, end) blocks only the
socket's own thread, by parking it at a labelled point; the event loop keeps
resuming until the condition holds.  Bodies therefore read sequentially but
must follow the protothread authoring rules — each verb takes the label
where it lives in the body (connect/listen/recv span 2 labels, send 3,
end 5).

recv returns a zero-copy view of the frame buffer plus its epoch; the body
must read or copy it before its next blocking point, and the act of
receiving releases the deferred ACK that lets the peer transmit again.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from types import SimpleNamespace
from typing import TYPE_CHECKING, Callable, Optional

from .buffers import BufferView
from .errors import AddrInUseError, NoSlotError
from .protothread import Protothread, PtStatus, resume
from .tcp import EventKind, Tcb, TcpEvent, TcpFlags, TcpState

if TYPE_CHECKING:
    from .stack import StackNode


class SocketState(enum.Enum):
    FRESH = "Fresh"
    ACTIVE = "Active"
    ENDED = "Ended"


class Outcome(enum.Enum):
    CONNECTED = "connected"
    ABORTED = "aborted"
    TIMED_OUT = "timed-out"
    ADDR_IN_USE = "addr-in-use"
    NO_SLOT = "no-slot"


@dataclass(frozen=True)
class RecvResult:
    """data is None at end-of-stream (eof) or on a reset/timeout (error)."""

    data: Optional[BufferView]
    length: int
    eof: bool = False
    error: Optional[Outcome] = None


class Socket:
    """Endpoint owning a Tcb slot and the protothread that drives it."""

    def __init__(self, node: "StackNode", body: Callable, name: str = ""):
        self.node = node
        self.body = body
        self.name = name
        self.thread = Protothread()
        self.env = SimpleNamespace()  # body-owned persistent locals
        self.tcb: Optional[Tcb] = self.node.tcp.reserve()  # NoSlotError propagates
        self.tcb.sink = self.apply_event
        self.state = SocketState.FRESH
        # event-derived conditions the verbs wait on
        self._conn_outcome: Optional[Outcome] = None
        self._send_done = False
        self._recv_result: Optional[RecvResult] = None
        self.rx_ready = False
        self.rx_view: Optional[BufferView] = None
        self.rx_len = 0
        self.remote_closed = False
        self.aborted = False
        self.timed_out = False
        self.acks_seen = 0
        self.events_seen = 0

    # -- event application (wired as the Tcb's eager sink) -------------------

    def apply_event(self, ev: TcpEvent) -> None:
        self.events_seen += 1
        if ev.kind is EventKind.CONNECTED:
            self._conn_outcome = Outcome.CONNECTED
        elif ev.kind is EventKind.DATA_ARRIVED:
            self.rx_ready = True
            self.rx_view = ev.data
            self.rx_len = ev.length
        elif ev.kind is EventKind.ACKED_SENT:
            self._send_done = True
            self.acks_seen += 1
        elif ev.kind is EventKind.REMOTE_CLOSED:
            self.remote_closed = True
        elif ev.kind is EventKind.ABORTED:
            self.aborted = True
            if self._conn_outcome is None:
                self._conn_outcome = Outcome.ABORTED
        elif ev.kind is EventKind.TIMED_OUT:
            self.timed_out = True
            if self._conn_outcome is None:
                self._conn_outcome = Outcome.TIMED_OUT

    # -- blocking verbs (body-side) ------------------------------------------

    def connect(self, addr: int, port: int, *, at: int = 0) -> Outcome:
        pt = self.thread
        if pt.section(at):
            try:
                self.node.tcp.connect(addr, port, tcb=self.tcb)
                self.state = SocketState.ACTIVE
            except NoSlotError:
                self._conn_outcome = Outcome.NO_SLOT
        pt.wait_until(at + 1, lambda: self._conn_outcome is not None)
        return self._conn_outcome

    def listen(self, port: int, *, at: int = 0) -> Outcome:
        pt = self.thread
        if pt.section(at):
            try:
                self.node.tcp.listen(port, tcb=self.tcb)
                self.state = SocketState.ACTIVE
            except AddrInUseError:
                self._conn_outcome = Outcome.ADDR_IN_USE
        pt.wait_until(at + 1, lambda: self._conn_outcome is not None)
        return self._conn_outcome

    def send(self, data: bytes, *, at: int) -> Optional[int]:
        """Blocks until the segment is acknowledged; None on failure."""
        pt = self.thread
        pt.wait_until(at, lambda: self._failed() or self.tcb.inflight is None)
        if pt.section(at + 1):
            if not self._failed():
                self._send_done = False
                self.node.tcp.tx(self.tcb, TcpFlags.ACK, data)
        pt.wait_until(at + 2, lambda: self._send_done or self._failed())
        if self._failed():
            return None
        return len(data)

    def recv(self, *, at: int) -> RecvResult:
        """Blocks until data, end-of-stream, or failure; consuming data ACKs it."""
        pt = self.thread
        pt.wait_until(at, lambda: self.rx_ready or self.remote_closed or self._failed())
        if pt.section(at + 1):
            if self.rx_ready:
                view, n = self.rx_view, self.rx_len
                self.rx_ready = False
                self.rx_view = None
                self._recv_result = RecvResult(view, n)
                self.node.tcp.consume(self.tcb)
            elif self.remote_closed:
                self._recv_result = RecvResult(None, 0, eof=True)
            else:
                err = Outcome.TIMED_OUT if self.timed_out else Outcome.ABORTED
                self._recv_result = RecvResult(None, 0, error=err)
        return self._recv_result

    def end(self, *, at: int) -> None:
        """Graceful close: FIN handshake when connected, then slot release."""
        pt = self.thread
        pt.wait_until(at, lambda: self._gone() or self.tcb.inflight is None)
        if pt.section(at + 1):
            if not self._gone() and self.tcb.state in (TcpState.ESTABLISHED, TcpState.CLOSE_WAIT):
                self.node.tcp.send_fin(self.tcb)
        pt.wait_until(at + 2, lambda: self._gone())
        if pt.section(at + 3):
            self.release()

    def release(self) -> None:
        """Immediate local teardown; no wire traffic.  Idempotent."""
        if self.tcb is not None and self.state is not SocketState.ENDED:
            self.node.tcp.release(self.tcb)
        self.state = SocketState.ENDED

    # -- predicates ------------------------------------------------------------

    def _failed(self) -> bool:
        return self.aborted or self.timed_out

    def _gone(self) -> bool:
        """Connection fully torn down (or it never reached the wire)."""
        if self._failed():
            return True
        if self.tcb.state in (TcpState.CLOSED, TcpState.LISTEN):
            return True
        return self.node.tcp.slots[self.tcb.slot] is not self.tcb


class SocketManager:
    """Per-node registry; resumes every live socket body once per loop step."""

    def __init__(self, node: "StackNode"):
        self.node = node
        self.sockets: list[Socket] = []

    def begin(self, body: Callable, name: str = "") -> Socket:
        sock = Socket(self.node, body, name)
        self.sockets.append(sock)
        return sock

    def step(self) -> None:
        for sock in self.sockets:
            if sock.tcb is not None:
                sock.tcb.take_event()  # events were absorbed eagerly; clear the slot
            if sock.thread.status is not PtStatus.EXITED:
                resume(sock.thread, sock.body, sock)
                if sock.thread.status is PtStatus.EXITED and sock.state is not SocketState.ENDED:
                    sock.release()  # bodies that fall off the end still free their slot

    def all_exited(self) -> bool:
        return all(s.thread.status is PtStatus.EXITED for s in self.sockets)
