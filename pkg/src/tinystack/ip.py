"""IPv4 layer: Internet checksum, 20-byte header codec, protocol dispatch,
and ICMP echo.

No options, no fragmentation: every datagram carries a fixed 20-byte header
with DF set, and oversize payloads fail loudly.  The receive handler is
total — every frame maps to a delivery or a counted drop reason, never an
exception.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Optional

from .buffers import BufferView, GlobalBuffer, MTU
from .netdev import ETH_HEADER_LEN

if TYPE_CHECKING:
    from .tcp import TcpLayer

ETHERTYPE_IPV4 = 0x0800
PROTO_ICMP = 1
PROTO_TCP = 6

IP_HEADER_LEN = 20
MAX_IP_PAYLOAD = MTU - ETH_HEADER_LEN - IP_HEADER_LEN  # 1480
FLAG_DF = 0x4000

ICMP_ECHO_REPLY = 0
ICMP_ECHO_REQUEST = 8
ICMP_HEADER_LEN = 8

_IP_HDR = struct.Struct("!BBHHHBBHII")
_ICMP_HDR = struct.Struct("!BBHHH")


def internet_checksum(data: bytes) -> int:
    """Ones'-complement of the ones'-complement sum of big-endian 16-bit words.

    Odd-length input is padded with one zero byte for summation.
    """
    if len(data) % 2:
        data = data + b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def parse_ipv4(text: str) -> int:
    parts = text.split(".")
    if len(parts) != 4 or not all(p.isdigit() and 0 <= int(p) <= 255 for p in parts):
        raise ValueError(f"bad IPv4 address {text!r}")
    a, b, c, d = (int(p) for p in parts)
    return (a << 24) | (b << 16) | (c << 8) | d


def format_ipv4(addr: int) -> str:
    return f"{addr >> 24 & 0xFF}.{addr >> 16 & 0xFF}.{addr >> 8 & 0xFF}.{addr & 0xFF}"


@dataclass(frozen=True)
class IpHeader:
    tos: int
    total_length: int
    identification: int
    flags_fragment: int
    ttl: int
    protocol: int
    checksum: int
    src: int
    dst: int


def pack_ip_header(
    *, src: int, dst: int, protocol: int, payload_len: int, ttl: int, identification: int
) -> bytes:
    """Serialize a 20-byte header, checksum computed last over the other fields."""
    if payload_len > MAX_IP_PAYLOAD:
        raise ValueError(f"payload of {payload_len} B exceeds {MAX_IP_PAYLOAD} B (no fragmentation)")
    hdr = _IP_HDR.pack(
        0x45,
        0,
        IP_HEADER_LEN + payload_len,
        identification & 0xFFFF,
        FLAG_DF,
        ttl,
        protocol,
        0,
        src,
        dst,
    )
    ck = internet_checksum(hdr)
    return hdr[:10] + struct.pack("!H", ck) + hdr[12:]


def parse_ip_header(raw: bytes) -> IpHeader:
    if len(raw) < IP_HEADER_LEN:
        raise ValueError("short IP header")
    (vi, tos, total, ident, ff, ttl, proto, ck, src, dst) = _IP_HDR.unpack_from(raw)
    if vi != 0x45:
        raise ValueError(f"version/ihl byte {vi:#04x} is not 0x45")
    return IpHeader(tos, total, ident, ff, ttl, proto, ck, src, dst)


def fill_packet(g: GlobalBuffer, header: bytes, payload: bytes) -> None:
    """Lay out [ethernet area | IP header | payload] in the frame buffer.

    The 14-byte Ethernet area is left for the caller; g.len is set to the
    full frame length.
    """
    total = ETH_HEADER_LEN + len(header) + len(payload)
    if total > MTU:
        raise ValueError(f"frame of {total} B exceeds {MTU} B")
    g.write(ETH_HEADER_LEN, header)
    g.write(ETH_HEADER_LEN + len(header), payload)
    g.set_len(total)


class DropReason(enum.Enum):
    RUNT_FRAME = "runt-frame"
    NOT_OUR_MAC = "not-our-mac"
    NON_IPV4 = "non-ipv4"
    TRUNCATED = "truncated"
    BAD_CHECKSUM = "bad-checksum"
    BAD_VERSION = "bad-version"
    BAD_LENGTH = "bad-length"
    NOT_FOR_US = "not-for-us"
    UNKNOWN_PROTO = "unknown-proto"
    ICMP_TRUNCATED = "icmp-truncated"
    ICMP_BAD_CHECKSUM = "icmp-bad-checksum"


class Delivery(enum.Enum):
    TCP = "tcp"
    ICMP = "icmp"


@dataclass(frozen=True)
class Disposition:
    """Outcome of handling one received frame: a delivery or a counted drop."""

    delivered: Optional[Delivery] = None
    reason: Optional[DropReason] = None

    @property
    def dropped(self) -> bool:
        return self.delivered is None

    def describe(self) -> str:
        if self.delivered is not None:
            return f"delivered-to-{self.delivered.value}"
        return f"dropped({self.reason.value})"


_TO_TCP = Disposition(delivered=Delivery.TCP)
_TO_ICMP = Disposition(delivered=Delivery.ICMP)


def _dropped(reason: DropReason) -> Disposition:
    return Disposition(reason=reason)


@dataclass
class IpConfig:
    local_addr: int
    default_ttl: int = 64
    neighbors: dict = field(default_factory=dict)  # addr -> MAC, static per scenario


@dataclass(frozen=True)
class EchoReply:
    src: int
    ident: int
    seq: int
    payload: bytes


def pack_icmp_echo(msg_type: int, ident: int, seq: int, payload: bytes) -> bytes:
    hdr = _ICMP_HDR.pack(msg_type, 0, 0, ident, seq)
    ck = internet_checksum(hdr + payload)
    return hdr[:2] + struct.pack("!H", ck) + hdr[4:] + payload


class IpLayer:
    """Datagram emission and the receive-side protocol dispatcher."""

    def __init__(self, config: IpConfig, transmit: Callable[[int, bytes, bytes], None]):
        if config.local_addr == 0:
            raise ValueError("local address must be nonzero")
        self.config = config
        self._transmit = transmit  # (dst_addr, ip_header, payload) -> frame out
        self.ident = 0
        self.tcp: Optional["TcpLayer"] = None
        self.drop_counts: dict[str, int] = {}
        self.echo_replies: list[EchoReply] = []
        self.echo_requests_seen = 0
        self.datagrams_sent = 0

    def bind_tcp(self, tcp: "TcpLayer") -> None:
        self.tcp = tcp

    # -- transmit ---------------------------------------------------------

    def fill_header(self, dst: int, protocol: int, payload_len: int) -> bytes:
        hdr = pack_ip_header(
            src=self.config.local_addr,
            dst=dst,
            protocol=protocol,
            payload_len=payload_len,
            ttl=self.config.default_ttl,
            identification=self.ident,
        )
        self.ident = (self.ident + 1) & 0xFFFF
        return hdr

    def send(self, dst: int, protocol: int, payload: bytes) -> None:
        header = self.fill_header(dst, protocol, len(payload))
        self.datagrams_sent += 1
        self._transmit(dst, header, payload)

    def send_echo_request(self, dst: int, ident: int, seq: int, payload: bytes) -> None:
        self.send(dst, PROTO_ICMP, pack_icmp_echo(ICMP_ECHO_REQUEST, ident, seq, payload))

    # -- receive ----------------------------------------------------------

    def handle_frame(self, g: GlobalBuffer) -> Disposition:
        """Dispatch one received frame (ethertype already verified as IPv4).

        Checksum is verified before anything else so that any single
        corrupted header bit reports as a checksum failure.
        """
        if g.len < ETH_HEADER_LEN + IP_HEADER_LEN:
            return self.count_drop(DropReason.TRUNCATED)
        raw_hdr = g.view(ETH_HEADER_LEN, IP_HEADER_LEN).tobytes()
        if internet_checksum(raw_hdr) != 0:
            return self.count_drop(DropReason.BAD_CHECKSUM)
        if raw_hdr[0] != 0x45:
            return self.count_drop(DropReason.BAD_VERSION)
        hdr = parse_ip_header(raw_hdr)
        if not IP_HEADER_LEN <= hdr.total_length <= g.len - ETH_HEADER_LEN:
            return self.count_drop(DropReason.BAD_LENGTH)
        if hdr.dst != self.config.local_addr:
            return self.count_drop(DropReason.NOT_FOR_US)
        payload = g.view(ETH_HEADER_LEN + IP_HEADER_LEN, hdr.total_length - IP_HEADER_LEN)
        if hdr.protocol == PROTO_TCP and self.tcp is not None:
            self.tcp.handle_segment(hdr.src, payload)
            return _TO_TCP
        if hdr.protocol == PROTO_ICMP:
            return self._handle_icmp(hdr.src, payload)
        return self.count_drop(DropReason.UNKNOWN_PROTO)

    def _handle_icmp(self, src: int, view: BufferView) -> Disposition:
        data = view.tobytes()
        if len(data) < ICMP_HEADER_LEN:
            return self.count_drop(DropReason.ICMP_TRUNCATED)
        if internet_checksum(data) != 0:
            return self.count_drop(DropReason.ICMP_BAD_CHECKSUM)
        msg_type, _code, _ck, ident, seq = _ICMP_HDR.unpack_from(data)
        payload = data[ICMP_HEADER_LEN:]
        if msg_type == ICMP_ECHO_REQUEST:
            self.echo_requests_seen += 1
            self.send(src, PROTO_ICMP, pack_icmp_echo(ICMP_ECHO_REPLY, ident, seq, payload))
        elif msg_type == ICMP_ECHO_REPLY:
            self.echo_replies.append(EchoReply(src, ident, seq, payload))
        # other ICMP types are accepted silently: no reply, no drop
        return _TO_ICMP

    def count_drop(self, reason: DropReason) -> Disposition:
        self.drop_counts[reason.value] = self.drop_counts.get(reason.value, 0) + 1
        return _dropped(reason)
