"""Checksum, header codec, receive dispatch, and ICMP echo."""

import random
import struct

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinystack.buffers import GlobalBuffer
from tinystack.ip import (
    ETHERTYPE_IPV4,
    ICMP_ECHO_REPLY,
    ICMP_ECHO_REQUEST,
    PROTO_ICMP,
    PROTO_TCP,
    Delivery,
    DropReason,
    IpConfig,
    IpLayer,
    fill_packet,
    format_ipv4,
    internet_checksum,
    pack_icmp_echo,
    pack_ip_header,
    parse_ip_header,
    parse_ipv4,
)


def reference_checksum(data: bytes) -> int:
    """Independent oracle: word-at-a-time 32-bit accumulator, folded at the end."""
    acc = 0
    for i in range(0, len(data) - 1, 2):
        acc += (data[i] << 8) | data[i + 1]
    if len(data) % 2:
        acc += data[-1] << 8
    while acc >> 16:
        acc = (acc & 0xFFFF) + (acc >> 16)
    return ~acc & 0xFFFF


def make_layer(addr="10.0.0.2"):
    sent = []
    layer = IpLayer(
        IpConfig(parse_ipv4(addr)), transmit=lambda dst, hdr, pl: sent.append((dst, hdr, pl))
    )
    return layer, sent


def make_frame(header: bytes, payload: bytes = b"") -> GlobalBuffer:
    g = GlobalBuffer()
    g.load(bytes(14) + header + payload)
    return g


# -- checksum -------------------------------------------------------------------


def test_checksum_of_zeros_is_all_ones():
    assert internet_checksum(b"\x00" * 20) == 0xFFFF


def test_checksum_fixture():
    data = bytes.fromhex("0001f203f4f5f6f7")
    assert reference_checksum(data) == 0x220D  # oracle agrees with the frozen value
    assert internet_checksum(data) == 0x220D


def test_checksum_self_verification_identity():
    rng = random.Random(4)
    for _ in range(200):
        hdr = bytearray(rng.randbytes(20))
        hdr[10:12] = b"\x00\x00"
        ck = internet_checksum(bytes(hdr))
        hdr[10:12] = struct.pack("!H", ck)
        assert internet_checksum(bytes(hdr)) == 0


@settings(deadline=None, max_examples=300)
@given(st.binary(min_size=0, max_size=1500))
def test_checksum_matches_reference_oracle(data):
    assert internet_checksum(data) == reference_checksum(data)


# -- header codec ------------------------------------------------------------------


def test_first_byte_is_fixed_version_ihl():
    hdr = pack_ip_header(
        src=parse_ipv4("10.0.0.1"), dst=parse_ipv4("10.0.0.2"),
        protocol=6, payload_len=0, ttl=64, identification=0,
    )
    assert hdr[0] == 0x45


def test_total_length_counts_header_plus_payload():
    hdr = pack_ip_header(
        src=1, dst=2, protocol=6, payload_len=20, ttl=64, identification=0
    )
    assert struct.unpack_from("!H", hdr, 2)[0] == 40


def test_reference_header_assembly():
    # hand-assembled twin with the oracle checksum spliced in
    expected = bytearray(
        struct.pack(
            "!BBHHHBBHII",
            0x45, 0, 40, 0, 0x4000, 64, 6, 0,
            parse_ipv4("10.0.0.1"), parse_ipv4("10.0.0.2"),
        )
    )
    ck = reference_checksum(bytes(expected))
    expected[10:12] = struct.pack("!H", ck)

    hdr = pack_ip_header(
        src=parse_ipv4("10.0.0.1"), dst=parse_ipv4("10.0.0.2"),
        protocol=6, payload_len=20, ttl=64, identification=0,
    )
    assert hdr == bytes(expected)
    assert internet_checksum(hdr) == 0


def test_identification_counts_up_from_zero():
    layer, sent = make_layer("10.0.0.1")
    for expected in (0, 1, 2):
        layer.send(parse_ipv4("10.0.0.2"), PROTO_TCP, b"x")
        assert parse_ip_header(sent[-1][1]).identification == expected


def test_configured_ttl_is_emitted():
    sent = []
    layer = IpLayer(
        IpConfig(parse_ipv4("10.0.0.1"), default_ttl=17),
        transmit=lambda dst, hdr, pl: sent.append(hdr),
    )
    layer.send(parse_ipv4("10.0.0.2"), PROTO_TCP, b"")
    assert parse_ip_header(sent[0]).ttl == 17


def test_zero_local_address_rejected():
    with pytest.raises(ValueError):
        IpLayer(IpConfig(0), transmit=lambda *a: None)


def test_oversize_payload_rejected():
    with pytest.raises(ValueError):
        pack_ip_header(src=1, dst=2, protocol=6, payload_len=1481, ttl=64, identification=0)


@settings(deadline=None, max_examples=200)
@given(
    src=st.integers(1, 2**32 - 1),
    dst=st.integers(1, 2**32 - 1),
    proto=st.sampled_from([1, 6]),
    payload_len=st.integers(0, 1480),
    ttl=st.integers(1, 255),
    ident=st.integers(0, 0xFFFF),
)
def test_header_roundtrip(src, dst, proto, payload_len, ttl, ident):
    raw = pack_ip_header(
        src=src, dst=dst, protocol=proto, payload_len=payload_len, ttl=ttl, identification=ident
    )
    hdr = parse_ip_header(raw)
    assert (hdr.src, hdr.dst, hdr.protocol, hdr.ttl, hdr.identification) == (
        src, dst, proto, ttl, ident
    )
    assert hdr.total_length == 20 + payload_len
    assert internet_checksum(raw) == 0


def test_address_text_roundtrip():
    assert format_ipv4(parse_ipv4("10.1.2.3")) == "10.1.2.3"
    with pytest.raises(ValueError):
        parse_ipv4("10.0.0")
    with pytest.raises(ValueError):
        parse_ipv4("10.0.0.256")


# -- frame assembly -----------------------------------------------------------


def test_fill_packet_layout_and_length():
    g = GlobalBuffer()
    hdr = pack_ip_header(src=1, dst=2, protocol=6, payload_len=0, ttl=64, identification=0)
    fill_packet(g, hdr, b"")
    assert g.len == 34
    fill_packet(g, pack_ip_header(src=1, dst=2, protocol=6, payload_len=1480, ttl=64,
                                  identification=0), b"z" * 1480)
    assert g.len == 1514


def test_fill_packet_overflow():
    g = GlobalBuffer()
    hdr = bytes(20)
    with pytest.raises(ValueError):
        fill_packet(g, hdr, b"z" * 1481)


# -- receive dispatch ------------------------------------------------------------


def packet_for(layer, proto=PROTO_TCP, payload=b"\x00" * 20, src="10.0.0.1", dst=None):
    dst_addr = layer.config.local_addr if dst is None else parse_ipv4(dst)
    hdr = pack_ip_header(
        src=parse_ipv4(src), dst=dst_addr, protocol=proto,
        payload_len=len(payload), ttl=64, identification=0,
    )
    return make_frame(hdr, payload)


class TcpSink:
    def __init__(self):
        self.calls = []

    def handle_segment(self, src, view):
        self.calls.append((src, view.tobytes()))


def test_tcp_packet_dispatches_to_tcp():
    layer, _ = make_layer()
    sink = TcpSink()
    layer.bind_tcp(sink)
    d = layer.handle_frame(packet_for(layer))
    assert d.delivered is Delivery.TCP
    assert len(sink.calls) == 1


def test_every_single_bit_flip_in_header_reports_bad_checksum():
    layer, _ = make_layer()
    g = packet_for(layer)
    original = g.tobytes()
    for bit in range(20 * 8):
        corrupted = bytearray(original)
        corrupted[14 + bit // 8] ^= 1 << (bit % 8)
        g.load(bytes(corrupted))
        d = layer.handle_frame(g)
        assert d.dropped and d.reason is DropReason.BAD_CHECKSUM


def test_packet_for_someone_else_dropped():
    layer, _ = make_layer()
    d = layer.handle_frame(packet_for(layer, dst="10.0.0.9"))
    assert d.reason is DropReason.NOT_FOR_US


def test_bad_version_with_valid_checksum():
    layer, _ = make_layer()
    g = packet_for(layer)
    raw = bytearray(g.tobytes())
    raw[14] = 0x46  # IHL 6: not supported
    raw[24:26] = b"\x00\x00"
    ck = internet_checksum(bytes(raw[14:34]))
    raw[24:26] = struct.pack("!H", ck)
    g.load(bytes(raw))
    d = layer.handle_frame(g)
    assert d.reason is DropReason.BAD_VERSION


def test_unknown_protocol_dropped():
    layer, _ = make_layer()
    d = layer.handle_frame(packet_for(layer, proto=17))
    assert d.reason is DropReason.UNKNOWN_PROTO


def test_runt_ip_frame_dropped():
    layer, _ = make_layer()
    g = GlobalBuffer()
    g.load(bytes(20))
    assert layer.handle_frame(g).reason is DropReason.TRUNCATED


def test_handler_is_total_on_garbage(subtests=None):
    layer, _ = make_layer()
    sinkless_rng = random.Random(11)
    g = GlobalBuffer()
    for _ in range(500):
        g.load(sinkless_rng.randbytes(sinkless_rng.randrange(14, 200)))
        d = layer.handle_frame(g)  # must never raise
        assert d.dropped or d.delivered is not None


# -- ICMP echo ----------------------------------------------------------------------


def test_echo_request_generates_identical_reply():
    layer, sent = make_layer()
    msg = pack_icmp_echo(ICMP_ECHO_REQUEST, ident=1, seq=1, payload=b"abc")
    d = layer.handle_frame(packet_for(layer, proto=PROTO_ICMP, payload=msg))
    assert d.delivered is Delivery.ICMP
    assert len(sent) == 1
    _dst, _hdr, reply = sent[0]
    assert reply == pack_icmp_echo(ICMP_ECHO_REPLY, ident=1, seq=1, payload=b"abc")
    assert internet_checksum(reply) == 0


def test_echo_reply_is_recorded_not_reechoed():
    layer, sent = make_layer()
    msg = pack_icmp_echo(ICMP_ECHO_REPLY, ident=1, seq=9, payload=b"pong")
    layer.handle_frame(packet_for(layer, proto=PROTO_ICMP, payload=msg))
    assert sent == []
    assert layer.echo_replies[0].seq == 9
    assert layer.echo_replies[0].payload == b"pong"


def test_truncated_icmp_dropped():
    layer, _ = make_layer()
    d = layer.handle_frame(packet_for(layer, proto=PROTO_ICMP, payload=b"\x08" * 7))
    assert d.reason is DropReason.ICMP_TRUNCATED


def test_corrupt_icmp_checksum_dropped():
    layer, _ = make_layer()
    msg = bytearray(pack_icmp_echo(ICMP_ECHO_REQUEST, 1, 1, b"abc"))
    msg[-1] ^= 0xFF
    d = layer.handle_frame(packet_for(layer, proto=PROTO_ICMP, payload=bytes(msg)))
    assert d.reason is DropReason.ICMP_BAD_CHECKSUM
