"""Classic pcap reader/writer (little-endian, version 2.4, linktype Ethernet).

Timestamps map one simulator tick to one millisecond: ts_sec = tick // 1000
and ts_usec = (tick % 1000) * 1000, so tick values round-trip exactly and
the files open in any standard protocol analyzer.
"""

from __future__ import annotations

import struct
from typing import Iterable

from .errors import PcapFormatError

MAGIC = 0xA1B2C3D4
VERSION_MAJOR = 2
VERSION_MINOR = 4
SNAPLEN = 65535
LINKTYPE_ETHERNET = 1

_GLOBAL_HDR = struct.Struct("<IHHiIII")
_RECORD_HDR = struct.Struct("<IIII")


def pack_capture(records: Iterable[tuple[int, bytes]]) -> bytes:
    """Serialize (tick, frame) records into classic pcap bytes."""
    out = bytearray(
        _GLOBAL_HDR.pack(MAGIC, VERSION_MAJOR, VERSION_MINOR, 0, 0, SNAPLEN, LINKTYPE_ETHERNET)
    )
    for tick, frame in records:
        out += _RECORD_HDR.pack(tick // 1000, (tick % 1000) * 1000, len(frame), len(frame))
        out += frame
    return bytes(out)


def unpack_capture(blob: bytes) -> list[tuple[int, bytes]]:
    """Parse classic pcap bytes back into (tick, frame) records."""
    if len(blob) < _GLOBAL_HDR.size:
        raise PcapFormatError("file shorter than the global header", 0)
    magic, major, minor, _tz, _sf, _snap, linktype = _GLOBAL_HDR.unpack_from(blob)
    if magic != MAGIC:
        raise PcapFormatError(f"bad magic {magic:#010x}", 0)
    if (major, minor) != (VERSION_MAJOR, VERSION_MINOR):
        raise PcapFormatError(f"unsupported version {major}.{minor}", 4)
    if linktype != LINKTYPE_ETHERNET:
        raise PcapFormatError(f"unsupported linktype {linktype}", 20)
    records = []
    offset = _GLOBAL_HDR.size
    while offset < len(blob):
        if offset + _RECORD_HDR.size > len(blob):
            raise PcapFormatError("truncated record header", offset)
        sec, usec, incl, orig = _RECORD_HDR.unpack_from(blob, offset)
        if incl != orig:
            raise PcapFormatError("sliced records not supported", offset)
        offset += _RECORD_HDR.size
        if offset + incl > len(blob):
            raise PcapFormatError("truncated record body", offset)
        records.append((sec * 1000 + usec // 1000, bytes(blob[offset : offset + incl])))
        offset += incl
    return records


def write_pcap(path: str, records: Iterable[tuple[int, bytes]]) -> None:
    with open(path, "wb") as fh:
        fh.write(pack_capture(records))


def read_pcap(path: str) -> list[tuple[int, bytes]]:
    with open(path, "rb") as fh:
        return unpack_capture(fh.read())
