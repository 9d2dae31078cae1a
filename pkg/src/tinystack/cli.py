"""Command line harness.

Subcommands run canned two-node scenarios (handshake, echo, ping) or replay
a capture file through a single stack.  Exit codes: 0 on success, 1 when a
scenario does not complete (or an application check fails), 2 on usage
errors.
"""

from __future__ import annotations

import argparse
import sys
from typing import Optional

from .errors import PcapFormatError
from .netdev import VirtualLink
from .pcap import read_pcap
from .sim import (
    DEFAULT_NODE_B,
    Scenario,
    echo_scenario,
    handshake_scenario,
    ping_scenario,
    run_scenario,
)
from .stack import StackNode
from .timers import Clock


def _add_link_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=1, help="scenario seed (default 1)")
    parser.add_argument("--loss", type=float, default=0.0, help="frame loss probability")
    parser.add_argument("--dup", type=float, default=0.0, help="frame duplication probability")
    parser.add_argument("--delay", type=int, default=0, help="link delay in ticks")
    parser.add_argument("--max-ticks", type=int, default=20000, help="give up after this many ticks")
    parser.add_argument("--pcap-out", metavar="PATH", help="write the wire capture here")


def _overrides(args: argparse.Namespace) -> dict:
    return {
        "seed": args.seed,
        "loss": args.loss,
        "dup": args.dup,
        "delay": args.delay,
        "max_ticks": args.max_ticks,
        "pcap_out": args.pcap_out,
    }


def _run_and_print(sc: Scenario, label: str) -> int:
    report = run_scenario(sc, label)
    print(report.text())
    return 0 if report.success else 1


def _replay(args: argparse.Namespace) -> int:
    try:
        records = read_pcap(args.pcap)
    except (OSError, PcapFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    clock = Clock()
    link = VirtualLink()
    node = StackNode("replay", addr=args.ip, mac=args.mac, clock=clock, link=link)
    for i, (tick, frame) in enumerate(records, 1):
        clock.now = tick
        node.rx_buf.load(frame)
        disposition = node.handle_frame(node.rx_buf)
        print(f"#{i} tick={tick} len={len(frame)} -> {disposition.describe()}")
    print(f"replayed {len(records)} frames")
    return 0


def main(argv: Optional[list[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="tinystack", description="two-node TCP/IP stack simulator"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("handshake", help="three-way handshake between the two nodes")
    _add_link_flags(p)

    p = sub.add_parser("echo", help="chunked byte round-trip over one connection")
    _add_link_flags(p)
    p.add_argument("--bytes", type=int, default=1024, help="total payload size")
    p.add_argument("--chunk", type=int, default=128, help="bytes per segment")

    p = sub.add_parser("ping", help="ICMP echo request/reply rounds")
    _add_link_flags(p)
    p.add_argument("--count", type=int, default=3, help="number of echo rounds")

    p = sub.add_parser("replay", help="feed a capture into one stack and print dispositions")
    p.add_argument("--pcap", required=True, help="capture file to replay")
    p.add_argument("--ip", default=DEFAULT_NODE_B[0], help="address of the replaying stack")
    p.add_argument("--mac", default=DEFAULT_NODE_B[1], help="MAC of the replaying stack")

    args = parser.parse_args(argv)

    if args.command == "handshake":
        return _run_and_print(handshake_scenario(**_overrides(args)), "handshake")
    if args.command == "echo":
        sc = echo_scenario(size=args.bytes, chunk=args.chunk, **_overrides(args))
        return _run_and_print(sc, "echo")
    if args.command == "ping":
        sc = ping_scenario(count=args.count, **_overrides(args))
        return _run_and_print(sc, "ping")
    return _replay(args)


if __name__ == "__main__":
    raise SystemExit(main())
