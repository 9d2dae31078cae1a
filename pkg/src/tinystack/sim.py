"""Deterministic two-node simulator: scenario description, canned
application scripts, the tick-driven event loop, and run reports.

A scenario is a pure function of its fields: the same scenario yields the
same report and byte-identical capture files on every run.  Scenario files
are flat ``key=value`` text (see Scenario.from_text).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

from .ip import parse_ipv4
from .netdev import VirtualLink
from .pcap import write_pcap
from .rng import SplitMix64, derive_seed
from .sockets import Outcome, Socket
from .stack import StackNode
from .timers import Clock

ECHO_PORT = 7
PING_PAYLOAD_LEN = 32
PING_REPLY_WAIT = 200  # ticks before one echo round is written off

DEFAULT_NODE_A = ("10.0.0.1", "02:00:00:00:00:01")
DEFAULT_NODE_B = ("10.0.0.2", "02:00:00:00:00:02")


@dataclass(frozen=True)
class NodeSpec:
    addr: str
    mac: str
    script: Optional[str] = None
    params: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    node_a: NodeSpec
    node_b: NodeSpec
    seed: int = 1
    loss: float = 0.0
    dup: float = 0.0
    delay: int = 0
    max_ticks: int = 20000
    pcap_out: Optional[str] = None
    force_drop: tuple = ()

    def to_text(self) -> str:
        lines = [
            f"seed={self.seed}",
            f"loss={self.loss}",
            f"dup={self.dup}",
            f"delay={self.delay}",
            f"max_ticks={self.max_ticks}",
        ]
        if self.pcap_out:
            lines.append(f"pcap={self.pcap_out}")
        if self.force_drop:
            lines.append("force_drop=" + ",".join(str(n) for n in self.force_drop))
        for prefix, spec in (("a", self.node_a), ("b", self.node_b)):
            lines.append(f"{prefix}.addr={spec.addr}")
            lines.append(f"{prefix}.mac={spec.mac}")
            if spec.script:
                lines.append(f"{prefix}.script={spec.script}")
            for key in sorted(spec.params):
                lines.append(f"{prefix}.{key}={spec.params[key]}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "Scenario":
        flat: dict[str, str] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"line {lineno}: expected key=value, got {line!r}")
            key, value = line.split("=", 1)
            flat[key.strip()] = value.strip()

        def node(prefix: str, default_addr: str, default_mac: str) -> NodeSpec:
            params = {}
            for key, value in flat.items():
                if key.startswith(prefix + ".") and key not in (
                    f"{prefix}.addr",
                    f"{prefix}.mac",
                    f"{prefix}.script",
                ):
                    params[key.split(".", 1)[1]] = int(value)
            return NodeSpec(
                addr=flat.get(f"{prefix}.addr", default_addr),
                mac=flat.get(f"{prefix}.mac", default_mac),
                script=flat.get(f"{prefix}.script"),
                params=params,
            )

        force = tuple(
            int(n) for n in flat.get("force_drop", "").split(",") if n.strip()
        )
        return cls(
            node_a=node("a", *DEFAULT_NODE_A),
            node_b=node("b", *DEFAULT_NODE_B),
            seed=int(flat.get("seed", 1)),
            loss=float(flat.get("loss", 0.0)),
            dup=float(flat.get("dup", 0.0)),
            delay=int(flat.get("delay", 0)),
            max_ticks=int(flat.get("max_ticks", 20000)),
            pcap_out=flat.get("pcap") or None,
            force_drop=force,
        )


@dataclass
class Report:
    label: str
    completed: bool
    app_ok: bool
    ticks: int
    frames_sent: int
    frames_delivered: int
    frames_dropped: int
    frames_duplicated: int
    frames_in_flight: int
    retransmissions: int
    rsts_sent: int
    bytes_transferred: int
    overruns: int
    stale_reads: int
    final_states: dict
    drop_reasons: dict
    app: dict

    @property
    def success(self) -> bool:
        return self.completed and self.app_ok

    def text(self) -> str:
        lines = [
            f"scenario: {self.label}",
            f"completed: {'yes' if self.completed else 'no'}  ticks={self.ticks}",
            (
                f"frames: sent={self.frames_sent} delivered={self.frames_delivered} "
                f"dropped={self.frames_dropped} duplicated={self.frames_duplicated} "
                f"in_flight={self.frames_in_flight}"
            ),
            (
                f"tcp: retransmissions={self.retransmissions} rsts={self.rsts_sent} "
                f"bytes_transferred={self.bytes_transferred} overruns={self.overruns} "
                f"stale_reads={self.stale_reads}"
            ),
        ]
        for name in sorted(self.final_states):
            states = ", ".join(self.final_states[name]) or "-"
            lines.append(f"final[{name}]: {states}")
        if self.drop_reasons:
            drops = " ".join(f"{k}={v}" for k, v in sorted(self.drop_reasons.items()))
            lines.append(f"drops: {drops}")
        for key in sorted(self.app):
            lines.append(f"app.{key}={self.app[key]}")
        lines.append(f"result: {'ok' if self.success else 'FAILED'}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# application scripts

def make_handshake_client(peer_addr: int, port: int, results: dict) -> Callable:
    def body(pt, sock: Socket):
        out = sock.connect(peer_addr, port, at=0)
        if pt.section(3):
            results["connected"] = out is Outcome.CONNECTED
            results["ok"] = out is Outcome.CONNECTED
        sock.release()

    return body


def make_handshake_server(port: int, results: dict) -> Callable:
    def body(pt, sock: Socket):
        out = sock.listen(port, at=0)
        if pt.section(3):
            results["connected"] = out is Outcome.CONNECTED
            results["ok"] = out is Outcome.CONNECTED
        sock.release()

    return body


def make_echo_client(peer_addr: int, port: int, payload: bytes, chunk: int, results: dict) -> Callable:
    def body(pt, sock: Socket):
        env = sock.env
        out = sock.connect(peer_addr, port, at=0)
        if pt.section(3):
            env.ok = out is Outcome.CONNECTED
            env.offset = 0
            env.echoed = bytearray()
        if env.ok:
            while env.offset < len(payload):
                piece = payload[env.offset : env.offset + chunk]
                n = sock.send(piece, at=10)
                if pt.section(14):
                    if n != len(piece):
                        env.ok = False
                if not env.ok:
                    break
                r = sock.recv(at=16)
                if pt.section(19):
                    if r.data is None:
                        env.ok = False
                    else:
                        env.echoed += r.data.tobytes()
                        env.offset += r.length
                if not env.ok:
                    break
                pt.jump(10)
        sock.end(at=30)
        if pt.section(40):
            results["bytes_sent"] = len(payload)
            results["bytes_echoed"] = len(env.echoed)
            results["ok"] = env.ok and bytes(env.echoed) == payload

    return body


def make_echo_server(port: int, results: dict) -> Callable:
    def body(pt, sock: Socket):
        env = sock.env
        out = sock.listen(port, at=0)
        if pt.section(3):
            env.accepted = out is Outcome.CONNECTED
            env.done = not env.accepted
            env.clean_eof = False
            env.total = 0
            env.data = b""
        while not env.done:
            r = sock.recv(at=10)
            if pt.section(13):
                if r.data is None:
                    env.done = True
                    env.clean_eof = r.eof
                else:
                    env.data = r.data.tobytes()
                    env.total += r.length
            if not env.done:
                n = sock.send(env.data, at=15)
                if pt.section(19):
                    if n is None:
                        env.done = True
            pt.jump(10)
        sock.end(at=30)
        if pt.section(40):
            results["bytes_echoed"] = env.total
            results["ok"] = env.accepted and env.clean_eof

    return body


def make_ping_client(node: StackNode, peer_addr: int, count: int, payload: bytes, results: dict) -> Callable:
    def reply_for(seq: int):
        for r in node.ip.echo_replies:
            if r.seq == seq:
                return r
        return None

    def body(pt, env):
        if pt.section(0):
            env.sent = 0
            env.got = 0
            env.ok = True
        while env.sent < count:
            if pt.section(10):
                node.ip.send_echo_request(peer_addr, ident=1, seq=env.sent, payload=payload)
                env.deadline = node.clock.now + PING_REPLY_WAIT
                env.want = env.sent
            pt.wait_until(
                12,
                lambda: reply_for(env.want) is not None or node.clock.now >= env.deadline,
            )
            if pt.section(14):
                rep = reply_for(env.want)
                if rep is None or rep.payload != payload:
                    env.ok = False
                else:
                    env.got += 1
                env.sent += 1
            pt.jump(10)
        if pt.section(20):
            results["requests"] = env.sent
            results["replies"] = env.got
            results["ok"] = env.ok and env.got == count

    return body


# ---------------------------------------------------------------------------
# scenario runner

def _install_script(node: StackNode, spec: NodeSpec, peer: NodeSpec, sc: Scenario, results: dict) -> None:
    if spec.script is None:
        return
    peer_addr = parse_ipv4(peer.addr)
    port = spec.params.get("port", ECHO_PORT)
    if spec.script == "handshake_client":
        node.sockets.begin(make_handshake_client(peer_addr, port, results), spec.script)
    elif spec.script == "handshake_server":
        node.sockets.begin(make_handshake_server(port, results), spec.script)
    elif spec.script == "echo_client":
        size = spec.params.get("bytes", 1024)
        chunk = spec.params.get("chunk", 128)
        payload = SplitMix64(derive_seed(sc.seed, 3)).bytes(size)
        node.sockets.begin(make_echo_client(peer_addr, port, payload, chunk, results), spec.script)
    elif spec.script == "echo_server":
        node.sockets.begin(make_echo_server(port, results), spec.script)
    elif spec.script == "ping_client":
        count = spec.params.get("count", 3)
        size = spec.params.get("size", PING_PAYLOAD_LEN)
        payload = SplitMix64(derive_seed(sc.seed, 3)).bytes(size)
        node.add_thread(make_ping_client(node, peer_addr, count, payload, results))
    else:
        raise ValueError(f"unknown script {spec.script!r}")


def build_nodes(sc: Scenario, clock: Clock, link: VirtualLink) -> tuple[StackNode, StackNode]:
    a = StackNode(
        "a",
        addr=sc.node_a.addr,
        mac=sc.node_a.mac,
        clock=clock,
        link=link,
        seed=derive_seed(sc.seed, 1),
        neighbors={sc.node_b.addr: sc.node_b.mac},
    )
    b = StackNode(
        "b",
        addr=sc.node_b.addr,
        mac=sc.node_b.mac,
        clock=clock,
        link=link,
        seed=derive_seed(sc.seed, 2),
        neighbors={sc.node_a.addr: sc.node_a.mac},
    )
    return a, b


def run_scenario(sc: Scenario, label: str = "") -> Report:
    clock = Clock()
    link = VirtualLink(
        seed=derive_seed(sc.seed, 0),
        loss_rate=sc.loss,
        duplicate_rate=sc.dup,
        delay=sc.delay,
        force_drop=sc.force_drop,
    )
    a, b = build_nodes(sc, clock, link)
    results_a: dict = {}
    results_b: dict = {}
    _install_script(a, sc.node_a, sc.node_b, sc, results_a)
    _install_script(b, sc.node_b, sc.node_a, sc, results_b)

    completed = False
    while clock.now <= sc.max_ticks:
        link.step(clock)
        for node in (a, b):
            node.poll()
            node.step_timers()
            node.run_threads()
        if a.done() and b.done():
            completed = True
            break
        clock.advance(1)

    # every frame is on the wire, delivered, dropped, or still in flight
    assert (
        link.frames_sent + link.frames_duplicated
        == link.frames_delivered + link.frames_dropped + link.in_flight_count
    ), "frame conservation violated"

    if sc.pcap_out:
        write_pcap(sc.pcap_out, [(r.tick, r.data) for r in link.transcript])

    app: dict = {}
    for prefix, results in (("a", results_a), ("b", results_b)):
        for key, value in results.items():
            app[f"{prefix}.{key}"] = value
    app_ok = all(r.get("ok", False) for r in (results_a, results_b) if r) and completed

    drop_reasons: dict[str, int] = {}
    for prefix, node in (("a", a), ("b", b)):
        for source in (node.ip.drop_counts, node.tcp.drop_counts, node.link_drops):
            for key, value in source.items():
                drop_reasons[f"{prefix}.{key}"] = value

    final_states = {
        name: tuple(s.tcb.state.value for s in node.sockets.sockets if s.tcb is not None)
        for name, node in (("a", a), ("b", b))
    }

    return Report(
        label=label or (sc.node_a.script or "idle"),
        completed=completed,
        app_ok=app_ok,
        ticks=clock.now,
        frames_sent=link.frames_sent,
        frames_delivered=link.frames_delivered,
        frames_dropped=link.frames_dropped,
        frames_duplicated=link.frames_duplicated,
        frames_in_flight=link.in_flight_count,
        retransmissions=a.tcp.retransmissions + b.tcp.retransmissions,
        rsts_sent=a.tcp.rsts_sent + b.tcp.rsts_sent,
        bytes_transferred=a.tcp.delivered_bytes + b.tcp.delivered_bytes,
        overruns=a.tcp.overruns + b.tcp.overruns,
        stale_reads=a.rx_buf.stale_reads + b.rx_buf.stale_reads,
        final_states=final_states,
        drop_reasons=drop_reasons,
        app=app,
    )


# canned scenario builders used by the command line and the test suite

def handshake_scenario(**overrides) -> Scenario:
    base = Scenario(
        node_a=NodeSpec(*DEFAULT_NODE_A, script="handshake_client"),
        node_b=NodeSpec(*DEFAULT_NODE_B, script="handshake_server"),
    )
    return replace(base, **overrides)


def echo_scenario(size: int = 1024, chunk: int = 128, **overrides) -> Scenario:
    base = Scenario(
        node_a=NodeSpec(*DEFAULT_NODE_A, "echo_client", {"bytes": size, "chunk": chunk}),
        node_b=NodeSpec(*DEFAULT_NODE_B, "echo_server"),
    )
    return replace(base, **overrides)


def ping_scenario(count: int = 3, **overrides) -> Scenario:
    base = Scenario(
        node_a=NodeSpec(*DEFAULT_NODE_A, "ping_client", {"count": count}),
        node_b=NodeSpec(*DEFAULT_NODE_B),
    )
    return replace(base, **overrides)
