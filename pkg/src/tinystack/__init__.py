"""tinystack: an embedded-style TCP/IP stack with a deterministic simulator.

Layer modules mirror the runtime structure: buffers (block pool + global
frame buffer), timers, protothread (stackless threads), netdev (simulated
controller and medium), ip (IPv4 + ICMP), tcp, sockets, stack (one wired
node), and the sim/pcap/cli harness around them.
"""

from .buffers import MTU, BlockHandle, BlockPool, BufferView, GlobalBuffer, copy_to_secondary
from .errors import (
    AddrInUseError,
    FrameSizeError,
    InvalidHandleError,
    InvalidRegisterError,
    NoSlotError,
    NotConnectedError,
    NotReadyError,
    PcapFormatError,
    PoolExhaustedError,
    ProtothreadCorruptionError,
    ReadOnlyRegisterError,
    StackError,
    StaleEpochError,
    WouldBlockError,
)
from .ip import Delivery, Disposition, DropReason, IpConfig, IpLayer, internet_checksum
from .netdev import DevStatus, Frame, SimulatedNic, VirtualLink
from .pcap import read_pcap, write_pcap
from .protothread import Protothread, PtStatus, resume
from .rng import SplitMix64, derive_seed
from .sim import NodeSpec, Report, Scenario, run_scenario
from .sockets import Outcome, RecvResult, Socket, SocketManager, SocketState
from .stack import StackNode
from .tcp import Tcb, TcpEvent, TcpFlags, TcpHeader, TcpLayer, TcpState
from .timers import Clock, Timer

__version__ = "0.1.0"
