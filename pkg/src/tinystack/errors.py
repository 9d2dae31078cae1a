"""Exception types shared across the stack."""


class StackError(Exception):
    """Base class for all stack-specific errors."""


class PoolExhaustedError(StackError):
    """No free block available; the caller decides whether to drop."""


class InvalidHandleError(StackError):
    """Block handle is stale, foreign, or already freed."""


class StaleEpochError(StackError):
    """A buffer view was read after the underlying frame was replaced."""


class FrameSizeError(StackError):
    """Frame length outside the 14..1514 byte Ethernet II bounds."""


class InvalidRegisterError(StackError):
    """Register address outside the device map."""


class ReadOnlyRegisterError(StackError):
    """Write attempted on a device-owned register."""


class NotReadyError(StackError):
    """Device operation before successful initialization."""


class NotConnectedError(StackError):
    """TCP operation requires an established connection."""


class WouldBlockError(StackError):
    """Stop-and-wait gate: a retransmittable segment is still in flight."""


class AddrInUseError(StackError):
    """Local port already bound."""


class NoSlotError(StackError):
    """Connection table is full."""


class ProtothreadCorruptionError(StackError):
    """Thread body mismanaged its resume labels."""


class PcapFormatError(StackError):
    """Malformed capture file.  Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (offset {offset})")
        self.offset = offset
