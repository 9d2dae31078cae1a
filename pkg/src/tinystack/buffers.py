"""Packet memory: fixed block pool, the global frame buffer, epoch-checked views.

The receive path owns exactly one frame-sized buffer per stack.  Each new
arrival bumps the buffer's epoch; any view of the previous frame that is
read afterwards raises, which makes the "process in place before the next
arrival, or copy out" discipline mechanically checkable.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .errors import FrameSizeError, InvalidHandleError, PoolExhaustedError, StaleEpochError

MTU = 1514  # Ethernet II maximum without FCS


@dataclass(frozen=True)
class BlockHandle:
    """Ticket for one allocated block.  Dead after free (generation bumps)."""

    pool_id: int
    index: int
    gen: int
    len: int = 0


class BlockPool:
    """Pool of equally sized blocks, allocated lowest-index-first."""

    _next_pool_id = 0

    def __init__(self, block_size: int, block_count: int):
        if block_size < 1 or block_count < 1:
            raise ValueError("block_size and block_count must be >= 1")
        self.block_size = block_size
        self.block_count = block_count
        self._storage = bytearray(block_size * block_count)
        self._free = [True] * block_count
        self._gen = [0] * block_count
        self._outstanding = 0
        self.pool_id = BlockPool._next_pool_id
        BlockPool._next_pool_id += 1

    @property
    def free_count(self) -> int:
        return self.block_count - self._outstanding

    @property
    def outstanding(self) -> int:
        return self._outstanding

    def alloc(self) -> BlockHandle:
        for i, free in enumerate(self._free):
            if free:
                self._free[i] = False
                self._outstanding += 1
                return BlockHandle(self.pool_id, i, self._gen[i])
        raise PoolExhaustedError(f"all {self.block_count} blocks in use")

    def free(self, handle: BlockHandle) -> None:
        self._validate(handle)
        self._free[handle.index] = True
        self._gen[handle.index] += 1  # invalidates every outstanding copy of the handle
        self._outstanding -= 1

    def data(self, handle: BlockHandle) -> memoryview:
        """Writable view of the block's full extent."""
        self._validate(handle)
        start = handle.index * self.block_size
        return memoryview(self._storage)[start : start + self.block_size]

    def store(self, payload: bytes) -> BlockHandle:
        """Allocate a block and copy payload into it."""
        if len(payload) > self.block_size:
            raise ValueError(f"payload of {len(payload)} B exceeds {self.block_size} B block")
        handle = self.alloc()
        self.data(handle)[: len(payload)] = payload
        return replace(handle, len=len(payload))

    def fetch(self, handle: BlockHandle) -> bytes:
        """The stored bytes (first handle.len bytes of the block)."""
        return bytes(self.data(handle)[: handle.len])

    def _validate(self, handle: BlockHandle) -> None:
        if handle.pool_id != self.pool_id:
            raise InvalidHandleError("handle belongs to another pool")
        if not 0 <= handle.index < self.block_count:
            raise InvalidHandleError(f"block index {handle.index} out of range")
        if self._free[handle.index] or handle.gen != self._gen[handle.index]:
            raise InvalidHandleError("handle already freed")


class GlobalBuffer:
    """One frame-sized buffer.  The driver loads arrivals here; epoch guards reads."""

    def __init__(self, size: int = MTU):
        self._data = bytearray(size)
        self.size = size
        self.len = 0
        self.epoch = 0
        self.stale_reads = 0

    def load(self, frame) -> None:
        """Driver placement of a new arrival; invalidates all prior views."""
        n = len(frame)
        if n > self.size:
            raise FrameSizeError(f"{n} B frame exceeds {self.size} B buffer")
        self.epoch += 1
        self._data[:n] = frame
        self.len = n

    def write(self, offset: int, data) -> None:
        """In-place region write used while assembling an outgoing frame."""
        end = offset + len(data)
        if end > self.size:
            raise FrameSizeError(f"write up to byte {end} exceeds {self.size} B buffer")
        self._data[offset:end] = data

    def set_len(self, n: int) -> None:
        if not 0 <= n <= self.size:
            raise FrameSizeError(f"length {n} outside 0..{self.size}")
        self.len = n

    def tobytes(self) -> bytes:
        return bytes(self._data[: self.len])

    def view(self, offset: int = 0, length: int | None = None) -> "BufferView":
        if length is None:
            length = self.len - offset
        return BufferView(self, self.epoch, offset, length)


@dataclass(frozen=True)
class BufferView:
    """Zero-copy window into a GlobalBuffer, valid for one epoch only."""

    buf: GlobalBuffer
    epoch: int
    offset: int
    length: int

    @property
    def fresh(self) -> bool:
        return self.buf.epoch == self.epoch

    def tobytes(self) -> bytes:
        if not self.fresh:
            self.buf.stale_reads += 1
            raise StaleEpochError(
                f"view of epoch {self.epoch} read at epoch {self.buf.epoch}"
            )
        return bytes(self.buf._data[self.offset : self.offset + self.length])

    def subview(self, offset: int, length: int) -> "BufferView":
        if offset + length > self.length:
            raise ValueError("subview exceeds parent view")
        return BufferView(self.buf, self.epoch, self.offset + offset, length)


def copy_to_secondary(g: GlobalBuffer, pool: BlockPool) -> BlockHandle:
    """Copy the current frame out of the global buffer into a pool block.

    The copy stays valid across later arrivals; exhaustion propagates so the
    caller can decide to drop instead.
    """
    if g.len > pool.block_size:
        raise ValueError(f"{g.len} B frame exceeds {pool.block_size} B block")
    return pool.store(g.tobytes())
