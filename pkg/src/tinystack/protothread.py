"""Stackless cooperative threads.

A thread is two words of state: a resume point and a status.  The body is a
plain function invoked from the top on every resume; progress is encoded in
integer labels the author assigns to each blocking point.  Nothing survives
in local variables between resumes, so anything a body needs later must
live in its environment object.

Authoring rules (the whole contract):

* Labels are small ints, strictly increasing through the body text.
* Every side-effecting straight-line region goes inside ``if pt.section(n):``
  so it runs exactly once, not on every resume.
* ``pt.wait_until(n, pred)`` parks the thread until pred() is true; it
  simply does not return on the resumes where the thread stays blocked.
* ``pt.yield_point(n)`` parks for exactly one resume.
* ``pt.jump(n)`` re-arms labels >= n, which is how loops repeat a labelled
  region on the next pass.
* ``pt.exit()`` terminates; later resumes are no-ops.

Example body::

    def body(pt, env):
        if pt.section(0):
            env.count = 0
        pt.wait_until(1, lambda: env.ready)
        if pt.section(2):
            env.count += 1
"""

from __future__ import annotations

import enum
from typing import Callable

from .errors import ProtothreadCorruptionError


class PtStatus(enum.Enum):
    RUNNING = "running"
    WAITING = "waiting"
    YIELDED = "yielded"
    EXITED = "exited"


class _BlockSignal(Exception):
    """Internal unwind when a body blocks; never escapes resume()."""


class Protothread:
    """Constant-size resumable execution record."""

    __slots__ = ("resume_point", "status", "_last_label")

    def __init__(self):
        self.resume_point = 0
        self.status = PtStatus.RUNNING
        self._last_label = -1

    def init(self) -> None:
        """Reset to a fresh thread (also revives an exited one)."""
        self.resume_point = 0
        self.status = PtStatus.RUNNING
        self._last_label = -1

    # ------------------------------------------------------------------
    # helpers callable only from inside a body

    def section(self, label: int) -> bool:
        """True when the labelled region has not run yet on an earlier resume."""
        self._check_label(label)
        return self.resume_point <= label

    def wait_until(self, label: int, predicate: Callable[[], bool]) -> None:
        self._check_label(label)
        if self.resume_point > label:
            return  # passed this point on an earlier resume
        if predicate():
            self.resume_point = label + 1
            return
        self.resume_point = label
        self.status = PtStatus.WAITING
        raise _BlockSignal()

    def yield_point(self, label: int) -> None:
        self._check_label(label)
        if self.resume_point > label:
            return
        if self.resume_point == label:  # re-entry after the yield
            self.resume_point = label + 1
            return
        self.resume_point = label
        self.status = PtStatus.YIELDED
        raise _BlockSignal()

    def exit(self) -> None:
        self.status = PtStatus.EXITED
        raise _BlockSignal()

    def jump(self, label: int) -> None:
        """Loop back: make labels >= label live again within this body."""
        if label < 0:
            raise ProtothreadCorruptionError(f"jump to negative label {label}")
        self.resume_point = label
        self._last_label = label - 1

    def _check_label(self, label: int) -> None:
        if label < 0:
            raise ProtothreadCorruptionError(f"negative label {label}")
        if label <= self._last_label:
            raise ProtothreadCorruptionError(
                f"label {label} after {self._last_label}; labels must increase"
            )
        self._last_label = label


def resume(pt: Protothread, body: Callable, *args) -> PtStatus:
    """Run the body from its resume point until it blocks, yields, or returns.

    Resuming an exited thread is a no-op.  A body that returns without
    blocking has finished and the thread exits.
    """
    if pt.status is PtStatus.EXITED:
        return pt.status
    if pt.resume_point < 0:
        raise ProtothreadCorruptionError(f"resume point {pt.resume_point} is invalid")
    pt.status = PtStatus.RUNNING
    pt._last_label = -1
    try:
        body(pt, *args)
    except _BlockSignal:
        pass
    else:
        pt.status = PtStatus.EXITED
    return pt.status
