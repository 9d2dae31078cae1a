"""Tick clock and interval timers.

Two distinct re-arm verbs: restart() anchors the next expiry at the current
tick, reset() anchors it at the previous expiry (drift-free periodic use).
"""

from __future__ import annotations


class Clock:
    """Monotone tick counter; the harness is the only writer."""

    def __init__(self):
        self.now = 0

    def advance(self, ticks: int = 1) -> None:
        if ticks < 0:
            raise ValueError("clock cannot run backwards")
        self.now += ticks


class Timer:
    """One-shot interval timer; the owner re-arms via restart() or reset()."""

    def __init__(self, clock: Clock, interval: int):
        if interval <= 0:
            raise ValueError("interval must be > 0")
        self.interval = interval
        self.expiry = clock.now + interval
        self.armed = True

    def expired(self, clock: Clock) -> bool:
        if not self.armed:
            raise RuntimeError("expired() on an unarmed timer")
        return clock.now >= self.expiry

    def restart(self, clock: Clock) -> None:
        """Re-anchor at the present tick."""
        self.expiry = clock.now + self.interval
        self.armed = True

    def reset(self) -> None:
        """Advance the expiry by one interval from where it was (no drift)."""
        self.expiry += self.interval
        self.armed = True

    def cancel(self) -> None:
        self.armed = False
