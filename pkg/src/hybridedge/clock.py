"""Clocks for simulated durations.

Every component reads time and sleeps through a :class:`Clock`, in simulated
milliseconds. Two event loops can sit underneath:

* a normal asyncio loop, where ``time_scale`` divides simulated durations to
  get real ones (``time_scale=10`` runs ten times faster than real time);
* :class:`VirtualTimeLoop`, whose clock only moves when every task is blocked,
  jumping straight to the next timer. Runs on it are fast and reproducible.
"""

from __future__ import annotations

import asyncio
import selectors


class DeadlockError(RuntimeError):
    """Every task on a virtual loop is waiting and no timer is pending."""


class _VirtualSelector(selectors.DefaultSelector):
    def __init__(self, loop: "VirtualTimeLoop"):
        super().__init__()
        self._loop = loop

    def select(self, timeout=None):
        # Real descriptors (the loop's self-pipe) are still polled, but never waited on.
        events = super().select(0)
        if events:
            return events
        if timeout is None:
            raise DeadlockError("virtual loop has no runnable task and no pending timer")
        if timeout > 0:
            self._loop._advance(timeout)
        return events


class VirtualTimeLoop(asyncio.SelectorEventLoop):
    """Event loop whose ``time()`` is virtual and advances instantly when idle."""

    def __init__(self):
        super().__init__(selector=_VirtualSelector(self))
        self._virtual_now = 0.0

    def time(self) -> float:
        return self._virtual_now

    def _advance(self, seconds: float) -> None:
        target = self._virtual_now + seconds
        # Land exactly on the next timer so timestamps stay clean.
        if self._scheduled:
            when = self._scheduled[0]._when
            if abs(when - target) < 1e-9:
                target = when
        self._virtual_now = target


class Clock:
    """Simulated-millisecond view of the running event loop."""

    def __init__(self, time_scale: float | None = None):
        self.time_scale = time_scale or 1.0
        self._origin: float | None = None

    def _loop_time(self) -> float:
        loop = asyncio.get_running_loop()
        if self._origin is None:
            self._origin = loop.time()
        return loop.time() - self._origin

    def now(self) -> float:
        """Simulated milliseconds since the clock was first read."""
        return round(self._loop_time() * 1000.0 * self.time_scale, 6)

    async def sleep(self, ms: float) -> None:
        self._loop_time()
        await asyncio.sleep(max(ms, 0.0) / 1000.0 / self.time_scale)

    async def sleep_until(self, ms: float) -> None:
        await self.sleep(ms - self.now())


def run_virtual(coro):
    """Run ``coro`` to completion on a fresh :class:`VirtualTimeLoop`."""
    loop = VirtualTimeLoop()
    try:
        return loop.run_until_complete(coro)
    finally:
        try:
            _cancel_all(loop)
        finally:
            loop.close()


def _cancel_all(loop: asyncio.AbstractEventLoop) -> None:
    pending = [t for t in asyncio.all_tasks(loop) if not t.done()]
    for task in pending:
        task.cancel()
    if pending:
        loop.run_until_complete(asyncio.gather(*pending, return_exceptions=True))
