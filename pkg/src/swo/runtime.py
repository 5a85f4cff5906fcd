"""Event loops: a virtual-time scheduler for simulation and a threaded one
for real transports.

All timer-driven code (PIT expiry, sync suppression, heartbeats, edit
batching) takes a scheduler by injection, so the same node logic runs
deterministically under virtual time and unchanged on the wall clock.
"""

from __future__ import annotations

import heapq
import itertools
import threading
import time
from typing import Callable, Optional


class Timer:
    __slots__ = ("when", "seq", "fn", "cancelled")

    def __init__(self, when: int, seq: int, fn: Callable[[], None]):
        self.when = when
        self.seq = seq
        self.fn = fn
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True

    def __lt__(self, other: "Timer") -> bool:
        return (self.when, self.seq) < (other.when, other.seq)


class VirtualScheduler:
    """Deterministic single-threaded scheduler over a virtual millisecond clock.

    Events fire in (time, insertion) order; identical runs produce identical
    event interleavings.
    """

    def __init__(self, start_ms: int = 0):
        self._now = start_ms
        self._heap: list[Timer] = []
        self._seq = itertools.count()

    def now_ms(self) -> int:
        return self._now

    def call_at(self, when_ms: int, fn: Callable[[], None]) -> Timer:
        t = Timer(max(when_ms, self._now), next(self._seq), fn)
        heapq.heappush(self._heap, t)
        return t

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> Timer:
        return self.call_at(self._now + max(0, int(delay_ms)), fn)

    def post(self, fn: Callable[[], None]) -> Timer:
        return self.call_at(self._now, fn)

    def run_until(self, t_ms: int, max_events: int = 1_000_000) -> int:
        """Run all events due up to and including t_ms; advance the clock."""
        ran = 0
        while self._heap and self._heap[0].when <= t_ms:
            timer = heapq.heappop(self._heap)
            if timer.cancelled:
                continue
            self._now = timer.when
            timer.fn()
            ran += 1
            if ran >= max_events:
                raise RuntimeError("virtual scheduler runaway")
        self._now = max(self._now, t_ms)
        return ran

    def run_for(self, delta_ms: int) -> int:
        return self.run_until(self._now + delta_ms)

    def pending(self) -> int:
        return sum(1 for t in self._heap if not t.cancelled)


class ThreadedScheduler:
    """Wall-clock scheduler: one worker thread drains posted work and timers.

    post/call_at are thread-safe; scheduled functions run on the worker
    thread, which is the node's event loop.
    """

    def __init__(self):
        self._heap: list[Timer] = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._stopped = False
        self._epoch = time.monotonic()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def now_ms(self) -> int:
        return int((time.monotonic() - self._epoch) * 1000)

    def call_at(self, when_ms: int, fn: Callable[[], None]) -> Timer:
        t = Timer(when_ms, next(self._seq), fn)
        with self._cond:
            heapq.heappush(self._heap, t)
            self._cond.notify()
        return t

    def call_later(self, delay_ms: int, fn: Callable[[], None]) -> Timer:
        return self.call_at(self.now_ms() + max(0, int(delay_ms)), fn)

    def post(self, fn: Callable[[], None]) -> Timer:
        return self.call_at(0, fn)

    def run_sync(self, fn: Callable[[], object], timeout: float = 30.0):
        """Run fn on the loop thread and return its result (for gateways/CLI)."""
        if threading.current_thread() is self._thread:
            return fn()
        done = threading.Event()
        box: list = [None, None]

        def wrapper():
            try:
                box[0] = fn()
            except BaseException as exc:  # surfaced to the caller below
                box[1] = exc
            finally:
                done.set()

        self.post(wrapper)
        if not done.wait(timeout):
            raise TimeoutError("event loop did not respond")
        if box[1] is not None:
            raise box[1]
        return box[0]

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()
        if threading.current_thread() is not self._thread:
            self._thread.join(timeout=5)

    def _run(self) -> None:
        while True:
            with self._cond:
                if self._stopped:
                    return
                now = self.now_ms()
                timer: Optional[Timer] = None
                if self._heap:
                    head = self._heap[0]
                    if head.when <= now:
                        timer = heapq.heappop(self._heap)
                    else:
                        self._cond.wait((head.when - now) / 1000.0)
                else:
                    self._cond.wait(1.0)
            if timer is not None and not timer.cancelled:
                try:
                    timer.fn()
                except Exception:  # keep the loop alive; faces log their own errors
                    import traceback

                    traceback.print_exc()
