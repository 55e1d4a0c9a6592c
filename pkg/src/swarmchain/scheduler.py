"""Executors for actor work: a seeded logical-tick scheduler and a threaded one.

Every unit of work belongs to an *actor key* (an adapter or client name).
Work for one actor runs sequentially and in submission order; the
deterministic scheduler picks which ready actor runs next with a seeded RNG.
"""

from __future__ import annotations

import heapq
import queue
import random
import threading
from collections import deque
from typing import Callable


class Timer:
    __slots__ = ("cancelled",)

    def __init__(self) -> None:
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class DeterministicScheduler:
    """Single logical executor with a simulated millisecond clock.

    ``submit(actor, fn, delay)`` makes ``fn`` due at ``now + delay``. At each
    step one actor with due work is chosen by the seeded RNG and its oldest
    due task runs. The wall clock is never consulted.
    """

    def __init__(self, seed: int = 0) -> None:
        self.now = 0
        self._rng = random.Random(f"scheduler:{seed}")
        self._heap: list[tuple[int, int, str, Callable[[], None], Timer | None]] = []
        self._ready: dict[str, deque] = {}
        self._seq = 0
        self._dead: set[str] = set()
        self._running = False
        self.steps = 0

    def submit(self, actor: str, fn: Callable[[], None], delay: int = 0) -> None:
        self._push(actor, fn, delay, None)

    def call_later(self, delay: int, actor: str, fn: Callable[[], None]) -> Timer:
        timer = Timer()
        self._push(actor, fn, delay, timer)
        return timer

    def _push(self, actor, fn, delay, timer) -> None:
        if delay < 0:
            raise ValueError("delay must be non-negative")
        self._seq += 1
        heapq.heappush(self._heap, (self.now + delay, self._seq, actor, fn, timer))

    def kill(self, actor: str) -> None:
        """Silently drop all current and future work for ``actor`` (a crash)."""
        self._dead.add(actor)
        self._ready.pop(actor, None)

    def is_dead(self, actor: str) -> bool:
        return actor in self._dead

    def _release_due(self) -> None:
        while self._heap and self._heap[0][0] <= self.now:
            _, _, actor, fn, timer = heapq.heappop(self._heap)
            if actor in self._dead or (timer is not None and timer.cancelled):
                continue
            self._ready.setdefault(actor, deque()).append((fn, timer))

    def _prune(self) -> None:
        while self._heap:
            _, _, actor, _, timer = self._heap[0]
            if actor in self._dead or (timer is not None and timer.cancelled):
                heapq.heappop(self._heap)
            else:
                break

    def idle(self) -> bool:
        self._prune()
        return not self._heap and not any(self._ready.values())

    def step(self) -> bool:
        """Run one task, advancing the clock if nothing is due. False when idle."""
        self._release_due()
        actors = sorted(a for a, q in self._ready.items() if q)
        if not actors:
            self._prune()
            if not self._heap:
                return False
            self.now = self._heap[0][0]
            self._release_due()
            actors = sorted(a for a, q in self._ready.items() if q)
            if not actors:
                return bool(self._heap)
        actor = actors[0] if len(actors) == 1 else self._rng.choice(actors)
        fn, timer = self._ready[actor].popleft()
        if timer is not None and timer.cancelled:
            return True
        self.steps += 1
        fn()
        return True

    def run(self, until: Callable[[], bool] | None = None, max_time: int | None = None) -> bool:
        """Step until ``until()`` holds, the queue drains, or the clock would pass ``max_time``.

        Returns True if ``until`` was satisfied (or, without ``until``, the queue drained).
        """
        if self._running:
            raise RuntimeError("scheduler.run() is not reentrant; use callbacks inside actors")
        self._running = True
        try:
            while True:
                if until is not None and until():
                    return True
                if max_time is not None:
                    self._prune()
                    nxt = self._next_time()
                    if nxt is None or nxt > max_time:
                        if nxt is not None:
                            self.now = max(self.now, max_time)
                        return until() if until is not None else nxt is None
                if not self.step():
                    return until() if until is not None else True
        finally:
            self._running = False

    def _next_time(self) -> int | None:
        if any(self._ready.values()):
            return self.now
        return self._heap[0][0] if self._heap else None

    def run_for(self, ticks: int) -> None:
        self.run(max_time=self.now + ticks)


class ThreadedExecutor:
    """One worker thread per actor; used to stress actor boundaries, not for golden runs.

    Delays are ignored; ``call_later`` timers fire on a background timer thread.
    """

    def __init__(self) -> None:
        self._queues: dict[str, queue.Queue] = {}
        self._threads: list[threading.Thread] = []
        self._lock = threading.Lock()
        self._pending = 0
        self._idle = threading.Condition(self._lock)
        self._dead: set[str] = set()
        self.now = 0

    def _queue_for(self, actor: str) -> queue.Queue:
        with self._lock:
            q = self._queues.get(actor)
            if q is None:
                q = self._queues[actor] = queue.Queue()
                t = threading.Thread(target=self._worker, args=(actor, q), daemon=True)
                self._threads.append(t)
                t.start()
            return q

    def _worker(self, actor: str, q: queue.Queue) -> None:
        while True:
            fn = q.get()
            if fn is None:
                return
            try:
                if actor not in self._dead:
                    fn()
            finally:
                with self._lock:
                    self._pending -= 1
                    if self._pending == 0:
                        self._idle.notify_all()

    def submit(self, actor: str, fn: Callable[[], None], delay: int = 0) -> None:
        q = self._queue_for(actor)
        with self._lock:
            self._pending += 1
        q.put(fn)

    def call_later(self, delay: int, actor: str, fn: Callable[[], None]) -> Timer:
        timer = Timer()

        def fire() -> None:
            if not timer.cancelled:
                fn()

        with self._lock:
            self._pending += 1

        def later() -> None:
            self.submit(actor, fire)
            with self._lock:
                self._pending -= 1
                if self._pending == 0:
                    self._idle.notify_all()

        threading.Timer(delay / 1000.0, later).start()
        return timer

    def kill(self, actor: str) -> None:
        self._dead.add(actor)

    def is_dead(self, actor: str) -> bool:
        return actor in self._dead

    def drain(self, timeout: float = 10.0) -> bool:
        with self._idle:
            return self._idle.wait_for(lambda: self._pending == 0, timeout)

    def shutdown(self) -> None:
        self.drain()
        with self._lock:
            queues = list(self._queues.values())
        for q in queues:
            q.put(None)
