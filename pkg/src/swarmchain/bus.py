"""Pub/sub adapter bus: group broadcast and named unicast over an executor."""

from __future__ import annotations

import itertools
import threading
from dataclasses import dataclass, replace
from typing import Any, Callable

from swarmchain.canonical import canonical_decode, canonical_encode
from swarmchain.scheduler import DeterministicScheduler


class BusError(Exception):
    pass


class DuplicateAdapter(BusError):
    pass


class UnknownAdapter(BusError):
    pass


class StaleHandle(BusError):
    pass


@dataclass(frozen=True)
class Envelope:
    swarm_id: str
    phase: str
    payload: Any
    sender: str
    group: str | None = None
    adapter: str | None = None
    message_id: int | None = None

    @classmethod
    def to_group(cls, swarm_id: str, phase: str, payload: Any, sender: str, group: str) -> "Envelope":
        return cls(swarm_id, phase, payload, sender, group=group)

    @classmethod
    def to_adapter(cls, swarm_id: str, phase: str, payload: Any, sender: str, adapter: str) -> "Envelope":
        return cls(swarm_id, phase, payload, sender, adapter=adapter)


Inbox = Callable[[Envelope], None]


@dataclass
class Registration:
    adapter_id: str
    group: str
    active: bool = True


class Bus:
    """Adapter registry plus delivery.

    Broadcast snapshots the group's membership before delivering, and the
    sender receives its own broadcast when it belongs to the group. Payloads
    are canonically encoded at publish time and each recipient gets its own
    decoded copy.
    """

    def __init__(self, executor=None, latency: int = 1) -> None:
        self.executor = executor if executor is not None else DeterministicScheduler()
        self.latency = latency
        self._lock = threading.RLock()
        self._inboxes: dict[str, Inbox] = {}
        self._groups: dict[str, dict[str, None]] = {}
        self._membership: dict[str, str] = {}
        self._ids = itertools.count(1)
        self._edge_delay: dict[tuple[str, str], int] = {}
        # per (sender, recipient) earliest next delivery time, keeps pairwise FIFO under delay changes
        self._fifo_floor: dict[tuple[str, str], int] = {}
        self.drop: Callable[[Envelope, str], bool] | None = None

    def register_adapter(self, adapter_id: str, group: str, inbox: Inbox) -> Registration:
        if not adapter_id or not group:
            raise ValueError("adapter and group names must be non-empty")
        with self._lock:
            if adapter_id in self._inboxes:
                raise DuplicateAdapter(adapter_id)
            self._inboxes[adapter_id] = inbox
            self._groups.setdefault(group, {})[adapter_id] = None
            self._membership[adapter_id] = group
        return Registration(adapter_id, group)

    def deregister_adapter(self, handle: Registration) -> None:
        with self._lock:
            if not handle.active or self._membership.get(handle.adapter_id) != handle.group:
                raise StaleHandle(handle.adapter_id)
            handle.active = False
            del self._inboxes[handle.adapter_id]
            del self._membership[handle.adapter_id]
            members = self._groups[handle.group]
            del members[handle.adapter_id]
            if not members:
                del self._groups[handle.group]

    def list_group(self, group: str) -> frozenset[str]:
        with self._lock:
            return frozenset(self._groups.get(group, ()))

    def members(self, group: str) -> list[str]:
        """Membership in registration order."""
        with self._lock:
            return list(self._groups.get(group, ()))

    def group_of(self, adapter_id: str) -> str | None:
        with self._lock:
            return self._membership.get(adapter_id)

    def is_registered(self, adapter_id: str) -> bool:
        with self._lock:
            return adapter_id in self._inboxes

    def set_edge_delay(self, src: str, dst: str, ticks: int) -> None:
        with self._lock:
            self._edge_delay[(src, dst)] = ticks

    def post(self, src: str, dst: str, fn: Callable[[], None]) -> None:
        """Schedule ``fn`` on actor ``dst`` with link latency and pairwise FIFO order."""
        with self._lock:
            delay = self.latency + self._edge_delay.get((src, dst), 0)
            key = (src, dst)
            now = getattr(self.executor, "now", 0)
            due = max(now + delay, self._fifo_floor.get(key, 0))
            self._fifo_floor[key] = due
            self.executor.submit(dst, fn, due - now)

    def _deliver(self, envelope: Envelope, encoded: bytes, dst: str, inbox: Inbox) -> None:
        stamped = replace(envelope, message_id=next(self._ids))
        if self.drop is not None and self.drop(stamped, dst):
            return
        copy = replace(stamped, payload=canonical_decode(encoded))
        self.post(envelope.sender, dst, lambda: inbox(copy))

    def broadcast(self, group: str, envelope: Envelope) -> int:
        if envelope.group is None:
            raise ValueError("broadcast needs a group-targeted envelope")
        with self._lock:
            targets = [(a, self._inboxes[a]) for a in self._groups.get(group, ())]
            if not targets:
                return 0
            encoded = canonical_encode(envelope.payload)
            for dst, inbox in targets:
                self._deliver(envelope, encoded, dst, inbox)
        return len(targets)

    def unicast(self, to: str, envelope: Envelope) -> int:
        if envelope.adapter is None:
            raise ValueError("unicast needs an adapter-targeted envelope")
        with self._lock:
            inbox = self._inboxes.get(to)
            if inbox is None:
                raise UnknownAdapter(to)
            self._deliver(envelope, canonical_encode(envelope.payload), to, inbox)
        return 1
