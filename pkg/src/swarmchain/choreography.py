"""Swarm engine: choreography descriptors, swarm instances, phase dispatch and client events.

A choreography is declared as ``meta`` / ``vars`` / constructors / phases.
Constructors run on the caller's context; every phase is bound to an adapter
group and runs inside the inbox of the adapter that receives it. Phases
bound to :data:`ALL` run on one adapter only, the one designated by the
caller context.
"""

from __future__ import annotations

import copy
import itertools
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from swarmchain.bus import Bus, Envelope, Registration, UnknownAdapter
from swarmchain.canonical import NonCanonicalValue, canonical_decode, canonical_encode, canonical_hash
from swarmchain.scheduler import DeterministicScheduler

ALL = "All"


class ChoreographyError(Exception):
    pass


class DuplicateChoreography(ChoreographyError):
    pass


class UnknownChoreography(ChoreographyError):
    pass


class UnknownCtor(ChoreographyError):
    pass


class UnknownPhase(ChoreographyError):
    pass


class MalformedDescriptor(ChoreographyError):
    pass


class SwarmTimeout(ChoreographyError):
    pass


@dataclass
class Phase:
    group: str
    handler: Callable[["PhaseContext"], Any]


@dataclass
class ChoreographyDescriptor:
    meta: dict
    vars: dict[str, Any]
    ctors: dict[str, Callable[..., Any]]
    phases: dict[str, Phase]

    @property
    def name(self) -> str:
        return self.meta.get("name", "")

    def check(self) -> None:
        name = self.meta.get("name")
        if not isinstance(name, str) or not name:
            raise MalformedDescriptor("meta.name must be a non-empty string")
        overlap = set(self.ctors) & set(self.phases)
        if overlap:
            raise MalformedDescriptor(f"{name}: names used as both ctor and phase: {sorted(overlap)}")
        for pname, phase in self.phases.items():
            if not isinstance(phase.group, str) or not phase.group:
                raise MalformedDescriptor(f"{name}.{pname}: phase needs a group")

    def manifest(self) -> dict:
        return {
            "name": self.name,
            "vars": copy.deepcopy(self.vars),
            "ctors": sorted(self.ctors),
            "phases": {p: ph.group for p, ph in sorted(self.phases.items())},
        }


def load_manifest(source: str | Path | bytes) -> list[dict]:
    """Read a manifest file: one entry object, or ``{"choreographies": [...]}``."""
    data = source if isinstance(source, bytes) else Path(source).read_bytes()
    doc = canonical_decode(data)
    entries = doc["choreographies"] if isinstance(doc, dict) and "choreographies" in doc else doc
    if isinstance(entries, dict):
        entries = [entries]
    for e in entries:
        if not isinstance(e, dict) or set(e) != {"name", "vars", "ctors", "phases"}:
            raise MalformedDescriptor(f"bad manifest entry: {e!r}")
    return entries


def dump_manifest(descriptors: list[ChoreographyDescriptor]) -> bytes:
    return canonical_encode({"choreographies": [d.manifest() for d in descriptors]})


def bind(entry: dict, ctors: dict[str, Callable], phases: dict[str, Callable]) -> ChoreographyDescriptor:
    """Attach handler implementations to a manifest entry; names must match exactly."""
    if set(ctors) != set(entry["ctors"]):
        raise MalformedDescriptor(f"{entry['name']}: ctor handlers {sorted(ctors)} != manifest {entry['ctors']}")
    if set(phases) != set(entry["phases"]):
        raise MalformedDescriptor(f"{entry['name']}: phase handlers {sorted(phases)} != manifest {sorted(entry['phases'])}")
    desc = ChoreographyDescriptor(
        meta={"name": entry["name"]},
        vars=copy.deepcopy(entry["vars"]),
        ctors=dict(ctors),
        phases={p: Phase(g, phases[p]) for p, g in entry["phases"].items()},
    )
    desc.check()
    return desc


@dataclass(frozen=True)
class SwarmEvent:
    instance_id: str
    name: str
    payload: Any
    emitter: str
    phase: str | None = None
    duplicate: bool = False


@dataclass
class SwarmInstance:
    instance_id: str
    descriptor: ChoreographyDescriptor
    vars: dict
    client: "SwarmClient | None"
    origin: str | None
    observe_results: bool = True
    result: dict = field(default_factory=dict)
    result_phase: dict = field(default_factory=dict)
    emitted: list = field(default_factory=list)
    outstanding: int = 0
    undelivered: int = 0
    ctor_done: bool = False
    handle: "SwarmHandle | None" = None

    @property
    def done(self) -> bool:
        return self.ctor_done and self.outstanding == 0


class _Dispatcher:
    """Dispatch helpers shared by constructor and phase contexts."""

    engine: "ChoreographyEngine"
    instance: SwarmInstance
    vars: dict

    def _sender(self) -> str:
        raise NotImplementedError

    def swarm(self, phase: str, **overrides) -> int:
        """Run ``phase`` on its bound group: broadcast, or locally for ``All`` phases."""
        return self.engine.dispatch_phase(self.instance, phase, None, self._snapshot(overrides), self._sender())

    def broadcast(self, phase: str, **overrides) -> int:
        return self.engine.dispatch_phase(self.instance, phase, None, self._snapshot(overrides), self._sender())

    def direct(self, phase: str, adapter: str, **overrides) -> int:
        return self.engine.dispatch_phase(self.instance, phase, adapter, self._snapshot(overrides), self._sender())

    def emit(self, name: str, payload: Any = None) -> None:
        self.engine.emit_event(self.instance, name, payload, self._sender())

    def _snapshot(self, overrides: dict) -> dict:
        snap = dict(self.vars)
        snap.update(overrides)
        return snap

    @property
    def instance_id(self) -> str:
        return self.instance.instance_id


class SwarmContext(_Dispatcher):
    """What a constructor sees: the live instance vars and dispatch methods."""

    def __init__(self, engine: "ChoreographyEngine", instance: SwarmInstance):
        self.engine = engine
        self.instance = instance
        self.vars = instance.vars

    @property
    def origin(self) -> str | None:
        return self.instance.origin

    def _sender(self) -> str:
        if self.instance.origin is not None:
            return self.instance.origin
        if self.instance.client is not None:
            return self.instance.client.name
        return self.instance.instance_id


class PhaseContext(_Dispatcher):
    """What a phase handler sees: a vars snapshot and the executing adapter."""

    def __init__(self, engine, instance, phase: str, adapter_id: str, adapter: Any, vars: dict):
        self.engine = engine
        self.instance = instance
        self.phase = phase
        self.adapter_id = adapter_id
        self.adapter = adapter
        self.vars = vars

    def _sender(self) -> str:
        return self.adapter_id


class SwarmHandle:
    """Client-side view of one swarm instance: observed events and the result map."""

    def __init__(self, engine: "ChoreographyEngine", instance: SwarmInstance):
        self.engine = engine
        self.instance = instance
        self.events: list[SwarmEvent] = []
        self.observed: dict[str, Any] = {}
        self._listeners: dict[str, list[Callable[[SwarmEvent], None]]] = {}
        self._done = threading.Event()

    @property
    def instance_id(self) -> str:
        return self.instance.instance_id

    @property
    def done(self) -> bool:
        return self.instance.done

    @property
    def settled(self) -> bool:
        """Quiescent and every event sent so far has reached this handle."""
        return self.instance.done and self.instance.undelivered == 0

    @property
    def result(self) -> dict:
        return dict(self.instance.result)

    def on(self, name: str, callback: Callable[[SwarmEvent], None]) -> None:
        """Subscribe to events named ``name``; ``"result"`` receives result notifications."""
        self._listeners.setdefault(name, []).append(callback)

    def _receive(self, event: SwarmEvent) -> None:
        self.events.append(event)
        if event.name == "result":
            self.observed[event.emitter] = event.payload
        for cb in list(self._listeners.get(event.name, ())) + list(self._listeners.get("*", ())):
            cb(event)

    def event_names(self) -> list[str]:
        return [e.name for e in self.events]

    def wait(self, timeout: int) -> dict:
        """Block until the instance quiesces or ``timeout`` ticks pass; return the result map."""
        executor = self.engine.bus.executor
        if isinstance(executor, DeterministicScheduler):
            executor.run(until=lambda: self.settled, max_time=executor.now + timeout)
        else:
            self._done.wait(timeout / 1000.0)
        if not self.settled:
            raise SwarmTimeout(f"{self.instance_id} not quiescent after {timeout}")
        return self.result


class SwarmClient:
    """Entry point for executing swarms; ``name`` is the actor that receives events."""

    def __init__(self, engine: "ChoreographyEngine", name: str):
        self.engine = engine
        self.name = name

    def execute(self, choreography: str, ctor: str, *args, observe_results: bool = True) -> SwarmHandle:
        return self.engine.execute_swarm(
            choreography, ctor, list(args), self, observe_results=observe_results
        )


class ChoreographyEngine:
    def __init__(self, bus: Bus | None = None):
        self.bus = bus if bus is not None else Bus()
        self._registry: dict[str, ChoreographyDescriptor] = {}
        self._instances: dict[str, SwarmInstance] = {}
        self._adapters: dict[str, Any] = {}
        self._ids = itertools.count(1)
        self._lock = threading.RLock()
        self.transcript: list[dict] = []

    # registry

    def register_choreography(self, descriptor: ChoreographyDescriptor) -> None:
        descriptor.check()
        with self._lock:
            if descriptor.name in self._registry:
                raise DuplicateChoreography(descriptor.name)
            self._registry[descriptor.name] = descriptor

    def descriptor(self, name: str) -> ChoreographyDescriptor:
        try:
            return self._registry[name]
        except KeyError:
            raise UnknownChoreography(name) from None

    def __contains__(self, name: str) -> bool:
        return name in self._registry

    def attach(self, adapter_id: str, group: str, adapter: Any = None) -> Registration:
        """Register an adapter on the bus with an inbox that runs phase handlers."""
        reg = self.bus.register_adapter(adapter_id, group, lambda env: self._on_envelope(adapter_id, env))
        self._adapters[adapter_id] = adapter
        return reg

    def detach(self, registration: Registration) -> None:
        self.bus.deregister_adapter(registration)

    def client(self, name: str) -> SwarmClient:
        return SwarmClient(self, name)

    def now(self) -> int:
        return getattr(self.bus.executor, "now", 0)

    def _record(self, **entry) -> None:
        entry = {"t": self.now(), **entry}
        with self._lock:
            self.transcript.append(entry)

    # execution

    def execute_swarm(
        self,
        name: str,
        ctor: str,
        args: list,
        client: SwarmClient | None,
        *,
        origin: str | None = None,
        observe_results: bool = True,
    ) -> SwarmHandle:
        """Create an instance and run constructor ``ctor`` with ``args`` on the calling context.

        ``origin`` designates the adapter that runs :data:`ALL` phases; it
        defaults to the client's name.
        """
        desc = self.descriptor(name)
        if ctor not in desc.ctors:
            raise UnknownCtor(f"{name}.{ctor}")
        with self._lock:
            instance_id = f"{name}#{next(self._ids)}"
        instance = SwarmInstance(
            instance_id,
            desc,
            copy.deepcopy(desc.vars),
            client,
            origin if origin is not None else (client.name if client is not None else None),
            observe_results,
        )
        handle = SwarmHandle(self, instance)
        instance.handle = handle
        with self._lock:
            self._instances[instance_id] = instance
        if client is not None:
            self._record(kind="execute", swarm=instance_id, ctor=ctor, client=client.name)
        try:
            desc.ctors[ctor](SwarmContext(self, instance), *args)
        finally:
            instance.ctor_done = True
            self._maybe_done(instance)
            if client is None and instance.done:
                with self._lock:
                    self._instances.pop(instance_id, None)
        return handle

    def dispatch_phase(
        self,
        instance: SwarmInstance,
        phase: str,
        direct: str | None,
        vars_snapshot: dict | None = None,
        sender: str | None = None,
    ) -> int:
        """Send ``phase`` to its group (``direct is None``) or to one adapter.

        Phases bound to :data:`ALL` without a direct target run inline on the
        instance's origin adapter and their exceptions reach the caller.
        """
        desc = instance.descriptor
        spec = desc.phases.get(phase)
        if spec is None:
            raise UnknownPhase(f"{desc.name}.{phase}")
        snap = dict(instance.vars) if vars_snapshot is None else vars_snapshot
        sender = sender or instance.origin or instance.instance_id
        if direct is None and spec.group == ALL:
            target = instance.origin
            if target is None:
                raise UnknownAdapter(f"{desc.name}.{phase}: no designated adapter for an All phase")
            with self._lock:
                instance.outstanding += 1
            try:
                ctx = PhaseContext(self, instance, phase, target, self._adapters.get(target), snap)
                value = spec.handler(ctx)
                if value is not None:
                    self.collect_result(instance, target, value, phase)
            finally:
                with self._lock:
                    instance.outstanding -= 1
                self._maybe_done(instance)
            return 1
        payload = {"vars": snap}
        if direct is None:
            env = Envelope.to_group(instance.instance_id, phase, payload, sender, spec.group)
            with self._lock:
                # count must be reserved before any delivery can complete
                count = len(self.bus.list_group(spec.group))
                instance.outstanding += count
            sent = self.bus.broadcast(spec.group, env)
            if sent != count:
                with self._lock:
                    instance.outstanding += sent - count
            self._record(kind="dispatch", swarm=instance.instance_id, phase=phase, mode="broadcast",
                         sender=sender, target=spec.group, count=sent)
            return sent
        env = Envelope.to_adapter(instance.instance_id, phase, payload, sender, direct)
        with self._lock:
            instance.outstanding += 1
        try:
            self.bus.unicast(direct, env)
        except UnknownAdapter:
            with self._lock:
                instance.outstanding -= 1
            raise
        self._record(kind="dispatch", swarm=instance.instance_id, phase=phase, mode="direct",
                     sender=sender, target=direct, count=1)
        return 1

    def _on_envelope(self, adapter_id: str, env: Envelope) -> None:
        instance = self._instances.get(env.swarm_id)
        if instance is None:
            return
        spec = instance.descriptor.phases[env.phase]
        ctx = PhaseContext(self, instance, env.phase, adapter_id, self._adapters.get(adapter_id), env.payload["vars"])
        try:
            value = spec.handler(ctx)
            if value is not None:
                self.collect_result(instance, adapter_id, value, env.phase)
        except Exception as exc:  # noqa: BLE001 - a failing phase must not take down the executor
            self.emit_event(instance, "phase_error", {"phase": env.phase, "error": f"{type(exc).__name__}: {exc}"}, adapter_id)
        finally:
            with self._lock:
                instance.outstanding -= 1
            self._maybe_done(instance)

    def _maybe_done(self, instance: SwarmInstance) -> None:
        if instance.handle is not None and instance.handle.settled:
            instance.handle._done.set()

    def collect_result(self, instance: SwarmInstance, adapter: str, value: Any, phase: str | None = None) -> None:
        with self._lock:
            duplicate = adapter in instance.result
            instance.result[adapter] = value
            instance.result_phase[adapter] = phase
        if instance.observe_results and instance.client is not None:
            event = SwarmEvent(instance.instance_id, "result", value, adapter, phase, duplicate)
            self._send_to_client(instance, event)

    def emit_event(self, instance: SwarmInstance, name: str, payload: Any, emitter: str) -> None:
        if not name:
            raise ValueError("event name must be non-empty")
        event = SwarmEvent(instance.instance_id, name, payload, emitter)
        with self._lock:
            instance.emitted.append(event)
        if instance.client is not None:
            self._send_to_client(instance, event)

    def _send_to_client(self, instance: SwarmInstance, event: SwarmEvent) -> None:
        client = instance.client
        handle = instance.handle
        try:
            encoded = canonical_encode(event.payload)
        except NonCanonicalValue:
            encoded = None
        payload_copy = canonical_decode(encoded) if encoded is not None else event.payload
        delivered = SwarmEvent(event.instance_id, event.name, payload_copy, event.emitter, event.phase, event.duplicate)
        digest = canonical_hash(event.payload)[:16] if encoded is not None else "-"

        with self._lock:
            instance.undelivered += 1

        def deliver() -> None:
            with self._lock:
                instance.undelivered -= 1
            self._record(kind="result" if event.name == "result" else "event", swarm=event.instance_id,
                         name=event.name, phase=event.phase, emitter=event.emitter, client=client.name,
                         duplicate=event.duplicate, digest=digest)
            handle._receive(delivered)
            self._maybe_done(instance)

        self.bus.post(event.emitter, client.name, deliver)
