"""Smart contracts executed as choreographies with miner-held state.

A contract is a choreography whose ``meta.name`` is its address, whose vars
are exactly ``state, method, params, chain, transaction`` and whose single
``ctor`` dispatches the phase named by ``transaction.params.method``. All
phases are bound to ``"All"`` and so run on the invoking miner.

Phase handlers receive a :class:`ContractCall`, never the adapter: they can
read the five vars, spend simulated time with :meth:`ContractCall.work` and
emit internal transactions, and nothing else.
"""

from __future__ import annotations

import contextvars
import copy
import threading
from collections.abc import Sequence
from dataclasses import dataclass, field
from typing import Any, Callable

from swarmchain.blockchain import Chain, Transaction
from swarmchain.canonical import NonCanonicalValue, copy_value
from swarmchain.choreography import (
    ALL,
    ChoreographyDescriptor,
    ChoreographyEngine,
    MalformedDescriptor,
    Phase,
    PhaseContext,
    SwarmContext,
    UnknownPhase,
)

CONTRACT_VARS = frozenset({"state", "method", "params", "chain", "transaction"})
DEFAULT_TIMEOUT_MS = 500


class ContractError(Exception):
    pass


class DuplicateContract(ContractError):
    pass


class UnknownContract(ContractError):
    pass


class ContractTimeout(BaseException):
    """Raised inside a phase once its simulated time exceeds the budget.

    Derives from BaseException so ``except Exception`` in contract code cannot swallow it.
    """


@dataclass(frozen=True)
class ContractResult:
    outcome: str
    new_state: Any = None
    message: str = ""
    internal: tuple[Transaction, ...] = ()

    SUCCESS = "success"
    ERROR = "error"
    TIMEOUT = "timeout"

    @classmethod
    def success(cls, new_state: Any, internal: Sequence[Transaction] = ()) -> "ContractResult":
        return cls(cls.SUCCESS, new_state, "", tuple(internal))

    @classmethod
    def error(cls, message: str) -> "ContractResult":
        return cls(cls.ERROR, None, message)

    @classmethod
    def timeout(cls) -> "ContractResult":
        return cls(cls.TIMEOUT)

    @property
    def ok(self) -> bool:
        return self.outcome == self.SUCCESS

    def summary(self) -> dict:
        out: dict = {"outcome": self.outcome}
        if self.message:
            out["message"] = self.message
        if self.internal:
            out["internal"] = [tx.tx_id for tx in self.internal]
        return out


@dataclass(frozen=True)
class ContractInvocation:
    transaction: Transaction
    state: Any
    chain: Chain


class ChainView(Sequence):
    """Read-only chain access for contracts. Items are fresh block dicts."""

    def __init__(self, chain: Chain):
        self._chain = chain

    def __len__(self) -> int:
        return len(self._chain)

    def __getitem__(self, i):
        if isinstance(i, slice):
            return [b.to_dict() for b in self._chain.blocks[i]]
        return self._chain.blocks[i].to_dict()

    @property
    def height(self) -> int:
        return self._chain.height

    @property
    def tip_hash(self) -> str:
        return self._chain.tip.block_hash

    def contains_tx(self, txid: str) -> bool:
        return self._chain.contains_tx(txid)


@dataclass
class _Budget:
    timeout_ms: int
    elapsed: int = 0


_budget: contextvars.ContextVar[_Budget | None] = contextvars.ContextVar("contract_budget", default=None)


@dataclass
class _PhaseOutput:
    state: Any
    internal: list = field(default_factory=list)


class ContractCall:
    """The contract-side view of one invocation."""

    def __init__(self, vars: dict, budget: _Budget | None):
        self.state = vars["state"]
        self.method = vars["method"]
        self.params = vars["params"]
        self.chain: ChainView = vars["chain"]
        self.transaction = vars["transaction"]
        self._budget = budget
        self._internal: list[Transaction] = []

    @property
    def elapsed(self) -> int:
        return self._budget.elapsed if self._budget else 0

    def work(self, ms: int = 1) -> None:
        """Spend ``ms`` of simulated execution time; past the budget the call times out."""
        if self._budget is None:
            return
        self._budget.elapsed += ms
        if self._budget.elapsed > self._budget.timeout_ms:
            raise ContractTimeout()

    def internal(self, contract: str = "", params: dict | None = None) -> Transaction:
        """Emit an internal transaction; the applying miner adds it to its pending pool."""
        parent = self.transaction["txId"]
        body = dict(params or {})
        body["parent"] = parent
        tx = Transaction.create(
            sender=self.transaction["contract"],
            contract=contract,
            params=body,
            nonce=len(self._internal),
            timestamp=self.transaction["timestamp"],
        )
        self._internal.append(tx)
        return tx


def _wrap_phase(fn: Callable[[ContractCall], Any]) -> Callable[[PhaseContext], _PhaseOutput]:
    if getattr(fn, "_contract_phase", False):
        return fn

    def run(ctx: PhaseContext) -> _PhaseOutput:
        call = ContractCall(ctx.vars, _budget.get())
        new_state = fn(call)
        return _PhaseOutput(new_state, list(call._internal))

    run._contract_phase = True  # type: ignore[attr-defined]
    run.__name__ = getattr(fn, "__name__", "phase")
    return run


def contract_ctor(swarm: SwarmContext, transaction: dict, state: Any, chain: ChainView) -> None:
    swarm.vars["method"] = transaction["params"].get("method")
    swarm.vars["params"] = transaction["params"]
    swarm.vars["chain"] = chain
    swarm.vars["state"] = state
    swarm.vars["transaction"] = transaction
    swarm.swarm(swarm.vars["method"])


def contract_descriptor(address: str, phases: dict[str, Callable[[ContractCall], Any]]) -> ChoreographyDescriptor:
    return ChoreographyDescriptor(
        meta={"name": address},
        vars={name: None for name in sorted(CONTRACT_VARS)},
        ctors={"ctor": contract_ctor},
        phases={name: Phase(ALL, _wrap_phase(fn)) for name, fn in phases.items()},
    )


def check_contract_descriptor(descriptor: ChoreographyDescriptor) -> None:
    descriptor.check()
    if set(descriptor.vars) != CONTRACT_VARS:
        raise MalformedDescriptor(f"{descriptor.name}: vars must be exactly {sorted(CONTRACT_VARS)}")
    if set(descriptor.ctors) != {"ctor"}:
        raise MalformedDescriptor(f"{descriptor.name}: a contract has exactly one ctor named 'ctor'")
    for pname, phase in descriptor.phases.items():
        if phase.group != ALL:
            raise MalformedDescriptor(f"{descriptor.name}.{pname}: contract phases must be bound to 'All'")


class ContractRegistry:
    """Registers contracts on an engine and invokes them with bounded simulated time."""

    def __init__(self, engine: ChoreographyEngine | None = None, timeout_ms: int = DEFAULT_TIMEOUT_MS):
        self.engine = engine if engine is not None else ChoreographyEngine()
        self.timeout_ms = timeout_ms
        self._addresses: set[str] = set()
        self._lock = threading.Lock()
        self.invocations = 0

    def register_contract(self, descriptor: ChoreographyDescriptor) -> None:
        check_contract_descriptor(descriptor)
        with self._lock:
            if descriptor.name in self._addresses:
                raise DuplicateContract(descriptor.name)
            for phase in descriptor.phases.values():
                phase.handler = _wrap_phase(phase.handler)
            self.engine.register_choreography(descriptor)
            self._addresses.add(descriptor.name)

    def __contains__(self, address: str) -> bool:
        return address in self._addresses

    @property
    def addresses(self) -> list[str]:
        return sorted(self._addresses)

    def invoke(
        self,
        address: str,
        inv: ContractInvocation,
        timeout_ms: int | None = None,
        executing_miner: str = "local",
    ) -> ContractResult:
        if address not in self._addresses:
            raise UnknownContract(address)
        if inv.transaction.contract != address:
            raise ValueError(f"transaction targets {inv.transaction.contract!r}, not {address!r}")
        with self._lock:
            self.invocations += 1
        budget = _Budget(self.timeout_ms if timeout_ms is None else timeout_ms)
        token = _budget.set(budget)
        try:
            tx = inv.transaction.to_dict()
            state = copy.deepcopy(inv.state)
            handle = self.engine.execute_swarm(
                address, "ctor", [tx, state, ChainView(inv.chain)], None, origin=executing_miner
            )
        except ContractTimeout:
            return ContractResult.timeout()
        except UnknownPhase:
            return ContractResult.error(f"unknown method {inv.transaction.method!r}")
        except Exception as exc:  # noqa: BLE001 - contract faults become error outcomes
            return ContractResult.error(f"{type(exc).__name__}: {exc}")
        finally:
            _budget.reset(token)
        output = handle.result.get(executing_miner)
        if not isinstance(output, _PhaseOutput):
            return ContractResult.error("phase produced no result")
        try:
            new_state = copy_value(output.state)
        except NonCanonicalValue as exc:
            return ContractResult.error(f"state is not a ledger value: {exc}")
        return ContractResult.success(new_state, output.internal)


def sample_counter_contract(address: str = "counter") -> ChoreographyDescriptor:
    """``increment`` adds one to ``count`` (null starts at 0); ``get`` returns the state."""

    def increment(call: ContractCall) -> dict:
        count = 0 if call.state is None else call.state["count"]
        return {"count": count + 1}

    def get(call: ContractCall) -> dict:
        return {"count": 0} if call.state is None else call.state

    return contract_descriptor(address, {"increment": increment, "get": get})


def busy_contract(address: str = "busy") -> ChoreographyDescriptor:
    """Test contract. ``spin`` burns ``params.ms`` simulated ms (forever when absent)."""

    def spin(call: ContractCall) -> dict:
        target = call.params.get("ms")
        while target is None or call.elapsed < target:
            call.work(1)
        runs = 0 if call.state is None else call.state["runs"]
        return {"runs": runs + 1}

    return contract_descriptor(address, {"spin": spin})
