"""Adapter-as-miner: the announce / addBlock / update / sendTransaction protocol,
the mining loop, unsynced detection and contract-state application.

A miner is an actor. Every handler below runs on the miner's own inbox and
is the only code that touches its state. Mining is modelled as a round that
starts at one tick and completes ``1 + nonce // hashes_per_tick`` ticks later.
A tip change in between cancels the round.
"""

from __future__ import annotations

import copy
import logging
import random
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable

from swarmchain.blockchain import (
    Block,
    Chain,
    ForkChoice,
    MiningCancelled,
    Transaction,
    ValidationError,
    mine_block,
    resolve_fork,
    validate_block,
    validate_chain,
)
from swarmchain.bus import Registration, UnknownAdapter
from swarmchain.choreography import ChoreographyEngine, SwarmEvent, SwarmHandle
from swarmchain.contracts import ContractInvocation, ContractRegistry, ContractResult, UnknownContract
from swarmchain.swarms import INTERNAL, MINERS

log = logging.getLogger(__name__)

POOLED = "pooled"
DUPLICATE = "duplicate"
INVALID = "invalid"

ACCEPTED = "accepted"
STALE = "stale"
UNSYNCED = "unsynced"

APPLIED = "applied"
REJECTED = "rejected"
TIMEOUT = "timeout"


class InvalidBlock(Exception):
    pass


@dataclass
class MinerConfig:
    difficulty: int = 8
    block_cap: int = 4
    contract_timeout_ms: int = 500
    hashes_per_tick: int = 64
    mining_jitter: int = 3
    announce_timeout: int = 50
    update_timeout: int = 50
    cancel_every: int = 1024
    group: str = MINERS
    debug_replay: bool = False


@dataclass
class UpdatePayload:
    chain: Chain
    pending_pool: list[Transaction]
    awaiting_pool: list[Transaction]

    def to_dict(self) -> dict:
        return {
            "chain": self.chain.to_list(),
            "pendingPool": [tx.to_dict() for tx in self.pending_pool],
            "awaitingPool": [tx.to_dict() for tx in self.awaiting_pool],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "UpdatePayload":
        return cls(
            Chain.from_list(d["chain"]),
            [Transaction.from_dict(t) for t in d["pendingPool"]],
            [Transaction.from_dict(t) for t in d["awaitingPool"]],
        )


@dataclass
class Replay:
    states: dict
    receipts: dict
    internal: list[Transaction]


def apply_contract_txs(
    txs,
    states: dict,
    chain_before: Chain,
    contracts: ContractRegistry,
    timeout_ms: int,
    executing_miner: str,
) -> tuple[dict, list[Transaction]]:
    """Run a block's contract transactions in order, mutating ``states``.

    Only successful outcomes change state. Returns per-tx receipt summaries
    and emitted internal transactions.
    """
    receipts: dict[str, dict] = {}
    internal: list[Transaction] = []
    for tx in txs:
        if not tx.contract:
            continue
        try:
            result = contracts.invoke(
                tx.contract,
                ContractInvocation(tx, states.get(tx.contract), chain_before),
                timeout_ms,
                executing_miner,
            )
        except UnknownContract:
            result = ContractResult.error(f"unknown contract {tx.contract!r}")
        if result.ok:
            states[tx.contract] = result.new_state
            internal.extend(result.internal)
        receipts[tx.tx_id] = result.summary()
    return receipts, internal


def replay_chain(
    chain: Chain,
    contracts: ContractRegistry,
    timeout_ms: int | None = None,
    executing_miner: str = "replay",
) -> Replay:
    states: dict = {}
    receipts: dict = {}
    internal: list[Transaction] = []
    timeout = contracts.timeout_ms if timeout_ms is None else timeout_ms
    for i in range(1, len(chain)):
        r, emitted = apply_contract_txs(
            chain[i].transactions, states, Chain(chain.blocks[:i]), contracts, timeout, executing_miner
        )
        receipts.update(r)
        internal.extend(emitted)
    return Replay(states, receipts, internal)


def replay_contract_states(
    chain: Chain,
    contracts: ContractRegistry,
    *,
    difficulty: int | None = None,
    block_cap: int | None = None,
    timeout_ms: int | None = None,
) -> dict:
    """Fold every contract transaction of a valid chain from null states.

    ``difficulty`` defaults to the first mined block's; ``block_cap`` to the
    largest block. Raises :class:`ValidationError` for an invalid chain.
    """
    if difficulty is None:
        difficulty = chain[1].difficulty if len(chain) > 1 else 0
    if block_cap is None:
        block_cap = max([4] + [len(b.transactions) for b in chain])
    validate_chain(chain, difficulty, block_cap=block_cap)
    return replay_chain(chain, contracts, timeout_ms).states


class Pending:
    """Outcome of an asynchronous protocol step (join or update)."""

    def __init__(self, kind: str):
        self.kind = kind
        self.status = "pending"
        self.value: Any = None
        self.handle: SwarmHandle | None = None
        self._callbacks: list[Callable[["Pending"], None]] = []

    @property
    def done(self) -> bool:
        return self.status != "pending"

    def then(self, cb: Callable[["Pending"], None]) -> None:
        if self.done:
            cb(self)
        else:
            self._callbacks.append(cb)

    def finish(self, status: str, value: Any = None) -> None:
        if self.done:
            return
        self.status = status
        self.value = value
        for cb in self._callbacks:
            cb(self)
        self._callbacks.clear()

    def __repr__(self) -> str:
        return f"Pending({self.kind}, {self.status}, {self.value!r})"


@dataclass
class _Round:
    block: Block
    txs: list[Transaction]
    scratch_states: dict
    receipts: dict
    internal: list[Transaction]
    timer: Any = None
    cancelled: bool = False


@dataclass
class JoinState:
    expected: int | None = None
    responders: list[str] = field(default_factory=list)


class Miner:
    def __init__(
        self,
        miner_id: str,
        engine: ChoreographyEngine,
        contracts: ContractRegistry,
        config: MinerConfig | None = None,
        rng: random.Random | None = None,
    ):
        self.id = miner_id
        self.engine = engine
        self.contracts = contracts
        self.config = config or MinerConfig()
        self.rng = rng or random.Random(f"miner:{miner_id}")
        self.chain = Chain()
        self.pending: OrderedDict[str, Transaction] = OrderedDict()
        self.awaiting: OrderedDict[str, Transaction] = OrderedDict()
        self.peers: set[str] = set()
        self.contract_states: dict = {}
        self.receipts: dict[str, dict] = {}
        self.registration: Registration | None = None
        self.client = engine.client(miner_id)
        self.crashed = False
        self.journal: list[tuple] = []
        self.block_observers: list[Callable[["Miner", Block], None]] = []
        self._round: _Round | None = None
        self._round_scheduled = False
        self._update: Pending | None = None
        self.join: Pending | None = None

    def __repr__(self) -> str:
        return f"Miner({self.id}, height={self.chain.height}, pending={len(self.pending)})"

    # plumbing

    @property
    def executor(self):
        return self.engine.bus.executor

    def now(self) -> int:
        return self.engine.now()

    def _note(self, what: str, *detail) -> None:
        self.journal.append((self.now(), what, *detail))
        log.debug("%s %s %s", self.id, what, detail)

    def attach(self) -> Registration:
        self.registration = self.engine.attach(self.id, self.config.group, self)
        return self.registration

    def on_chain(self, txid: str) -> bool:
        return self.chain.contains_tx(txid)

    def knows(self, txid: str) -> bool:
        return self.on_chain(txid) or txid in self.pending or txid in self.awaiting

    # protocol: announce (join)

    def join_network(self) -> Pending:
        """Broadcast our identity and wait for as many ``announce`` results as dispatched."""
        pending = Pending("join")
        state = JoinState()
        pending.value = state

        def finish(status: str) -> None:
            if pending.done:
                return
            timer.cancel()
            self._note("join", status, len(state.responders))
            pending.finish(status, state)
            self._after_join()

        def on_success(event: SwarmEvent) -> None:
            state.expected = event.payload
            if len(state.responders) >= state.expected:
                finish("complete")

        def on_result(event: SwarmEvent) -> None:
            if event.phase != "announce" or event.duplicate:
                return
            state.responders.append(event.emitter)
            if event.payload != self.id:
                self.peers.add(event.payload)
            if state.expected is not None and len(state.responders) >= state.expected:
                finish("complete")

        timer = self.executor.call_later(self.config.announce_timeout, self.id, lambda: finish(TIMEOUT))
        handle = self.engine.execute_swarm(
            INTERNAL, "ctor", ["broadcast", self.id, "announce", {"chain": self.chain.to_list()}],
            self.client, observe_results=True,
        )
        handle.on("announce_success", on_success)
        handle.on("result", on_result)
        pending.handle = handle
        self.join = pending
        return pending

    def _after_join(self) -> None:
        peers = sorted(self.peers)
        if peers:
            self.request_update(self.rng.choice(peers))

    def handle_announce(self, sender: str, chain: list | None = None) -> str:
        if sender != self.id:
            self.peers.add(sender)
            if chain is not None:
                try:
                    remote = Chain.from_list(chain)
                except ValueError:
                    remote = None
                if remote is not None and self._fork_choice(remote) is ForkChoice.ADOPT_REMOTE:
                    self.adopt_chain(remote)
        return self.id

    # protocol: transactions

    def handle_send_transaction(self, tx: Transaction) -> str:
        if not tx.is_well_formed():
            return INVALID
        try:
            if tx.computed_id() != tx.tx_id:
                return INVALID
        except ValueError:
            return INVALID
        if self.knows(tx.tx_id):
            return DUPLICATE
        self.pending[tx.tx_id] = tx
        self._schedule_round()
        return POOLED

    # mining

    def _select(self) -> list[Transaction]:
        n = min(self.config.block_cap, len(self.pending))
        txs = []
        for _ in range(n):
            txid, tx = self.pending.popitem(last=False)
            self.awaiting[txid] = tx
            txs.append(tx)
        return txs

    def _begin_round(self, should_cancel: Callable[[], bool] | None = None) -> _Round | None:
        if not self.pending:
            return None
        txs = self._select()
        scratch = copy.deepcopy(self.contract_states)
        receipts, internal = apply_contract_txs(
            txs, scratch, self.chain, self.contracts, self.config.contract_timeout_ms, self.id
        )
        try:
            block = mine_block(
                self.chain.tip, txs, self.config.difficulty, self.id, self.now(),
                block_cap=self.config.block_cap, should_cancel=should_cancel,
                cancel_every=self.config.cancel_every,
            )
        except MiningCancelled:
            self._return_awaiting(txs)
            raise
        return _Round(block, txs, scratch, receipts, internal)

    def _commit_round(self, rnd: _Round) -> Block:
        block = rnd.block
        self.chain = self.chain.extended(block)
        self.contract_states = rnd.scratch_states
        self.receipts.update(rnd.receipts)
        for tx in rnd.txs:
            self.awaiting.pop(tx.tx_id, None)
            self.pending.pop(tx.tx_id, None)
        self._pool_internal(rnd.internal)
        self._note("mined", block.index, block.block_hash)
        self._block_applied(block)
        # fire and forget: results are collected engine-side and never awaited here
        self.engine.execute_swarm(
            INTERNAL, "ctor", ["broadcast", self.id, "addBlock", block.to_dict()],
            self.client, observe_results=False,
        )
        return block

    def mining_round(self, should_cancel: Callable[[], bool] | None = None) -> Block | None:
        """Synchronous round: select, execute contracts, mine, append and broadcast.

        Returns None when there is no work. Raises :class:`MiningCancelled`
        (transactions return to the pending pool) if ``should_cancel`` fires.
        """
        rnd = self._begin_round(should_cancel)
        if rnd is None:
            return None
        return self._commit_round(rnd)

    def _schedule_round(self) -> None:
        if self.crashed or self._round is not None or self._round_scheduled or not self.pending:
            return
        self._round_scheduled = True
        delay = self.rng.randint(0, self.config.mining_jitter) if self.config.mining_jitter else 0
        self.executor.call_later(delay, self.id, self._start_round)

    def _start_round(self) -> None:
        self._round_scheduled = False
        if self.crashed or self._round is not None:
            return
        rnd = self._begin_round()
        if rnd is None:
            return
        self._round = rnd
        ticks = 1 + rnd.block.nonce // max(1, self.config.hashes_per_tick)
        rnd.timer = self.executor.call_later(ticks, self.id, lambda: self._finish_round(rnd))

    def _finish_round(self, rnd: _Round) -> None:
        if rnd.cancelled or self._round is not rnd:
            return
        self._round = None
        if rnd.block.prev_hash != self.chain.tip.block_hash:
            self._return_awaiting(rnd.txs)
            self._schedule_round()
            return
        self._commit_round(rnd)
        self._schedule_round()

    def _cancel_round(self, reason: str) -> None:
        rnd = self._round
        if rnd is None:
            return
        rnd.cancelled = True
        if rnd.timer is not None:
            rnd.timer.cancel()
        self._round = None
        self._return_awaiting(rnd.txs)
        self._note("cancelled", rnd.block.index, reason)

    def _return_awaiting(self, txs: list[Transaction]) -> None:
        back = OrderedDict()
        for tx in txs:
            self.awaiting.pop(tx.tx_id, None)
            if not self.on_chain(tx.tx_id) and tx.tx_id not in self.pending:
                back[tx.tx_id] = tx
        back.update(self.pending)
        self.pending = back

    def _pool_internal(self, txs: list[Transaction]) -> None:
        for tx in txs:
            if not self.knows(tx.tx_id):
                self.pending[tx.tx_id] = tx

    # blocks

    def handle_add_block(self, block: Block) -> str:
        tip = self.chain.tip
        if block.index <= tip.index:
            if (
                block.index == tip.index
                and block.block_hash != tip.block_hash
                and block.block_hash < tip.block_hash
            ):
                # equal-height competitor with the lower hash: let fork choice decide
                self._trigger_update(block.miner_id)
            return STALE
        if block.index > tip.index + 1 or block.prev_hash != tip.block_hash:
            self._note("unsynced", block.index, block.miner_id)
            self._trigger_update(block.miner_id)
            return UNSYNCED
        try:
            validate_block(block, tip, self.config.difficulty, block_cap=self.config.block_cap)
        except ValidationError as exc:
            raise InvalidBlock(f"{exc.rule}: {exc}") from exc
        for tx in block.transactions:
            if self.on_chain(tx.tx_id):
                raise InvalidBlock(f"DuplicateTx: {tx.tx_id} already on chain")
        self._append(block)
        return ACCEPTED

    def receive_block(self, block: Block) -> str:
        """Phase entry point: like :meth:`handle_add_block` but reports invalid blocks."""
        try:
            return self.handle_add_block(block)
        except InvalidBlock as exc:
            self._note("invalid-block", block.index, str(exc))
            return INVALID

    def _append(self, block: Block) -> None:
        self._cancel_round("tip moved")
        receipts, internal = apply_contract_txs(
            block.transactions, self.contract_states, self.chain, self.contracts,
            self.config.contract_timeout_ms, self.id,
        )
        self.chain = self.chain.extended(block)
        self.receipts.update(receipts)
        for tx in block.transactions:
            self.pending.pop(tx.tx_id, None)
            self.awaiting.pop(tx.tx_id, None)
        self._pool_internal(internal)
        self._note("accepted", block.index, block.block_hash)
        self._block_applied(block)
        self._schedule_round()

    def _block_applied(self, block: Block) -> None:
        if self.config.debug_replay:
            replayed = replay_chain(self.chain, self.contracts, self.config.contract_timeout_ms)
            assert replayed.states == self.contract_states, (self.id, replayed.states, self.contract_states)
        for cb in self.block_observers:
            cb(self, block)

    def _fork_choice(self, remote: Chain) -> ForkChoice:
        return resolve_fork(self.chain, remote, self.config.difficulty, block_cap=self.config.block_cap)

    def adopt_chain(self, remote: Chain) -> None:
        """Switch to ``remote``: rebuild contract state by replay and re-pool orphaned transactions."""
        self._cancel_round("chain replaced")
        old = self.chain
        replay = replay_chain(remote, self.contracts, self.config.contract_timeout_ms, self.id)
        self.chain = remote
        self.contract_states = replay.states
        self.receipts = replay.receipts
        orphans = OrderedDict()
        for block in old.blocks[1:]:
            for tx in block.transactions:
                if not remote.contains_tx(tx.tx_id):
                    orphans[tx.tx_id] = tx
        for txid, tx in self.pending.items():
            if not remote.contains_tx(txid):
                orphans.setdefault(txid, tx)
        for txid, tx in self.awaiting.items():
            if not remote.contains_tx(txid):
                orphans.setdefault(txid, tx)
        self.awaiting.clear()
        self.pending = orphans
        self._pool_internal(replay.internal)
        self._note("adopted", remote.height, remote.tip.block_hash)
        self._block_applied(remote.tip)
        self._schedule_round()

    # protocol: update

    def _trigger_update(self, preferred: str | None) -> None:
        if self._update is not None and not self._update.done:
            return
        target = None
        if preferred and preferred != self.id and self.engine.bus.is_registered(preferred):
            target = preferred
            self.peers.add(preferred)
        elif self.peers:
            target = self.rng.choice(sorted(self.peers))
        if target is not None:
            self.request_update(target)

    def request_update(self, peer: str) -> Pending:
        """Ask ``peer`` for its chain and pools; adopt them if fork choice prefers them."""
        pending = Pending("update")
        self._update = pending

        def on_success(event: SwarmEvent) -> None:
            if pending.done:
                return
            timer.cancel()
            status = self._apply_update(event.payload)
            self._note("update", peer, status)
            pending.finish(status, peer)

        def on_timeout() -> None:
            if not pending.done:
                self._note("update", peer, TIMEOUT)
                pending.finish(TIMEOUT, peer)

        timer = self.executor.call_later(self.config.update_timeout, self.id, on_timeout)
        try:
            handle = self.engine.execute_swarm(INTERNAL, "ctor", ["direct", peer, self.id, "update"], self.client)
        except UnknownAdapter:
            timer.cancel()
            pending.finish(REJECTED, peer)
            return pending
        handle.on("update_success", on_success)
        pending.handle = handle
        return pending

    def _apply_update(self, payload: dict) -> str:
        try:
            update = UpdatePayload.from_dict(payload)
        except (KeyError, TypeError, ValueError):
            return REJECTED
        if self._fork_choice(update.chain) is not ForkChoice.ADOPT_REMOTE:
            return REJECTED
        self.adopt_chain(update.chain)
        for tx in update.pending_pool + update.awaiting_pool:
            if tx.is_well_formed() and not self.knows(tx.tx_id) and tx.computed_id() == tx.tx_id:
                self.pending[tx.tx_id] = tx
        self._schedule_round()
        return APPLIED

    def handle_update(self, requester: str) -> UpdatePayload:
        if requester != self.id:
            self.peers.add(requester)
        return UpdatePayload(self.chain, list(self.pending.values()), list(self.awaiting.values()))

    # inspection

    def snapshot(self) -> dict:
        return {
            "chainLength": len(self.chain),
            "tipHash": self.chain.tip.block_hash,
            "pendingCount": len(self.pending),
            "awaitingCount": len(self.awaiting),
            "peerCount": len(self.peers),
            "contractStates": copy.deepcopy(self.contract_states),
        }
