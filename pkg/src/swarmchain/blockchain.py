"""Ledger primitives: transactions, blocks, chains, mining, validation and fork choice."""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Sequence

from swarmchain import pow as _pow
from swarmchain.canonical import canonical_encode, copy_value, digest_hex

ZERO_HASH = "0" * 64
DEFAULT_DIFFICULTY = 8
DEFAULT_BLOCK_CAP = 4
DEFAULT_CANCEL_EVERY = 1024


class ValidationError(Exception):
    """Base class for block and chain rule violations.

    ``rule`` names the failed rule; ``index`` is set by :func:`validate_chain`.
    """

    rule = "Invalid"

    def __init__(self, message: str = "", index: int | None = None):
        super().__init__(message or self.rule)
        self.index = index


class BadGenesis(ValidationError):
    rule = "BadGenesis"


class BadIndex(ValidationError):
    rule = "BadIndex"


class BadPrevHash(ValidationError):
    rule = "BadPrevHash"


class BadPow(ValidationError):
    rule = "BadPow"


class BadTxId(ValidationError):
    rule = "BadTxId"


class DuplicateTx(ValidationError):
    rule = "DuplicateTx"


class BadCount(ValidationError):
    rule = "BadCount"


class EmptyTxList(ValueError):
    pass


class TooManyTxs(ValueError):
    pass


class MiningCancelled(Exception):
    pass


def tx_id(sender: str, contract: str, params: dict, nonce: int, timestamp: int) -> str:
    return digest_hex(
        canonical_encode(
            {
                "sender": sender,
                "contract": contract,
                "params": params,
                "nonce": nonce,
                "timestamp": timestamp,
            }
        )
    )


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    sender: str
    contract: str
    params: dict
    nonce: int
    timestamp: int

    @classmethod
    def create(
        cls,
        sender: str,
        contract: str = "",
        params: dict | None = None,
        nonce: int = 0,
        timestamp: int = 0,
    ) -> "Transaction":
        params = copy_value(params or {})
        return cls(tx_id(sender, contract, params, nonce, timestamp), sender, contract, params, nonce, timestamp)

    def computed_id(self) -> str:
        return tx_id(self.sender, self.contract, self.params, self.nonce, self.timestamp)

    def is_well_formed(self) -> bool:
        if not isinstance(self.sender, str) or not isinstance(self.contract, str):
            return False
        if not isinstance(self.params, dict):
            return False
        if type(self.nonce) is not int or self.nonce < 0 or type(self.timestamp) is not int:
            return False
        if self.contract:
            method = self.params.get("method")
            if not isinstance(method, str) or not method:
                return False
        return True

    def __hash__(self) -> int:
        return hash(self.tx_id)

    @property
    def method(self) -> str | None:
        return self.params.get("method")

    def to_dict(self) -> dict:
        return {
            "txId": self.tx_id,
            "sender": self.sender,
            "contract": self.contract,
            "params": copy_value(self.params),
            "nonce": self.nonce,
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Transaction":
        try:
            return cls(d["txId"], d["sender"], d["contract"], d["params"], d["nonce"], d["timestamp"])
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed transaction: {exc}") from exc


def header_dict(
    index: int, prev_hash: str, timestamp: int, miner_id: str, difficulty: int, nonce: int, tx_ids: Sequence[str]
) -> dict:
    return {
        "index": index,
        "prevHash": prev_hash,
        "timestamp": timestamp,
        "minerId": miner_id,
        "difficulty": difficulty,
        "nonce": nonce,
        "txIds": list(tx_ids),
    }


def header_split(
    index: int, prev_hash: str, timestamp: int, miner_id: str, difficulty: int, tx_ids: Sequence[str]
) -> tuple[bytes, bytes]:
    """Canonical header bytes around the nonce: ``prefix + b"%d" % nonce + suffix``.

    Sorted key order puts ``nonce`` between ``minerId`` and ``prevHash``.
    """
    before = canonical_encode({"difficulty": difficulty, "index": index, "minerId": miner_id})
    after = canonical_encode({"prevHash": prev_hash, "timestamp": timestamp, "txIds": list(tx_ids)})
    return before[:-1] + b',"nonce":', b"," + after[1:]


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: str
    timestamp: int
    miner_id: str
    difficulty: int
    nonce: int
    transactions: tuple[Transaction, ...]
    block_hash: str

    def __hash__(self) -> int:
        return hash(self.block_hash)

    @property
    def tx_ids(self) -> list[str]:
        return [tx.tx_id for tx in self.transactions]

    def header(self) -> dict:
        return header_dict(
            self.index, self.prev_hash, self.timestamp, self.miner_id, self.difficulty, self.nonce, self.tx_ids
        )

    def computed_hash(self) -> str:
        return hash_block(self.header())

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "prevHash": self.prev_hash,
            "timestamp": self.timestamp,
            "minerId": self.miner_id,
            "difficulty": self.difficulty,
            "nonce": self.nonce,
            "transactions": [tx.to_dict() for tx in self.transactions],
            "blockHash": self.block_hash,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Block":
        try:
            return cls(
                d["index"],
                d["prevHash"],
                d["timestamp"],
                d["minerId"],
                d["difficulty"],
                d["nonce"],
                tuple(Transaction.from_dict(t) for t in d["transactions"]),
                d["blockHash"],
            )
        except (KeyError, TypeError) as exc:
            raise ValueError(f"malformed block: {exc}") from exc

    def encode(self) -> bytes:
        return canonical_encode(self.to_dict())


def hash_block(header: dict) -> str:
    """Digest of the canonical header; ``header`` holds txIds, never full transactions."""
    return digest_hex(canonical_encode(header))


def _make_genesis() -> Block:
    h = hash_block(header_dict(0, ZERO_HASH, 0, "genesis", 0, 0, []))
    return Block(0, ZERO_HASH, 0, "genesis", 0, 0, (), h)


GENESIS = _make_genesis()


class Chain:
    """Immutable sequence of blocks starting at :data:`GENESIS`.

    Construction does not validate; use :func:`validate_chain`.
    """

    __slots__ = ("blocks", "_tx_ids")

    def __init__(self, blocks: Iterable[Block] = (GENESIS,)):
        self.blocks: tuple[Block, ...] = tuple(blocks)
        self._tx_ids = frozenset(tx.tx_id for b in self.blocks for tx in b.transactions)

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def height(self) -> int:
        return len(self.blocks) - 1

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, i):
        return self.blocks[i]

    def __iter__(self):
        return iter(self.blocks)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Chain) and self.blocks == other.blocks

    def __hash__(self) -> int:
        return hash(self.tip.block_hash)

    def __repr__(self) -> str:
        return f"Chain(height={self.height}, tip={self.tip.block_hash[:12]})"

    def contains_tx(self, txid: str) -> bool:
        return txid in self._tx_ids

    def extended(self, block: Block) -> "Chain":
        return Chain(self.blocks + (block,))

    def to_list(self) -> list[dict]:
        return [b.to_dict() for b in self.blocks]

    @classmethod
    def from_list(cls, items: list[dict]) -> "Chain":
        return cls(Block.from_dict(d) for d in items)


def mine_block(
    prev: Block,
    txs: Sequence[Transaction],
    difficulty: int,
    miner_id: str,
    timestamp: int,
    *,
    block_cap: int = DEFAULT_BLOCK_CAP,
    should_cancel: Callable[[], bool] | None = None,
    cancel_every: int = DEFAULT_CANCEL_EVERY,
) -> Block:
    """Mine the next block on ``prev`` using the smallest satisfying nonce.

    ``should_cancel`` is consulted every ``cancel_every`` nonces; a true result
    raises :class:`MiningCancelled`.
    """
    if not txs:
        raise EmptyTxList("a block needs at least one transaction")
    if len(txs) > block_cap:
        raise TooManyTxs(f"{len(txs)} transactions exceed block cap {block_cap}")
    index = prev.index + 1
    ids = [tx.tx_id for tx in txs]
    prefix, suffix = header_split(index, prev.block_hash, timestamp, miner_id, difficulty, ids)
    start = 0
    while True:
        if should_cancel is not None and should_cancel():
            raise MiningCancelled(f"cancelled at nonce {start}")
        nonce = _pow.search_nonce(prefix, suffix, difficulty, start, start + cancel_every)
        if nonce >= 0:
            break
        start += cancel_every
    block_hash = digest_hex(prefix + b"%d" % nonce + suffix)
    return Block(index, prev.block_hash, timestamp, miner_id, difficulty, nonce, tuple(txs), block_hash)


meets_difficulty = _pow.meets_difficulty


def validate_block(block: Block, prev: Block, expected_difficulty: int, *, block_cap: int = DEFAULT_BLOCK_CAP) -> None:
    """Raise the first violated rule, in the order the rules are listed below."""
    if block.index != prev.index + 1:
        raise BadIndex(f"index {block.index} does not follow {prev.index}")
    if block.prev_hash != prev.block_hash:
        raise BadPrevHash(f"block {block.index} does not link to its parent")
    if block.difficulty != expected_difficulty:
        raise BadPow(f"difficulty {block.difficulty} != expected {expected_difficulty}")
    if not 1 <= len(block.transactions) <= block_cap:
        raise BadCount(f"{len(block.transactions)} transactions, allowed 1..{block_cap}")
    seen = set()
    for tx in block.transactions:
        if not tx.is_well_formed():
            raise BadTxId(f"malformed transaction {tx.tx_id}")
        try:
            ok = tx.computed_id() == tx.tx_id
        except ValueError:
            ok = False
        if not ok:
            raise BadTxId(f"transaction id {tx.tx_id} does not recompute")
        if tx.tx_id in seen:
            raise DuplicateTx(f"transaction {tx.tx_id} repeated in block")
        seen.add(tx.tx_id)
    try:
        recomputed = block.computed_hash()
    except ValueError as exc:
        raise BadPow(f"unhashable header: {exc}") from exc
    if recomputed != block.block_hash:
        raise BadPow("block hash does not recompute")
    if not meets_difficulty(block.block_hash, block.difficulty):
        raise BadPow("block hash misses the difficulty target")


def validate_chain(chain: Chain | Sequence[Block], difficulty: int, *, block_cap: int = DEFAULT_BLOCK_CAP) -> None:
    """Raise a :class:`ValidationError` carrying the first failing block index."""
    blocks = chain.blocks if isinstance(chain, Chain) else tuple(chain)
    if not blocks or blocks[0] != GENESIS:
        raise BadGenesis("chain must start at the genesis constant", index=0)
    seen: set[str] = set()
    for i in range(1, len(blocks)):
        try:
            validate_block(blocks[i], blocks[i - 1], difficulty, block_cap=block_cap)
            for tx in blocks[i].transactions:
                if tx.tx_id in seen:
                    raise DuplicateTx(f"transaction {tx.tx_id} already on chain")
                seen.add(tx.tx_id)
        except ValidationError as exc:
            exc.index = i
            raise


def is_valid_chain(chain: Chain, difficulty: int, *, block_cap: int = DEFAULT_BLOCK_CAP) -> bool:
    try:
        validate_chain(chain, difficulty, block_cap=block_cap)
    except ValidationError:
        return False
    return True


class ForkChoice(enum.Enum):
    KEEP_LOCAL = "keep-local"
    ADOPT_REMOTE = "adopt-remote"


def resolve_fork(
    local: Chain, remote: Chain, difficulty: int, *, block_cap: int = DEFAULT_BLOCK_CAP
) -> ForkChoice:
    """Longest valid chain wins; equal lengths go to the lower tip hash."""
    if not is_valid_chain(remote, difficulty, block_cap=block_cap):
        return ForkChoice.KEEP_LOCAL
    if len(remote) > len(local):
        return ForkChoice.ADOPT_REMOTE
    if len(remote) == len(local) and bytes.fromhex(remote.tip.block_hash) < bytes.fromhex(local.tip.block_hash):
        return ForkChoice.ADOPT_REMOTE
    return ForkChoice.KEEP_LOCAL


def chain_digest(chain: Chain) -> str:
    return digest_hex(b"\n".join(b.encode() for b in chain.blocks))


def field_paths(block: Block) -> list[tuple[Any, ...]]:
    """Every mutable leaf of a block's dict form, for tamper testing and tooling."""
    paths: list[tuple[Any, ...]] = [(k,) for k in block.to_dict() if k != "transactions"]
    for i, tx in enumerate(block.transactions):
        paths += [("transactions", i, k) for k in tx.to_dict()]
    return paths
