"""Scenario simulation: N miners on the in-process bus under the seeded scheduler.

Also owns the chain dump format (one canonical JSON block per line) and its
verifier.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from swarmchain.blockchain import (
    DEFAULT_BLOCK_CAP,
    DEFAULT_DIFFICULTY,
    Block,
    Chain,
    Transaction,
    ValidationError,
    validate_chain,
)
from swarmchain.bus import Bus
from swarmchain.canonical import NonCanonicalValue, canonical_decode, canonical_encode, is_canonical
from swarmchain.choreography import ChoreographyEngine, SwarmHandle
from swarmchain.contracts import DEFAULT_TIMEOUT_MS, ContractRegistry, busy_contract, sample_counter_contract
from swarmchain.miner import Miner, MinerConfig
from swarmchain.scheduler import DeterministicScheduler
from swarmchain.swarms import ADD_TRANSACTION, MINERS, add_transaction_choreography, internal_choreography

ACTIONS = ("submitTx", "joinMiner", "crashMiner", "delayEdge")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class NoMiners(RuntimeError):
    pass


class ChainFileError(Exception):
    """``kind`` is IoError, ParseError or a validation rule name; ``line`` is 1-based."""

    def __init__(self, kind: str, line: int, message: str = ""):
        super().__init__(f"{kind} at line {line}: {message}" if message else f"{kind} at line {line}")
        self.kind = kind
        self.line = line


@dataclass
class ScenarioEvent:
    at_tick: int
    action: str
    args: dict

    def to_dict(self) -> dict:
        return {"atTick": self.at_tick, "action": {self.action: self.args}}


def _int(d: dict, key: str, path: str, default: int | None = None, minimum: int | None = None) -> int:
    if key not in d:
        if default is None:
            raise ConfigError(f"{path}.{key}", "required")
        return default
    v = d[key]
    if type(v) is not int:
        raise ConfigError(f"{path}.{key}", f"expected integer, got {v!r}")
    if minimum is not None and v < minimum:
        raise ConfigError(f"{path}.{key}", f"must be >= {minimum}")
    return v


def _name(d: dict, key: str, path: str) -> str:
    v = d.get(key)
    if not isinstance(v, str) or not v:
        raise ConfigError(f"{path}.{key}", "expected non-empty string")
    return v


@dataclass
class ScenarioConfig:
    seed: int = 0
    miners: int = 1
    difficulty_bits: int = DEFAULT_DIFFICULTY
    block_cap: int = DEFAULT_BLOCK_CAP
    contract_timeout_ms: int = DEFAULT_TIMEOUT_MS
    tick_budget: int = 5000
    hashes_per_tick: int = 64
    latency: int = 1
    events: list[ScenarioEvent] = field(default_factory=list)

    def miner_names(self) -> list[str]:
        return [f"miner{i}" for i in range(1, self.miners + 1)]

    @classmethod
    def from_dict(cls, d: Any) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("$", "config must be an object")
        known = {"seed", "miners", "difficultyBits", "blockCap", "contractTimeoutMs", "tickBudget",
                 "hashesPerTick", "latency", "events"}
        for key in d:
            if key not in known:
                raise ConfigError(f"$.{key}", "unknown field")
        cfg = cls(
            seed=_int(d, "seed", "$", 0),
            miners=_int(d, "miners", "$", 1, minimum=1),
            difficulty_bits=_int(d, "difficultyBits", "$", DEFAULT_DIFFICULTY, minimum=0),
            block_cap=_int(d, "blockCap", "$", DEFAULT_BLOCK_CAP, minimum=1),
            contract_timeout_ms=_int(d, "contractTimeoutMs", "$", DEFAULT_TIMEOUT_MS, minimum=0),
            tick_budget=_int(d, "tickBudget", "$", 5000, minimum=1),
            hashes_per_tick=_int(d, "hashesPerTick", "$", 64, minimum=1),
            latency=_int(d, "latency", "$", 1, minimum=0),
        )
        if cfg.difficulty_bits > 256:
            raise ConfigError("$.difficultyBits", "must be <= 256")
        raw = d.get("events", [])
        if not isinstance(raw, list):
            raise ConfigError("$.events", "expected a list")
        names = set(cfg.miner_names())
        last = 0
        for i, ev in enumerate(raw):
            path = f"$.events[{i}]"
            if not isinstance(ev, dict) or set(ev) != {"atTick", "action"}:
                raise ConfigError(path, "expected {atTick, action}")
            at = _int(ev, "atTick", path, minimum=0)
            if at < last:
                raise ConfigError(f"{path}.atTick", "events must be sorted by atTick")
            last = at
            action = ev["action"]
            if not isinstance(action, dict) or len(action) != 1:
                raise ConfigError(f"{path}.action", "expected a single-key object")
            (kind, args), = action.items()
            apath = f"{path}.action.{kind}"
            if kind not in ACTIONS:
                raise ConfigError(apath, f"unknown action, expected one of {ACTIONS}")
            if not isinstance(args, dict):
                raise ConfigError(apath, "expected an object")
            if kind == "submitTx":
                _name(args, "sender", apath)
                if not isinstance(args.get("contract", ""), str):
                    raise ConfigError(f"{apath}.contract", "expected string")
                params = args.get("params", {})
                if not isinstance(params, dict):
                    raise ConfigError(f"{apath}.params", "expected object")
                if args.get("contract") and not isinstance(params.get("method"), str):
                    raise ConfigError(f"{apath}.params.method", "required for contract transactions")
                for k in ("nonce", "timestamp"):
                    if k in args:
                        _int(args, k, apath, minimum=0)
                try:
                    canonical_encode(params)
                except NonCanonicalValue as exc:
                    raise ConfigError(f"{apath}.params", str(exc)) from exc
            elif kind == "joinMiner":
                name = _name(args, "name", apath)
                if name in names:
                    raise ConfigError(f"{apath}.name", f"miner {name!r} already exists")
                names.add(name)
            elif kind == "crashMiner":
                if _name(args, "name", apath) not in names:
                    raise ConfigError(f"{apath}.name", "unknown miner")
            elif kind == "delayEdge":
                for k in ("from", "to"):
                    if _name(args, k, apath) not in names:
                        raise ConfigError(f"{apath}.{k}", "unknown miner")
                _int(args, "ticks", apath, minimum=0)
            cfg.events.append(ScenarioEvent(at, kind, args))
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ScenarioConfig":
        raw = Path(path).read_bytes()
        body = raw[:-1] if raw.endswith(b"\n") else raw
        if not is_canonical(body):
            raise ConfigError("$", "config file is not canonical JSON (sorted keys, no whitespace)")
        try:
            data = canonical_decode(body)
        except (ValueError, NonCanonicalValue) as exc:
            raise ConfigError("$", f"not canonical JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "miners": self.miners,
            "difficultyBits": self.difficulty_bits,
            "blockCap": self.block_cap,
            "contractTimeoutMs": self.contract_timeout_ms,
            "tickBudget": self.tick_budget,
            "hashesPerTick": self.hashes_per_tick,
            "latency": self.latency,
            "events": [e.to_dict() for e in self.events],
        }


@dataclass
class RunReport:
    converged: bool
    tip_hash: str
    chain_length: int
    per_miner: dict
    event_transcript: list
    ticks: int
    crashed: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "converged": self.converged,
            "tipHash": self.tip_hash,
            "chainLength": self.chain_length,
            "perMiner": self.per_miner,
            "eventTranscript": self.event_transcript,
            "ticks": self.ticks,
            "crashed": self.crashed,
        }

    def encode(self) -> bytes:
        return canonical_encode(self.to_dict())


class Simulation:
    """A live network: scheduler, bus, engine, contracts and miners.

    Use :meth:`run` to advance simulated time. All randomness derives from
    the config seed.
    """

    def __init__(self, config: ScenarioConfig | None = None, *, contracts: list | None = None):
        self.config = config or ScenarioConfig()
        self.scheduler = DeterministicScheduler(self.config.seed)
        self.bus = Bus(self.scheduler, latency=self.config.latency)
        self.engine = ChoreographyEngine(self.bus)
        self.contracts = ContractRegistry(self.engine, self.config.contract_timeout_ms)
        for desc in contracts if contracts is not None else [sample_counter_contract(), busy_contract()]:
            self.contracts.register_contract(desc)
        self.engine.register_choreography(internal_choreography(MINERS))
        self.engine.register_choreography(add_transaction_choreography(MINERS))
        self.rng = random.Random(f"simulation:{self.config.seed}")
        self.miners: dict[str, Miner] = {}
        self.crashed: set[str] = set()
        self._nonces: dict[str, int] = {}
        self.submissions: list[SwarmHandle] = []
        self.join_ticks: dict[str, int] = {}

    @property
    def now(self) -> int:
        return self.scheduler.now

    def miner_config(self) -> MinerConfig:
        c = self.config
        return MinerConfig(
            difficulty=c.difficulty_bits,
            block_cap=c.block_cap,
            contract_timeout_ms=c.contract_timeout_ms,
            hashes_per_tick=c.hashes_per_tick,
        )

    def add_miner(self, name: str, join: bool = True) -> Miner:
        miner = Miner(name, self.engine, self.contracts, self.miner_config(),
                      random.Random(f"miner:{self.config.seed}:{name}"))
        miner.attach()
        self.miners[name] = miner
        if join:
            self.join_ticks[name] = self.now
            miner.join_network()
        return miner

    def start(self) -> None:
        """Register the initial miners, each announcing itself on its own inbox at tick 0."""
        for name in self.config.miner_names():
            miner = self.add_miner(name, join=False)
            self.join_ticks[name] = self.now
            self.scheduler.submit(name, miner.join_network)
        for ev in self.config.events:
            self.scheduler.call_later(ev.at_tick - self.now if ev.at_tick >= self.now else 0,
                                      "harness", lambda ev=ev: self.apply(ev))

    def apply(self, ev: ScenarioEvent) -> None:
        a = ev.args
        if ev.action == "submitTx":
            self.submit_transaction(a["sender"], a.get("contract", ""), a.get("params", {}),
                                    nonce=a.get("nonce"), timestamp=a.get("timestamp"))
        elif ev.action == "joinMiner":
            self.add_miner(a["name"])
        elif ev.action == "crashMiner":
            self.crash_miner(a["name"])
        elif ev.action == "delayEdge":
            self.bus.set_edge_delay(a["from"], a["to"], a["ticks"])

    def submit_transaction(
        self,
        sender: str,
        contract: str = "",
        params: dict | None = None,
        *,
        nonce: int | None = None,
        timestamp: int | None = None,
        client: str = "client",
    ) -> str:
        """Run the addTransaction swarm from a client; returns the transaction id."""
        if not self.bus.list_group(MINERS):
            raise NoMiners("the miners group is empty")
        if nonce is None:
            nonce = self._nonces.get(sender, 0)
        self._nonces[sender] = max(self._nonces.get(sender, 0), nonce + 1)
        tx = Transaction.create(sender, contract, params or {}, nonce, self.now if timestamp is None else timestamp)
        handle = self.engine.client(client).execute(ADD_TRANSACTION, "addTransaction", tx.to_dict())
        self.submissions.append(handle)
        return tx.tx_id

    def crash_miner(self, name: str) -> None:
        """The miner stops processing anything; peers are not told."""
        miner = self.miners[name]
        miner.crashed = True
        self.crashed.add(name)
        self.scheduler.kill(name)

    def live_miners(self) -> list[Miner]:
        return [m for n, m in sorted(self.miners.items()) if n not in self.crashed]

    def run(self, until: Callable[[], bool] | None = None, max_time: int | None = None) -> bool:
        limit = self.config.tick_budget if max_time is None else max_time
        return self.scheduler.run(until=until, max_time=limit)

    def converged(self) -> bool:
        live = self.live_miners()
        if not live:
            return True
        tip = live[0].chain.tip.block_hash
        return all(m.chain.tip.block_hash == tip for m in live)

    def best_tip(self) -> Chain:
        live = self.live_miners() or list(self.miners.values())
        best = live[0].chain
        for m in live[1:]:
            c = m.chain
            if len(c) > len(best) or (len(c) == len(best) and c.tip.block_hash < best.tip.block_hash):
                best = c
        return best

    def transcript(self) -> list[dict]:
        return list(self.engine.transcript)

    def report(self) -> RunReport:
        best = self.best_tip()
        per = {}
        for m in self.live_miners():
            snap = m.snapshot()
            per[m.id] = {
                "chainLength": snap["chainLength"],
                "tipHash": snap["tipHash"],
                "pendingCount": snap["pendingCount"],
                "peerCount": snap["peerCount"],
                "contractStates": snap["contractStates"],
            }
        return RunReport(
            converged=self.converged(),
            tip_hash=best.tip.block_hash,
            chain_length=len(best),
            per_miner=per,
            event_transcript=self.transcript(),
            ticks=self.now,
            crashed=sorted(self.crashed),
        )

    def dump_chain(self, miner_id: str, path: str | Path) -> None:
        dump_chain(self.miners[miner_id].chain, path)


def run_scenario(config: ScenarioConfig) -> RunReport:
    """Build the network, play the scenario and run to quiescence or the tick budget."""
    sim = Simulation(config)
    sim.start()
    sim.run()
    return sim.report()


def simulate(config: ScenarioConfig) -> Simulation:
    """Like :func:`run_scenario` but returns the simulation for inspection."""
    sim = Simulation(config)
    sim.start()
    sim.run()
    return sim


def dump_chain(chain: Chain, path: str | Path) -> None:
    with open(path, "wb") as fh:
        for block in chain.blocks:
            fh.write(block.encode() + b"\n")


def read_chain_file(path: str | Path) -> Chain:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ChainFileError("IoError", 0, str(exc)) from exc
    lines = data.split(b"\n")
    if lines and lines[-1] == b"":
        lines.pop()
    if not lines:
        raise ChainFileError("ParseError", 1, "empty file; genesis required")
    blocks = []
    for n, line in enumerate(lines, start=1):
        if not is_canonical(line):
            raise ChainFileError("ParseError", n, "not a canonical JSON block")
        try:
            blocks.append(Block.from_dict(canonical_decode(line)))
        except (ValueError, TypeError) as exc:
            raise ChainFileError("ParseError", n, str(exc)) from exc
    return Chain(blocks)


def verify_chain_file(path: str | Path, difficulty: int | None = None, block_cap: int | None = None) -> Chain:
    """Parse and validate a dumped chain. Raises :class:`ChainFileError` at the first bad line.

    Without ``difficulty`` the first mined block's value is used for all blocks.
    """
    chain = read_chain_file(path)
    if difficulty is None:
        difficulty = chain[1].difficulty if len(chain) > 1 and type(chain[1].difficulty) is int else 0
    if block_cap is None:
        block_cap = max([DEFAULT_BLOCK_CAP] + [len(b.transactions) for b in chain])
    try:
        validate_chain(chain, difficulty, block_cap=block_cap)
    except ValidationError as exc:
        raise ChainFileError(exc.rule, (exc.index or 0) + 1, str(exc)) from exc
    except (TypeError, ValueError, AttributeError) as exc:
        raise ChainFileError("ParseError", 0, str(exc)) from exc
    return chain
