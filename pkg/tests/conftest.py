import random

import pytest

from swarmchain.blockchain import GENESIS, Chain, Transaction, mine_block
from swarmchain.harness import ScenarioConfig, ScenarioEvent


def make_tx(i: int, sender: str = "client1", contract: str = "counter", method: str = "increment") -> Transaction:
    params = {"method": method} if contract else {"note": i}
    return Transaction.create(sender, contract, params, nonce=i, timestamp=i)


def build_chain(n_blocks: int, difficulty: int = 4, seed: int = 0, miner: str = "MinerA", per_block: int = 1,
                base: Chain | None = None) -> Chain:
    """Honest chain of ``n_blocks`` mined blocks on top of ``base`` (genesis by default)."""
    rng = random.Random(seed)
    chain = base or Chain()
    start = len(chain) * 10
    for b in range(n_blocks):
        txs = [
            Transaction.create(f"s{rng.randrange(4)}", "counter", {"method": "increment"},
                               nonce=start + b * per_block + k, timestamp=rng.randrange(10_000) + seed * 100_000)
            for k in range(per_block)
        ]
        block = mine_block(chain.tip, txs, difficulty, miner, chain.tip.timestamp + 1)
        chain = chain.extended(block)
    return chain


def counter_scenario(seed: int, miners: int = 4, n_txs: int = 10, difficulty: int = 8, extra=()) -> ScenarioConfig:
    rng = random.Random(seed)
    events = [
        ScenarioEvent(rng.randint(0, 300), "submitTx",
                      {"sender": f"client{rng.randint(1, 3)}", "contract": "counter", "params": {"method": "increment"}})
        for _ in range(n_txs)
    ]
    events += list(extra)
    events.sort(key=lambda e: e.at_tick)
    return ScenarioConfig(seed=seed, miners=miners, difficulty_bits=difficulty, events=events)


@pytest.fixture
def genesis():
    return GENESIS


@pytest.fixture
def chain5():
    return build_chain(5, difficulty=4)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
