import pytest

from swarmchain.blockchain import MiningCancelled, mine_block
from swarmchain.harness import ScenarioConfig, Simulation
from swarmchain.miner import (
    ACCEPTED,
    APPLIED,
    DUPLICATE,
    INVALID,
    POOLED,
    REJECTED,
    STALE,
    TIMEOUT,
    UNSYNCED,
    InvalidBlock,
    replay_chain,
    replay_contract_states,
)

from tests.conftest import build_chain, make_tx


def network(n=4, seed=1, difficulty=6, **kw):
    sim = Simulation(ScenarioConfig(seed=seed, miners=n, difficulty_bits=difficulty, **kw))
    sim.start()
    sim.run(max_time=100)
    return sim


def test_join_counts():
    sim = network(4)
    for m in sim.live_miners():
        assert m.join.status == "complete"
        assert m.join.value.expected == 4 and len(m.join.value.responders) == 4
        assert m.peers == {n for n in sim.miners if n != m.id}


def test_single_miner_join():
    sim = network(1)
    [m] = sim.live_miners()
    assert m.join.status == "complete" and m.join.value.expected == 1 and m.peers == set()


def test_crash_during_announce_times_out():
    sim = network(3)
    joiner = sim.add_miner("miner4")
    sim.crash_miner("miner3")
    sim.run(max_time=sim.now + 200)
    assert joiner.join.status == TIMEOUT
    assert joiner.join.value.expected == 4
    assert joiner.peers == {"miner1", "miner2"}


def test_send_transaction_classification():
    sim = network(1)
    m = sim.miners["miner1"]
    tx = make_tx(0)
    assert m.handle_send_transaction(tx) == POOLED
    assert m.handle_send_transaction(tx) == DUPLICATE
    forged = type(tx)(tx.sender, tx.contract, tx.params, tx.nonce + 1, tx.timestamp, tx.tx_id)
    assert m.handle_send_transaction(forged) == INVALID


def test_mining_round_commits_block():
    sim = network(1)
    m = sim.miners["miner1"]
    for i in range(6):
        m.pending[make_tx(i).tx_id] = make_tx(i)
    block = m.mining_round()
    assert block.index == 1 and len(block.transactions) == 4
    assert m.chain.tip == block and len(m.pending) == 2 and not m.awaiting
    assert m.contract_states == {"counter": {"count": 4}}
    assert m.mining_round().index == 2 and m.mining_round() is None


def test_mining_round_cancel_returns_txs():
    sim = network(1, difficulty=20)
    m = sim.miners["miner1"]
    txs = [make_tx(i) for i in range(2)]
    for tx in txs:
        m.pending[tx.tx_id] = tx
    with pytest.raises(MiningCancelled):
        m.mining_round(should_cancel=lambda: True)
    assert list(m.pending) == [tx.tx_id for tx in txs] and not m.awaiting


def test_add_block_outcomes():
    sim = network(1, difficulty=4)
    m = sim.miners["miner1"]
    ext = build_chain(3, difficulty=4)
    assert m.handle_add_block(ext[2]) == UNSYNCED
    assert m.handle_add_block(ext[1]) == ACCEPTED
    assert m.handle_add_block(ext[1]) == STALE
    assert m.contract_states == {"counter": {"count": 1}}
    bad = mine_block(ext[1], [make_tx(50)], 4, "x", 5)
    object.__setattr__(bad, "nonce", bad.nonce + 1)
    with pytest.raises(InvalidBlock):
        m.handle_add_block(bad)
    assert m.receive_block(bad) == INVALID


def test_add_block_rejects_tx_already_on_chain():
    sim = network(1, difficulty=4)
    m = sim.miners["miner1"]
    ext = build_chain(1, difficulty=4)
    m.handle_add_block(ext[1])
    again = mine_block(ext[1], list(ext[1].transactions), 4, "x", 9)
    with pytest.raises(InvalidBlock):
        m.handle_add_block(again)


def test_request_update_applied_and_rejected():
    sim = network(2, difficulty=4)
    a, b = sim.miners["miner1"], sim.miners["miner2"]
    a.adopt_chain(build_chain(3, difficulty=4))
    p = b.request_update("miner1")
    sim.run(max_time=sim.now + 50)
    assert p.status == APPLIED and b.chain == a.chain
    p = b.request_update("miner1")
    sim.run(max_time=sim.now + 50)
    assert p.status == REJECTED


def test_request_update_timeout_on_crashed_peer():
    sim = network(2, difficulty=4)
    sim.crash_miner("miner1")
    p = sim.miners["miner2"].request_update("miner1")
    sim.run(max_time=sim.now + 200)
    assert p.status == TIMEOUT


def test_request_update_unknown_peer():
    sim = network(1)
    assert sim.miners["miner1"].request_update("ghost").status == REJECTED


def test_handle_update_snapshot():
    sim = network(1)
    m = sim.miners["miner1"]
    tx = make_tx(0)
    m.pending[tx.tx_id] = tx
    payload = m.handle_update("other").to_dict()
    assert payload["chain"] == m.chain.to_list()
    assert [t["txId"] for t in payload["pendingPool"]] == [tx.tx_id]
    assert payload["awaitingPool"] == []
    assert "other" in m.peers


def test_adopt_chain_repools_orphans():
    sim = network(1, difficulty=4)
    m = sim.miners["miner1"]
    mine = make_tx(77, sender="mine")
    m.pending[mine.tx_id] = mine
    m.mining_round()
    longer = build_chain(2, difficulty=4, seed=5)
    m.adopt_chain(longer)
    assert m.chain == longer
    assert mine.tx_id in m.pending
    assert m.contract_states == {"counter": {"count": 2}}


def test_replay_matches_states():
    chain = build_chain(4, difficulty=4, per_block=2)
    sim = network(1, difficulty=4)
    r = replay_chain(chain, sim.contracts)
    assert r.states == {"counter": {"count": 8}}
    assert len(r.receipts) == 8
    assert replay_contract_states(chain, sim.contracts) == r.states


def test_snapshot_keys():
    sim = network(2)
    snap = sim.miners["miner1"].snapshot()
    assert set(snap) == {"chainLength", "tipHash", "pendingCount", "awaitingCount", "peerCount", "contractStates"}
    assert snap["chainLength"] == 1 and snap["peerCount"] == 1


def test_block_observers_fire():
    sim = network(1, difficulty=4)
    m = sim.miners["miner1"]
    seen = []
    m.block_observers.append(lambda miner, block: seen.append(block.index))
    m.handle_add_block(build_chain(1, difficulty=4)[1])
    assert seen == [1]

