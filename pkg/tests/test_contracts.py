import pytest

from swarmchain.blockchain import Chain, Transaction
from swarmchain.choreography import ALL, ChoreographyDescriptor, MalformedDescriptor, Phase
from swarmchain.contracts import (
    ContractInvocation,
    ContractRegistry,
    ContractResult,
    DuplicateContract,
    UnknownContract,
    busy_contract,
    contract_descriptor,
    sample_counter_contract,
)
from swarmchain.harness import ScenarioConfig, Simulation


@pytest.fixture
def registry():
    reg = ContractRegistry(timeout_ms=500)
    reg.register_contract(sample_counter_contract())
    reg.register_contract(busy_contract())
    return reg


def call(reg, contract, params, state=None, nonce=0, **kw):
    tx = Transaction.create("client1", contract, params, nonce, 0)
    return reg.invoke(contract, ContractInvocation(tx, state, Chain()), **kw)


def test_counter_increment_from_null(registry):
    r = call(registry, "counter", {"method": "increment"})
    assert r.ok and r.new_state == {"count": 1}
    r = call(registry, "counter", {"method": "increment"}, state={"count": 4})
    assert r.new_state == {"count": 5}


def test_counter_get(registry):
    assert call(registry, "counter", {"method": "get"}).new_state == {"count": 0}
    assert call(registry, "counter", {"method": "get"}, state={"count": 3}).new_state == {"count": 3}


def test_unknown_method_is_error(registry):
    r = call(registry, "counter", {"method": "decrement"})
    assert r.outcome == ContractResult.ERROR and "decrement" in r.message


def test_unknown_contract(registry):
    tx = Transaction.create("c", "nope", {"method": "x"}, 0, 0)
    with pytest.raises(UnknownContract):
        registry.invoke("nope", ContractInvocation(tx, None, Chain()))


def test_busy_times_out(registry):
    r = call(registry, "busy", {"method": "spin"}, timeout_ms=50)
    assert r.outcome == ContractResult.TIMEOUT and r.new_state is None


def test_busy_within_budget(registry):
    r = call(registry, "busy", {"method": "spin", "ms": 40}, timeout_ms=50)
    assert r.ok and r.new_state == {"runs": 1}


def test_state_input_not_mutated(registry):
    state = {"count": 1}
    call(registry, "counter", {"method": "increment"}, state=state)
    assert state == {"count": 1}


def test_handler_exception_is_error(registry):
    def boom(call):
        raise KeyError("x")

    registry.register_contract(contract_descriptor("boom", {"go": boom}))
    r = call(registry, "boom", {"method": "go"})
    assert r.outcome == "error" and "KeyError" in r.message


def test_non_ledger_state_is_error(registry):
    registry.register_contract(contract_descriptor("floaty", {"go": lambda c: {"x": 0.5}}))
    assert call(registry, "floaty", {"method": "go"}).outcome == "error"


def test_duplicate_contract(registry):
    with pytest.raises(DuplicateContract):
        registry.register_contract(sample_counter_contract())


@pytest.mark.parametrize("mutate", [
    lambda d: d.vars.pop("chain"),
    lambda d: d.vars.update(extra=None),
    lambda d: d.ctors.update(other=d.ctors["ctor"]),
    lambda d: d.phases.update(bad=Phase("miners", lambda c: None)),
])
def test_malformed_contract_descriptor(registry, mutate):
    desc = sample_counter_contract("c2")
    mutate(desc)
    with pytest.raises(MalformedDescriptor):
        registry.register_contract(desc)


def test_descriptor_shape():
    desc = sample_counter_contract()
    assert isinstance(desc, ChoreographyDescriptor)
    assert set(desc.vars) == {"state", "method", "params", "chain", "transaction"}
    assert all(p.group == ALL for p in desc.phases.values())


def test_deterministic_across_executing_miners(registry):
    a = call(registry, "counter", {"method": "increment"}, state={"count": 2}, executing_miner="miner1")
    b = call(registry, "counter", {"method": "increment"}, state={"count": 2}, executing_miner="miner3")
    assert a == b


def test_internal_transactions(registry):
    def fan(call):
        call.internal("counter", {"method": "increment"})
        call.internal("counter", {"method": "increment"})
        return call.state

    registry.register_contract(contract_descriptor("fan", {"go": fan}))
    r = call(registry, "fan", {"method": "go"}, state={"k": 1})
    parent = Transaction.create("client1", "fan", {"method": "go"}, 0, 0).tx_id
    assert len(r.internal) == 2
    assert {tx.sender for tx in r.internal} == {"fan"}
    assert all(tx.params["parent"] == parent for tx in r.internal)
    assert len({tx.tx_id for tx in r.internal}) == 2
    assert r.summary()["internal"] == [tx.tx_id for tx in r.internal]


def test_chain_view_is_read_only(registry):
    seen = {}

    def peek(call):
        seen["len"] = len(call.chain)
        seen["tip"] = call.chain.tip_hash
        block = call.chain[0]
        block["index"] = 99
        return call.state

    registry.register_contract(contract_descriptor("peek", {"go": peek}))
    tx = Transaction.create("c", "peek", {"method": "go"}, 0, 0)
    chain = Chain()
    registry.invoke("peek", ContractInvocation(tx, None, chain))
    assert seen["len"] == 1 and chain.tip.index == 0


def test_no_execution_without_blocks():
    sim = Simulation(ScenarioConfig(seed=1, miners=3))
    sim.start()
    sim.run(max_time=200)
    assert sim.contracts.invocations == 0
    assert all(m.contract_states == {} for m in sim.live_miners())
