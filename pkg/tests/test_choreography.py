import pytest

from swarmchain.bus import Bus, UnknownAdapter
from swarmchain.canonical import canonical_encode
from swarmchain.choreography import (
    ALL,
    ChoreographyDescriptor,
    ChoreographyEngine,
    DuplicateChoreography,
    MalformedDescriptor,
    Phase,
    SwarmTimeout,
    UnknownChoreography,
    UnknownCtor,
    UnknownPhase,
    bind,
    dump_manifest,
    load_manifest,
)
from swarmchain.scheduler import DeterministicScheduler
from swarmchain.swarms import PINGPONG, pingpong_choreography

ADAPTERS = ("AdapterA", "AdapterB", "AdapterC")


def make_engine(seed=0):
    sched = DeterministicScheduler(seed)
    eng = ChoreographyEngine(Bus(sched))
    eng.register_choreography(pingpong_choreography())
    for a in ADAPTERS:
        eng.attach(a, "adapters")
    return sched, eng


def test_pingpong_broadcast():
    sched, eng = make_engine()
    handle = eng.client("AdapterA").execute(PINGPONG, "startBroadcast")
    result = handle.wait(100)
    assert result == {a: "pong" for a in ADAPTERS}
    pongs = sorted(e.payload for e in handle.events if e.name == "pong")
    assert pongs == list(ADAPTERS)
    assert sorted(handle.observed) == list(ADAPTERS)


def test_pingpong_direct():
    sched, eng = make_engine()
    handle = eng.client("AdapterA").execute(PINGPONG, "startDirect", "AdapterC")
    assert handle.wait(100) == {"AdapterC": "pong"}
    assert [e.payload for e in handle.events if e.name == "pong"] == ["AdapterC"]


def test_direct_to_unknown_adapter():
    sched, eng = make_engine()
    with pytest.raises(UnknownAdapter):
        eng.client("AdapterA").execute(PINGPONG, "startDirect", "Ghost")


def test_registry_errors():
    sched, eng = make_engine()
    with pytest.raises(DuplicateChoreography):
        eng.register_choreography(pingpong_choreography())
    with pytest.raises(UnknownChoreography):
        eng.client("AdapterA").execute("nope", "ctor")
    with pytest.raises(UnknownCtor):
        eng.client("AdapterA").execute(PINGPONG, "nope")


def test_unknown_phase():
    def ctor(swarm):
        swarm.broadcast("missing")

    desc = ChoreographyDescriptor({"name": "bad"}, {}, {"ctor": ctor}, {})
    sched, eng = make_engine()
    eng.register_choreography(desc)
    with pytest.raises(UnknownPhase):
        eng.client("AdapterA").execute("bad", "ctor")


def test_malformed_descriptor():
    f = lambda ctx: None  # noqa: E731
    with pytest.raises(MalformedDescriptor):
        ChoreographyDescriptor({}, {}, {}, {}).check()
    with pytest.raises(MalformedDescriptor):
        ChoreographyDescriptor({"name": "x"}, {}, {"a": f}, {"a": Phase("g", f)}).check()
    with pytest.raises(MalformedDescriptor):
        ChoreographyDescriptor({"name": "x"}, {}, {}, {"p": Phase("", f)}).check()


def test_late_binding_adapter_joins_after_registration():
    sched, eng = make_engine()
    eng.attach("AdapterD", "adapters")
    handle = eng.client("AdapterA").execute(PINGPONG, "startBroadcast")
    assert sorted(handle.wait(100)) == sorted(ADAPTERS + ("AdapterD",))


def test_manifest_roundtrip_and_bind(tmp_path):
    desc = pingpong_choreography()
    path = tmp_path / "manifest.json"
    path.write_bytes(dump_manifest([desc]))
    [entry] = load_manifest(path)
    assert entry["phases"] == {"pingBroadcast": "adapters", "pingDirect": "adapters", "pong": "adapters"}
    bound = bind(entry, desc.ctors, {p: ph.handler for p, ph in desc.phases.items()})
    assert bound.manifest() == desc.manifest()
    with pytest.raises(MalformedDescriptor):
        bind(entry, desc.ctors, {})
    single = tmp_path / "one.json"
    single.write_bytes(canonical_encode(desc.manifest()))
    assert load_manifest(single) == [entry]


def test_duplicate_result_flagged():
    def ctor(swarm):
        swarm.direct("p", "AdapterB")
        swarm.direct("p", "AdapterB")

    desc = ChoreographyDescriptor({"name": "twice"}, {}, {"ctor": ctor}, {"p": Phase("adapters", lambda ctx: 1)})
    sched, eng = make_engine()
    eng.register_choreography(desc)
    handle = eng.client("AdapterA").execute("twice", "ctor")
    handle.wait(50)
    results = [e for e in handle.events if e.name == "result"]
    assert [e.duplicate for e in results] == [False, True]
    assert handle.result == {"AdapterB": 1}


def test_none_result_not_collected():
    def ctor(swarm):
        swarm.broadcast("p")

    desc = ChoreographyDescriptor({"name": "quiet"}, {}, {"ctor": ctor}, {"p": Phase("adapters", lambda ctx: None)})
    sched, eng = make_engine()
    eng.register_choreography(desc)
    handle = eng.client("AdapterA").execute("quiet", "ctor")
    assert handle.wait(50) == {}
    assert handle.events == []


def test_events_in_emission_order():
    def ctor(swarm):
        swarm.direct("p", "AdapterB")

    def p(ctx):
        for i in range(5):
            ctx.emit("tick", i)

    desc = ChoreographyDescriptor({"name": "ev"}, {}, {"ctor": ctor}, {"p": Phase("adapters", p)})
    sched, eng = make_engine()
    eng.register_choreography(desc)
    handle = eng.client("AdapterA").execute("ev", "ctor")
    handle.wait(50)
    assert [e.payload for e in handle.events] == list(range(5))


def test_vars_snapshot_isolated_per_dispatch():
    seen = []

    def ctor(swarm):
        swarm.vars["x"] = 1
        swarm.direct("p", "AdapterB")
        swarm.vars["x"] = 2
        swarm.direct("p", "AdapterB")

    def p(ctx):
        seen.append(ctx.vars["x"])
        ctx.vars["x"] = 99

    desc = ChoreographyDescriptor({"name": "vars"}, {"x": 0}, {"ctor": ctor}, {"p": Phase("adapters", p)})
    sched, eng = make_engine()
    eng.register_choreography(desc)
    eng.client("AdapterA").execute("vars", "ctor").wait(50)
    assert seen == [1, 2]
    assert desc.vars == {"x": 0}


def test_all_phase_runs_inline_on_origin():
    ran = []

    def ctor(swarm):
        swarm.swarm("local")

    def local(ctx):
        ran.append(ctx.adapter_id)
        return "done"

    desc = ChoreographyDescriptor({"name": "local"}, {}, {"ctor": ctor}, {"local": Phase(ALL, local)})
    sched, eng = make_engine()
    eng.register_choreography(desc)
    handle = eng.execute_swarm("local", "ctor", [], None, origin="AdapterC")
    assert ran == ["AdapterC"] and handle.result == {"AdapterC": "done"}


def test_phase_exception_becomes_event():
    def ctor(swarm):
        swarm.direct("p", "AdapterB")

    def p(ctx):
        raise RuntimeError("boom")

    desc = ChoreographyDescriptor({"name": "err"}, {}, {"ctor": ctor}, {"p": Phase("adapters", p)})
    sched, eng = make_engine()
    eng.register_choreography(desc)
    handle = eng.client("AdapterA").execute("err", "ctor")
    handle.wait(50)
    [ev] = handle.events
    assert ev.name == "phase_error" and "boom" in ev.payload["error"]


def test_wait_timeout():
    def ctor(swarm):
        swarm.direct("p", "AdapterB")

    desc = ChoreographyDescriptor({"name": "slow"}, {}, {"ctor": ctor}, {"p": Phase("adapters", lambda c: 1)})
    sched, eng = make_engine()
    eng.bus.set_edge_delay("AdapterA", "AdapterB", 100)
    eng.register_choreography(desc)
    handle = eng.client("AdapterA").execute("slow", "ctor")
    with pytest.raises(SwarmTimeout):
        handle.wait(10)
    assert handle.wait(200) == {"AdapterB": 1}


def test_observe_results_false_suppresses_client_results():
    sched, eng = make_engine()
    handle = eng.client("AdapterA").execute(PINGPONG, "startBroadcast", observe_results=False)
    assert sorted(handle.wait(100)) == list(ADAPTERS)
    assert "result" not in handle.event_names()
    assert not any(t["kind"] == "result" for t in eng.transcript)


@pytest.mark.parametrize("seed", [0, 1, 7])
def test_transcript_deterministic(seed):
    def run():
        sched, eng = make_engine(seed)
        for a in ADAPTERS:
            eng.client(a).execute(PINGPONG, "startBroadcast")
        sched.run()
        return canonical_encode(eng.transcript)

    assert run() == run()
