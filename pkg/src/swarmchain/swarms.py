"""Reference choreographies: ping-pong, the miners' internal protocol, and addTransaction."""

from __future__ import annotations

from swarmchain.blockchain import Block, Transaction
from swarmchain.choreography import ChoreographyDescriptor, Phase, SwarmContext

MINERS = "miners"
INTERNAL = "internal"
ADD_TRANSACTION = "addTransaction"
PINGPONG = "pingpong"


def pingpong_choreography(group: str = "adapters") -> ChoreographyDescriptor:
    """Broadcast and direct ping-pong.

    Every adapter that runs a ping returns ``"pong"`` into the result map and
    sends a ``pong`` phase back to the caller, which surfaces it as an event.
    """

    def start_broadcast(swarm: SwarmContext) -> None:
        swarm.vars["caller"] = swarm.origin
        swarm.broadcast("pingBroadcast")

    def start_direct(swarm: SwarmContext, target: str) -> None:
        swarm.vars["caller"] = swarm.origin
        swarm.direct("pingDirect", target)

    def ping(ctx) -> str:
        ctx.direct("pong", ctx.vars["caller"], responder=ctx.adapter_id)
        return "pong"

    def pong(ctx) -> None:
        ctx.emit("pong", ctx.vars["responder"])

    return ChoreographyDescriptor(
        meta={"name": PINGPONG},
        vars={"caller": None, "responder": None},
        ctors={"startBroadcast": start_broadcast, "startDirect": start_direct},
        phases={
            "pingBroadcast": Phase(group, ping),
            "pingDirect": Phase(group, ping),
            "pong": Phase(group, pong),
        },
    )


def internal_choreography(group: str = MINERS) -> ChoreographyDescriptor:
    """Miner-to-miner protocol swarm.

    ``ctor("broadcast", sender, phase, params)`` runs ``phase`` on every miner;
    for ``announce`` it also emits ``announce_success`` with the dispatch count.
    ``ctor("direct", destination, sender, phase)`` runs ``phase`` on one miner.
    """

    def ctor(swarm: SwarmContext, mode: str, *args) -> None:
        if mode == "broadcast":
            sender, phase = args[0], args[1]
            params = args[2] if len(args) > 2 else None
            swarm.vars.update(mode=mode, sender=sender, phase=phase, params=params)
            count = swarm.broadcast(phase)
            if phase == "announce":
                swarm.emit("announce_success", count)
        elif mode == "direct":
            destination, sender, phase = args
            swarm.vars.update(mode=mode, sender=sender, target=destination, phase=phase)
            swarm.direct(phase, destination)
        else:
            raise ValueError(f"unknown internal mode {mode!r}")

    def announce(ctx) -> str:
        params = ctx.vars["params"] or {}
        return ctx.adapter.handle_announce(ctx.vars["sender"], params.get("chain"))

    def add_block(ctx) -> str:
        return ctx.adapter.receive_block(Block.from_dict(ctx.vars["params"]))

    def update(ctx) -> dict:
        payload = ctx.adapter.handle_update(ctx.vars["sender"]).to_dict()
        ctx.emit("update_success", payload)
        return payload

    return ChoreographyDescriptor(
        meta={"name": INTERNAL},
        vars={"mode": None, "sender": None, "target": None, "phase": None, "params": None},
        ctors={"ctor": ctor},
        phases={
            "announce": Phase(group, announce),
            "addBlock": Phase(group, add_block),
            "update": Phase(group, update),
        },
    )


def add_transaction_choreography(group: str = MINERS) -> ChoreographyDescriptor:
    """Client swarm that hands a transaction to every miner's pool."""

    def add_transaction(swarm: SwarmContext, transaction: dict) -> None:
        swarm.vars["transaction"] = transaction
        swarm.broadcast("sendTransaction")

    def send_transaction(ctx) -> str:
        return ctx.adapter.handle_send_transaction(Transaction.from_dict(ctx.vars["transaction"]))

    return ChoreographyDescriptor(
        meta={"name": ADD_TRANSACTION},
        vars={"transaction": None},
        ctors={"addTransaction": add_transaction},
        phases={"sendTransaction": Phase(group, send_transaction)},
    )
