"""Command line: run scenarios, submit transactions, dump and verify chains, replay contract state.

Exit codes: 0 success, 1 validation failure (or a run that did not converge), 2 config error.
"""

from __future__ import annotations

import argparse
import shlex
import sys
from dataclasses import replace
from pathlib import Path

from swarmchain.canonical import NonCanonicalValue, canonical_decode, canonical_encode
from swarmchain.contracts import ContractRegistry, busy_contract, sample_counter_contract
from swarmchain.harness import (
    ChainFileError,
    ConfigError,
    NoMiners,
    ScenarioConfig,
    Simulation,
    verify_chain_file,
)
from swarmchain.miner import replay_chain

EXIT_OK, EXIT_INVALID, EXIT_CONFIG = 0, 1, 2


def _load_config(args) -> ScenarioConfig:
    cfg = ScenarioConfig.load(args.config)
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _write(data: bytes, path: str | None) -> None:
    if path:
        Path(path).write_bytes(data + b"\n")
    else:
        sys.stdout.write(data.decode("utf-8") + "\n")


def _params(text: str | None, method: str) -> dict:
    params = canonical_decode(text) if text else {}
    if not isinstance(params, dict):
        raise ConfigError("--params", "expected a JSON object")
    params["method"] = method
    return params


def _summary(sim: Simulation) -> bytes:
    rep = sim.report()
    return canonical_encode({"converged": rep.converged, "tipHash": rep.tip_hash,
                             "chainLength": rep.chain_length, "ticks": rep.ticks})


def cmd_run(args) -> int:
    cfg = _load_config(args)
    sim = Simulation(cfg)
    sim.start()
    if args.interactive:
        return _interactive(sim, args)
    sim.run()
    report = sim.report()
    _write(report.encode(), args.report)
    if args.report:
        print(_summary(sim).decode())
    return EXIT_OK if report.converged else EXIT_INVALID


def _interactive(sim: Simulation, args) -> int:
    """Read commands from stdin: submit, step, run, dump, state, report, quit."""
    parser = argparse.ArgumentParser(prog="", add_help=False, exit_on_error=False)
    sub = parser.add_subparsers(dest="cmd")
    p = sub.add_parser("submit", exit_on_error=False)
    p.add_argument("--method", required=True)
    p.add_argument("--contract", default="")
    p.add_argument("--sender", required=True)
    p.add_argument("--params")
    p = sub.add_parser("step", exit_on_error=False)
    p.add_argument("ticks", type=int)
    sub.add_parser("run", exit_on_error=False)
    p = sub.add_parser("dump", exit_on_error=False)
    p.add_argument("--miner", required=True)
    p.add_argument("--out", required=True)
    p = sub.add_parser("state", exit_on_error=False)
    p.add_argument("--miner", required=True)
    sub.add_parser("report", exit_on_error=False)
    sub.add_parser("quit", exit_on_error=False)
    for line in sys.stdin:
        if not line.strip():
            continue
        try:
            cmd = parser.parse_args(shlex.split(line))
        except (argparse.ArgumentError, SystemExit) as exc:
            print(f"error: {exc}", flush=True)
            continue
        try:
            if cmd.cmd == "submit":
                print(sim.submit_transaction(cmd.sender, cmd.contract, _params(cmd.params, cmd.method)), flush=True)
            elif cmd.cmd == "step":
                sim.run(max_time=sim.now + cmd.ticks)
                print(_summary(sim).decode(), flush=True)
            elif cmd.cmd == "run":
                sim.run(max_time=sim.now + sim.config.tick_budget)
                print(_summary(sim).decode(), flush=True)
            elif cmd.cmd == "dump":
                sim.dump_chain(cmd.miner, cmd.out)
                print(f"wrote {cmd.out}", flush=True)
            elif cmd.cmd == "state":
                print(canonical_encode(sim.miners[cmd.miner].snapshot()).decode(), flush=True)
            elif cmd.cmd == "report":
                _write(sim.report().encode(), args.report)
            elif cmd.cmd == "quit":
                break
        except (NoMiners, KeyError, ConfigError, NonCanonicalValue, ValueError) as exc:
            print(f"error: {type(exc).__name__}: {exc}", flush=True)
    return EXIT_OK if sim.converged() else EXIT_INVALID


def cmd_submit(args) -> int:
    """Play the scenario, submit one more transaction, run to quiescence and print its id."""
    cfg = _load_config(args)
    sim = Simulation(cfg)
    sim.start()
    last = max([e.at_tick for e in cfg.events] + [0])
    sim.run(max_time=last)
    try:
        txid = sim.submit_transaction(args.sender, args.contract, _params(args.params, args.method))
    except NoMiners as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    sim.run(max_time=sim.now + cfg.tick_budget)
    on_chain = all(m.chain.contains_tx(txid) for m in sim.live_miners())
    print(canonical_encode({"txId": txid, "onChain": on_chain, "converged": sim.converged()}).decode())
    return EXIT_OK if on_chain and sim.converged() else EXIT_INVALID


def cmd_dump(args) -> int:
    cfg = _load_config(args)
    sim = Simulation(cfg)
    sim.start()
    sim.run()
    if args.miner not in sim.miners:
        raise ConfigError("--miner", f"unknown miner {args.miner!r}")
    sim.dump_chain(args.miner, args.out)
    print(f"wrote {len(sim.miners[args.miner].chain)} blocks to {args.out}")
    return EXIT_OK


def cmd_verify(args) -> int:
    try:
        chain = verify_chain_file(args.file, args.difficulty, args.block_cap)
    except ChainFileError as exc:
        print(f"{exc.kind} line {exc.line}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    print(f"ok: {len(chain)} blocks, tip {chain.tip.block_hash}")
    return EXIT_OK


def cmd_replay(args) -> int:
    try:
        chain = verify_chain_file(args.file, args.difficulty, args.block_cap)
    except ChainFileError as exc:
        print(f"{exc.kind} line {exc.line}: {exc}", file=sys.stderr)
        return EXIT_INVALID
    contracts = ContractRegistry(timeout_ms=args.timeout_ms)
    contracts.register_contract(sample_counter_contract())
    contracts.register_contract(busy_contract())
    print(canonical_encode(replay_chain(chain, contracts).states).decode())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="swarmchain", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run a scenario and print or write its report")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--report")
    p.add_argument("--interactive", action="store_true", help="read commands from stdin")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("submit", help="submit a transaction after a scenario's events")
    p.add_argument("--config", required=True)
    p.add_argument("--method", required=True)
    p.add_argument("--contract", default="")
    p.add_argument("--sender", required=True)
    p.add_argument("--params", help="extra params as a JSON object")
    p.set_defaults(func=cmd_submit)

    p = sub.add_parser("dump", help="run a scenario and dump one miner's chain")
    p.add_argument("--config", required=True)
    p.add_argument("--miner", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_dump)

    for name, func, text in (("verify", cmd_verify, "validate a dumped chain file"),
                             ("replay-states", cmd_replay, "print contract states replayed from a chain file")):
        p = sub.add_parser(name, help=text)
        p.add_argument("file")
        p.add_argument("--difficulty", type=int)
        p.add_argument("--block-cap", type=int)
        if name == "replay-states":
            p.add_argument("--timeout-ms", type=int, default=500)
        p.set_defaults(func=func)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
