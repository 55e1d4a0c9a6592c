import io
import shutil
import subprocess
import sys

import pytest

from swarmchain.canonical import canonical_decode, canonical_encode
from swarmchain.cli import main
from swarmchain.harness import ScenarioEvent

from tests.conftest import counter_scenario


@pytest.fixture
def config(tmp_path):
    p = tmp_path / "scenario.json"
    p.write_bytes(canonical_encode(counter_scenario(2, miners=3, n_txs=5, difficulty=6).to_dict()))
    return p


def test_run_writes_report(config, tmp_path, capsys):
    out = tmp_path / "report.json"
    assert main(["run", "--config", str(config), "--report", str(out)]) == 0
    report = canonical_decode(out.read_bytes().rstrip(b"\n"))
    assert report["converged"] is True
    assert canonical_decode(capsys.readouterr().out.strip())["tipHash"] == report["tipHash"]


def test_run_seed_override_is_deterministic(config, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["run", "--config", str(config), "--seed", "9", "--report", str(a)])
    main(["run", "--config", str(config), "--seed", "9", "--report", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_bytes(b'{"miners":0}')
    assert main(["run", "--config", str(p)]) == 2
    assert "$.miners" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == 2


def test_dump_verify_replay(config, tmp_path, capsys):
    chain = tmp_path / "chain.jsonl"
    assert main(["dump", "--config", str(config), "--miner", "miner1", "--out", str(chain)]) == 0
    assert main(["verify", str(chain)]) == 0
    capsys.readouterr()
    assert main(["replay-states", str(chain)]) == 0
    assert canonical_decode(capsys.readouterr().out.strip()) == {"counter": {"count": 5}}


def test_dump_unknown_miner(config, tmp_path):
    assert main(["dump", "--config", str(config), "--miner", "nobody", "--out", str(tmp_path / "x")]) == 2


def test_verify_tampered_exit_code(config, tmp_path, capsys):
    chain = tmp_path / "chain.jsonl"
    main(["dump", "--config", str(config), "--miner", "miner1", "--out", str(chain)])
    lines = chain.read_bytes().split(b"\n")
    block = canonical_decode(lines[1])
    block["nonce"] += 1
    lines[1] = canonical_encode(block)
    chain.write_bytes(b"\n".join(lines))
    capsys.readouterr()
    assert main(["verify", str(chain)]) == 1
    assert "line 2" in capsys.readouterr().err
    assert main(["replay-states", str(chain)]) == 1


def test_submit(config, capsys):
    rc = main(["submit", "--config", str(config), "--method", "increment", "--contract", "counter",
               "--sender", "client9"])
    out = canonical_decode(capsys.readouterr().out.strip())
    assert rc == 0 and out["onChain"] and out["converged"] and len(out["txId"]) == 64


def test_interactive(config, tmp_path, monkeypatch, capsys):
    chain = tmp_path / "c.jsonl"
    script = "\n".join([
        "submit --method increment --contract counter --sender alice",
        "bogus",
        "run",
        "state --miner miner2",
        f"dump --miner miner1 --out {chain}",
        "quit",
    ]) + "\n"
    monkeypatch.setattr(sys, "stdin", io.StringIO(script))
    assert main(["run", "--config", str(config), "--interactive"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    assert len(lines[0]) == 64
    assert lines[1].startswith("error")
    assert canonical_decode(lines[2])["converged"] is True
    assert canonical_decode(lines[3])["contractStates"] == {"counter": {"count": 6}}
    assert chain.exists()


def test_crash_scenario_still_converges(tmp_path):
    cfg = counter_scenario(3, miners=3, n_txs=4, difficulty=6,
                           extra=[ScenarioEvent(50, "crashMiner", {"name": "miner3"})])
    p = tmp_path / "c.json"
    p.write_bytes(canonical_encode(cfg.to_dict()))
    assert main(["run", "--config", str(p), "--report", str(tmp_path / "r.json")]) == 0


@pytest.mark.skipif(shutil.which("swarmchain") is None, reason="console script not installed")
def test_console_script(config):
    proc = subprocess.run(["swarmchain", "run", "--config", str(config)], capture_output=True)
    assert proc.returncode == 0
    assert canonical_decode(proc.stdout.strip())["converged"] is True
