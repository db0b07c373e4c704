from __future__ import annotations

import json
import shutil
from pathlib import Path

import pytest

from compcbf.casestudies import data_json
from compcbf.cli import EXIT_CONFIG, EXIT_OK, EXIT_SYNTH, EXIT_VERIFY, main

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "tests" / "golden" / "example1"
CONFIGS = ROOT / "configs"
ROOM_KEY = {"q": "q0", "q_next": "q1", "successors": ["q1", "q2"]}


def write_json(path: Path, obj) -> Path:
    path.write_text(json.dumps(obj))
    return path


def test_decompose_matches_golden_files(tmp_path):
    cfg = write_json(tmp_path / "a.json", data_json("example1.json"))
    assert main(["decompose", "--config", str(cfg), "--out", str(tmp_path / "out")]) == EXIT_OK
    for name in ("fragments.json", "fragments_by_prop.json", "triplets.json"):
        assert (tmp_path / "out" / name).read_bytes() == (GOLDEN / name).read_bytes()
    assert (tmp_path / "out" / "switching.dot").read_text().startswith("digraph switching {")


def test_decompose_rooms_reports_single_certificate(tmp_path, capsys):
    cfg = write_json(tmp_path / "c.json", {"automaton": "bundled:rooms_dca.json",
                                           "system": {"builder": "rooms", "n": 3}})
    assert main(["decompose", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    assert "only partition (q0,q1,{q1,q2}) needs a certificate" in capsys.readouterr().out


def test_smallgain_rooms(tmp_path):
    cfg = write_json(tmp_path / "c.json", {"automaton": "bundled:rooms_dca.json",
                                           "system": {"builder": "rooms", "n": 5}})
    assert main(["check-smallgain", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    gains = json.loads((tmp_path / "o" / "gains.json").read_text())
    entry = gains["(q0,q1,{q1,q2})"]
    assert entry["small_gain"]
    assert entry["gains"][0]["gain"]["linear"] == pytest.approx(0.5 / (0.35 * (1 - 1e-9)) / 1.5, rel=1e-9)


def _room_verify_config(tmp_path, cert) -> Path:
    cert_path = write_json(tmp_path / "cert.json", cert)
    return write_json(tmp_path / "v.json", {
        "automaton": "bundled:rooms_dca.json", "system": {"builder": "rooms", "n": 3},
        "certificates": [{"key": ROOM_KEY, "file": str(cert_path)}],
        "verification": {"grid_resolution": 0.5, "internal_step": 5.0, "tolerance": 0.05, "samples": 200}})


def test_verify_rooms_reports_failing_local_stage(tmp_path):
    cfg = _room_verify_config(tmp_path, data_json("rooms_cert.json"))
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_VERIFY
    res = json.loads((tmp_path / "o" / "verification.json").read_text())["(q0,q1,{q1,q2})"]
    status = {s["stage"]: s["passed"] for s in res["stages"]}
    assert status == {"local": False, "small-gain": True, "level": True, "composed-decrease": True}
    local = res["stages"][0]["report"]["conditions"]
    assert [k for k, v in local.items() if v["status"] != "pass"] == ["decrease"]


def test_verify_detects_tampered_levels(tmp_path):
    cert = data_json("rooms_cert.json")
    cert["eps_lower"] = 10.0
    cfg = _room_verify_config(tmp_path, cert)
    assert main(["verify", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_VERIFY
    res = json.loads((tmp_path / "o" / "verification.json").read_text())["(q0,q1,{q1,q2})"]
    level = [s for s in res["stages"] if s["stage"] == "level"][0]
    assert not level["passed"] and "level condition fails" in level["error"]
    assert "failed stage(s): local, level" in (tmp_path / "o" / "verification.txt").read_text()


def test_synthesize_then_verify(tmp_path):
    shutil.copy(CONFIGS / "toy_synthesis.json", tmp_path / "syn.json")
    shutil.copy(CONFIGS / "toy_verify.json", tmp_path / "ver.json")
    assert main(["synthesize", "--config", str(tmp_path / "syn.json")]) == EXIT_OK
    assert (tmp_path / "out" / "toy" / "cert_toy.json").exists()
    assert (tmp_path / "out" / "toy" / "synthesis_log_toy.csv").exists()
    assert main(["verify", "--config", str(tmp_path / "ver.json")]) == EXIT_OK


def test_synthesize_overlap_and_budget_exit_codes(tmp_path):
    out = tmp_path / "o"
    assert main(["synthesize", "--config", str(CONFIGS / "overlap_synthesis.json"), "--out", str(out)]) == EXIT_SYNTH
    failure = json.loads((out / "synthesis_failure_overlap.json").read_text())
    assert failure["iterations"] == 0 and "overlap" in failure["reason"]
    assert main(["synthesize", "--config", str(CONFIGS / "budget_synthesis.json"), "--out", str(out)]) == EXIT_SYNTH


def test_simulate_writes_outputs(tmp_path):
    cfg = write_json(tmp_path / "s.json", {
        "automaton": "bundled:rooms_dca.json", "system": {"builder": "rooms", "n": 6},
        "simulation": {"x0": {"uniform": [20.5, 22.5]}, "horizon": 20, "runs": 2, "barrier_key": ROOM_KEY}})
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == EXIT_OK
    mon = json.loads((tmp_path / "o" / "monitor.json").read_text())
    assert mon["passed"] and len(mon["runs"]) == 2 and mon["runs"][0]["barrier_max"] <= 40.0
    assert (tmp_path / "o" / "envelope.csv").read_text().startswith("step,min,max\n")
    assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o"), "--horizon", "0"]) == EXIT_CONFIG


def test_config_errors(tmp_path):
    assert main(["verify", "--config", str(tmp_path / "missing.json")]) == EXIT_CONFIG
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["decompose", "--config", str(bad)]) == EXIT_CONFIG
    cfg = write_json(tmp_path / "b.json", {"automaton": "bundled:rooms_dca.json", "system": {"builder": "nope"}})
    assert main(["simulate", "--config", str(cfg)]) == EXIT_CONFIG
    syn = write_json(tmp_path / "syn.json", {"synthesis": {"config": {"bogus": 1}, "targets": []}})
    assert main(["synthesize", "--config", str(syn)]) == EXIT_CONFIG
