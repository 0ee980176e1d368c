import json
import subprocess
import sys
import threading

import numpy as np
import pytest

from nvqoc.loop.cli import main
from nvqoc.loop.server import ExperimentServer, make_tcp_server
from nvqoc.model import HyperfineModel, NvModel, save_model
from nvqoc.photophysics import PlantedReadout, ReadoutParams
from nvqoc.pulses import write_pulse


@pytest.fixture
def spin_model(tmp_path):
    path = tmp_path / "model.json"
    save_model(path, NvModel(hyperfine=HyperfineModel.single_line()))
    return path


@pytest.fixture
def small_config(tmp_path):
    cfg = {
        "step2": {"n_set": 2, "max_superiterations": 2, "max_evals": 30, "duration_ns": 100},
        "scan": {"scales": [0.5, 1.0], "spectrum_hz": list(np.linspace(-8e6, 8e6, 17)),
                 "detunings_hz": [0.0, 4e6], "taus_s": list(np.linspace(0, 2e-6, 41)), "shots": 20000},
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_module_help():
    out = subprocess.run([sys.executable, "-m", "nvqoc", "--help"], capture_output=True, text=True, check=True)
    for verb in ("serve", "step1", "step2", "scan", "report", "replay"):
        assert verb in out.stdout


def test_step1_then_step2_with_scan_then_report_and_replay(tmp_path, spin_model, small_config, capsys):
    planted = tmp_path / "planted.json"
    save_model(planted, NvModel(planted_readout=PlantedReadout(ReadoutParams(21, 585, 260, 470))))
    assert main(["step1", "--model", str(planted), "--max-evals", "40", "--shots", "2000",
                 "--out", str(tmp_path / "s1")]) == 0
    assert (tmp_path / "s1" / "step1.txt").exists()

    run = tmp_path / "s2"
    assert main(["step2", "--model", str(spin_model), "--config", str(small_config), "--noiseless",
                 "--step1", str(tmp_path / "s1" / "manifest.json"), "--scan", "--seed", "4",
                 "--basis", "sigmoid", "--restriction", "cutoff", "--out", str(run)]) == 0
    manifest = json.loads((run / "manifest.json").read_text())
    step1 = json.loads((tmp_path / "s1" / "manifest.json").read_text())
    assert manifest["settings"]["step2"]["readout"] == step1["summary"]["params"]
    assert manifest["settings"]["step2"]["basis"] == "sigmoid"
    assert (run / "pulse.txt").exists() and (run / "podmr-amplitude-report.txt").exists()

    capsys.readouterr()
    assert main(["report", "--run", str(run), "--out", str(tmp_path / "rep")]) == 0
    assert "podmr-amplitude" in capsys.readouterr().out
    assert (tmp_path / "rep" / "podmr-amplitude-report.txt").exists()

    assert main(["replay", "--run", str(run), "--out", str(tmp_path / "again")]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["same_fom"] and summary["same_sequence"]


def test_scan_of_pulse_file(tmp_path, small_config):
    model = NvModel()
    write_pulse(tmp_path / "half.txt", model.rectangular(np.pi / 2), model.rabi_max)
    assert main(["scan", "--pulse", str(tmp_path / "half.txt"), "--target", "gate", "--config", str(small_config),
                 "--out", str(tmp_path / "scan")]) == 0
    assert (tmp_path / "scan" / "ramsey-detuning-report.txt").exists()


def test_report_without_scan_records(tmp_path, capsys):
    assert main(["step1", "--max-evals", "10", "--shots", "1000", "--out", str(tmp_path / "s1")]) == 0
    assert main(["report", "--run", str(tmp_path / "s1")]) == 1


def test_step1_over_tcp(tmp_path):
    srv = make_tcp_server(ExperimentServer(NvModel(), 0))
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    host, port = srv.server_address[:2]
    try:
        assert main(["step1", "--max-evals", "12", "--shots", "1000", "--connect", f"{host}:{port}",
                     "--out", str(tmp_path / "tcp")]) == 0
    finally:
        srv.shutdown()
        srv.server_close()
    manifest = json.loads((tmp_path / "tcp" / "manifest.json").read_text())
    assert manifest["summary"]["evaluations"] >= 12
