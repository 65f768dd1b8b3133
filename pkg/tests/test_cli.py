import hashlib
import json
import socket
import subprocess
import sys
import zipfile

import numpy as np
import pytest

from dpnet import __version__
from dpnet.cli import build_parser, main
from dpnet.wire import read_run

SHORT = {
    "run": {"duration": 40},
    "spectral": {"segment_length": 4000},
    "detection": {"trials": 100},
}


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(SHORT))
    return str(p)


@pytest.fixture
def run_file(tmp_path, cfg_file):
    assert main(["simulate", "--config", cfg_file, "--out", str(tmp_path)]) == 0
    return str(tmp_path / "run.amlr")


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


def test_every_subcommand_has_help():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, sp in sub.choices.items():
        text = sp.format_help()
        for action in sp._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)
            if action.help is None and action.option_strings and action.dest != "help":
                pytest.fail(f"{name}: {action.option_strings} undocumented")


def test_unknown_flag_is_usage_error():
    with pytest.raises(SystemExit) as err:
        main(["simulate", "--bogus"])
    assert err.value.code == 2


def test_bad_config_exit_2(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n "detection": {"cl": 2}\n}')
    assert main(["simulate", "--config", str(p), "--out", str(tmp_path)]) == 2
    assert "bad.json:2:" in capsys.readouterr().err


def test_constants(capsys):
    assert main(["constants"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["tool_version"] == __version__
    assert "PLANCK_EV_S" in out["constants"]


def test_simulate_deterministic(tmp_path, cfg_file):
    for d in ("a", "b"):
        assert main(["simulate", "--config", cfg_file, "--seed", "5", "--out", str(tmp_path / d)]) == 0
    assert sha(tmp_path / "a" / "run.amlr") == sha(tmp_path / "b" / "run.amlr")
    side = json.loads((tmp_path / "a" / "run.amlr.json").read_text())
    assert side["tool_version"] == __version__ and len(side["config_hash"]) == 64
    assert side["sha256"] == sha(tmp_path / "a" / "run.amlr")
    assert len(read_run(tmp_path / "a" / "run.amlr")) == 15


def test_simulate_zero_duration(tmp_path):
    assert main(["simulate", "--duration", "0", "--out", str(tmp_path)]) == 0
    assert read_run(tmp_path / "run.amlr").n_samples == 0


def test_correlate_scan_limits_inject(tmp_path, cfg_file, run_file):
    out = str(tmp_path / "o")
    assert main(["correlate", "--config", cfg_file, "--run", run_file, "--out", out]) == 0
    with zipfile.ZipFile(tmp_path / "o" / "spectra.npz") as zf:
        assert all(i.date_time == (1980, 1, 1, 0, 0, 0) for i in zf.infolist())
    data = np.load(tmp_path / "o" / "spectra.npz")
    assert data["pair_values"].shape[0] == 105
    assert json.loads(str(data["meta"]))["tool_version"] == __version__
    first = (tmp_path / "o" / "network.csv").read_text().splitlines()[:2]
    assert first[0].startswith("# config_hash=") and first[1] == "frequency,mean_real,bin_sigma"

    assert main(["scan", "--config", cfg_file, "--run", run_file, "--out", out]) == 0
    lines = [json.loads(x) for x in (tmp_path / "o" / "candidates.jsonl").read_text().splitlines()]
    assert lines[0]["type"] == "header" and lines[0]["n_candidates"] == len(lines) - 1
    assert all(c["veto_status"] in ("passed", "rejected") for c in lines[1:])

    assert main(["limits", "--config", cfg_file, "--run", run_file, "--out", out, "--cl", "0.9"]) == 0
    prov = json.loads((tmp_path / "o" / "limits.provenance.json").read_text())
    assert prov["cl"] == 0.9 and prov["config_hash"] == lines[0]["config_hash"]

    assert main(["inject", "--config", cfg_file, "--run", run_file, "--out", out, "--frequency", "100", "--epsilon", "1e-3"]) == 0
    rec = json.loads((tmp_path / "o" / "injection.json").read_text())["recoveries"][0]
    assert rec["detected"] and rec["recovered_epsilon"] == pytest.approx(1e-3, rel=0.25)


def test_outputs_are_byte_identical(tmp_path, cfg_file, run_file):
    for d in ("x", "y"):
        o = str(tmp_path / d)
        assert main(["correlate", "--config", cfg_file, "--run", run_file, "--out", o]) == 0
        assert main(["limits", "--config", cfg_file, "--run", run_file, "--out", o]) == 0
    for name in ("spectra.npz", "network.csv", "limits.csv", "limits.provenance.json"):
        assert sha(tmp_path / "x" / name) == sha(tmp_path / "y" / name), name


def test_missing_run_exit_3(tmp_path):
    assert main(["correlate", "--run", str(tmp_path / "nope.amlr"), "--out", str(tmp_path)]) == 3


def test_corrupt_run_exit_3(tmp_path, run_file):
    data = open(run_file, "rb").read()
    bad = tmp_path / "bad.amlr"
    bad.write_bytes(data[: len(data) // 2])
    assert main(["correlate", "--run", str(bad), "--out", str(tmp_path)]) == 3


def test_inject_usage_error(tmp_path, cfg_file, run_file):
    args = ["inject", "--config", cfg_file, "--run", run_file, "--out", str(tmp_path), "--frequency", "10", "--frequency", "20", "--epsilon", "1e-6"]
    assert main(args) == 2


def test_export_plots(tmp_path):
    art = tmp_path / "art"
    art.mkdir()
    assert main(["export-plots", "--artifacts", str(art), "--out", str(tmp_path / "p")]) == 3
    (art / "sensitivity.csv").write_text("# config_hash=x version=y\nN,fT_per_sqrtHz\n1,15.0\n")
    (art / "limits.csv").write_text("# config_hash=x version=y\nmass_eV,epsilon_95\n1e-14,1e-5\n")
    (art / "snr_histogram.csv").write_text("# c\nsnr_bin,count,subset_label\n0.5,3,all\n")
    assert main(["export-plots", "--artifacts", str(art), "--out", str(tmp_path / "p")]) == 0
    text = (tmp_path / "p" / "fig_sensitivity.csv").read_text().splitlines()
    assert text[0].startswith("# config_hash=") and text[1] == "N,fT_per_sqrtHz"
    assert (tmp_path / "p" / "fig_snr_histogram.csv").read_text().splitlines()[1] == "snr_bin,count,subset_label"
    (art / "limits.csv").write_text("mass,eps\n1,2\n")
    assert main(["export-plots", "--artifacts", str(art), "--out", str(tmp_path / "p")]) == 3


def test_reproduce_stage_subset(tmp_path):
    assert main(["reproduce-paper", "--reduced", "--stages", "physics", "wire", "--out", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "report.json").read_text())
    assert report["passed"] and {c["criterion"] for c in report["criteria"]} == {1, 2, 9}


def _free_port():
    with socket.socket() as s:
        s.bind(("127.0.0.1", 0))
        return s.getsockname()[1]


def test_serve_collect_roundtrip(tmp_path, cfg_file, run_file):
    port = _free_port()
    out = tmp_path / "col"
    cmd = [sys.executable, "-m", "dpnet.cli"]
    col = subprocess.Popen(
        cmd + ["collect", "--config", cfg_file, "--endpoint", f"127.0.0.1:{port}", "--out", str(out), "--deadline", "60"],
        stdout=subprocess.PIPE,
        text=True,
    )
    try:
        assert "listening" in col.stdout.readline()
        srv = subprocess.run(cmd + ["serve", "--config", cfg_file, "--run", run_file, "--endpoint", f"127.0.0.1:{port}"], timeout=60)
        assert srv.returncode == 0
        assert col.wait(60) == 0
    finally:
        col.kill()
    got, want = read_run(out / "collected.amlr"), read_run(run_file)
    assert got.same_records(want) and got.couplings == want.couplings
