import json
import subprocess
import sys
from pathlib import Path

import pytest

from snse.cli import main, parse_seeds
from snse.config import ConfigError
from snse.fieldio import read_field

SMALL = """\
grid:
  n_per_axis: 16
time:
  T: 0.01
  dt: 0.001
ensemble:
  n_paths: 4
  chunk_size: 2
"""


def write_cfg(tmp_path, text=SMALL, name="c.yaml"):
    p = tmp_path / name
    p.write_text(text)
    return p


def tree(root: Path) -> dict:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


class TestSeeds:
    def test_forms(self):
        assert parse_seeds("2:5") == [2, 3, 4]
        assert parse_seeds("7, 1,3") == [7, 1, 3]

    @pytest.mark.parametrize("bad", ["a:b", "3:3", "1,1", "-1"])
    def test_rejects(self, bad):
        with pytest.raises(ConfigError):
            parse_seeds(bad)


def test_decompose_zero_field(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL + "initial_data:\n  kind: zero\n")
    assert main(["decompose", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 0
    cert = json.loads((tmp_path / "d" / "certificate.json").read_text())
    assert cert["w0_norm"] == 0
    w0, _ = read_field(tmp_path / "d" / "w0.snsf")
    assert not w0.coeffs.any()
    man = json.loads((tmp_path / "d" / "manifest.json").read_text())
    assert "levels/level_00.snsf" in man["files"]


def test_decompose_infeasible_exits_2(tmp_path):
    cfg = write_cfg(tmp_path, SMALL + "initial_data:\n  slope: 1.5\n  decay: 0.0\n  scale: 50.0\n")
    assert main(["decompose", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 2


def test_malformed_config_exits_1(tmp_path, capsys):
    cfg = write_cfg(tmp_path, "grid:\n  dim: 5\n")
    assert main(["simulate", "--config", str(cfg)]) == 1
    assert "grid.dim" in capsys.readouterr().err


def test_missing_argument_exits_1():
    assert main(["simulate"]) == 1


def test_direct_taylor_green(tmp_path):
    text = SMALL + "run:\n  kind: direct\nnoise:\n  kind: zero\ninitial_data:\n  kind: taylor-green\n"
    cfg = write_cfg(tmp_path, text)
    out = tmp_path / "tg"
    assert main(["simulate", "--config", str(cfg), "--out", str(out), "--paths", "1"]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["status"] == "clean" and man["command"] == "simulate"


def test_simulate_rerun_from_manifest_is_byte_identical(tmp_path):
    cfg = write_cfg(tmp_path)
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["simulate", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["simulate", "--config", str(a / "manifest.json"), "--out", str(b)]) == 0
    ta, tb = tree(a), tree(b)
    assert ta.keys() == tb.keys() and ta == tb


def test_seed_subset_reproduces_paths(tmp_path):
    cfg = write_cfg(tmp_path)
    full, sub = tmp_path / "full", tmp_path / "sub"
    assert main(["simulate", "--config", str(cfg), "--out", str(full)]) == 0
    assert main(["simulate", "--config", str(cfg), "--out", str(sub), "--seeds", "2,3"]) == 0
    mf = json.loads((full / "manifest.json").read_text())
    ms = json.loads((sub / "manifest.json").read_text())
    assert [p["index"] for p in ms["paths"]] == [2, 3]
    assert ms["paths"] == mf["paths"][2:]
    compared = [rel for rel in ms["files"] if "path_00002" in rel or "path_00003" in rel]
    assert len(compared) >= 2 * 12
    for rel in compared:
        assert (sub / rel).read_bytes() == (full / rel).read_bytes()


def test_verify_zero_data(tmp_path, capsys):
    cfg = write_cfg(tmp_path, SMALL + "initial_data:\n  kind: zero\n")
    out = tmp_path / "v"
    code = main(["verify", "--config", str(cfg), "--out", str(out)])
    reports = json.loads((out / "reports.json").read_text())
    main_energy = next(r for r in reports if r["name"] == "main_energy")
    assert main_energy["lhs_estimate"] == 0
    assert code in (0, 5)
    assert capsys.readouterr().out.count("\n") == len(reports)
    # report subcommand re-renders the same table
    assert main(["report", str(out)]) == code


def test_report_without_manifest(tmp_path):
    assert main(["report", str(tmp_path)]) == 1


def test_console_script_module_entry(tmp_path):
    r = subprocess.run([sys.executable, "-m", "snse.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0 and "decompose" in r.stdout
