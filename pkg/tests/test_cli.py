from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from sdgame import artifacts
from sdgame.cli import EXIT_FAILED, EXIT_INVALID, EXIT_OK, run


def only_run(out: Path) -> Path:
    dirs = [p for p in out.iterdir() if p.is_dir()]
    assert len(dirs) == 1
    return dirs[0]


def test_solve_heat_writes_artifacts(tmp_path):
    code = run(["solve", "--family", "heat", "--set", "grid.resolution=[81]", "--out", str(tmp_path)])
    assert code == EXIT_OK
    d = only_run(tmp_path)
    for name in ("values.csv", "fields.bin", "refinement.json", "refinement.png", "solve.json",
                 "value.png", "manifest.json"):
        assert (d / name).stat().st_size > 0, name
    summary = json.loads((d / "solve.json").read_text())
    assert summary["lower_at_origin"] == pytest.approx(1.0, abs=1e-2)
    manifest = json.loads((d / "manifest.json").read_text())
    assert manifest["exit_code"] == EXIT_OK
    assert d.name.endswith(manifest["config_hash"])
    assert "value.png" in manifest["artifacts"]


def test_isaacs_failure_exit_code(tmp_path):
    code = run(["isaacs-check", "--family", "matching-pennies", "--samples", "200",
                "--out", str(tmp_path)])
    assert code == EXIT_FAILED
    rep = json.loads((only_run(tmp_path) / "isaacs.json").read_text())
    assert rep["max_gap"] == pytest.approx(2.0, abs=1e-12)


def test_counterexample_positive_gap(tmp_path):
    code = run(["counterexample", "--paths", "20000", "--no-weak", "--out", str(tmp_path)])
    assert code == EXIT_OK
    d = only_run(tmp_path)
    rep = json.loads((d / "gap_report.json").read_text())
    assert rep["strong_gap"] > 0.5
    assert (d / "counterexample.png").exists()
    assert (d / "candidates.csv").read_text().startswith("candidate,E_X2_T,u0,J,stderr")


@pytest.mark.parametrize("argv", [
    ["solve", "--family", "no-such-family"],
    ["solve", "--family", "heat", "--set", "grid.n_t=2"],
    ["solve", "--family", "heat", "--set", "horizon=-1"],
    ["solve", "--config", "/nonexistent/config.yaml"],
    ["counterexample", "--alpha", "-1"],
])
def test_invalid_input_exit_code(tmp_path, argv):
    assert run(argv + ["--out", str(tmp_path)]) == EXIT_INVALID


def test_yaml_config_and_manifest_replay(tmp_path):
    cfg = tmp_path / "game.yaml"
    cfg.write_text("scenario:\n  family: example81\nhorizon: 1.0\ngrid:\n  resolution: [21, 21]\n"
                   "seed: 3\n")
    assert run(["saddle", "--config", str(cfg), "--deviations", "4", "--out", str(tmp_path / "a")]) == 0
    first = only_run(tmp_path / "a")
    cert = (first / "certificate.json").read_bytes()
    assert run(["saddle", "--config", str(first / "manifest.json"), "--out", str(tmp_path / "b")]) == 0
    second = only_run(tmp_path / "b")
    assert second.name == first.name
    assert (second / "certificate.json").read_bytes() == cert


def test_cache_round_trip(tmp_path):
    arrays = {"b": np.arange(6, dtype=np.int16).reshape(2, 3), "a": np.linspace(0, 1, 5),
              "c": np.array([True, False])}
    path = artifacts.save_cache(tmp_path / "x.bin", arrays)
    back = artifacts.load_cache(path)
    assert list(back) == ["a", "b", "c"]
    for k, v in arrays.items():
        assert back[k].dtype == v.dtype and np.array_equal(back[k], v)


def test_cache_rejects_foreign_file(tmp_path):
    p = tmp_path / "junk.bin"
    p.write_bytes(b"not a cache\n")
    with pytest.raises(ValueError):
        artifacts.load_cache(p)


def test_csv_floats_round_trip(tmp_path):
    x = 0.1 + 0.2
    p = artifacts.write_csv(tmp_path / "t.csv", ["x"], [[x]])
    assert float(p.read_text().splitlines()[1]) == x
