import csv
import io
import json

import jsonschema
import numpy as np
import pytest

import magcgo.reconstruct as reconstruct
from magcgo.cli import (ExperimentConfig, empty_report, load_schema, main, report_csv, report_json, run_experiment)
from magcgo.grid import load_field, make_grid, save_field, scalar_field
from magcgo.potentials import generated_pair, save_pair
from magcgo.reconstruct import SWEEP_COLUMNS, StabilityParams

SMALL = {"grid": {"L": 2.0, "N": 32}, "schedules": {"ts": [0.5, 0.0], "h_list": None}, "K": 12}


def small_config(**over):
    d = json.loads(json.dumps(SMALL))
    d.update(over)
    return ExperimentConfig.from_dict(d)


# ---------------------------------------------------------------- configuration

def test_nested_config_is_flattened():
    cfg = small_config(**{"class": {"eps": 0.4, "r": 2}})
    assert (cfg.L, cfg.N, cfg.eps, cfg.r, cfg.K) == (2.0, 32, 0.4, 2, 12)
    assert cfg.params().eps == 0.4


@pytest.mark.parametrize("geometry,match", [
    ({"ball_inner": 0.8}, "inside B'"),
    ({"ball_inner": 1.0, "ball_outer": 1.1}, "closure of B'"),
    ({"ball_inner": 1.0, "ball_outer": 1.95}, "periodic box"),
])
def test_geometry_nesting_rejected(geometry, match):
    with pytest.raises(ValueError, match=match):
        small_config(geometry=geometry)


def test_unknown_keys_and_ranges_rejected():
    with pytest.raises(ValueError, match="unknown"):
        small_config(bogus=1)
    with pytest.raises(ValueError, match="unknown"):
        small_config(grid={"L": 2.0, "Nx": 32})
    with pytest.raises(ValueError, match="theta"):
        small_config(schedules={"theta": 0.9})
    with pytest.raises(ValueError, match="nonnegative"):
        small_config(schedules={"ts": [-1.0]})


# ---------------------------------------------------------------- reports

def test_empty_report_is_header_only():
    text = report_csv(empty_report(StabilityParams()))
    assert text.splitlines() == [",".join(SWEEP_COLUMNS)]
    jsonschema.validate(report_json(empty_report(StabilityParams())), load_schema())


@pytest.fixture(scope="module")
def experiment(tmp_path_factory):
    out = tmp_path_factory.mktemp("exp")
    run_experiment(small_config(), out)
    return out


def test_experiment_outputs(experiment):
    man = json.loads((experiment / "manifest.json").read_text())
    assert man["status"] == "complete"
    assert [s["name"] for s in man["stages"]] == ["potentials", "cauchy", "sweep"]
    rows = list(csv.reader(io.StringIO((experiment / "sweep.csv").read_text())))
    assert rows[0] == list(SWEEP_COLUMNS)
    assert len(rows) == 3 and all(len(r) == len(SWEEP_COLUMNS) for r in rows)
    jsonschema.validate(json.loads((experiment / "sweep.json").read_text()), load_schema())


def test_identical_pair_row_is_zero(experiment):
    rows = list(csv.DictReader(io.StringIO((experiment / "sweep.csv").read_text())))
    zero = next(r for r in rows if float(r["t"]) == 0.0)
    for c in SWEEP_COLUMNS[1:10]:
        assert float(zero[c]) == 0.0
    assert zero["h_used"] == zero["rho_used"] == zero["k_used"] == ""
    other = next(r for r in rows if float(r["t"]) == 0.5)
    assert float(other["dist"]) > 0


def test_sweep_is_deterministic(experiment, tmp_path):
    run_experiment(small_config(), tmp_path)
    assert (tmp_path / "sweep.csv").read_bytes() == (experiment / "sweep.csv").read_bytes()


def test_failed_stage_gives_partial_manifest(tmp_path, monkeypatch):
    def boom(*a, **k):
        raise RuntimeError("injected")
    monkeypatch.setattr(reconstruct, "sweep", boom)
    run_experiment(small_config(), tmp_path)
    man = json.loads((tmp_path / "manifest.json").read_text())
    assert man["status"] == "partial"
    stage = {s["name"]: s for s in man["stages"]}
    assert stage["sweep"]["status"] == "failed" and "injected" in stage["sweep"]["error"]
    assert stage["cauchy"]["status"] == "ok"
    assert (tmp_path / "cauchy_base.json").exists() and not (tmp_path / "sweep.csv").exists()


# ---------------------------------------------------------------- subcommands

@pytest.fixture(scope="module")
def files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    g = make_grid(2.0, 32)
    save_pair(d / "a.json", generated_pair(g, 0.5, 1))
    save_pair(d / "b.json", generated_pair(g, 0.5, 2))
    x1, x2, x3 = g.coords()
    save_field(d / "f.cgof", scalar_field(g, np.cos(x1) + x2 * x3))
    return d


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    lines = capsys.readouterr().out.strip().splitlines()
    return code, [json.loads(s) for s in lines]


def test_forward_cgo_cauchy_dist(files, capsys):
    d = files
    code, out = run(capsys, "forward", "--pair", d / "a.json", "--boundary", d / "f.cgof", "--out", d / "u.cgof")
    assert code == 0 and load_field(d / "u.cgof").grid.N == 32
    code, out = run(capsys, "cgo", "--xi", "0,0,2", "--h", "0.5", "--pair", d / "a.json", "--out", d / "cgo.cgof",
                    "--diag", d / "cgo.json")
    assert code == 0 and out[0]["converged"]
    assert json.loads((d / "cgo.json").read_text())["equation_residual"] < 1e-5
    for name in ("a", "b"):
        code, _ = run(capsys, "cauchy", "--pair", d / f"{name}.json", "--K", 6, "--out", d / f"c{name}.json")
        assert code == 0
    code, out = run(capsys, "dist", "--a", d / "ca.json", "--b", d / "cb.json")
    assert out[0]["dist"] > 0
    code, out = run(capsys, "dist", "--a", d / "ca.json", "--b", d / "ca.json")
    assert out[0]["dist"] < 1e-10


def test_besov_norm_command(files, capsys):
    code, out = run(capsys, "besov-norm", files / "f.cgof", "--s", "-1", "--r", "inf", "--seminorm-eps", "0.5")
    assert code == 0
    assert out[0]["r"] in ("inf", None) or out[0]["r"] == float("inf")
    assert out[0]["besov"] > 0 and out[0]["seminorm"] > 0 and out[0]["sobolev"] > 0


def test_extract_commands(files, capsys):
    d = files
    code, out = run(capsys, "extract-da", "--pair-a", d / "a.json", "--pair-b", d / "b.json", "--xi", "1.5708,1.5708,0",
                    "--h", "0.5,0.25", "--out", d / "ext.json")
    assert code == 0 and [o["h"] for o in out] == [0.5, 0.25]
    assert len(json.loads((d / "ext.json").read_text())) == 2


def test_sweep_requires_config(capsys):
    with pytest.raises(SystemExit):
        main(["sweep"])


def test_sweep_command(tmp_path, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(dict(SMALL, schedules={"ts": [0.0], "h_list": None})))
    code, out = run(capsys, "--config", cfg, "--out-dir", tmp_path / "o", "sweep")
    assert code == 0 and out[-1]["status"] == "complete"
    assert (tmp_path / "o" / "sweep.csv").exists()


def test_hodge_and_extract_q_commands(files, capsys):
    d = files
    code, out = run(capsys, "hodge-check", "--pair-a", d / "a.json", "--pair-b", d / "b.json", "--out", d / "hd.json")
    assert code == 0
    assert set(out[0]) == {"coexact_over_du", "shell_H1_over_du", "ball_over_oracle", "gauge_gradient_over_bound"}
    code, out = run(capsys, "extract-q", "--pair-a", d / "a.json", "--pair-b", d / "b.json", "--xi", "1.5708,0,0",
                    "--h", "0.5")
    assert code == 0 and out[0]["kind"] == "q"
