import csv
import json
import subprocess
import sys

import numpy as np
import pytest

import optdesign as od
from optdesign.cli import main
from optdesign.experiments import ExperimentConfig, chebyshev_lobatto_points, load_config

TINY_TOML = """
name = "tiny"
generator = "chebyshev_lobatto_grid"
model_degree = 2
algorithm = "adaptive"
compress = true
probe = true

[generator_args]
deg = 6

[flow]
n_step = 300
"""


def test_chebyshev_points():
    assert np.array_equal(chebyshev_lobatto_points(1), [1.0, -1.0])
    assert np.allclose(chebyshev_lobatto_points(2), [1.0, 0.0, -1.0], atol=1e-16)
    assert od.gen_chebyshev_lobatto_grid(40).M == 1681
    assert od.gen_chebyshev_lobatto_grid(3, n=3).M == 64
    with pytest.raises(od.InvalidConfig):
        chebyshev_lobatto_points(0)


def test_uniform_cloud():
    X = od.gen_uniform_cloud(500, seed=1)
    assert X.M == 500 and np.all(np.abs(X.points) <= 1)
    assert np.array_equal(X.points, od.gen_uniform_cloud(500, seed=1).points)
    assert not np.array_equal(X.points, od.gen_uniform_cloud(500, seed=2).points)
    with pytest.raises(od.InvalidConfig):
        od.gen_uniform_cloud(0, seed=1)


def test_gaussian_cloud():
    M = 4000
    X = od.gen_gaussian_cloud(M, seed=3)
    assert X.M == M
    assert np.all(np.abs(X.points.mean(axis=0)) <= 5 / np.sqrt(M))
    assert np.array_equal(X.points, od.gen_gaussian_cloud(M, seed=3).points)
    with pytest.raises(od.InvalidConfig):
        od.gen_gaussian_cloud(0, seed=3)


@pytest.mark.parametrize("m", [1, 5, 20])
def test_disk_mesh(m):
    X = od.gen_disk_admissible_mesh(m)
    assert X.M == 4 * m * m + 1
    assert np.all(np.linalg.norm(X.points, axis=1) <= 1 + 1e-15)
    assert np.sum(np.all(X.points == 0, axis=1)) == 1
    assert X.duplicates() == []
    if m == 20:
        assert 1200 <= X.M <= 2000


def test_config_roundtrip_and_errors(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text(TINY_TOML)
    cfg = load_config(p)
    assert cfg.generator_args == {"deg": 6} and cfg.flow.n_step == 300
    j = tmp_path / "c.json"
    j.write_text(json.dumps(cfg.to_mapping()))
    assert load_config(j).to_mapping() == cfg.to_mapping()
    with pytest.raises(od.InvalidConfig):
        ExperimentConfig.from_mapping({"bogus": 1})
    with pytest.raises(od.InvalidConfig):
        ExperimentConfig.from_mapping({"flow": {"nope": 1}})
    with pytest.raises(od.InvalidConfig):
        ExperimentConfig.from_mapping({"algorithm": "simplex"})
    with pytest.raises(od.InvalidConfig):
        ExperimentConfig.from_mapping({"sigma": "cubic"})
    with pytest.raises(od.InvalidConfig):
        od.preset("exp9")


def test_presets_valid():
    for name in od.experiments.PRESETS:
        cfg = od.preset(name).validate()
        assert cfg.name == name
    assert od.preset("exp1b").candidates().M == 1681


@pytest.fixture(scope="module")
def tiny_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    cfg = ExperimentConfig.from_mapping({**_tiny_mapping(), "out_dir": str(out)})
    return od.run_experiment(cfg), out


def _tiny_mapping():
    try:
        import tomllib
    except ModuleNotFoundError:
        import tomli as tomllib
    return tomllib.loads(TINY_TOML)


def test_run_experiment_artifacts(tiny_run):
    res, out = tiny_run
    names = {p.name for p in out.iterdir()}
    assert {"design.csv", "trace.csv", "kkt_check.csv", "compressed_design.csv",
            "diagnostics.json"} <= names
    d = json.loads((out / "diagnostics.json").read_text())
    assert d["schema"] == "optdesign.diagnostics/1"
    assert d["converged"] and d["kkt"]["max_residual"] <= 1e-10
    assert d["mass_error"] <= 1e-8
    assert d["support_bracket"]["ok"]
    assert d["g_optimality"]["ok"]
    assert d["compression"]["support_after"] <= d["N2"]
    rows = list(csv.reader(open(out / "design.csv")))
    assert rows[0] == ["x0", "x1", "weight"] and len(rows) == 50


def test_run_is_deterministic(tiny_run, tmp_path):
    _, out = tiny_run
    cfg = ExperimentConfig.from_mapping({**_tiny_mapping(), "out_dir": str(tmp_path)})
    od.run_experiment(cfg)
    for name in ("design.csv", "compressed_design.csv", "trace.csv"):
        assert (tmp_path / name).read_bytes() == (out / name).read_bytes()


def test_cli_run_compress_check(tmp_path, capsys):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY_TOML)
    out = tmp_path / "out"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out), "--seed", "5"]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["M"] == 49 and summary["N"] == 6
    design = out / "design.csv"
    comp = tmp_path / "c.csv"
    assert main(["compress", "--design", str(design), "--model-degree", "2",
                 "--out", str(comp)]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["support_after"] <= 15
    assert main(["check", "--design", str(comp), "--model-degree", "2"]) == 0
    assert json.loads(capsys.readouterr().out)["optimal"]


def test_cli_check_not_optimal(tmp_path, capsys):
    pts = od.gen_chebyshev_lobatto_grid(4).points
    path = tmp_path / "u.csv"
    od.write_design_csv(path, pts, np.full(len(pts), 1 / len(pts)))
    assert main(["check", "--design", str(path), "--model-degree", "2"]) == 3


def test_cli_points_and_weights(tmp_path, capsys):
    pts = od.gen_chebyshev_lobatto_grid(4).points
    ptsf = tmp_path / "p.csv"
    np.savetxt(ptsf, pts, delimiter=",")
    wf = tmp_path / "w.csv"
    wf.write_text("weight\n" + "\n".join(["0.5"] * 3) + "\n")
    assert main(["check", "--design", str(wf), "--points", str(ptsf), "--model-degree", "1"]) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "invalid_config"


def test_cli_errors(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "missing.toml")]) == 2
    assert "error" in json.loads(capsys.readouterr().err)
    bad = tmp_path / "bad.toml"
    bad.write_text('generator = "nowhere"\n')
    assert main(["run", "--config", str(bad)]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "invalid_config"
    with pytest.raises(SystemExit):
        main(["run"])


def test_cli_budget_exit_code(tmp_path, capsys):
    cfg = tmp_path / "tiny.toml"
    cfg.write_text(TINY_TOML)
    out = tmp_path / "o"
    assert main(["run", "--config", str(cfg), "--out-dir", str(out), "--nstep", "2"]) == 4
    assert json.loads(capsys.readouterr().err)["error"] == "non_convergence"
    assert (out / "design.csv").exists()


def test_console_script_entry_point():
    r = subprocess.run([sys.executable, "-m", "optdesign.cli", "--help"],
                       capture_output=True, text=True)
    assert r.returncode == 0
    assert "run" in r.stdout and "compress" in r.stdout and "check" in r.stdout
