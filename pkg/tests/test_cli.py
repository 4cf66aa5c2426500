"""CLI: config handling, run outputs, determinism, verify suites, compare."""

import json
from pathlib import Path

import numpy as np
import pytest

from fedsim import cli


def _quad_cfg(tmp_path, **over):
    cfg = {
        "problem": {"kind": "quadratic", "M": 6, "d": 8, "kappa": 30.0, "ratio": 3.0, "seed": 5},
        "algorithm": "cc",
        "cohort_size": 3,
        "compressor": {"kind": "identity"},
        "rounds": 12,
        "seeds": [0, 1],
        "local_solver": {"mode": "exact"},
        "output_dir": str(tmp_path / "out"),
    }
    cfg.update(over)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


# -- configuration ---------------------------------------------------------


def test_load_config_defaults_and_overrides(tmp_path):
    path = _quad_cfg(tmp_path)
    cfg = cli.load_config(path)
    assert cfg["stepsizes"]["source"] == "auto"  # default filled in
    assert cfg["optimum_tol"] == 1e-10
    cfg = cli.load_config(path, overrides=["rounds=5", "compressor.k=2", 'output_dir="x"'])
    assert cfg["rounds"] == 5
    assert cfg["compressor"]["k"] == 2 and cfg["compressor"]["kind"] == "identity"
    assert cfg["output_dir"] == "x"
    with pytest.raises(cli.ConfigError, match="not key=value"):
        cli.load_config(path, overrides=["rounds"])


@pytest.mark.parametrize(
    "over,frag",
    [
        ({"algorithm": "xx"}, "algorithm"),
        ({"algorithm": "ab", "compressor": {"kind": "rand_k", "k": 2}}, "only available"),
        ({"algorithm": "cc", "sampling": {"kind": "multisampling"}}, "uniform cohorts"),
        ({"rounds": -1}, "rounds"),
        ({"seeds": []}, "seed"),
        ({"local_solver": {"mode": "bogus"}}, "solver mode"),
        ({"local_solver": {"mode": "fixed_k"}}, "needs K"),
        (
            {"algorithm": "ab", "sampling": {"kind": "independent", "probs": "importance_exact"}},
            "require multisampling",
        ),
    ],
)
def test_validate_config_rejections(tmp_path, over, frag):
    path = _quad_cfg(tmp_path, **over)
    with pytest.raises(cli.ConfigError, match=frag):
        cli.load_config(path)


def test_missing_problem_section(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{}")
    with pytest.raises(cli.ConfigError, match="problem"):
        cli.load_config(path)
    assert cli.main(["run", str(path)]) == 2


def test_config_hash_stable_and_sensitive(tmp_path):
    cfg = cli.load_config(_quad_cfg(tmp_path))
    h1 = cli.config_hash(cfg)
    assert h1 == cli.config_hash(json.loads(json.dumps(cfg)))
    cfg2 = dict(cfg, rounds=99)
    assert cli.config_hash(cfg2) != h1


# -- problem construction --------------------------------------------------


def test_build_problem_libsvm(tmp_path):
    from fedsim.dataset import synth_libsvm_text

    data = tmp_path / "corpus.txt"
    data.write_text(synth_libsvm_text(n_samples=40, dim=10, nnz=3, seed=1))
    pcfg = {"kind": "libsvm", "path": str(data), "M": 5, "N": 8, "kappa": 100.0}
    problem, meta = cli.build_problem(pcfg)
    assert problem.M == 5 and meta["M"] == 5
    np.testing.assert_allclose(problem.L_max / problem.mu, 100.0, rtol=1e-12)
    assert meta["lambda"] == problem.clients[0].lam


def test_build_problem_rescale_spreads_smoothness(tmp_path):
    from fedsim.dataset import synth_libsvm_text

    data = tmp_path / "corpus.txt"
    data.write_text(synth_libsvm_text(n_samples=60, dim=12, nnz=4, seed=2))
    base, _ = cli.build_problem({"kind": "libsvm", "path": str(data), "M": 6, "N": 10})
    resc, meta = cli.build_problem(
        {"kind": "libsvm", "path": str(data), "M": 6, "N": 10, "rescale_ratio": 100.0}
    )
    assert resc.L_max / resc.L_min > base.L_max / base.L_min
    assert meta["rescale_factors"][0] == 1.0


def test_build_problem_unknown_kind():
    with pytest.raises(cli.ConfigError, match="unknown problem kind"):
        cli.build_problem({"kind": "images"})


# -- run -------------------------------------------------------------------


def test_run_outputs_and_determinism(tmp_path):
    cfg = cli.load_config(_quad_cfg(tmp_path))
    summary = cli.run(cfg, quiet=True)
    out = Path(cfg["output_dir"])
    for seed in (0, 1):
        csv = out / f"metrics_seed{seed}.csv"
        lines = csv.read_text().splitlines()
        assert lines[0] == cli.CSV_HEADER
        assert len(lines) == 1 + 1 + cfg["rounds"]  # header + round 0 + rounds
        side = json.loads((out / f"metrics_seed{seed}.json").read_text())
        assert side["config_hash"] == summary["config_hash"]
        assert side["initial_state"] == "x0 = 0, u0 = 0"
        assert side["rounds_run"] == cfg["rounds"]
    first = (out / "metrics_seed0.csv").read_bytes()
    cli.run(cfg, quiet=True)
    assert (out / "metrics_seed0.csv").read_bytes() == first  # byte-identical rerun


def test_run_metrics_decrease(tmp_path):
    cfg = cli.load_config(_quad_cfg(tmp_path, rounds=60, seeds=[0]))
    cli.run(cfg, quiet=True)
    lines = (Path(cfg["output_dir"]) / "metrics_seed0.csv").read_text().splitlines()
    rows = [line.split(",") for line in lines[1:]]
    dist = [float(r[3]) for r in rows]
    lyap = [float(r[5]) for r in rows]
    assert dist[-1] < 1e-3 * dist[0]
    assert lyap[-1] < 1e-3 * lyap[0]
    # cumulative budget columns are nondecreasing and match C*d per round
    up = [int(r[1]) for r in rows]
    assert up == [3 * 8 * t for t in range(len(rows))]


def test_run_early_stop_at_target(tmp_path):
    cfg = cli.load_config(_quad_cfg(tmp_path, rounds=500, seeds=[0]))
    cfg["target_rel_dist_sq"] = 1e-3
    summary = cli.run(cfg, quiet=True)
    assert summary["seeds"][0]["rounds_run"] < 500
    dist0 = None
    lines = (Path(cfg["output_dir"]) / "metrics_seed0.csv").read_text().splitlines()
    last = lines[-1].split(",")
    dist0 = float(lines[1].split(",")[3])
    assert float(last[3]) <= 1e-3 * dist0


def test_run_ab_driver(tmp_path):
    cfg = cli.load_config(
        _quad_cfg(
            tmp_path,
            algorithm="ab",
            sampling={"kind": "multisampling", "probs": "importance_exact"},
            cohort_size=1,
            rounds=10,
            seeds=[3],
        )
    )
    summary = cli.run(cfg, quiet=True)
    assert summary["seeds"][3]["rounds_run"] == 10


# -- compare ---------------------------------------------------------------


def test_budget_to_target(tmp_path):
    csv = tmp_path / "m.csv"
    csv.write_text(
        cli.CSV_HEADER + "\n"
        "0,0,0,100,1,1\n1,30,80,50,1,1\n2,60,160,0.005,1,1\n"
    )
    assert cli.budget_to_target(csv, 1e-4, "uplink_floats") == 60.0
    assert cli.budget_to_target(csv, 1e-4, "rounds") == 2.0
    assert cli.budget_to_target(csv, 1e-8, "rounds") is None  # censored
    bad = tmp_path / "bad.csv"
    bad.write_text("x,y\n")
    with pytest.raises(cli.ConfigError, match="header"):
        cli.budget_to_target(bad, 1e-4, "rounds")


def test_compare_identical_configs_identical_medians(tmp_path):
    a = _quad_cfg(tmp_path, rounds=200, seeds=[0, 1], output_dir=str(tmp_path / "a"))
    b = tmp_path / "b.json"
    cfg = json.loads(a.read_text())
    cfg["output_dir"] = str(tmp_path / "b")
    b.write_text(json.dumps(cfg))
    table = cli.compare([str(a), str(b)], target_rel=1e-3, budget="rounds", quiet=True)
    assert table[0]["median"] == table[1]["median"]
    assert table[0]["censored"] == 0


def test_compare_rejects_mismatched_problems(tmp_path):
    a = _quad_cfg(tmp_path)
    cfg = json.loads(a.read_text())
    cfg["problem"]["seed"] = 99
    b = tmp_path / "b.json"
    b.write_text(json.dumps(cfg))
    with pytest.raises(cli.ConfigError, match="identical problem"):
        cli.compare([str(a), str(b)], target_rel=1e-3, budget="rounds", quiet=True)


# -- verify suites and entry point -----------------------------------------


@pytest.mark.parametrize("suite", sorted(cli.SUITES))
def test_verify_suites_pass(suite, capsys):
    assert cli.verify(suite)
    out = capsys.readouterr().out
    assert "all checks passed" in out


def test_verify_json_output(capsys):
    assert cli.verify("fixed_point", json_out=True)
    rep = json.loads(capsys.readouterr().out)
    assert rep["ok"] and rep["suite"] == "fixed_point"


def test_main_exit_codes(tmp_path):
    path = _quad_cfg(tmp_path, rounds=2, seeds=[0])
    assert cli.main(["run", str(path), "--quiet"]) == 0
    assert cli.main(["verify", "ab"]) == 0
    missing = tmp_path / "nope.json"
    assert cli.main(["run", str(missing)]) == 2
