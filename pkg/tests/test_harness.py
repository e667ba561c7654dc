import io
import json

import numpy as np
import pytest

from dish.analysis import constant_catalog, theoretical_stepsizes
from dish.cli import main
from dish.core import GRADIENT, Stepsizes, Trace, UpdateSchedule, run, run_errors_only
from dish.harness import (
    ConfigError,
    ExperimentConfig,
    TuningConfig,
    build_instance,
    fit_rate,
    log_linear_fit,
    power_grid,
    run_extra,
    run_suite,
    setup1_config,
    setup2_config,
    tune,
)
from dish.objectives import make_quadratic_toy
from dish.topology import ring_graph


def toy(n=4, d=2, seed=0):
    centers = np.random.default_rng(seed).normal(size=(n, d))
    return make_quadratic_toy(centers, graph=ring_graph(n))


def geometric_trace(ratio, n=200):
    tr = Trace()
    tr.k = list(range(n))
    tr.rel_err = [ratio**k for k in range(n)]
    return tr


def test_fit_rate_geometric():
    assert abs(fit_rate(geometric_trace(0.9)) - np.log(0.9)) <= 1e-9


def test_fit_rate_constant():
    tr = geometric_trace(1.0)
    tr.rel_err = [0.5] * 200
    assert fit_rate(tr) == pytest.approx(0.0, abs=1e-15)
    assert log_linear_fit(tr.k, tr.rel_err)[2] == 1.0


def test_fit_rate_needs_points():
    with pytest.raises(ValueError, match="insufficient points"):
        fit_rate(geometric_trace(0.5, n=8))


def test_power_grid():
    grid = power_grid(2.0**-6, 2.0**4)
    assert len(grid) == 11 and grid[0] == 2.0**-6 and grid[-1] == 16.0
    assert power_grid(0.5, 0.5) == [0.5]


def test_tuning_config_validation():
    with pytest.raises(ConfigError):
        TuningConfig(grid_lo=2.0, grid_hi=1.0)
    with pytest.raises(ConfigError):
        TuningConfig(target_rel_err=1.0)
    with pytest.raises(ConfigError):
        TuningConfig(grid_factor=1.0)


def test_single_point_grid():
    inst = toy()
    tun = TuningConfig(grid_lo=0.25, grid_hi=0.25, mu_values=[0.5], max_iters=3000)
    res = tune(inst, UpdateSchedule.constant(4, GRADIENT), tun)
    assert res.steps.a[0] == 0.25 and res.steps.b[0] == 0.25 and res.steps.mu == 0.5
    assert res.evaluated == 1


def test_unreachable_target_is_flagged():
    inst = toy()
    tun = TuningConfig(grid_lo=2.0**-6, grid_hi=2.0**-5, mu_values=[0.0], max_iters=20)
    res = tune(inst, UpdateSchedule.constant(4, GRADIENT), tun)
    assert not res.reached and res.flag == "untargeted" and res.iterations is None
    direct = min(run_errors_only(inst, UpdateSchedule.constant(4, GRADIENT), Stepsizes.uniform(4, a, b),
                                 max_iters=20, stop=1e-8).final_error
                 for a in (2.0**-6, 2.0**-5) for b in (2.0**-6, 2.0**-5))
    assert res.final_error == direct


def test_tuning_is_deterministic():
    inst = toy()
    tun = TuningConfig(grid_lo=2.0**-3, grid_hi=2.0, max_iters=2000)
    spec = {"kind": "switching", "dist": "uniform", "lo": 5, "hi": 50, "seed": 4, "name": "sw"}
    a = tune(inst, spec, tun)
    b = tune(inst, spec, tun)
    assert (a.iterations, a.final_error) == (b.iterations, b.final_error)
    assert (a.steps.a[0], a.steps.b[0], a.steps.mu) == (b.steps.a[0], b.steps.b[0], b.steps.mu)


def test_tuning_matches_exhaustive_search():
    inst = toy(n=5, seed=3)
    tun = TuningConfig(grid_lo=2.0**-3, grid_hi=2.0, max_iters=600)
    sched = UpdateSchedule.constant(5, GRADIENT)
    res = tune(inst, sched, tun)
    grid = power_grid(2.0**-3, 2.0)
    best = None
    for a in grid:
        for b in grid:
            for mu in [0.0] + grid:
                try:
                    s = run_errors_only(inst, sched, Stepsizes.uniform(5, a, b, mu), max_iters=600, stop=1e-8)
                except Exception:
                    continue
                if s.reached:
                    key = (s.iterations, s.final_error, a)
                    best = min(best, (key, (a, b, mu))) if best else (key, (a, b, mu))
    assert res.iterations == best[0][0]
    assert (res.steps.a[0], res.steps.b[0], res.steps.mu) == best[1]


def test_tuned_toy_beats_theoretical_stepsizes():
    inst = toy()
    sched = UpdateSchedule.constant(4, GRADIENT)
    cert = theoretical_stepsizes(constant_catalog(inst, 0.0, sched), sched)
    safe = run_errors_only(inst, sched, cert.steps, max_iters=20_000, stop=1e-8)
    assert safe.reached
    res = tune(inst, sched, TuningConfig(max_iters=5000))
    assert res.reached and res.iterations <= safe.iterations


@pytest.fixture(scope="module")
def toy_suite():
    cfg = ExperimentConfig(setup="quadratic_toy", graph=dict(n=5, seed=0), problem=dict(d=2))
    return {row.method: (row, trace) for row, trace in run_suite(cfg, write=False)}


def test_toy_suite_reaches_target(toy_suite):
    assert len(toy_suite) == 7
    for name, (row, trace) in toy_suite.items():
        assert row.status == "ok", name
        assert isinstance(row.iterations, int) and row.final_rel_err <= 1e-8
        assert row.slope < 0 and row.r2 >= 0.95


def test_toy_suite_newton_not_slower_than_gradient(toy_suite):
    assert toy_suite["DISH-N"][0].iterations <= toy_suite["DISH-G"][0].iterations


def test_extra_matches_dish_on_setup1():
    inst = build_instance(setup1_config())
    ref = inst.x_opt_stacked
    extra = run_extra(inst, 2.0**-4, max_iters=20_000, stop=1e-10)
    assert extra.reached
    x_extra = extra.state
    # stepsizes frozen from a grid search on this instance
    tuned = {
        "DISH-G": (UpdateSchedule.constant(10, GRADIENT), Stepsizes.uniform(10, 0.125, 0.5, 1.0, a_newton=1.0)),
        "ESOM-0": (UpdateSchedule.from_spec({"kind": "constant", "primal": "esom", "dual": "gradient"}, 10),
                   Stepsizes.uniform(10, 1.0, 1.0, 1.0, a_newton=1.0)),
        "DISH-5": (UpdateSchedule.dish_k(10, 5), Stepsizes.uniform(10, 0.125, 0.5, 1.0, a_newton=1.0)),
        "DISH-N": (UpdateSchedule.from_spec({"kind": "constant", "primal": "newton", "dual": "newton"}, 10),
                   Stepsizes.uniform(10, 1.0, 0.5, 0.0, a_newton=1.0)),
        "DISH-G&N-U": (UpdateSchedule.switching(10, seed=11), Stepsizes.uniform(10, 0.125, 0.5, 1.0, a_newton=1.0)),
    }
    for name, (sched, steps) in tuned.items():
        tr = run(inst, sched, steps, max_iters=20_000, stop=1e-10, record=False)
        assert tr.reached, name
        assert np.linalg.norm(tr.state.x - x_extra) <= 1e-6 * np.linalg.norm(ref), name


def test_extra_started_at_optimum():
    inst = toy()
    tr = run_extra(inst, 0.5, x0=inst.x_opt_stacked)
    assert tr.reached and tr.absolute and tr.iterations == 0


def test_reference_setups():
    c1, c2 = setup1_config(), setup2_config()
    assert (c1.graph["n"], c1.graph["p"], c1.problem["d"], c1.problem["N_i"], c1.problem["rho"]) == (10, 0.7, 5, 50, 1.0)
    assert (c2.graph["n"], c2.graph["p"], c2.problem["d"], c2.problem["N_i"], c2.problem["rho"]) == (20, 0.5, 3, 50, 1.0)
    assert c1.setup == "least_squares" and c2.setup == "logistic"
    assert c1.tuning.grid_lo == 2.0**-6 and c1.tuning.grid_hi == 2.0**4


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        ExperimentConfig(setup="nonsense")
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"setup": "least_squares", "colour": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig(methods=[{"name": "x"}])
    with pytest.raises(ConfigError):
        ExperimentConfig(methods=[{"kind": "extra", "name": "a"}, {"kind": "extra", "name": "a"}])
    with pytest.raises(ConfigError):
        build_instance(ExperimentConfig(setup="least_squares", problem={"d": 3}))
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        ExperimentConfig.load(bad)


def small_config(tmp_path, **extra):
    doc = {
        "setup": "quadratic_toy",
        "graph": {"n": 4, "seed": 1},
        "problem": {"d": 2},
        "methods": [{"name": "DISH-G", "kind": "constant", "primal": "gradient", "dual": "gradient"},
                    {"name": "mix", "kind": "switching", "dist": "uniform", "lo": 5, "hi": 50, "seed": 3},
                    {"name": "EXTRA", "kind": "extra"}],
        "tuning": {"grid_lo": 0.125, "grid_hi": 1.0, "max_iters": 2000},
    }
    doc.update(extra)
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc))
    return path


def test_outputs_are_byte_identical(tmp_path):
    cfg = small_config(tmp_path)
    out = []
    for tag in ("a", "b"):
        assert main(["run", "--config", str(cfg), "--output", str(tmp_path / tag)], out=io.StringIO()) == 0
        out.append(tmp_path / tag)
    files = sorted(p.relative_to(out[0]) for p in out[0].rglob("*") if p.is_file())
    assert {str(f) for f in files} >= {"summary.json", "DISH-G.csv", "mix.csv", "EXTRA.csv", "plotdata/DISH-G.dat"}
    for f in files:
        assert (out[0] / f).read_bytes() == (out[1] / f).read_bytes()
    summary = json.loads((out[0] / "summary.json").read_text())
    assert [r["method"] for r in summary] == ["DISH-G", "mix", "EXTRA"]
    header = (out[0] / "DISH-G.csv").read_text().splitlines()[0]
    assert header == "k,rel_err,consensus_residual,merit,dual_gap,primal_err,kinds"


def test_cli_tune_prints_json(tmp_path):
    buf = io.StringIO()
    assert main(["tune", "--config", str(small_config(tmp_path)), "--method", "DISH-G"], out=buf) == 0
    report = json.loads(buf.getvalue())
    assert set(report) == {"DISH-G"} and report["DISH-G"]["status"] == "targeted"


def test_cli_exit_code_on_divergence(tmp_path):
    cfg = small_config(tmp_path, methods=[{"name": "G", "kind": "constant"}],
                       tuning={"grid_lo": 64.0, "grid_hi": 64.0, "mu_values": [0.0], "max_iters": 500})
    assert main(["run", "--config", str(cfg)], out=io.StringIO()) == 2


def test_cli_exit_code_on_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"setup": "least_squares", "graph": {"n": 4}}))
    assert main(["run", "--config", str(bad)], out=io.StringIO()) == 3
    assert main(["run", "--config", str(tmp_path / "missing.json")], out=io.StringIO()) == 3
    assert main(["tune", "--config", str(small_config(tmp_path)), "--method", "nope"], out=io.StringIO()) == 3
    with pytest.raises(SystemExit) as info:
        main(["frobnicate"])
    assert info.value.code == 3
