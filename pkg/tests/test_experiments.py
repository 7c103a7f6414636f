import csv
import json
import math

import numpy as np
import pytest

from momentbayes.core import Hyperparameters, ThetaBox, ThetaPrior, make_interval_mean_model, save_dataset
from momentbayes.experiments import (
    ConfigError,
    ExperimentConfig,
    derive_seed,
    emit_density_curve,
    example_5_2_parallelogram,
    gen_example_4_1,
    gen_example_5_1,
    gen_example_5_2,
    gen_example_5_3,
    load_config,
    pi_schedule,
    run_chain,
    run_experiment,
    selection_model,
)
from momentbayes.likelihood import LogLikelihoodContext, LogPosterior
from momentbayes.mcmc import load_chain
from momentbayes.selection import Combination, true_combination_oracle
from momentbayes.setestim import epsilon_schedule, level_set_region, quantile_set_estimate


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def outdir(tmp_path, monkeypatch):
    monkeypatch.delenv("MOMENTBAYES_OUTPUT_DIR", raising=False)
    return tmp_path


# ---------------------------------------------------------------- generators


def test_gen_5_1():
    d = gen_example_5_1(5000, 7)
    assert d.columns == ("y1", "y2")
    assert np.allclose(d.values.mean(axis=0), [0.0, 5.0], atol=0.02)
    assert np.all(d.column("y1") <= d.column("y2"))
    one = gen_example_5_1(1, 11)
    assert one.n == 1 and one.values[0, 0] <= one.values[0, 1]


def test_gen_5_1_variance_parameterisation():
    d = gen_example_5_1(200_000, 0)
    assert np.allclose(d.values.var(axis=0), 0.1, rtol=0.02)


def test_gen_5_2_rejection():
    d = gen_example_5_2(5000, 3)
    assert d.columns == ("y1", "y2", "x1", "x2", "z1", "z2")
    assert np.all(d.column("z1") >= 0) and np.all(d.column("z2") >= 0)
    assert np.allclose(d.column("z1"), d.column("x1") + d.column("x2"))
    assert np.allclose(d.column("z2"), d.column("x1") + 2 * d.column("x2"))
    assert gen_example_5_2(1, 0).n == 1


def _ex52_oracle(truncate, draws=1_000_000, seed=99):
    """Population moment coefficients by brute-force simulation."""
    rng = np.random.default_rng(seed)
    x = rng.normal(1.0, 1.0, (draws, 2))
    z = np.column_stack([x[:, 0] + x[:, 1], x[:, 0] + 2 * x[:, 1]])
    if truncate:
        keep = np.all(z >= 0, axis=1)
        x, z = x[keep], z[keep]
    # E z_j x' theta in [3 E z_j, 6 E z_j]
    A = z.T @ x / x.shape[0]
    Ez = z.mean(axis=0)
    return A, 3 * Ez, 6 * Ez, z[:, 0].mean()


def test_gen_5_2_truncated_mean_matches_rejection_oracle():
    *_, z1_pop = _ex52_oracle(True)
    assert abs(gen_example_5_2(5000, 3).column("z1").mean() - z1_pop) < 0.1


def test_ex52_region_coefficients():
    A, lo, hi, _ = _ex52_oracle(False)
    stated = np.array([[3.0, 3.0, 6.0, 12.0], [4.0, 5.0, 9.0, 18.0]])
    got = np.column_stack([A, lo, hi])
    assert np.allclose(got, stated, rtol=0.02)
    # truncation shifts the region; pinned to the simulated truncated values
    A, lo, hi, _ = _ex52_oracle(True)
    got = np.column_stack([A, lo, hi])
    assert np.allclose(got, [[3.30, 3.32, 6.83, 13.67], [4.47, 5.47, 10.33, 20.67]], rtol=0.01)


def test_parallelogram_vertices():
    v = example_5_2_parallelogram()
    s, w = v.sum(axis=1), v @ [4.0, 5.0]
    assert np.allclose(sorted(set(np.round(s, 12))), [2, 4])
    assert np.allclose(sorted(set(np.round(w, 12))), [9, 18])
    assert np.allclose(v, [[1, 1], [11, -7], [2, 2], [-8, 10]])


def test_gen_5_3():
    d = gen_example_5_3(5000, 1)
    assert d.columns == ("y1", "y2", "y3", "y4")
    assert np.allclose(d.values.mean(axis=0), [-1, 1, 2, 3], atol=0.02)
    one = gen_example_5_3(1, 0)
    assert one.values.shape == (1, 4) and np.all(np.isfinite(one.values))


def test_ex53_first_moment_false_on_box():
    # population moments: E y1 - t, t - E y2, t - E y3, E y4 - t
    A = np.array([[-1.0], [1.0], [1.0], [-1.0]])
    b = np.array([-1.0, -1.0, -2.0, 3.0])
    box = ThetaBox([0.0], [10.0])
    assert not true_combination_oracle(Combination((0,), (0,)), A, b, box, 1e-3)
    assert true_combination_oracle(Combination((1, 2, 3), (0,)), A, b, box, 1e-3)
    # on a box reaching below -1 it would hold
    assert true_combination_oracle(Combination((0,), (0,)), A, b, ThetaBox([-5.0], [10.0]), 1e-3)
    model = selection_model()
    A_bar, b_bar = model.averaged_terms(gen_example_5_3(100_000, 0))
    assert np.allclose(A_bar, A) and np.allclose(b_bar, b, atol=0.01)


def test_gen_4_1_moments():
    d = gen_example_4_1(1, 0)
    assert d.n == 1
    with pytest.raises(ValueError):
        gen_example_4_1(0, 0)
    with pytest.raises(ValueError):
        gen_example_5_1(0, 0)


def test_generators_reproducible():
    for gen in (gen_example_5_1, gen_example_5_2, gen_example_5_3, gen_example_4_1):
        assert np.array_equal(gen(100, 5).values, gen(100, 5).values)
        assert not np.array_equal(gen(100, 5).values, gen(100, 6).values)


def test_derive_seed_and_pi_schedule():
    assert derive_seed(0, 500, 1) == derive_seed(0, 500, 1)
    assert len({derive_seed(0, 500, 0), derive_seed(0, 500, 1), derive_seed(1, 500, 0)}) == 3
    assert pi_schedule(100, "inv-n") == 0.01
    assert pi_schedule(100, "exp-sqrt-n") == pytest.approx(math.exp(-10))
    assert pi_schedule(100, "inv-log-n") == pytest.approx(1 / math.log(100))
    with pytest.raises(ValueError):
        pi_schedule(100, "bogus")


# ---------------------------------------------------------------- config


def test_config_defaults_and_overrides():
    cfg = ExperimentConfig.from_dict({"experiment": "ex51", "n": 800, "sampler": {"B": 300}})
    assert cfg.n == [800]
    assert cfg.sampler["B"] == 300 and cfg.sampler["burn_in"] == 500
    assert cfg.psi == [0.1, 0.5]
    assert cfg.hyperparameters().p == 2
    prior = cfg.theta_prior(cfg.figure_prior)
    assert prior.kind == "normal" and np.allclose(prior.sd, 0.5)
    assert ExperimentConfig.from_dict(cfg.to_dict()) == cfg


def test_config_errors_are_itemised():
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict({
            "experiment": "ex51", "n": [2], "seed": -1, "psi": [0.1, -1.0],
            "sampler": {"B": 0}, "estimator": {"epsilon": ["cube-n"]},
        })
    probs = e.value.problems
    assert len(probs) >= 5
    text = str(e.value)
    for key in ("n must", "seed", "psi", "sampler.B", "cube-n"):
        assert key in text
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"experiment": "ex99"})
    with pytest.raises(ConfigError, match="unknown key"):
        ExperimentConfig.from_dict({"experiment": "ex51", "colour": 1})


def test_config_rejects_non_polynomial_candidate_prior():
    with pytest.raises(ConfigError, match="polynomial"):
        ExperimentConfig.from_dict({"experiment": "ex53", "selection": {"candidate_prior": "exp-n"}})


def test_custom_config_requirements(tmp_path):
    with pytest.raises(ConfigError) as e:
        ExperimentConfig.from_dict({"experiment": "custom", "psi": [0.1]})
    text = str(e.value)
    assert "data" in text and "model" in text and "box" in text
    with pytest.raises(ConfigError, match="does not exist"):
        ExperimentConfig.from_dict({"experiment": "custom", "data": str(tmp_path / "nope.csv"),
                                    "model": {"kind": "interval-mean"}, "psi": [0.1, 0.1],
                                    "box": {"lower": [0], "upper": [1]}})


def test_load_config_yaml(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("experiment: ex53\nn: [100]\nselection:\n  sigma_n2: n\n")
    cfg = load_config(p, {"seed": 4})
    assert cfg.n == [100] and cfg.seed == 4 and cfg.sigma_n2(100) == 100.0
    assert cfg.selection["free_masks"] == [[0]]
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)


# ---------------------------------------------------------------- density curve


def _ex51_ctx(n, psi=(0.1, 0.5), seed=0):
    return LogLikelihoodContext(make_interval_mean_model(), gen_example_5_1(n, seed), Hyperparameters.identity(psi))


def test_density_curve_flat_prior():
    box = ThetaBox([-5.0], [10.0])
    # equal rates: the interior is flat
    ctx = _ex51_ctx(5000, (0.1, 0.1))
    curve = emit_density_curve(ctx, ThetaPrior.flat(box), np.linspace(-1.0, 6.0, 1401))
    assert curve[:, 1].max() == pytest.approx(1.0)
    inner = curve[(curve[:, 0] >= 0.5) & (curve[:, 0] <= 4.5), 1]
    assert inner.min() >= 0.5
    assert curve[np.isclose(curve[:, 0], -0.5), 1][0] <= 1e-6
    # default rates tilt the interior by exp(-(psi2 - psi1) theta)
    ctx = _ex51_ctx(5000)
    curve = emit_density_curve(ctx, ThetaPrior.flat(box), np.array([1.0, 4.0, -0.5]))
    assert curve[1, 1] / curve[0, 1] == pytest.approx(math.exp(-0.4 * 3.0), rel=1e-3)
    assert curve[2, 1] <= 1e-6 * curve[:, 1].max()


def test_density_curve_normal_prior_and_degenerate_grid(tmp_path):
    box = ThetaBox([-5.0], [10.0])
    ctx = _ex51_ctx(5000)
    curve = emit_density_curve(ctx, ThetaPrior.normal(box, [0.0], [0.5]), np.linspace(-1, 6, 701),
                               tmp_path / "d.csv")
    assert curve[np.argmax(curve[:, 1]), 0] < 1.0
    assert len(_rows(tmp_path / "d.csv")) == 701
    single = emit_density_curve(ctx, ThetaPrior.flat(box), [2.0])
    assert single.shape == (1, 2) and single[0, 1] == 1.0
    ctx2 = LogLikelihoodContext(selection_model().__class__(1, 2, ("y1",), "generic",
                                                            evaluator=lambda c, th: c["y1"][:, None] - th[0]),
                                gen_example_5_3(10, 0), Hyperparameters.identity([1.0]))
    with pytest.raises(ValueError):
        emit_density_curve(ctx2, ThetaPrior.flat(ThetaBox([0, 0], [1, 1])), [0.0])


# ---------------------------------------------------------------- runs


def test_run_ex51_table_cells_match_library(outdir):
    cfg = ExperimentConfig.from_dict({"experiment": "ex51", "seed": 3, "output_dir": str(outdir)})
    files = run_experiment(cfg)
    t1 = _rows(files["table1"])
    assert len(t1) == 9
    assert {(int(r["n"]), r["epsilon_kind"]) for r in t1} == {
        (n, k) for n in (500, 1000, 5000) for k in ("sqrt-n", "log-n", "loglog-n")}
    t2 = _rows(files["table2"])
    assert len(t2) == 9
    for name in ("chain_n500.csv", "density_flat_n5000.csv", "density_prior_n5000.csv", "config.json"):
        assert (outdir / name).exists()

    # same numbers from direct library calls
    n = 5000
    data = gen_example_5_1(n, derive_seed(3, n, 0))
    ctx = LogLikelihoodContext(make_interval_mean_model(), data, Hyperparameters.identity([0.1, 0.5]))
    box = ThetaBox([-5.0], [10.0])
    target = LogPosterior(ctx, ThetaPrior.flat(box))
    region = level_set_region(target, box, epsilon_schedule(n, "loglog-n"), 0.001)
    row = next(r for r in t1 if r["n"] == "5000" and r["epsilon_kind"] == "loglog-n")
    assert (float(row["lower"]), float(row["upper"])) == region.interval
    chain = run_chain(cfg, target, box, [1.0], derive_seed(3, n, 1))
    iv = quantile_set_estimate(chain, 0, 1.0 / n)
    row = next(r for r in t2 if r["n"] == "5000" and r["pi_kind"] == "inv-n")
    assert (float(row["lower"]), float(row["upper"])) == (iv.lower, iv.upper)
    saved = load_chain(outdir / "chain_n5000.csv")
    assert np.array_equal(saved.draws, chain.draws)


def test_run_ex53_reports(outdir):
    cfg = ExperimentConfig.from_dict({"experiment": "ex53", "output_dir": str(outdir)})
    run_experiment(cfg)
    table = _rows(outdir / "posterior_table.csv")
    assert len(table) == 45
    for n in (100, 1000, 5000):
        rows = [r for r in table if r["n"] == str(n)]
        assert len(rows) == 15
        assert sum(float(r["posterior_weight"]) for r in rows) == pytest.approx(1.0, abs=1e-10)
        assert len(_rows(outdir / f"selection_n{n}.csv")) == 15
        if n >= 1000:
            # the seven candidates without the false bound lead
            assert all("y1_upper" not in r["candidate"] for r in rows[:7])
            assert rows[0]["candidate"] == "[y2_lower,y3_lower,y4_upper]|[theta1]"


def test_run_custom_interval_regression(outdir):
    data = gen_example_5_2(400, 1)
    path = outdir / "data.csv"
    save_dataset(data, path)
    cfg = ExperimentConfig.from_dict({
        "experiment": "custom", "data": str(path), "output_dir": str(outdir / "out"),
        "model": {"kind": "interval-regression", "instruments": 2, "regressors": 2},
        "psi": [0.1, 0.1, 0.5, 0.5], "box": {"lower": [-20, -20], "upper": [20, 20]},
        "sampler": {"B": 2000, "tune": 2}, "estimator": {"grid_spacing": 0.05},
    })
    files = run_experiment(cfg)
    rows = _rows(files["intervals"])
    assert {(r["estimator"], r["parameter"]) for r in rows} == {
        (e, p) for e in ("quantile", "level-set") for p in ("theta1", "theta2")}
    for r in rows:
        assert float(r["lower"]) < float(r["upper"])


def test_run_ex52_summary(outdir):
    cfg = ExperimentConfig.from_dict({"experiment": "ex52", "output_dir": str(outdir),
                                      "sampler": {"B": 1500, "burn_in": 300, "tune": 2},
                                      "estimator": {"grid_spacing": 0.1}})
    run_experiment(cfg)
    summary = json.loads((outdir / "summary.json").read_text())
    assert set(summary) == {"flat_n500", "prior_n500"}
    assert len(_rows(outdir / "parallelogram.csv")) == 4
    assert (outdir / "level_set_loglog-n_n500.csv").exists()
    assert len(_rows(outdir / "chain_flat_n500.csv")) == 1500


def test_output_dir_env_override(tmp_path, monkeypatch):
    monkeypatch.setenv("MOMENTBAYES_OUTPUT_DIR", str(tmp_path / "env"))
    cfg = ExperimentConfig.from_dict({"experiment": "ex53", "n": [100], "output_dir": str(tmp_path / "cfg")})
    run_experiment(cfg)
    assert (tmp_path / "env" / "posterior_table.csv").exists()
    assert not (tmp_path / "cfg").exists()


def test_runs_are_byte_identical(tmp_path, monkeypatch):
    monkeypatch.delenv("MOMENTBAYES_OUTPUT_DIR", raising=False)
    cfg = ExperimentConfig.from_dict({"experiment": "ex51", "n": [500], "seed": 9, "output_dir": str(tmp_path)})
    outs = []
    for _ in range(2):
        run_experiment(cfg)
        outs.append({p.name: p.read_bytes() for p in sorted(tmp_path.iterdir())})
    assert outs[0] == outs[1]
