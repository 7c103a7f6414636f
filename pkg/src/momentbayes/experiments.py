"""Simulation designs, experiment configuration and batch runs.

Normal distributions below are parameterised by variance, so
``N(0, 0.1)`` has standard deviation ``sqrt(0.1)``.
"""

from __future__ import annotations

import copy
import csv
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .core import (
    DataError,
    Dataset,
    Hyperparameters,
    MomentModel,
    ThetaBox,
    ThetaPrior,
    load_dataset,
    make_interval_mean_model,
    make_interval_regression_model,
    make_mean_bounds_model,
    make_missing_data_model,
    save_dataset,
)
from .likelihood import LogLikelihoodContext, LogPosterior, log_posterior_unnorm
from .mcmc import ProposalSpec, metropolis, save_chain, tune_proposal
from .selection import enumerate_candidates, mpc_select, save_selection_report
from .setestim import epsilon_schedule, level_set_region, quantile_set_estimate, save_level_set

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "derive_seed",
    "gen_example_5_1",
    "gen_example_5_2",
    "gen_example_5_3",
    "gen_example_4_1",
    "GENERATORS",
    "example_5_2_parallelogram",
    "selection_model",
    "pi_schedule",
    "emit_density_curve",
    "load_config",
    "run_experiment",
    "OUTPUT_ENV",
]

OUTPUT_ENV = "MOMENTBAYES_OUTPUT_DIR"
_RETRY_FACTOR = 100


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists every issue found."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("invalid configuration:\n" + "\n".join(f"  - {p}" for p in self.problems))


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for a sub-stream identified by ``keys``."""
    return int(np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(1)[0])


# --------------------------------------------------------------------------
# data generators


def _rejection(n, seed, draw, accept, columns):
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    kept, have, tried = [], 0, 0
    while have < n:
        if tried > _RETRY_FACTOR * n:
            raise RuntimeError(f"rejection sampler accepted only {have} of {tried} draws")
        size = max(n - have, 16)
        block = draw(rng, size)
        tried += size
        block = block[accept(block)]
        kept.append(block)
        have += block.shape[0]
    return Dataset(np.concatenate(kept)[:n], columns)


def gen_example_5_1(n: int, seed: int) -> Dataset:
    """Interval data: ``y1 ~ N(0, 0.1)``, ``y2 ~ N(5, 0.1)``, rows with ``y1 > y2`` redrawn."""
    sd = math.sqrt(0.1)

    def draw(rng, size):
        return np.column_stack([rng.normal(0.0, sd, size), rng.normal(5.0, sd, size)])

    return _rejection(n, seed, draw, lambda b: b[:, 0] <= b[:, 1], ("y1", "y2"))


def gen_example_5_2(n: int, seed: int) -> Dataset:
    """Interval regression with instruments ``z1 = x1 + x2``, ``z2 = x1 + 2 x2``.

    ``x ~ N((1, 1), I)``, ``y1 ~ N(3, 0.1)``, ``y2 ~ N(6, 0.1)``; rows with a
    negative instrument are redrawn.
    """
    sd = math.sqrt(0.1)

    def draw(rng, size):
        x = rng.normal(1.0, 1.0, (size, 2))
        y1 = rng.normal(3.0, sd, size)
        y2 = rng.normal(6.0, sd, size)
        z1 = x[:, 0] + x[:, 1]
        z2 = x[:, 0] + 2.0 * x[:, 1]
        return np.column_stack([y1, y2, x[:, 0], x[:, 1], z1, z2])

    return _rejection(n, seed, draw, lambda b: (b[:, 4] >= 0) & (b[:, 5] >= 0),
                      ("y1", "y2", "x1", "x2", "z1", "z2"))


def gen_example_5_3(n: int, seed: int) -> Dataset:
    """Four independent normals with means ``(-1, 1, 2, 3)`` and variance 0.1."""
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    y = rng.normal([-1.0, 1.0, 2.0, 3.0], math.sqrt(0.1), (n, 4))
    return Dataset(y, ("y1", "y2", "y3", "y4"))


def gen_example_4_1(n: int, seed: int) -> Dataset:
    """Point-identified interval regression with ``theta0 = (0.9, 0)``.

    ``x1 ~ U[-1, 1]``, ``x2 = 1``, ``z = (x1 + 1, 1)``, ``y = x'theta0`` and
    ``y1, y2 = y + 0.1 (u1 - 1), y + 0.1 (u2 + 1)`` with ``u ~ U[-1, 1]``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    x1 = rng.uniform(-1.0, 1.0, n)
    u1 = rng.uniform(-1.0, 1.0, n)
    u2 = rng.uniform(-1.0, 1.0, n)
    x2 = np.ones(n)
    y = 0.9 * x1
    return Dataset(
        np.column_stack([y + 0.1 * (u1 - 1.0), y + 0.1 * (u2 + 1.0), x1, x2, x1 + 1.0, np.ones(n)]),
        ("y1", "y2", "x1", "x2", "z1", "z2"),
    )


GENERATORS = {
    "ex51": gen_example_5_1,
    "ex52": gen_example_5_2,
    "ex53": gen_example_5_3,
    "ex41": gen_example_4_1,
}


def example_5_2_parallelogram() -> np.ndarray:
    """Vertices of ``{2 <= t1 + t2 <= 4, 9 <= 4 t1 + 5 t2 <= 18}`` in boundary order."""
    M = np.array([[1.0, 1.0], [4.0, 5.0]])
    corners = [(2, 9), (4, 9), (4, 18), (2, 18)]
    return np.array([np.linalg.solve(M, c) for c in corners])


def selection_model() -> MomentModel:
    """Four bounds on a scalar mean: ``E y1 >= t``, ``E y2 <= t``, ``E y3 <= t``, ``E y4 >= t``."""
    return make_mean_bounds_model([("y1", "upper"), ("y2", "lower"), ("y3", "lower"), ("y4", "upper")])


def pi_schedule(n: int, kind: str) -> float:
    """Quantile level for the posterior interval: ``exp(-sqrt n)``, ``1/n`` or ``1/ln n``."""
    if kind == "exp-sqrt-n":
        return math.exp(-math.sqrt(n))
    if kind == "inv-n":
        return 1.0 / n
    if kind == "inv-log-n":
        return 1.0 / math.log(n)
    raise ValueError(f"unknown pi_n kind {kind!r}")


# --------------------------------------------------------------------------
# configuration

_DEFAULTS: dict[str, dict[str, Any]] = {
    "ex51": {
        "n": [500, 1000, 5000],
        "psi": [0.1, 0.5],
        "box": {"lower": [-5.0], "upper": [10.0]},
        "prior": {"kind": "flat"},
        "figure_prior": {"kind": "normal", "mean": [0.0], "var": [0.25]},
        "sampler": {"B": 5000, "burn_in": 500, "proposal_var": [0.5], "init": [1.0], "tune": 0},
        "estimator": {"pi_n": ["exp-sqrt-n", "inv-n", "inv-log-n"],
                      "epsilon": ["sqrt-n", "log-n", "loglog-n"],
                      "grid_spacing": 0.001, "curve_points": 1501},
    },
    "ex52": {
        "n": [500],
        "psi": [0.1, 0.1, 0.5, 0.5],
        "box": {"lower": [-20.0, -20.0], "upper": [20.0, 20.0]},
        "prior": {"kind": "flat"},
        "figure_prior": {"kind": "normal", "mean": [10.0, -6.0], "var": [144.0, 144.0]},
        "sampler": {"B": 5000, "burn_in": 1000, "proposal_var": [1.0, 1.0], "init": [1.5, 1.5], "tune": 3},
        "estimator": {"epsilon": ["loglog-n"], "grid_spacing": 0.02},
    },
    "ex53": {
        "n": [100, 1000, 5000],
        "psi": [0.015, 0.015, 0.015, 0.015],
        "box": {"lower": [0.0], "upper": [10.0]},
        "selection": {"approach": "a2", "sigma_n2": "n2", "alpha": 1.0,
                      "candidate_prior": "power", "free_masks": [[0]], "moment_subsets": None},
    },
    "custom": {
        "n": [],
        "prior": {"kind": "flat"},
        "sampler": {"B": 5000, "burn_in": None, "proposal_var": None, "init": None, "tune": 2},
        "estimator": {"pi_n": ["inv-n"], "epsilon": ["loglog-n"], "grid_spacing": None},
        "selection": {"approach": "a1", "sigma_n2": "n2", "alpha": 1.0,
                      "candidate_prior": "power", "free_masks": None, "moment_subsets": None},
    },
}


def _merge(base, extra):
    out = copy.deepcopy(base)
    for k, v in (extra or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


@dataclass
class ExperimentConfig:
    """Validated experiment description.

    Built with :meth:`from_dict`, which overlays the user's mapping on the
    defaults of the chosen experiment.
    """

    experiment: str
    n: list[int]
    seed: int = 0
    psi: list[float] | None = None
    V: Any = "identity"
    box: dict = field(default_factory=dict)
    prior: dict = field(default_factory=dict)
    figure_prior: dict | None = None
    sampler: dict = field(default_factory=dict)
    estimator: dict = field(default_factory=dict)
    selection: dict = field(default_factory=dict)
    model: dict | None = None
    data: str | None = None
    output_dir: str = "results"

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw or {})
        exp = raw.get("experiment")
        if exp not in _DEFAULTS:
            raise ConfigError([f"experiment must be one of {sorted(_DEFAULTS)}, got {exp!r}"])
        merged = _merge(_DEFAULTS[exp], raw)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(merged) - known)
        if unknown:
            raise ConfigError([f"unknown key {k!r}" for k in unknown])
        if isinstance(merged.get("n"), int):
            merged["n"] = [merged["n"]]
        cfg = cls(**merged)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {k: copy.deepcopy(getattr(self, k)) for k in self.__dataclass_fields__}

    def validate(self) -> None:
        problems = []
        if self.experiment != "custom":
            if not self.n or any(not isinstance(v, int) or v < 3 for v in self.n):
                problems.append(f"n must be a list of integers >= 3, got {self.n!r}")
        else:
            if not self.data:
                problems.append("custom experiments need 'data' (a CSV path)")
            elif not Path(self.data).is_file():
                problems.append(f"data file {self.data!r} does not exist")
            if not self.model:
                problems.append("custom experiments need a 'model' section")
        if not isinstance(self.seed, int) or self.seed < 0:
            problems.append(f"seed must be a nonnegative integer, got {self.seed!r}")
        try:
            self.hyperparameters()
        except (DataError, TypeError, ValueError) as e:
            problems.append(f"psi/V: {e}")
        try:
            self.theta_box()
        except (DataError, TypeError, KeyError) as e:
            problems.append(f"box: {e}")
        for key in ("prior", "figure_prior"):
            spec = getattr(self, key)
            if spec is None:
                continue
            if spec.get("kind", "flat") not in ("flat", "normal"):
                problems.append(f"{key}.kind must be 'flat' or 'normal'")
            elif spec.get("kind") == "normal" and not ("var" in spec or "sd" in spec):
                problems.append(f"{key} needs 'var' or 'sd'")
        smp = self.sampler
        if smp:
            if not isinstance(smp.get("B"), int) or smp["B"] < 1:
                problems.append("sampler.B must be a positive integer")
            if smp.get("burn_in") is not None and (not isinstance(smp["burn_in"], int) or smp["burn_in"] < 0):
                problems.append("sampler.burn_in must be a nonnegative integer")
            if not isinstance(smp.get("tune", 0), int) or smp.get("tune", 0) < 0:
                problems.append("sampler.tune must be a nonnegative integer")
            pv = smp.get("proposal_var")
            if pv is not None and any(float(v) <= 0 for v in np.atleast_1d(pv)):
                problems.append("sampler.proposal_var must be positive")
        est = self.estimator
        for kind in est.get("pi_n", []) or []:
            if kind not in ("exp-sqrt-n", "inv-n", "inv-log-n"):
                problems.append(f"unknown pi_n kind {kind!r}")
        for kind in est.get("epsilon", []) or []:
            if kind not in ("sqrt-n", "log-n", "loglog-n"):
                problems.append(f"unknown epsilon kind {kind!r}")
        sel = self.selection
        if sel:
            if sel.get("approach") not in ("a1", "a2"):
                problems.append("selection.approach must be 'a1' or 'a2'")
            if sel.get("candidate_prior") not in ("power", "uniform"):
                problems.append(
                    f"selection.candidate_prior {sel.get('candidate_prior')!r} rejected: only 'power' "
                    "(polynomial in n) or 'uniform' priors are allowed"
                )
            s2 = sel.get("sigma_n2")
            if not (s2 in ("n", "n2") or (isinstance(s2, (int, float)) and s2 > 0)):
                problems.append("selection.sigma_n2 must be 'n', 'n2' or a positive number")
            if not (isinstance(sel.get("alpha"), (int, float)) and sel["alpha"] > 0):
                problems.append("selection.alpha must be positive")
        if problems:
            raise ConfigError(problems)

    # ---- builders -----------------------------------------------------------

    def build_model(self) -> MomentModel:
        if self.experiment == "ex51":
            return make_interval_mean_model()
        if self.experiment == "ex52":
            return make_interval_regression_model(2, 2)
        if self.experiment == "ex53":
            return selection_model()
        return model_from_spec(self.model)

    def theta_box(self) -> ThetaBox:
        if not self.box or "lower" not in self.box or "upper" not in self.box:
            raise DataError("box.lower and box.upper are required")
        return ThetaBox(self.box["lower"], self.box["upper"])

    def hyperparameters(self) -> Hyperparameters:
        if self.psi is None:
            raise DataError("psi is required")
        psi = np.asarray(self.psi, dtype=float)
        V = np.eye(psi.size) if self.V in (None, "identity") else np.asarray(self.V, dtype=float)
        return Hyperparameters(psi, V)

    def theta_prior(self, spec: dict | None = None) -> ThetaPrior:
        spec = self.prior if spec is None else spec
        box = self.theta_box()
        if spec.get("kind", "flat") == "flat":
            return ThetaPrior.flat(box)
        sd = np.sqrt(spec["var"]) if "var" in spec else np.asarray(spec["sd"], dtype=float)
        return ThetaPrior.normal(box, spec["mean"], sd)

    def sigma_n2(self, n: int) -> float:
        s2 = self.selection.get("sigma_n2", "n2")
        if s2 == "n":
            return float(n)
        if s2 == "n2":
            return float(n) ** 2
        return float(s2)


def model_from_spec(spec: dict) -> MomentModel:
    """Build a model from ``{"kind": ...}``.

    Kinds: ``interval-mean``, ``missing-data``, ``interval-regression``
    (``instruments``, ``regressors``) and ``mean-bounds`` (``bounds``: list
    of ``[column, "upper" | "lower"]``).
    """
    kind = spec.get("kind")
    if kind == "interval-mean":
        return make_interval_mean_model()
    if kind == "missing-data":
        return make_missing_data_model()
    if kind == "interval-regression":
        return make_interval_regression_model(int(spec["instruments"]), int(spec["regressors"]))
    if kind == "mean-bounds":
        return make_mean_bounds_model([tuple(b) for b in spec["bounds"]])
    raise ConfigError([f"unknown model kind {kind!r}"])


def load_config(path, overrides: dict | None = None) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError(["configuration file must hold a mapping"])
    return ExperimentConfig.from_dict(_merge(raw, overrides or {}))


# --------------------------------------------------------------------------
# outputs


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([_fmt(v) if isinstance(v, (float, np.floating)) else v for v in r])


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def emit_density_curve(ctx: LogLikelihoodContext, prior: ThetaPrior, grid, path=None) -> np.ndarray:
    """Posterior density on a 1-D grid, rescaled so that its maximum is 1.

    Returns an ``(G, 2)`` array of ``(theta, density)`` and writes it as CSV
    when ``path`` is given.
    """
    if ctx.d != 1:
        raise ValueError("density curves are one-dimensional")
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    lp = np.atleast_1d(log_posterior_unnorm(ctx, prior, grid[:, None]))
    top = np.max(lp)
    dens = np.exp(lp - top) if np.isfinite(top) else np.zeros_like(lp)
    out = np.column_stack([grid, dens])
    if path is not None:
        _write_rows(Path(path), ["theta", "density"], out.tolist())
    return out


def _proposal(cfg: ExperimentConfig, target, init, box: ThetaBox, seed: int) -> ProposalSpec:
    """Configured proposal, refined by ``sampler.tune`` pilot rounds."""
    var = cfg.sampler.get("proposal_var")
    if var is None:
        # a tenth of the box width per coordinate
        prop = ProposalSpec((box.upper - box.lower) / 10.0)
    else:
        prop = ProposalSpec.from_variance(var, box.d)
    rounds = cfg.sampler.get("tune", 0)
    if rounds:
        prop = tune_proposal(target, init, prop, cfg.sampler["B"], rounds, seed)
    return prop


def run_chain(cfg: ExperimentConfig, target, box: ThetaBox, init, seed: int):
    """Metropolis chain as configured; the pilot rounds use ``seed + 1, ...``."""
    init = np.asarray(init, dtype=float)
    prop = _proposal(cfg, target, init, box, seed + 1)
    return metropolis(target, init, prop, cfg.sampler["B"], cfg.sampler.get("burn_in"), seed)


def _init(cfg: ExperimentConfig, target, box: ThetaBox):
    init = cfg.sampler.get("init")
    if init is not None:
        return np.asarray(init, dtype=float)
    from .setestim import map_maximize

    return map_maximize(target, box)[0]


def run_ex51(cfg: ExperimentConfig, out: Path) -> dict:
    model = cfg.build_model()
    hyper = cfg.hyperparameters()
    prior = cfg.theta_prior()
    box = prior.box
    fig_prior = cfg.theta_prior(cfg.figure_prior) if cfg.figure_prior else None
    est = cfg.estimator
    t1, t2, files = [], [], {}
    for n in cfg.n:
        data = gen_example_5_1(n, derive_seed(cfg.seed, n, 0))
        ctx = LogLikelihoodContext(model, data, hyper)
        target = LogPosterior(ctx, prior)
        for kind in est["epsilon"]:
            eps = epsilon_schedule(n, kind)
            region = level_set_region(target, box, eps, est["grid_spacing"])
            lo, hi = region.interval
            t1.append([n, kind, eps, lo, hi, (lo - 0.0) ** 2 + (hi - 5.0) ** 2])
        chain = run_chain(cfg, target, box, cfg.sampler["init"], derive_seed(cfg.seed, n, 1))
        save_chain(chain, out / f"chain_n{n}.csv", model.param_names)
        for kind in est["pi_n"]:
            iv = quantile_set_estimate(chain, 0, pi_schedule(n, kind))
            t2.append([n, kind, iv.pi_n, iv.lower, iv.upper])
        grid = np.linspace(box.lower[0], box.upper[0], est.get("curve_points", 1501))
        emit_density_curve(ctx, prior, grid, out / f"density_flat_n{n}.csv")
        if fig_prior is not None:
            emit_density_curve(ctx, fig_prior, grid, out / f"density_prior_n{n}.csv")
    _write_rows(out / "table1.csv", ["n", "epsilon_kind", "epsilon_n", "lower", "upper", "gamma"], t1)
    _write_rows(out / "table2.csv", ["n", "pi_kind", "pi_n", "lower", "upper"], t2)
    files.update(table1=out / "table1.csv", table2=out / "table2.csv")
    return files


def run_ex52(cfg: ExperimentConfig, out: Path) -> dict:
    model = cfg.build_model()
    hyper = cfg.hyperparameters()
    box = cfg.theta_box()
    summary = {}
    verts = example_5_2_parallelogram()
    _write_rows(out / "parallelogram.csv", ["theta1", "theta2"], verts.tolist())
    for n in cfg.n:
        data = gen_example_5_2(n, derive_seed(cfg.seed, n, 0))
        ctx = LogLikelihoodContext(model, data, hyper)
        runs = {"flat": cfg.theta_prior()}
        if cfg.figure_prior:
            runs["prior"] = cfg.theta_prior(cfg.figure_prior)
        for j, (label, prior) in enumerate(sorted(runs.items())):
            target = LogPosterior(ctx, prior)
            chain = run_chain(cfg, target, box, cfg.sampler["init"], derive_seed(cfg.seed, n, 1, j))
            save_chain(chain, out / f"chain_{label}_n{n}.csv", model.param_names)
            summary[f"{label}_n{n}"] = {
                "centroid": [float(v) for v in chain.draws.mean(axis=0)],
                "acceptance_rate": chain.acceptance_rate,
            }
        target = LogPosterior(ctx, cfg.theta_prior())
        for kind in cfg.estimator.get("epsilon", []):
            region = level_set_region(target, box, epsilon_schedule(n, kind), cfg.estimator["grid_spacing"])
            save_level_set(region, out / f"level_set_{kind}_n{n}.csv", model.param_names)
    _write_json(out / "summary.json", summary)
    return {"summary": out / "summary.json"}


def run_ex53(cfg: ExperimentConfig, out: Path) -> dict:
    model = cfg.build_model()
    hyper = cfg.hyperparameters()
    box = cfg.theta_box()
    sel = cfg.selection
    rows = []
    for n in cfg.n:
        data = gen_example_5_3(n, derive_seed(cfg.seed, n, 0))
        cands = enumerate_candidates(model.p, model.d, sel.get("moment_subsets"), sel.get("free_masks"))
        post = _select(cfg, cands, data, model, hyper, box, n)
        save_selection_report(post, out / f"selection_n{n}.csv", model)
        for i in post.ranked():
            c = post.candidates[i]
            rows.append([n, c.label(model), post.weights[i]])
    _write_rows(out / "posterior_table.csv", ["n", "candidate", "posterior_weight"], rows)
    return {"table": out / "posterior_table.csv"}


def _select(cfg, cands, data, model, hyper, box, n):
    sel = cfg.selection
    if sel["approach"] == "a2":
        return mpc_select(cands, data, model, hyper, "a2", sigma_n2=cfg.sigma_n2(n), box=box)
    return mpc_select(cands, data, model, hyper, "a1", alpha=sel["alpha"], theta_prior=cfg.theta_prior(),
                      candidate_prior=sel["candidate_prior"])


def run_custom(cfg: ExperimentConfig, out: Path) -> dict:
    model = cfg.build_model()
    data = load_dataset(cfg.data)
    hyper = cfg.hyperparameters()
    prior = cfg.theta_prior()
    box = prior.box
    n = data.n
    ctx = LogLikelihoodContext(model, data, hyper)
    target = LogPosterior(ctx, prior)
    chain = run_chain(cfg, target, box, _init(cfg, target, box), derive_seed(cfg.seed, n, 1))
    save_chain(chain, out / "chain.csv", model.param_names)
    rows = []
    for kind in cfg.estimator.get("pi_n", []):
        for j, name in enumerate(model.param_names):
            iv = quantile_set_estimate(chain, j, pi_schedule(n, kind))
            rows.append(["quantile", name, kind, iv.pi_n, iv.lower, iv.upper])
    spacing = cfg.estimator.get("grid_spacing") or float(np.min(box.upper - box.lower)) / 400.0
    for kind in cfg.estimator.get("epsilon", []):
        eps = epsilon_schedule(n, kind)
        resolution = spacing if model.d <= 2 else chain
        region = level_set_region(target, box, eps, resolution)
        lo, hi = region.hull
        for j, name in enumerate(model.param_names):
            rows.append(["level-set", name, kind, eps, lo[j], hi[j]])
    _write_rows(out / "intervals.csv", ["estimator", "parameter", "kind", "tuning", "lower", "upper"], rows)
    return {"intervals": out / "intervals.csv"}


def run_selection(cfg: ExperimentConfig, out: Path, data: Dataset | None = None) -> dict:
    """Selection report for a custom dataset (or ex53's generated data)."""
    model = cfg.build_model()
    hyper = cfg.hyperparameters()
    box = cfg.theta_box()
    sel = cfg.selection
    if data is None:
        if cfg.experiment == "custom":
            data = load_dataset(cfg.data)
        else:
            return run_ex53(cfg, out)
    cands = enumerate_candidates(model.p, model.d, sel.get("moment_subsets"), sel.get("free_masks"))
    post = _select(cfg, cands, data, model, hyper, box, data.n)
    save_selection_report(post, out / "selection.csv", model)
    return {"selection": out / "selection.csv"}


_RUNNERS = {"ex51": run_ex51, "ex52": run_ex52, "ex53": run_ex53, "custom": run_custom}


def output_dir(cfg: ExperimentConfig) -> Path:
    out = Path(os.environ.get(OUTPUT_ENV) or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def run_experiment(cfg: ExperimentConfig) -> dict:
    """Run one configured experiment and return the main output paths.

    The resolved configuration is written next to the outputs.
    """
    out = output_dir(cfg)
    _write_json(out / "config.json", cfg.to_dict())
    return _RUNNERS[cfg.experiment](cfg, out)


def save_generated(name: str, n: int, seed: int, path) -> Dataset:
    data = GENERATORS[name](n, seed)
    save_dataset(data, path)
    return data
