"""Command-line front end: ``momentbayes {gen,run,select,estimate}``.

Every flag overrides the matching field of a YAML configuration (given
with ``--config``) or of the experiment's built-in defaults.  The output
directory may also be set through ``MOMENTBAYES_OUTPUT_DIR``.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .core import DataError
from .experiments import (
    GENERATORS,
    OUTPUT_ENV,
    ConfigError,
    ExperimentConfig,
    load_config,
    run_experiment,
    run_selection,
    save_generated,
)
from .quadrature import IntegrationError

__all__ = ["main", "build_parser"]


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _ints(text: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _words(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _sigma(text: str):
    if text in ("n", "n2"):
        return text
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("sigma-n2 must be 'n', 'n2' or a number") from None


def _bounds(text: str) -> list[list[str]]:
    out = []
    for item in _words(text):
        col, _, side = item.partition(":")
        if side not in ("upper", "lower"):
            raise argparse.ArgumentTypeError(f"bound {item!r} must look like column:upper or column:lower")
        out.append([col, side])
    return out


def _subsets(text: str) -> list[list[int]]:
    """``"0;0,1;2,3"`` -> ``[[0], [0, 1], [2, 3]]`` (0-based indices)."""
    return [_ints(part) for part in text.split(";") if part.strip()]


def _config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="YAML configuration file")
    p.add_argument("--experiment", choices=["ex51", "ex52", "ex53", "custom"])
    p.add_argument("--n", type=_ints, help="sample sizes, comma separated")
    p.add_argument("--seed", type=int)
    p.add_argument("--psi", type=_floats)
    p.add_argument("--output-dir")
    g = p.add_argument_group("parameter space and prior")
    g.add_argument("--box-lower", type=_floats)
    g.add_argument("--box-upper", type=_floats)
    g.add_argument("--prior", choices=["flat", "normal"])
    g.add_argument("--prior-mean", type=_floats)
    g.add_argument("--prior-var", type=_floats)
    g = p.add_argument_group("sampler")
    g.add_argument("--B", type=int, dest="B", help="retained Metropolis draws")
    g.add_argument("--burn-in", type=int)
    g.add_argument("--proposal-var", type=_floats)
    g.add_argument("--init", type=_floats)
    g.add_argument("--tune", type=int, help="pilot rounds for the proposal covariance")
    g = p.add_argument_group("set estimators")
    g.add_argument("--pi-n", type=_words, help="exp-sqrt-n, inv-n, inv-log-n")
    g.add_argument("--epsilon", type=_words, help="sqrt-n, log-n, loglog-n")
    g.add_argument("--grid-spacing", type=float)
    g = p.add_argument_group("selection")
    g.add_argument("--approach", choices=["a1", "a2"])
    g.add_argument("--alpha", type=float)
    g.add_argument("--sigma-n2", type=_sigma)
    g.add_argument("--candidate-prior", choices=["power", "uniform"])
    g.add_argument("--moment-subsets", type=_subsets, help='e.g. "0;0,1;1,2,3"')
    g.add_argument("--free-masks", type=_subsets, help='e.g. "0,1;1"')
    g = p.add_argument_group("custom data")
    g.add_argument("--data", help="CSV file with a header row")
    g.add_argument("--model", choices=["interval-mean", "missing-data", "interval-regression", "mean-bounds"])
    g.add_argument("--instruments", type=int)
    g.add_argument("--regressors", type=int)
    g.add_argument("--bounds", type=_bounds, help="e.g. y1:upper,y2:lower")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="momentbayes", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="simulate a dataset and write it as CSV")
    g.add_argument("--experiment", choices=sorted(GENERATORS), required=True)
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", help="output CSV (default: <output dir>/<experiment>_n<n>_seed<seed>.csv)")
    g.add_argument("--output-dir", default=".")

    for verb, text in (
        ("run", "run a configured experiment"),
        ("select", "moment and model selection report"),
        ("estimate", "set estimates for a user dataset"),
    ):
        _config_flags(sub.add_parser(verb, help=text))
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    """Nested config mapping holding only the flags that were given."""
    out: dict = {}

    def put(path, value):
        if value is None:
            return
        node = out
        for key in path[:-1]:
            node = node.setdefault(key, {})
        node[path[-1]] = value

    put(("experiment",), args.experiment)
    put(("n",), args.n)
    put(("seed",), args.seed)
    put(("psi",), args.psi)
    put(("output_dir",), args.output_dir)
    put(("box", "lower"), args.box_lower)
    put(("box", "upper"), args.box_upper)
    put(("prior", "kind"), args.prior)
    put(("prior", "mean"), args.prior_mean)
    put(("prior", "var"), args.prior_var)
    put(("sampler", "B"), args.B)
    put(("sampler", "burn_in"), args.burn_in)
    put(("sampler", "proposal_var"), args.proposal_var)
    put(("sampler", "init"), args.init)
    put(("sampler", "tune"), args.tune)
    put(("estimator", "pi_n"), args.pi_n)
    put(("estimator", "epsilon"), args.epsilon)
    put(("estimator", "grid_spacing"), args.grid_spacing)
    put(("selection", "approach"), args.approach)
    put(("selection", "alpha"), args.alpha)
    put(("selection", "sigma_n2"), args.sigma_n2)
    put(("selection", "candidate_prior"), args.candidate_prior)
    put(("selection", "moment_subsets"), args.moment_subsets)
    put(("selection", "free_masks"), args.free_masks)
    put(("data",), args.data)
    put(("model", "kind"), args.model)
    put(("model", "instruments"), args.instruments)
    put(("model", "regressors"), args.regressors)
    put(("model", "bounds"), args.bounds)
    return out


def _config(args: argparse.Namespace, default_experiment: str | None = None) -> ExperimentConfig:
    over = _overrides(args)
    if args.config is not None:
        return load_config(args.config, over)
    if "experiment" not in over and default_experiment:
        over["experiment"] = default_experiment
    return ExperimentConfig.from_dict(over)


def _run(args: argparse.Namespace) -> list[Path]:
    if args.verb == "gen":
        base = Path(os.environ.get(OUTPUT_ENV) or args.output_dir)
        out = Path(args.out) if args.out else base / f"{args.experiment}_n{args.n}_seed{args.seed}.csv"
        out.parent.mkdir(parents=True, exist_ok=True)
        save_generated(args.experiment, args.n, args.seed, out)
        return [out]
    if args.verb == "run":
        return list(run_experiment(_config(args)).values())
    if args.verb == "select":
        cfg = _config(args, "custom" if args.data else "ex53")
        from .experiments import output_dir

        return list(run_selection(cfg, output_dir(cfg)).values())
    # estimate
    cfg = _config(args, "custom")
    if cfg.experiment != "custom":
        raise ConfigError(["estimate works on user data; use 'run' for the built-in experiments"])
    return list(run_experiment(cfg).values())


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        paths = _run(args)
    except ConfigError as e:
        print(f"momentbayes: {e}", file=sys.stderr)
        return 2
    except (DataError, IntegrationError, ValueError, RuntimeError, OSError, KeyError) as e:
        print(f"momentbayes: error: {e}", file=sys.stderr)
        return 1
    for p in paths:
        print(p)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
