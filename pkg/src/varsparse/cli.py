"""Command-line front end: generate datasets, validate intervention designs,
train and evaluate unmixing models, and reproduce the benchmark grids as CSV.

Configuration comes from an INI-style file (sections ``[experiment]``,
``[weights]``, ``[train]``) with command-line flags taking precedence over
file values. Exit codes: 0 on success, 1 on validation or I/O failure, 2 when
optimization aborts on non-finite numbers.
"""

from __future__ import annotations

import argparse
import configparser
import json
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ._rng import derive_seed
from .data import export_csv, load, save
from .envs import EnvironmentSet, check_sufficient_coverage
from .experiments import (
    DESIGN_KINDS,
    METHODS,
    SEED_TRAIN,
    ExperimentConfig,
    build_design,
    make_dataset,
    regenerate,
    reproduce,
)
from .metrics import disentanglement_check, mcc_between
from .unmixing import (
    LossWeights,
    NumericalError,
    TrainingAborted,
    load_checkpoint,
    save_checkpoint,
    train,
)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_NUMERICAL = 2

_EXPERIMENT_KEYS = {
    "d": int,
    "p": float,
    "n_per_env": int,
    "seeds": lambda s: tuple(int(tok) for tok in s.replace(",", " ").split()),
    "design": str,
    "scm": str,
    "out_dir": str,
}
_WEIGHT_KEYS = {
    "lambda_e": float,
    "lambda_m": float,
    "lambda_diag": float,
    "lambda_norm": float,
    "norm_target": float,
}
_TRAIN_KEYS = {"epochs": int, "batch_size": int, "learning_rate": float}


class _Parser(argparse.ArgumentParser):
    """argparse maps usage errors to exit 2; this tool reserves 2 for
    numerical aborts, so route them to the validation code instead."""

    def error(self, message: str) -> None:  # noqa: D401 - argparse hook
        self.print_usage(sys.stderr)
        self.exit(EXIT_VALIDATION, f"{self.prog}: error: {message}\n")


def _parse_section(parser: configparser.ConfigParser, name: str, schema: dict) -> dict:
    out = {}
    if not parser.has_section(name):
        return out
    for key, raw in parser.items(name):
        if key not in schema:
            raise ValueError(f"unknown config key [{name}] {key}")
        try:
            out[key] = schema[key](raw)
        except ValueError as err:
            raise ValueError(f"bad config value [{name}] {key} = {raw!r}: {err}") from err
    return out


def load_config_file(path: str) -> tuple[dict, dict, dict]:
    """Read the three sections of a config file into typed dicts."""
    parser = configparser.ConfigParser()
    text = Path(path).read_text()
    try:
        parser.read_string(text, source=path)
    except configparser.Error as err:
        raise ValueError(f"cannot parse config {path}: {err}") from err
    for section in parser.sections():
        if section not in ("experiment", "weights", "train"):
            raise ValueError(f"unknown config section [{section}] in {path}")
    return (
        _parse_section(parser, "experiment", _EXPERIMENT_KEYS),
        _parse_section(parser, "weights", _WEIGHT_KEYS),
        _parse_section(parser, "train", _TRAIN_KEYS),
    )


def _resolve_design(value: str) -> tuple[str, Optional[str]]:
    """A design is either a named constructor or a path to a regimes file."""
    if value in DESIGN_KINDS:
        return value, None
    return "custom-file", value


def build_config(args: argparse.Namespace) -> ExperimentConfig:
    """Merge config file then flags into a validated ExperimentConfig."""
    exp, weight_kwargs, train_kwargs = {}, {}, {}
    if getattr(args, "config", None):
        exp, weight_kwargs, train_kwargs = load_config_file(args.config)
    if getattr(args, "d", None) is not None:
        exp["d"] = args.d
    if getattr(args, "p", None) is not None:
        exp["p"] = args.p
    if getattr(args, "n", None) is not None:
        exp["n_per_env"] = args.n
    if getattr(args, "seed", None) is not None:
        exp["seeds"] = (args.seed,)
    if getattr(args, "design", None) is not None:
        exp["design"] = args.design
    if getattr(args, "scm", None) is not None:
        exp["scm"] = args.scm
    if getattr(args, "out", None) is not None:
        exp["out_dir"] = args.out
    design_file = None
    if "design" in exp:
        exp["design"], design_file = _resolve_design(exp["design"])
    return ExperimentConfig(
        weights=LossWeights(**weight_kwargs),
        design_file=design_file,
        **exp,
        **train_kwargs,
    )


def cmd_generate(args: argparse.Namespace) -> int:
    config = build_config(args)
    seed = config.seeds[0]
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if getattr(args, "from_manifest", None):
        manifest = json.loads(Path(args.from_manifest).read_text())
        dataset = regenerate(manifest)
    else:
        dataset, manifest = make_dataset(config, seed)
    save(dataset, out / "dataset.bin")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    paths = export_csv(dataset, out)
    print(f"wrote {out / 'dataset.bin'} ({dataset.n_envs} environments, {dataset.n_per_env} rows each)")
    print(f"wrote {out / 'manifest.json'} (seed {manifest['seed']}, {manifest['n_edges']} edges)")
    print(f"wrote {len(paths)} per-environment CSV files under {out}")
    return EXIT_OK


def cmd_check_design(args: argparse.Namespace) -> int:
    kind, path = _resolve_design(args.design) if args.design else ("leave-one-out", None)
    if path is not None:
        envs = EnvironmentSet.from_json(Path(path).read_text())
    else:
        d = args.d if args.d is not None else 6
        envs = build_design(kind, d, args.seed if args.seed is not None else 0)
    report = check_sufficient_coverage(envs)
    print(f"{len(envs)} environments over d={envs.d}: {report}")
    return EXIT_OK if report.passed else EXIT_VALIDATION


def cmd_train(args: argparse.Namespace) -> int:
    config = build_config(args)
    if not args.data:
        raise ValueError("train needs --data pointing at a generated dataset")
    dataset = load(args.data)
    seed = config.seeds[0]
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_config = config.train_config(derive_seed(seed, SEED_TRAIN))
    model, report = train(dataset, config.weights, train_config)
    save_checkpoint(model, out / "checkpoint.bin", train_config, epoch=config.epochs)
    (out / "train_report.json").write_text(report.to_json() + "\n")
    report.to_csv(out / "train_losses.csv")
    test_latents = np.vstack([dataset.test_latents(e) for e in range(dataset.n_envs)])
    test_observed = np.vstack([dataset.test_observed(e) for e in range(dataset.n_envs)])
    score = mcc_between(test_latents, test_observed @ model.lhat).score
    print(f"final training loss {float(report.epoch_losses[-1].total)!r}")
    print(f"test-split mcc {score!r}")
    print(f"wrote {out / 'checkpoint.bin'}")
    return EXIT_OK


def cmd_evaluate(args: argparse.Namespace) -> int:
    if not args.data or not args.checkpoint:
        raise ValueError("evaluate needs --data and --checkpoint")
    dataset = load(args.data)
    model, _ = load_checkpoint(args.checkpoint)
    test_latents = np.vstack([dataset.test_latents(e) for e in range(dataset.n_envs)])
    test_observed = np.vstack([dataset.test_observed(e) for e in range(dataset.n_envs)])
    result = mcc_between(test_latents, test_observed @ model.lhat)
    print(f"test-split mcc {result.score!r}")
    print(f"matched pairs (reference -> learned): {result.permutation}")
    effective = dataset.mixing.entries @ model.lhat
    verdict = disentanglement_check(effective)
    print(f"scaled-permutation structure: {'pass' if verdict.passed else 'FAIL'}")
    if not verdict.passed:
        print(str(verdict))
    return EXIT_OK


def cmd_reproduce(args: argparse.Namespace) -> int:
    config = build_config(args)
    methods = tuple(args.methods.split(",")) if args.methods else METHODS
    rows_path, summary_path, rows = reproduce(
        args.which, config.out_dir, config, methods=methods
    )
    failures = [r for r in rows if r.error]
    print(f"wrote {rows_path} ({len(rows)} rows)")
    print(f"wrote {summary_path}")
    for r in failures:
        print(f"row failed (scm={r.scm} d={r.d} seed={r.seed} {r.method}): {r.error}")
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="varsparse", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="INI config file; flags override it")
    common.add_argument("--seed", type=int, help="run seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--design", help="leave-one-out, separating, or a regimes JSON file")
    common.add_argument("--scm", choices=("linear", "nonlinear-1", "nonlinear-2"))
    common.add_argument("--d", type=int, help="latent dimension")
    common.add_argument("--p", type=float, help="edge probability of the random graph")
    common.add_argument("--n", type=int, help="rows per environment")

    sub = parser.add_subparsers(dest="command", required=True)
    gen = sub.add_parser("generate", parents=[common], help="sample a dataset to disk")
    gen.add_argument("--from-manifest", help="regenerate bit-exactly from a manifest JSON")
    gen.set_defaults(func=cmd_generate)

    chk = sub.add_parser("check-design", parents=[common], help="validate an intervention design")
    chk.set_defaults(func=cmd_check_design)

    trn = sub.add_parser("train", parents=[common], help="fit the unmixing model on a dataset")
    trn.add_argument("--data", help="dataset container from generate")
    trn.set_defaults(func=cmd_train)

    ev = sub.add_parser("evaluate", parents=[common], help="score a checkpoint on a dataset")
    ev.add_argument("--data", help="dataset container from generate")
    ev.add_argument("--checkpoint", help="checkpoint from train")
    ev.set_defaults(func=cmd_evaluate)

    rep = sub.add_parser("reproduce", parents=[common], help="run a benchmark grid to CSV")
    rep.add_argument("which", choices=("fig2a", "fig2b", "fig2c", "table1"))
    rep.add_argument("--methods", help="comma list from {ours,fastica}; default both")
    rep.set_defaults(func=cmd_reproduce)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (TrainingAborted, NumericalError) as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValueError, OSError, KeyError, json.JSONDecodeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
