"""Command-line entry point: ``mmdlm {simulate,fit,posterior,baseline,compare}``.

Exit codes: 0 success, 1 input error, 2 numerical failure. All outputs of a
subcommand are computed before any file is written, and each file is written
atomically, so a failed run leaves the output directory untouched.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from mmdlm.baselines import RankDeficientError
from mmdlm.config import ConfigError, RunConfig, load_config
from mmdlm.core import Variant
from mmdlm.estimation import FitError
from mmdlm.ingest import write_csv, write_json
from mmdlm.likelihood import LikelihoodContext
from mmdlm import pipeline as pl

log = logging.getLogger("mmdlm")

EXIT_OK, EXIT_INPUT, EXIT_NUMERIC = 0, 1, 2

Outputs = dict[str, "pd.DataFrame | dict"]


def _fit_outputs(cfg: RunConfig) -> Outputs:
    ds, weights = pl.load_dataset(cfg)
    ctx = pl.build_context(cfg, ds, weights)
    f = pl.fit_from_config(cfg, ctx)
    if not f.converged:
        log.warning("optimizer did not report convergence: %s", f.message)
    for d in f.diagnostics:
        log.warning("%s", d)
    return {"fit.json": pl.fit_payload(f), **pl.fit_tables(f)}


def _load_fit_json(path: Path, ctx: LikelihoodContext) -> np.ndarray:
    if not path.is_file():
        raise ConfigError(f"fit file not found: {path} (run `fit` first or pass --fit)")
    payload = json.loads(path.read_text())
    if payload.get("variant") != ctx.spec.variant.value:
        raise ConfigError(f"{path} holds a {payload.get('variant')} fit, config asks for {ctx.spec.variant.value}")
    names = list(ctx.layout.names)
    if payload.get("names") != names:
        raise ConfigError(f"{path} parameters do not match the configured model")
    return np.array([payload["theta_packed"][n] for n in names], float)


def _posterior_outputs(cfg: RunConfig, fit_path: Path | None) -> Outputs:
    ds, weights = pl.load_dataset(cfg)
    ctx = pl.build_context(cfg, ds, weights)
    path = fit_path or Path(cfg.posterior.get("fit") or cfg.out / "fit.json")
    theta = _load_fit_json(path if path.is_absolute() else cfg.base_dir / path, ctx)
    kind = str(cfg.posterior.get("band", "variance"))
    if kind not in ("variance", "sd"):
        raise ConfigError("posterior.band must be 'variance' or 'sd'")
    return {"posterior_L.csv": pl.posterior_table(ctx, theta, kind)}


def _baseline_outputs(cfg: RunConfig) -> Outputs:
    ds, _ = pl.load_dataset(cfg)
    beta, summary, _ = pl.baseline_tables(ds, cfg)
    return {"baseline_beta.csv": beta, "baseline_fit.csv": summary}


def _compare_outputs(cfg: RunConfig) -> Outputs:
    models = cfg.compare.get("models")
    if not models:
        raise ConfigError("compare.models must list at least one model")
    fits = {}
    for i, m in enumerate(models):
        if not isinstance(m, dict):
            raise ConfigError("each compare.models entry must be a mapping")
        sub = cfg.with_overrides(
            variant=m.get("variant"),
            lag_max=None if m.get("lag_max") is None else int(m["lag_max"]),
            period_intercepts=m.get("period_intercepts"),
        )
        name = str(m.get("name", sub.variant.value if sub.variant.value not in fits else f"model{i + 1}"))
        ds, weights = pl.load_dataset(sub)
        fits[name] = pl.fit_from_config(sub, pl.build_context(sub, ds, weights))
    return {
        "compare.csv": pl.compare_table(fits),
        "wald.csv": pl.wald_table(fits, list(cfg.compare.get("contrasts") or [])),
    }


def _simulate_outputs(cfg: RunConfig) -> Outputs:
    res, p, ctx = pl.simulate_from_config(cfg)
    truth = {
        "variant": cfg.variant.value,
        "seed": cfg.seed,
        "names": list(ctx.layout.names),
        "theta": pl._natural(p),
        "theta_packed": dict(zip(ctx.layout.names, ctx.pack(p).tolist())) if np.all(np.asarray(p.sigma) > 0) else None,
    }
    return {**pl.simulation_tables(res, ctx.spec), "truth.json": truth}


def _write(out: Path, outputs: Outputs) -> None:
    for name, obj in outputs.items():
        if isinstance(obj, dict):
            write_json(out / name, obj)
        else:
            write_csv(out / name, obj)


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors; argparse's default status 2 means numerical failure here
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML or JSON run configuration")
    common.add_argument("--seed", type=int, help="random seed (overrides the config)")
    common.add_argument("--out", type=Path, help="output directory (overrides the config)")
    common.add_argument("--variant", choices=[v.value for v in Variant], help="model variant")
    common.add_argument("--lag-max", type=int, help="maximum lasting time")
    common.add_argument("--starts", type=int, help="number of optimizer starts")
    common.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")

    parser = _Parser(prog="mmdlm", description="Markov-modulated distributed lag models")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("simulate", parents=[common], help="simulate a dataset and its hidden lasting times")
    sub.add_parser("fit", parents=[common], help="fit a model by marginal maximum likelihood")
    p = sub.add_parser("posterior", parents=[common], help="posterior of the daily lasting time")
    p.add_argument("--fit", type=Path, dest="fit_path", help="fit.json to use (default: <out>/fit.json)")
    sub.add_parser("baseline", parents=[common], help="fixed-lag OLS, Almon and monotone fits")
    sub.add_parser("compare", parents=[common], help="fit several models; AIC table and Wald tests")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed, out=args.out, variant=args.variant, lag_max=args.lag_max, n_starts=args.starts
        )
        actions: dict[str, Callable[[], Outputs]] = {
            "simulate": lambda: _simulate_outputs(cfg),
            "fit": lambda: _fit_outputs(cfg),
            "posterior": lambda: _posterior_outputs(cfg, args.fit_path),
            "baseline": lambda: _baseline_outputs(cfg),
            "compare": lambda: _compare_outputs(cfg),
        }
        outputs = actions[args.command]()
        _write(cfg.out, outputs)
    except (FitError, RankDeficientError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"mmdlm {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, ValueError, KeyError, FileNotFoundError, OSError) as exc:
        print(f"mmdlm {args.command}: input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    log.info("wrote %s to %s", ", ".join(outputs), cfg.out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
