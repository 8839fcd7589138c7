"""Run configuration (YAML or JSON) for the command-line pipeline.

Relative paths are resolved against the directory holding the config file.
Environment variables are never consulted.

Example::

    data:
      response: hosp.csv
      exposure: viral.csv
      variant_proportion: omicron_share.csv   # soft_stratified only
    preprocess:
      impute: true
      moving_average: 7        # null fits the raw exposure
    model:
      variant: semi_markov
      lag_max: 30
      periods:
        cutpoints: [2020-06-16, 2021-02-15, 2021-06-15, 2022-11-13]
        labels: [initial, alpha, delta]
    fit: {n_starts: 5, seed: 0}
    out: results
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import yaml

from mmdlm.core import Variant

__all__ = ["ConfigError", "RunConfig", "load_config"]


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


_SECTIONS = {"data", "preprocess", "model", "fit", "simulate", "posterior", "baseline", "compare", "out", "seed"}


@dataclass(frozen=True)
class RunConfig:
    base_dir: Path = Path(".")
    response: Path | None = None
    exposure: Path | None = None
    exposure_strata: tuple[Path, ...] = ()
    variant_proportion: Path | None = None
    soft_weights: Path | None = None
    covariates: Path | None = None
    start: str | None = None
    end: str | None = None
    impute: bool = True
    moving_average: int | None = 7
    variant: Variant = Variant.CONSTANT_RHO
    lag_max: int = 30
    cutpoints: tuple[str, ...] = ()
    labels: tuple[str, ...] = ()
    period_intercepts: bool = True
    beta_nonneg: bool = True
    all_old_before: str | None = None
    all_new_after: str | None = None
    n_starts: int = 5
    tol: float = 1e-11
    max_iter: int = 5000
    seed: int = 0
    out: Path = Path("results")
    simulate: dict = field(default_factory=dict)
    posterior: dict = field(default_factory=dict)
    baseline: dict = field(default_factory=dict)
    compare: dict = field(default_factory=dict)

    def with_overrides(self, **kw: Any) -> "RunConfig":
        """Copy with non-None overrides applied (CLI flags take precedence)."""
        changes = {k: v for k, v in kw.items() if v is not None}
        if "variant" in changes:
            changes["variant"] = _variant(changes["variant"])
        if "out" in changes:
            changes["out"] = Path(changes["out"])
        return replace(self, **changes)

    def require(self, *names: str) -> None:
        for n in names:
            if getattr(self, n) is None:
                raise ConfigError(f"config is missing data.{n}")
            p = getattr(self, n)
            if isinstance(p, Path) and not p.is_file():
                raise ConfigError(f"data.{n}: file not found: {p}")


def _variant(v: Any) -> Variant:
    try:
        return Variant(str(v))
    except ValueError:
        raise ConfigError(f"unknown variant {v!r}; choose from {', '.join(m.value for m in Variant)}") from None


def _path(base: Path, v: Any) -> Path | None:
    if v is None:
        return None
    p = Path(str(v))
    return p if p.is_absolute() else base / p


def _section(raw: dict, name: str) -> dict:
    sec = raw.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    return sec


def load_config(path: str | Path | None) -> RunConfig:
    """Parse a YAML/JSON config. ``None`` gives the defaults rooted at the cwd."""
    if path is None:
        return RunConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text()
    try:
        raw = json.loads(text) if path.suffix.lower() == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError(f"{path}: cannot parse config ({exc})") from exc
    raw = raw or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise ConfigError(f"{path}: unknown section(s) {', '.join(sorted(unknown))}")
    base = path.resolve().parent
    data, pre, model, fit = (_section(raw, s) for s in ("data", "preprocess", "model", "fit"))
    periods = model.get("periods") or {}
    anchors = model.get("soft_anchors") or {}
    ma = pre.get("moving_average", 7)
    try:
        return RunConfig(
            base_dir=base,
            response=_path(base, data.get("response")),
            exposure=_path(base, data.get("exposure")),
            exposure_strata=tuple(_path(base, p) for p in data.get("exposure_strata") or ()),
            variant_proportion=_path(base, data.get("variant_proportion")),
            soft_weights=_path(base, data.get("soft_weights")),
            covariates=_path(base, data.get("covariates")),
            start=None if data.get("start") is None else str(data["start"]),
            end=None if data.get("end") is None else str(data["end"]),
            impute=bool(pre.get("impute", True)),
            moving_average=None if not ma else int(ma),
            variant=_variant(model.get("variant", "constant_rho")),
            lag_max=int(model.get("lag_max", 30)),
            cutpoints=tuple(str(c) for c in periods.get("cutpoints") or ()),
            labels=tuple(str(c) for c in periods.get("labels") or ()),
            period_intercepts=bool(model.get("period_intercepts", True)),
            beta_nonneg=bool(model.get("beta_nonneg", True)),
            all_old_before=None if anchors.get("all_old_before") is None else str(anchors["all_old_before"]),
            all_new_after=None if anchors.get("all_new_after") is None else str(anchors["all_new_after"]),
            n_starts=int(fit.get("n_starts", 5)),
            tol=float(fit.get("tol", 1e-11)),
            max_iter=int(fit.get("max_iter", 5000)),
            seed=int(raw.get("seed", fit.get("seed", 0))),
            out=_path(base, raw.get("out", "results")),
            simulate=_section(raw, "simulate"),
            posterior=_section(raw, "posterior"),
            baseline=_section(raw, "baseline"),
            compare=_section(raw, "compare"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{path}: {exc}") from exc
