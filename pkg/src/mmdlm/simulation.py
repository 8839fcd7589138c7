"""Forward simulation of datasets (and hidden lasting times) from a model."""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np
from numpy.typing import NDArray

from mmdlm.core import ModelSpec, ParamVector, TimeSeriesDataset, Variant, to_day
from mmdlm.lasting import log_lasting_pmf
from mmdlm.likelihood import LikelihoodContext

__all__ = ["ExposureGen", "SimulationConfig", "SimulationResult", "simulate", "ar1_exposure", "replicate_seeds", "run_replicates"]


@dataclass(frozen=True)
class ExposureGen:
    """Exposure generator: ``kind`` is "ar1" (log scale), "iid" (log-normal) or "series"."""

    kind: str = "ar1"
    log_mean: float = 2.0
    phi: float = 0.9
    sd: float = 0.3
    series: NDArray | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("ar1", "iid", "series"):
            raise ValueError(f"unknown exposure generator {self.kind!r}")
        if self.kind == "series" and self.series is None:
            raise ValueError("series generator needs a series")
        if self.kind == "ar1" and not -1 < self.phi < 1:
            raise ValueError("AR(1) coefficient must lie in (-1, 1)")


def ar1_exposure(T: int, rng: np.random.Generator, log_mean: float = 2.0, phi: float = 0.9, sd: float = 0.3) -> NDArray:
    """Stationary AR(1) on the log scale, exponentiated."""
    z = np.empty(T)
    z[0] = rng.normal(0.0, sd / np.sqrt(1.0 - phi**2))
    eps = rng.normal(0.0, sd, T)
    for t in range(1, T):
        z[t] = phi * z[t - 1] + eps[t]
    return np.exp(log_mean + z)


@dataclass(frozen=True)
class SimulationConfig:
    spec: ModelSpec
    theta: ParamVector
    T: int
    exposure_gen: ExposureGen = ExposureGen()
    seed: int = 0
    start: Any = "2020-06-16"
    w: NDArray | None = None
    w_names: tuple[str, ...] = ()
    x_strata: NDArray | None = None

    def __post_init__(self) -> None:
        if self.T < self.spec.lag_max + 10:
            raise ValueError(f"T must be at least lag_max + 10 = {self.spec.lag_max + 10}")


@dataclass(frozen=True)
class SimulationResult:
    dataset: TimeSeriesDataset
    hidden: NDArray  # (T,) or (T, J) lasting times
    mean: NDArray  # conditional mean given the hidden lasting times


def _draw_lasting(logpmf: NDArray, rng: np.random.Generator) -> NDArray:
    cdf = np.cumsum(np.exp(logpmf), axis=1)
    u = rng.random(logpmf.shape[0])
    l = (cdf < u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(l, logpmf.shape[1] - 1)


def simulate(config: SimulationConfig) -> SimulationResult:
    """Draw exposures, per-day lasting times and Gaussian responses.

    Lasting times are independent across days; day t's law is truncated at
    ``min(t, lag_max)`` exactly as in the likelihood. Everything derives from
    ``config.seed``.
    """
    spec, p, T = config.spec, config.theta, config.T
    rng = np.random.default_rng(config.seed)
    g = config.exposure_gen
    if g.kind == "series":
        x = np.asarray(g.series, float)
        if x.shape != (T,):
            raise ValueError(f"exposure series must have length {T}")
    elif g.kind == "ar1":
        x = ar1_exposure(T, rng, g.log_mean, g.phi, g.sd)
    else:
        x = np.exp(g.log_mean + rng.normal(0.0, g.sd, T))

    start = to_day(config.start)
    dates = start + np.arange(T)
    # placeholder response; only the design is needed to build the context
    ds = TimeSeriesDataset(dates, np.zeros(T), x, x_strata=config.x_strata, w=config.w, w_names=config.w_names)
    ctx = LikelihoodContext(ds, spec)
    if np.asarray(p.alpha).size != ctx.n_cov:
        raise ValueError(f"theta has {np.asarray(p.alpha).size} covariate coefficients, model needs {ctx.n_cov}")
    L = spec.lag_max
    sigma = np.asarray(p.sigma, float).ravel()
    w_alpha = ctx.W @ np.asarray(p.alpha, float)

    if spec.variant.pooled:
        lam = np.asarray(p.lam, float).ravel()
        if spec.variant is Variant.CONSTANT_RHO:
            lam = np.log(lam[:1]) - np.log1p(-lam[:1])
        eta = ctx._eta_pooled(lam)
        logpmf, _ = log_lasting_pmf(eta, ctx.support)
        l = _draw_lasting(logpmf, rng)
        S = np.cumsum(ctx.xlag[0] * np.asarray(p.beta_star, float), axis=1)
        mu = float(np.ravel(p.alpha0)[0]) + w_alpha + S[np.arange(T), l]
        sd = np.full(T, sigma[0])
        hidden = l
    else:
        J = spec.J
        lam = np.asarray(p.lam, float).reshape(J, 2)
        beta = np.asarray(p.beta_star, float).reshape(J, L + 1)
        alpha0 = np.ravel(p.alpha0)
        taus = np.arange(L, dtype=float)
        hidden = np.empty((T, J), dtype=int)
        parts = np.empty((T, J))
        for j in range(J):
            eta = np.broadcast_to(lam[j, 0] + lam[j, 1] * taus, (T, L))
            logpmf, _ = log_lasting_pmf(eta, ctx.support)
            hidden[:, j] = _draw_lasting(logpmf, rng)
            S = np.cumsum(ctx.xlag[j] * beta[j], axis=1)
            parts[:, j] = alpha0[j] + S[np.arange(T), hidden[:, j]]
        if spec.variant is Variant.HARD_STRATIFIED:
            weights = np.eye(J)[ctx.codes]
        else:
            weights = np.asarray(spec.soft_weights, float)
        mu = w_alpha + np.sum(weights * parts, axis=1)
        sd = np.sqrt(weights @ sigma**2)
    y = mu + sd * rng.normal(size=T)
    dataset = TimeSeriesDataset(dates, y, x, x_strata=config.x_strata, w=config.w, w_names=config.w_names)
    return SimulationResult(dataset=dataset, hidden=hidden, mean=mu)


def replicate_seeds(seed: int, n: int) -> list[int]:
    """Independent child seeds for ``n`` replicates."""
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(n)]


def run_replicates(fn: Callable[[int], Any], seeds: Sequence[int], n_jobs: int = 1) -> list[Any]:
    """Map ``fn`` over replicate seeds, in worker processes when ``n_jobs > 1``."""
    if n_jobs <= 1:
        return [fn(s) for s in seeds]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, seeds))
