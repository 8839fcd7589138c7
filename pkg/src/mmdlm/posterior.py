"""Empirical-Bayes posterior of the daily lasting time.

The prior is the truncated, tail-folded lasting law used by the likelihood,
so posterior weights are exactly the mixture responsibilities at the plugged-in
estimates. For the soft-stratified variant each stratum's marginal posterior
is available; by default a day reports the stratum with the largest weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from mmdlm.core import ParamVector, Variant
from mmdlm.likelihood import LikelihoodContext

__all__ = ["LastingPosterior", "posterior_law", "posterior_all", "posterior_summaries", "band"]


@dataclass(frozen=True)
class LastingPosterior:
    """Per-day posterior of L(t).

    ``pmf`` is (T, L+1) with zeros beyond each day's support ``min(t, L)``;
    ``stratum`` is the 0-based stratum whose lasting time is described.
    """

    dates: NDArray
    pmf: NDArray
    mean: NDArray
    var: NDArray
    stratum: NDArray


def _packed(ctx: LikelihoodContext, params) -> NDArray:
    # FitResult, ParamVector or packed array
    theta = getattr(params, "theta", None)
    if theta is not None:
        return np.asarray(theta, float)
    return ctx.as_packed(params)


def _default_strata(ctx: LikelihoodContext) -> NDArray:
    v = ctx.spec.variant
    if v.pooled:
        return np.zeros(ctx.T, dtype=int)
    if v is Variant.HARD_STRATIFIED:
        return np.asarray(ctx.codes)
    return np.argmax(ctx.spec.soft_weights, axis=1)


def posterior_all(ctx: LikelihoodContext, params, stratum: ArrayLike | int | None = None) -> LastingPosterior:
    """Posterior of L(t) for every day at ``params`` (FitResult, ParamVector or packed)."""
    ev = ctx.evaluate(_packed(ctx, params), posterior=True)
    strata = _default_strata(ctx) if stratum is None else np.broadcast_to(np.asarray(stratum, int), (ctx.T,))
    post = ev.post[strata, np.arange(ctx.T)]
    # a stratum absent from a day's mean leaves its chain at the prior
    missing = ~ev.relevant[strata, np.arange(ctx.T)]
    if np.any(missing):
        post = post.copy()
        post[missing] = _prior(ctx, _packed(ctx, params), strata)[missing]
    mean, var = posterior_summaries(post)
    return LastingPosterior(dates=ctx.dataset.dates, pmf=post, mean=mean, var=var, stratum=np.asarray(strata))


def _prior(ctx: LikelihoodContext, theta: NDArray, strata: NDArray) -> NDArray:
    from mmdlm.lasting import log_lasting_pmf

    spec, lay = ctx.spec, ctx.layout
    L = spec.lag_max
    if spec.variant.pooled:
        eta = ctx._eta_pooled(theta[lay.transition])
        return np.exp(log_lasting_pmf(eta, ctx.support)[0])
    lam = theta[lay.transition].reshape(spec.J, 2)[strata]
    eta = lam[:, :1] + lam[:, 1:] * np.arange(L)[None, :]
    return np.exp(log_lasting_pmf(eta, ctx.support)[0])


def posterior_law(ctx: LikelihoodContext, t, params, stratum: int | None = None) -> NDArray:
    """Posterior pmf of L(t) over its support {0, ..., min(t, lag_max)}."""
    pos = ctx.day_position(t)
    post = posterior_all(ctx, params, stratum)
    pmf = post.pmf[pos, : int(ctx.support[pos]) + 1]
    return pmf / pmf.sum()


def posterior_summaries(laws: ArrayLike) -> tuple[NDArray, NDArray]:
    """Posterior mean and variance for each row of ``laws`` (lasting time = column index)."""
    laws = np.atleast_2d(np.asarray(laws, dtype=float))
    l = np.arange(laws.shape[1], dtype=float)
    mean = laws @ l
    var = np.maximum(laws @ l**2 - mean**2, 0.0)
    return mean, var


def band(mean: ArrayLike, var: ArrayLike, kind: str = "variance") -> tuple[NDArray, NDArray]:
    """Mean -/+ variance (default) or mean -/+ standard deviation."""
    mean = np.asarray(mean, float)
    var = np.asarray(var, float)
    if kind == "variance":
        half = var
    elif kind == "sd":
        half = np.sqrt(var)
    else:
        raise ValueError("band kind must be 'variance' or 'sd'")
    return mean - half, mean + half
