"""Gaussian emissions given the lasting time and the marginal log-likelihood.

Day ``t`` (0-based position in the dataset) sees the exposure history
``x_t, ..., x_0``; its lasting time has support ``{0, ..., min(t, L)}`` with
any remaining tail mass folded into the last support point. The hidden
lasting time is integrated out day by day with log-sum-exp.

For the soft-stratified variant every stratum carries its own independent
chain. On days where two or more weights lie strictly inside (0, 1) the
mixture runs over the product space of the per-stratum lasting times; the
emission variance on such days is ``sum_j pi_j(t) sigma_j**2``. Days with a
degenerate weight vector are evaluated exactly as in the hard-stratified
variant.

The packed-vector evaluator also returns the analytic gradient and the
per-day posterior responsibilities, which the estimation and posterior
modules reuse.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import expit, logsumexp

from mmdlm.core import (
    ModelSpec,
    ParamLayout,
    ParamVector,
    TimeSeriesDataset,
    Variant,
    pack_params,
    param_layout,
    to_day,
    unpack_params,
)
from mmdlm.lasting import (
    Constant,
    LogisticInTau,
    PeriodConstant,
    PeriodLogistic,
    TransitionFamily,
    log_lasting_pmf,
)

__all__ = [
    "LikelihoodContext",
    "Evaluation",
    "lag_matrix",
    "conditional_mean",
    "emission_logpdf",
    "marginal_loglik_day",
    "total_loglik",
    "families",
]

LOG_2PI = float(np.log(2.0 * np.pi))


def lag_matrix(x: ArrayLike, lag_max: int) -> NDArray:
    """``out[t, tau] = x[t - tau]``, zero where ``t - tau < 0``."""
    x = np.asarray(x, dtype=float)
    T = x.size
    out = np.zeros((T, lag_max + 1))
    for tau in range(lag_max + 1):
        if tau < T:
            out[tau:, tau] = x[: T - tau]
    return out


def emission_logpdf(y, mu, sigma):
    """Log density of Normal(mu, sigma**2) at y."""
    sigma = np.asarray(sigma, dtype=float)
    if np.any(sigma <= 0):
        raise ValueError("sigma must be positive")
    z = (np.asarray(y, float) - np.asarray(mu, float)) / sigma
    out = -0.5 * LOG_2PI - np.log(sigma) - 0.5 * z * z
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class Evaluation:
    """Result of one pass over the data at a packed parameter vector."""

    day: NDArray
    grad: NDArray | None = None
    # (S, T, L+1) per-stratum marginal posterior of the lasting time
    post: NDArray | None = None
    # (S, T) True where the stratum's chain enters day t's mean
    relevant: NDArray | None = None

    @property
    def total(self) -> float:
        return float(np.sum(self.day))


@dataclass(frozen=True, eq=False)
class LikelihoodContext:
    """Dataset and spec plus precomputed design pieces.

    Attributes set in ``__post_init__``: ``codes`` (0-based period per day or
    None), ``W`` (effective covariates incl. period indicators), ``xlag``
    (S, T, L+1) exposure histories, ``support`` (T,) and ``layout``.
    """

    dataset: TimeSeriesDataset
    spec: ModelSpec
    codes: NDArray | None = field(init=False, default=None)
    W: NDArray = field(init=False)
    w_names: tuple[str, ...] = field(init=False)
    xlag: NDArray = field(init=False)
    support: NDArray = field(init=False)
    layout: ParamLayout = field(init=False)

    def __post_init__(self) -> None:
        ds, spec = self.dataset, self.spec
        L, T = spec.lag_max, ds.T
        codes = None
        if spec.partition is not None:
            if not spec.partition.covers(ds.dates):
                raise ValueError("period partition does not cover the dataset span")
            codes = spec.partition.codes(ds.dates)
        W, names = ds.w, list(ds.w_names)
        n_ind = spec.n_period_indicators()
        if n_ind:
            ind = np.stack([(codes == j).astype(float) for j in range(1, spec.J)], axis=1)
            W = np.hstack([W, ind])
            names += [f"period:{spec.partition.labels[j]}" for j in range(1, spec.J)]
        if spec.variant.stratified:
            if ds.x_strata is not None and ds.n_strata_exposures != spec.J:
                raise ValueError(f"dataset has {ds.n_strata_exposures} stratum exposures, model has {spec.J} strata")
            xlag = np.stack([lag_matrix(ds.stratum_exposure(j), L) for j in range(spec.J)])
        else:
            xlag = lag_matrix(ds.x, L)[None]
        if spec.variant is Variant.SOFT_STRATIFIED and spec.soft_weights.shape[0] != T:
            raise ValueError(f"soft_weights has {spec.soft_weights.shape[0]} rows, dataset has {T} days")
        for name, val in (
            ("codes", codes),
            ("W", W),
            ("w_names", tuple(names)),
            ("xlag", xlag),
            ("support", np.minimum(np.arange(T), L)),
            ("layout", param_layout(spec, W.shape[1])),
        ):
            if isinstance(val, np.ndarray):
                val.flags.writeable = False
            object.__setattr__(self, name, val)
        if spec.variant is Variant.SOFT_STRATIFIED:
            self._init_soft()
        elif spec.variant is Variant.HARD_STRATIFIED:
            object.__setattr__(self, "_active", codes)

    def _init_soft(self) -> None:
        pw = self.spec.soft_weights
        inside = (pw > 0) & (pw < 1)
        mixed = inside.sum(axis=1) >= 2
        active = np.where(mixed, -1, np.argmax(pw, axis=1))
        groups: dict[tuple[int, ...], list[int]] = {}
        for t in np.flatnonzero(mixed):
            groups.setdefault(tuple(np.flatnonzero(pw[t] > 0)), []).append(int(t))
        object.__setattr__(self, "_active", active)
        object.__setattr__(self, "_mixed_groups", {k: np.array(v) for k, v in groups.items()})

    # ------------------------------------------------------------------
    @property
    def n_cov(self) -> int:
        return self.W.shape[1]

    @property
    def n_params(self) -> int:
        return self.layout.size

    @property
    def T(self) -> int:
        return self.dataset.T

    def day_position(self, t) -> int:
        """Accept a 0-based day index or a calendar date."""
        if isinstance(t, (int, np.integer)):
            if not 0 <= t < self.T:
                raise IndexError(f"day index {t} out of range [0, {self.T})")
            return int(t)
        d = to_day(t)
        pos = int((d - self.dataset.dates[0]).astype(int))
        if not 0 <= pos < self.T:
            raise IndexError(f"date {d} is outside the dataset")
        return pos

    def pack(self, p: ParamVector) -> NDArray:
        if p.alpha.size != self.n_cov:
            raise ValueError(f"alpha has {p.alpha.size} entries, context has {self.n_cov} covariates")
        return pack_params(p, self.spec)

    def unpack(self, theta: ArrayLike) -> ParamVector:
        return unpack_params(theta, self.spec, self.n_cov)

    def as_packed(self, p) -> NDArray:
        return self.pack(p) if isinstance(p, ParamVector) else np.asarray(p, dtype=float)

    # ------------------------------------------------------------------
    def _eta_pooled(self, trans: NDArray) -> NDArray:
        L, T = self.spec.lag_max, self.T
        taus = np.arange(L, dtype=float)
        v = self.spec.variant
        if v is Variant.CONSTANT_RHO:
            return np.full((T, L), -trans[0])
        if v is Variant.SEMI_MARKOV:
            return trans[0] + trans[1:][self.codes][:, None] * taus[None, :]
        shifts = np.concatenate([[0.0], trans[1:]])
        return np.broadcast_to((trans[0] + shifts[self.codes])[:, None], (T, L))

    def _eta_grad_pooled(self, G: NDArray) -> NDArray:
        v = self.spec.variant
        if v is Variant.CONSTANT_RHO:
            return np.array([-G.sum()])
        g0 = G.sum()
        if v is Variant.SEMI_MARKOV:
            per_day = G @ np.arange(G.shape[1], dtype=float)
            return np.concatenate([[g0], np.bincount(self.codes, weights=per_day, minlength=self.spec.J)])
        per_day = G.sum(axis=1)
        return np.concatenate([[g0], np.bincount(self.codes, weights=per_day, minlength=self.spec.J)[1:]])

    @staticmethod
    def _eta_grad_from_post(r: NDArray, eta: NDArray, support: NDArray) -> NDArray:
        """d loglik / d eta[t, i] given posterior responsibilities r (T, L+1)."""
        L = eta.shape[1]
        rho = expit(-eta)
        # tail[t, i] = sum_{l > i} r[t, l]
        tail = np.cumsum(r[:, ::-1], axis=1)[:, ::-1][:, 1:]
        G = rho * tail - (1.0 - rho) * r[:, :L]
        G[np.arange(L)[None, :] >= support[:, None]] = 0.0
        return G

    def _block(self, y, base, xlag, beta, eta, sigma):
        """Single-chain mixture for all days. Returns (ll, A, resid, logpmf, S)."""
        S = np.cumsum(xlag * beta, axis=1)
        mu = base[:, None] + S
        logpmf, _ = log_lasting_pmf(eta, self.support)
        resid = y[:, None] - mu
        A = logpmf - 0.5 * LOG_2PI - np.log(sigma) - 0.5 * (resid / sigma) ** 2
        ll = logsumexp(A, axis=1)
        return ll, A, resid, logpmf, S

    def evaluate(self, theta: ArrayLike, grad: bool = False, posterior: bool = False) -> Evaluation:
        """Per-day marginal log-likelihood at a packed vector (plus extras)."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected packed vector of length {self.n_params}, got {theta.shape}")
        if self.spec.variant.pooled:
            return self._evaluate_pooled(theta, grad, posterior)
        return self._evaluate_stratified(theta, grad, posterior)

    def _evaluate_pooled(self, theta, want_grad, want_post) -> Evaluation:
        lay, y = self.layout, self.dataset.y
        alpha = theta[lay.alpha]
        beta = theta[lay.beta_star]
        sigma = float(np.exp(theta[lay.log_sigma][0]))
        base = theta[lay.alpha0][0] + self.W @ alpha
        eta = self._eta_pooled(theta[lay.transition])
        ll, A, resid, _, _ = self._block(y, base, self.xlag[0], beta, eta, sigma)
        out = Evaluation(day=ll)
        if not (want_grad or want_post):
            return out
        r = np.exp(A - ll[:, None])
        if want_post:
            out.post = r[None]
            out.relevant = np.ones((1, self.T), bool)
        if want_grad:
            g = np.zeros(self.n_params)
            e = r * resid / sigma**2
            e_day = e.sum(axis=1)
            g[lay.alpha0] = e_day.sum()
            g[lay.alpha] = self.W.T @ e_day
            e_tail = np.cumsum(e[:, ::-1], axis=1)[:, ::-1]
            g[lay.beta_star] = np.einsum("tk,tk->k", self.xlag[0], e_tail)
            g[lay.transition] = self._eta_grad_pooled(self._eta_grad_from_post(r, eta, self.support))
            g[lay.log_sigma] = np.sum(r * ((resid / sigma) ** 2 - 1.0))
            out.grad = g
        return out

    def _evaluate_stratified(self, theta, want_grad, want_post) -> Evaluation:
        spec, lay, y = self.spec, self.layout, self.dataset.y
        J, L, T = spec.J, spec.lag_max, self.T
        L1 = L + 1
        alpha0 = theta[lay.alpha0]
        alpha = theta[lay.alpha]
        beta = theta[lay.beta_star].reshape(J, L1)
        lam = theta[lay.transition].reshape(J, 2)
        log_sigma = theta[lay.log_sigma]
        sigma = np.exp(log_sigma)
        taus = np.arange(L, dtype=float)
        w_alpha = self.W @ alpha
        active = self._active

        day = np.empty(T)
        blocks = []
        for j in range(J):
            eta = np.broadcast_to(lam[j, 0] + lam[j, 1] * taus, (T, L))
            ll, A, resid, logpmf, S = self._block(y, alpha0[j] + w_alpha, self.xlag[j], beta[j], eta, sigma[j])
            on = active == j
            day[on] = ll[on]
            blocks.append((ll, A, resid, logpmf, S, eta, on))

        mixed = getattr(self, "_mixed_groups", {})
        mixed_out = {}
        for strata, days in mixed.items():
            mixed_out[strata] = self._mixed_group(strata, days, alpha0, w_alpha, blocks, sigma)
            day[days] = mixed_out[strata]["ll"]

        out = Evaluation(day=day)
        if not (want_grad or want_post):
            return out

        g = np.zeros(self.n_params) if want_grad else None
        post = np.zeros((J, T, L1))
        relevant = np.zeros((J, T), bool)
        e_day_total = np.zeros(T)
        for j, (ll, A, resid, logpmf, S, eta, on) in enumerate(blocks):
            r = np.exp(A - ll[:, None]) * on[:, None]
            post[j] = r
            relevant[j] = on
            if not want_grad:
                continue
            e = r * resid / sigma[j] ** 2
            e_day = e.sum(axis=1)
            e_day_total += e_day
            ls = lay.alpha0.start + j
            g[ls] += e_day.sum()
            bs = lay.beta_star.start + j * L1
            g[bs : bs + L1] += np.einsum("tk,tk->k", self.xlag[j], np.cumsum(e[:, ::-1], axis=1)[:, ::-1])
            G = self._eta_grad_from_post(r, eta, self.support)
            ts = lay.transition.start + 2 * j
            g[ts] += G.sum()
            g[ts + 1] += G.sum(axis=0) @ taus
            g[lay.log_sigma.start + j] += np.sum(r * ((resid / sigma[j]) ** 2 - 1.0))

        pw = spec.soft_weights
        for strata, days in mixed.items():
            mo = mixed_out[strata]
            r = mo["r"]
            n_ax = len(strata)
            axes = tuple(range(1, n_ax + 1))
            e = r * mo["resid"] / mo["var"].reshape((-1,) + (1,) * n_ax)
            for a, j in enumerate(strata):
                others = tuple(ax for ax in axes if ax != a + 1)
                r_j = r.sum(axis=others) if others else r
                post[j, days] = r_j
                relevant[j, days] = True
                if not want_grad:
                    continue
                pij = pw[days, j]
                e_j = e.sum(axis=others) if others else e
                g[lay.alpha0.start + j] += np.sum(pij * e_j.sum(axis=1))
                bs = lay.beta_star.start + j * L1
                e_tail = np.cumsum(e_j[:, ::-1], axis=1)[:, ::-1]
                g[bs : bs + L1] += np.einsum("tk,tk->k", self.xlag[j][days] * pij[:, None], e_tail)
                eta = blocks[j][5][days]
                G = self._eta_grad_from_post(r_j, eta, self.support[days])
                ts = lay.transition.start + 2 * j
                g[ts] += G.sum()
                g[ts + 1] += G.sum(axis=0) @ taus
                dvar = np.sum(r * (mo["z2"] - 1.0), axis=axes) / mo["var"]
                g[lay.log_sigma.start + j] += np.sum(dvar * pij * sigma[j] ** 2)
            if want_grad:
                e_day_total[days] += e.sum(axis=axes)
        if want_grad:
            g[lay.alpha] = self.W.T @ e_day_total
            out.grad = g
        if want_post:
            out.post = post
            out.relevant = relevant
        return out

    def _mixed_group(self, strata, days, alpha0, w_alpha, blocks, sigma) -> dict:
        """Product-space mixture over the lasting times of ``strata`` on ``days``."""
        pw = self.spec.soft_weights
        n_ax = len(strata)
        mu = w_alpha[days].reshape((-1,) + (1,) * n_ax)
        lp = 0.0
        var = np.zeros(days.size)
        for a, j in enumerate(strata):
            shape = [days.size] + [1] * n_ax
            shape[a + 1] = -1
            pij = pw[days, j]
            S = blocks[j][4][days]
            mu = mu + (pij[:, None] * (alpha0[j] + S)).reshape(shape)
            lp = lp + blocks[j][3][days].reshape(shape)
            var += pij * sigma[j] ** 2
        vb = var.reshape((-1,) + (1,) * n_ax)
        resid = self.dataset.y[days].reshape((-1,) + (1,) * n_ax) - mu
        z2 = resid**2 / vb
        A = lp - 0.5 * LOG_2PI - 0.5 * np.log(vb) - 0.5 * z2
        axes = tuple(range(1, n_ax + 1))
        ll = logsumexp(A, axis=axes)
        r = np.exp(A - ll.reshape((-1,) + (1,) * n_ax))
        return dict(ll=ll, r=r, resid=resid, z2=z2, var=var)

    # ------------------------------------------------------------------
    def loglik(self, theta: ArrayLike) -> float:
        return self.evaluate(theta).total

    def loglik_and_grad(self, theta: ArrayLike) -> tuple[float, NDArray]:
        ev = self.evaluate(theta, grad=True)
        return ev.total, ev.grad


def families(ctx: LikelihoodContext, p: ParamVector) -> list[TransitionFamily]:
    """Transition family per stratum (a single entry for pooled variants)."""
    spec = ctx.spec
    lam = np.asarray(p.lam, float)
    v = spec.variant
    if v is Variant.CONSTANT_RHO:
        return [Constant(float(np.ravel(lam)[0]))]
    if v is Variant.SEMI_MARKOV:
        return [PeriodLogistic(float(lam[0]), tuple(lam[1:]), spec.partition)]
    if v is Variant.PERIOD_CONSTANT_RHO:
        return [PeriodConstant(float(lam[0]), tuple(lam[1:]), spec.partition)]
    return [LogisticInTau(float(a), float(b)) for a, b in lam.reshape(spec.J, 2)]


def conditional_mean(ctx: LikelihoodContext, t, l: int | Sequence[int], p: ParamVector) -> float:
    """Mean of y_t given lasting time ``l`` (per-stratum sequence for soft_stratified)."""
    pos = ctx.day_position(t)
    K = int(ctx.support[pos])
    spec = ctx.spec
    w_alpha = float(ctx.W[pos] @ p.alpha)

    def lag_sum(j: int, lj: int) -> float:
        if not 0 <= lj <= K:
            raise ValueError(f"lasting time {lj} outside [0, {K}] on day {pos}")
        beta = np.asarray(p.beta_star, float)
        beta = beta if beta.ndim == 1 else beta[j]
        return float(np.sum(beta[: lj + 1] * ctx.xlag[j, pos, : lj + 1]))

    if spec.variant.pooled:
        return float(np.ravel(p.alpha0)[0]) + w_alpha + lag_sum(0, int(l))
    alpha0 = np.ravel(p.alpha0)
    if spec.variant is Variant.HARD_STRATIFIED:
        j = int(ctx.codes[pos])
        lj = int(l) if np.ndim(l) == 0 else int(l[j])
        return float(alpha0[j]) + w_alpha + lag_sum(j, lj)
    pw = spec.soft_weights[pos]
    ls = [int(l)] * spec.J if np.ndim(l) == 0 else [int(v) for v in l]
    if len(ls) != spec.J:
        raise ValueError(f"need one lasting time per stratum ({spec.J})")
    total = w_alpha
    for j in range(spec.J):
        if pw[j] > 0:
            total += pw[j] * (alpha0[j] + lag_sum(j, ls[j]))
    return float(total)


def marginal_loglik_day(ctx: LikelihoodContext, t, p) -> float:
    """log sum_l P(L(t) = l) N(y_t; mu_t(l), sigma**2)."""
    return float(ctx.evaluate(ctx.as_packed(p)).day[ctx.day_position(t)])


def total_loglik(ctx: LikelihoodContext, p) -> float:
    """Sum of the per-day marginal log-likelihoods in ascending day order."""
    return ctx.evaluate(ctx.as_packed(p)).total
