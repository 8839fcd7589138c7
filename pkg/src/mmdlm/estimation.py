"""Marginal maximum likelihood, Hessian-based covariance, Wald tests and AIC."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import stats
from scipy.optimize import minimize

from mmdlm.core import ParamVector, Variant
from mmdlm.likelihood import LikelihoodContext, lag_matrix

__all__ = [
    "FitError",
    "FitOptions",
    "FitResult",
    "WaldResult",
    "fit",
    "default_init",
    "numerical_hessian",
    "wald_test",
    "delta_rho",
    "logistic_delta",
    "aic",
]

log = logging.getLogger(__name__)

#: linear predictor giving rho(0) = 0.2 under rho = 1 / (1 + exp(eta))
ETA_START = float(np.log(4.0))


class FitError(RuntimeError):
    """Raised when no start yields a finite likelihood or inputs are unusable."""


@dataclass(frozen=True)
class FitOptions:
    tol: float = 1e-11
    gtol: float = 1e-7
    max_iter: int = 5000
    n_starts: int = 5
    seed: int = 0
    hessian_step: float = 1e-4
    compute_cov: bool = True


@dataclass(frozen=True)
class WaldResult:
    estimate: float
    se: float
    z: float
    p: float


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of :func:`fit`. Covariance and SEs are over packed coordinates.

    Coordinates that are pinned or sit on an active bound get NaN rows in
    ``covariance`` and NaN ``se``; ``boundary`` flags the latter.
    """

    ctx: LikelihoodContext
    theta: NDArray
    loglik: float
    covariance: NDArray | None
    se: NDArray
    converged: bool
    n_evals: int
    starts_used: int
    fixed: NDArray
    boundary: NDArray
    hessian: NDArray | None = None
    hessian_condition: float = float("nan")
    message: str = ""
    start_logliks: tuple[float, ...] = ()
    seed: int = 0
    diagnostics: tuple[str, ...] = field(default_factory=tuple)

    @property
    def theta_hat(self) -> ParamVector:
        return self.ctx.unpack(self.theta)

    @property
    def param_names(self) -> tuple[str, ...]:
        return self.ctx.layout.names

    @property
    def k(self) -> int:
        """Number of estimated (non-pinned) parameters."""
        return int(np.sum(~self.fixed))

    @property
    def aic(self) -> float:
        return aic(self)

    @property
    def spec(self):
        return self.ctx.spec


def default_init(ctx: LikelihoodContext) -> NDArray:
    """Packed start from a least-squares distributed lag fit.

    Lags 0..lag_max (zero-padded history) and all covariates enter one
    least-squares regression; its lag coefficients, clipped at zero when
    required, seed beta_star, its residual SD seeds sigma, and the transition
    parameters are set so that rho(0) = 0.2 with no tau or period effects.
    """
    spec, lay = ctx.spec, ctx.layout
    y = ctx.dataset.y
    X = lag_matrix(ctx.dataset.x, spec.lag_max)
    Z = np.column_stack([np.ones(ctx.T), ctx.W, X])
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    resid = y - Z @ coef
    sd = float(np.std(resid)) or float(np.std(y)) or 1.0
    a0, alpha, beta = coef[0], coef[1 : 1 + ctx.n_cov], coef[1 + ctx.n_cov :]
    if spec.beta_nonneg:
        beta = np.clip(beta, 0.0, None)
    theta = np.zeros(lay.size)
    theta[lay.alpha0] = a0
    theta[lay.alpha] = alpha
    theta[lay.beta_star] = np.tile(beta, spec.J if spec.variant.stratified else 1)
    trans = np.zeros(spec.n_transition)
    v = spec.variant
    if v is Variant.CONSTANT_RHO:
        trans[0] = -ETA_START
    elif v.stratified:
        trans[0::2] = ETA_START
    else:
        trans[0] = ETA_START
    theta[lay.transition] = trans
    theta[lay.log_sigma] = np.log(max(sd, 1e-8))
    return theta


def _perturb(ctx: LikelihoodContext, theta0: NDArray, rng: np.random.Generator) -> NDArray:
    spec, lay = ctx.spec, ctx.layout
    th = theta0.copy()
    sd = float(np.exp(np.mean(theta0[lay.log_sigma])))
    th[lay.alpha0] += rng.normal(0.0, 0.5 * sd, th[lay.alpha0].shape)
    b = th[lay.beta_star]
    th[lay.beta_star] = b * np.exp(rng.normal(0.0, 0.5, b.shape))
    tr = th[lay.transition]
    v = spec.variant
    if v is Variant.CONSTANT_RHO:
        tr += rng.normal(0.0, 1.0, tr.shape)
    elif v is Variant.PERIOD_CONSTANT_RHO:
        tr[0] += rng.normal(0.0, 1.5)
        tr[1:] += rng.normal(0.0, 0.5, tr.size - 1)
    elif v is Variant.SEMI_MARKOV:
        tr[0] += rng.normal(0.0, 1.5)
        tr[1:] += rng.normal(0.0, 0.1, tr.size - 1)
    else:
        tr[0::2] += rng.normal(0.0, 1.5, spec.J)
        tr[1::2] += rng.normal(0.0, 0.1, spec.J)
    th[lay.transition] = tr
    th[lay.log_sigma] += rng.normal(0.0, 0.3, th[lay.log_sigma].shape)
    return th


def _resolve_fixed(ctx: LikelihoodContext, fixed) -> dict[int, float]:
    out: dict[int, float] = {}
    for key, val in (fixed or {}).items():
        idx = ctx.layout.index(key) if isinstance(key, str) else int(key)
        if not 0 <= idx < ctx.n_params:
            raise IndexError(f"fixed index {idx} out of range")
        out[idx] = float(val)
    return out


def numerical_hessian(
    f: Callable[[NDArray], float],
    theta: ArrayLike,
    step: float = 1e-4,
    grad: Callable[[NDArray], NDArray] | None = None,
) -> NDArray:
    """Central-difference Hessian, symmetrized as (H + H') / 2.

    The step for coordinate i is ``step * max(|theta_i|, 1)``. With ``grad``
    the Hessian is the central-difference Jacobian of the gradient (2n
    gradient calls); otherwise it is built from function values alone.
    """
    theta = np.asarray(theta, dtype=float)
    n = theta.size
    h = step * np.maximum(np.abs(theta), 1.0)
    H = np.empty((n, n))

    def _chk(v):
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite value inside the Hessian stencil")
        return v

    if grad is not None:
        for i in range(n):
            e = np.zeros(n)
            e[i] = h[i]
            H[:, i] = (_chk(grad(theta + e)) - _chk(grad(theta - e))) / (2.0 * h[i])
        return 0.5 * (H + H.T)

    f0 = _chk(f(theta))
    fp = np.empty(n)
    fm = np.empty(n)
    for i in range(n):
        e = np.zeros(n)
        e[i] = h[i]
        fp[i] = _chk(f(theta + e))
        fm[i] = _chk(f(theta - e))
        H[i, i] = (fp[i] - 2.0 * f0 + fm[i]) / h[i] ** 2
    for i in range(n):
        for j in range(i + 1, n):
            ei = np.zeros(n)
            ej = np.zeros(n)
            ei[i] = h[i]
            ej[j] = h[j]
            fpp = _chk(f(theta + ei + ej))
            fpm = _chk(f(theta + ei - ej))
            fmp = _chk(f(theta - ei + ej))
            fmm = _chk(f(theta - ei - ej))
            H[i, j] = H[j, i] = (fpp - fpm - fmp + fmm) / (4.0 * h[i] * h[j])
    return H


def fit(
    ctx: LikelihoodContext,
    init: ParamVector | ArrayLike | None = None,
    options: FitOptions | None = None,
    fixed: Mapping[str | int, float] | None = None,
    **kwargs,
) -> FitResult:
    """Maximize the marginal log-likelihood with L-BFGS-B and multi-start.

    Lag coefficients get a lower bound of 0 when ``spec.beta_nonneg``; all
    other coordinates are unbounded on their packed scale. The first start is
    ``init`` (or :func:`default_init`) projected onto the bounds; the rest are
    random dispersions of it drawn from ``options.seed``. ``fixed`` pins
    coordinates (by name or index) at given packed values.
    """
    opts = options or FitOptions()
    if kwargs:
        opts = FitOptions(**{**opts.__dict__, **kwargs})
    lay = ctx.layout
    n = ctx.n_params
    if ctx.T <= n:
        raise FitError(f"dataset has {ctx.T} days but the model has {n} parameters")

    pins = _resolve_fixed(ctx, fixed)
    free = np.ones(n, bool)
    free[list(pins)] = False
    theta0 = default_init(ctx) if init is None else ctx.as_packed(init).copy()
    for i, v in pins.items():
        theta0[i] = v
    lower = lay.lower.copy()
    theta0 = np.maximum(theta0, lower)

    rng = np.random.default_rng(opts.seed)
    starts = [theta0] + [_perturb(ctx, theta0, rng) for _ in range(max(opts.n_starts, 1) - 1)]
    scale = float(ctx.T)
    n_evals = 0

    def full(u: NDArray) -> NDArray:
        th = theta0.copy()
        th[free] = u
        return th

    def objective(u: NDArray) -> tuple[float, NDArray]:
        nonlocal n_evals
        n_evals += 1
        f, g = ctx.loglik_and_grad(full(u))
        if not np.isfinite(f) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros(u.size)
        return -f / scale, -g[free] / scale

    bounds = [(lo if np.isfinite(lo) else None, None) for lo in lower[free]]
    best = None
    start_ll = []
    for k, st in enumerate(starts):
        st = np.maximum(st, lower)
        for i, v in pins.items():
            st[i] = v
        f0 = ctx.loglik(st)
        n_evals += 1
        if not np.isfinite(f0):
            start_ll.append(float("nan"))
            log.debug("start %d has non-finite log-likelihood", k)
            continue
        res = minimize(
            objective,
            st[free],
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options=dict(maxiter=opts.max_iter, maxfun=4 * opts.max_iter, ftol=opts.tol, gtol=opts.gtol, maxcor=20),
        )
        th = full(res.x)
        ll = ctx.loglik(th)
        n_evals += 1
        start_ll.append(ll)
        if np.isfinite(ll) and (best is None or ll > best[1]):
            best = (th, ll, res)
    if best is None:
        raise FitError("log-likelihood is non-finite at every start")
    theta, ll, res = best
    converged = bool(res.success) and np.isfinite(ll)

    boundary = np.zeros(n, bool)
    if ctx.spec.beta_nonneg:
        boundary = free & np.isfinite(lower) & (theta - lower <= 1e-8)

    cov = None
    se = np.full(n, np.nan)
    H = None
    cond = float("nan")
    diags: list[str] = []
    if opts.compute_cov:
        try:
            H = numerical_hessian(ctx.loglik, theta, opts.hessian_step, grad=lambda t: ctx.loglik_and_grad(t)[1])
            n_evals += 2 * n
        except ValueError as exc:
            diags.append(f"hessian failed: {exc}")
        if H is not None:
            cov, se, cond, more = _covariance(H, free & ~boundary)
            diags += more
    return FitResult(
        ctx=ctx,
        theta=theta,
        loglik=float(ll),
        covariance=cov,
        se=se,
        converged=converged,
        n_evals=n_evals,
        starts_used=len(starts),
        fixed=~free,
        boundary=boundary,
        hessian=H,
        hessian_condition=cond,
        message=str(res.message),
        start_logliks=tuple(start_ll),
        seed=opts.seed,
        diagnostics=tuple(diags),
    )


def _covariance(H: NDArray, use: NDArray) -> tuple[NDArray | None, NDArray, float, list[str]]:
    n = H.shape[0]
    info = -H[np.ix_(use, use)]
    diags = []
    se = np.full(n, np.nan)
    if info.size == 0:
        return None, se, float("nan"), ["no free interior coordinates"]
    eig = np.linalg.eigvalsh(info)
    cond = float(np.abs(eig).max() / np.abs(eig).min()) if np.abs(eig).min() > 0 else float("inf")
    if eig.min() <= 0:
        diags.append(f"negated Hessian not positive definite (min eigenvalue {eig.min():.3g})")
    try:
        sub = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        diags.append("negated Hessian is singular; covariance not available")
        return None, se, cond, diags
    if not np.all(np.isfinite(sub)):
        diags.append("covariance has non-finite entries")
        return None, se, cond, diags
    sub = 0.5 * (sub + sub.T)
    cov = np.full((n, n), np.nan)
    cov[np.ix_(use, use)] = sub
    d = np.diag(cov)
    ok = use & (d > 0)
    se[ok] = np.sqrt(d[ok])
    if np.any(use & ~(d > 0)):
        diags.append("negative variance on the diagonal; affected SEs set to NaN")
    return cov, se, cond, diags


def wald_test(fit: FitResult, contrast: ArrayLike | Mapping[str, float], null_value: float = 0.0) -> WaldResult:
    """Two-sided Wald test of c'theta = null_value on the packed scale."""
    if isinstance(contrast, Mapping):
        c = fit.ctx.layout.contrast(contrast)
    else:
        c = np.asarray(contrast, dtype=float)
    if c.shape != fit.theta.shape:
        raise ValueError(f"contrast has length {c.size}, expected {fit.theta.size}")
    if fit.covariance is None:
        raise ValueError("fit has no covariance matrix")
    nz = c != 0
    if not nz.any():
        raise ValueError("contrast is identically zero")
    V = fit.covariance[np.ix_(nz, nz)]
    if not np.all(np.isfinite(V)):
        names = [fit.param_names[i] for i in np.flatnonzero(nz) if not np.isfinite(fit.covariance[i, i])]
        raise ValueError(f"covariance unavailable for {', '.join(names)} (pinned or on a bound)")
    var = float(c[nz] @ V @ c[nz])
    if not var > 0:
        raise ValueError("contrast has non-positive variance")
    est = float(c @ fit.theta) - null_value
    se = float(np.sqrt(var))
    z = est / se
    return WaldResult(estimate=est, se=se, z=z, p=float(2.0 * stats.norm.sf(abs(z))))


def _rho_gradient(fit: FitResult, period: int, tau: int) -> NDArray:
    """Gradient of the period's linear predictor eta (rho = 1/(1+e^eta))."""
    spec, lay = fit.spec, fit.ctx.layout
    J = spec.J
    if not 1 <= period <= J:
        raise IndexError(f"period must lie in [1, {J}]")
    c = np.zeros(fit.theta.size)
    t0 = lay.transition.start
    v = spec.variant
    if v is Variant.CONSTANT_RHO:
        c[t0] = -1.0
    elif v is Variant.SEMI_MARKOV:
        c[t0] = 1.0
        c[t0 + period] = tau
    elif v is Variant.PERIOD_CONSTANT_RHO:
        c[t0] = 1.0
        if period > 1:
            c[t0 + period - 1] = 1.0
    else:
        c[t0 + 2 * (period - 1)] = 1.0
        c[t0 + 2 * (period - 1) + 1] = tau
    return c


def logistic_delta(eta: float, se_eta: float) -> tuple[float, float]:
    """rho = 1 / (1 + e^eta) and se(rho) = rho (1 - rho) se(eta)."""
    rho = float(np.exp(-np.logaddexp(0.0, eta)))
    return rho, float(rho * (1.0 - rho) * se_eta)


def delta_rho(fit: FitResult, period: int = 1, tau: int = 0) -> tuple[float, float]:
    """rho for a period (at lag ``tau`` for tau-varying families) with its delta-method SE."""
    c = _rho_gradient(fit, period, tau)
    eta = float(c @ fit.theta)
    nz = c != 0
    se_eta = float("nan")
    if fit.covariance is not None:
        V = fit.covariance[np.ix_(nz, nz)]
        if np.all(np.isfinite(V)):
            var = float(c[nz] @ V @ c[nz])
            se_eta = float(np.sqrt(var)) if var >= 0 else float("nan")
    return logistic_delta(eta, se_eta)


def aic(fit: FitResult) -> float:
    """2k - 2 loglik with k the number of estimated parameters."""
    return 2.0 * fit.k - 2.0 * fit.loglik
