"""Glue between a :class:`RunConfig` and the modelling modules.

Every function here returns in-memory objects or tables; writing is left to
the CLI so that a failing run leaves no partial outputs behind.
"""

from __future__ import annotations

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from mmdlm.baselines import BaselineFit, almon_dlm, monotone_dlm, ols_dlm
from mmdlm.config import ConfigError, RunConfig
from mmdlm.core import ModelSpec, ParamVector, PeriodPartition, TimeSeriesDataset, Variant, to_day
from mmdlm.estimation import FitOptions, FitResult, delta_rho, fit, wald_test
from mmdlm.ingest import build_soft_weights, impute_missing, read_series, smooth_exposure
from mmdlm.lasting import lasting_law
from mmdlm.likelihood import LikelihoodContext, families
from mmdlm.posterior import band, posterior_all
from mmdlm.simulation import ExposureGen, SimulationConfig, SimulationResult, simulate

__all__ = [
    "build_partition",
    "load_dataset",
    "build_context",
    "fit_from_config",
    "fit_payload",
    "fit_tables",
    "stratum_labels",
    "posterior_table",
    "baseline_tables",
    "compare_table",
    "wald_table",
    "simulation_params",
    "simulate_from_config",
    "simulation_tables",
]


def build_partition(cfg: RunConfig) -> PeriodPartition | None:
    if cfg.variant is Variant.CONSTANT_RHO:
        return None
    if len(cfg.cutpoints) < 2:
        raise ConfigError(f"variant {cfg.variant.value} needs model.periods.cutpoints (at least two dates)")
    return PeriodPartition(cfg.cutpoints, cfg.labels)


def _series(path, label: str) -> pd.Series:
    try:
        dates, values = read_series(path)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc
    return pd.Series(values, index=pd.DatetimeIndex(dates), name=label)


def _filled(s: pd.Series, impute: bool, what: str) -> tuple[NDArray, NDArray]:
    v = s.to_numpy(dtype=float)
    if np.all(np.isfinite(v)):
        return v, np.zeros(v.size, bool)
    if not impute:
        raise ConfigError(f"{what} has missing days and imputation is disabled")
    return impute_missing(v)


def load_dataset(cfg: RunConfig) -> tuple[TimeSeriesDataset, NDArray | None]:
    """Read, align, impute and smooth the configured series.

    Returns the dataset and the (T, J) soft weights (None unless soft_stratified).
    """
    cfg.require("response", "exposure")
    y = _series(cfg.response, "response")
    xs = [_series(cfg.exposure, "exposure")] + [_series(p, f"exposure_{j}") for j, p in enumerate(cfg.exposure_strata, 1)]
    lo = max(s.index.min() for s in [y, *xs])
    hi = min(s.index.max() for s in [y, *xs])
    if cfg.start is not None:
        lo = max(lo, pd.Timestamp(cfg.start))
    if cfg.end is not None:
        hi = min(hi, pd.Timestamp(cfg.end))
    if hi <= lo:
        raise ConfigError("response and exposure series do not overlap")
    grid = pd.date_range(lo, hi, freq="D")
    yv = y.reindex(grid).to_numpy(dtype=float)
    if not np.all(np.isfinite(yv)):
        raise ConfigError(f"response has {np.count_nonzero(~np.isfinite(yv))} missing day(s) in the analysis span")
    filled = [_filled(s.reindex(grid), cfg.impute, s.name) for s in xs]
    x, mask = filled[0]
    x_strata = np.vstack([f[0] for f in filled[1:]]) if len(filled) > 1 else None
    if np.any(x < 0) or (x_strata is not None and np.any(x_strata < 0)):
        raise ConfigError("exposure values must be non-negative")

    w, w_names = None, ()
    if cfg.covariates is not None:
        if not cfg.covariates.is_file():
            raise ConfigError(f"data.covariates: file not found: {cfg.covariates}")
        cov = pd.read_csv(cfg.covariates, parse_dates=["date"]).set_index("date").reindex(grid)
        if cov.isna().any().any():
            raise ConfigError("covariates must cover every day of the analysis span")
        w, w_names = cov.to_numpy(float), tuple(cov.columns)

    dates = grid.to_numpy().astype("datetime64[D]")
    ds = TimeSeriesDataset(dates, yv, x, x_strata=x_strata, w=w, w_names=w_names, mask=mask)
    if cfg.moving_average:
        ds = smooth_exposure(ds, cfg.moving_average)
    return ds, _soft_weights(cfg, dates)


def _soft_weights(cfg: RunConfig, dates: NDArray) -> NDArray | None:
    if cfg.variant is not Variant.SOFT_STRATIFIED:
        return None
    grid = pd.DatetimeIndex(dates)
    if cfg.soft_weights is not None:
        if not cfg.soft_weights.is_file():
            raise ConfigError(f"data.soft_weights: file not found: {cfg.soft_weights}")
        tab = pd.read_csv(cfg.soft_weights, parse_dates=["date"]).set_index("date").reindex(grid)
        if tab.isna().any().any():
            raise ConfigError("soft weights must cover every day of the analysis span")
        return tab.to_numpy(float)
    if cfg.variant_proportion is None or cfg.all_old_before is None or cfg.all_new_after is None:
        raise ConfigError("soft_stratified needs data.soft_weights, or data.variant_proportion plus model.soft_anchors")
    share = _series(cfg.variant_proportion, "share")
    if cfg.impute and share.isna().any():
        share = pd.Series(impute_missing(share.to_numpy())[0], index=share.index)
    return build_soft_weights(dates, share.reindex(grid).to_numpy(float), cfg.all_old_before, cfg.all_new_after)


def build_context(cfg: RunConfig, ds: TimeSeriesDataset, weights: NDArray | None) -> LikelihoodContext:
    spec = ModelSpec(
        cfg.variant,
        lag_max=cfg.lag_max,
        partition=build_partition(cfg),
        beta_nonneg=cfg.beta_nonneg,
        soft_weights=weights,
        period_intercepts=cfg.period_intercepts,
    )
    return LikelihoodContext(ds, spec)


def fit_from_config(cfg: RunConfig, ctx: LikelihoodContext) -> FitResult:
    opts = FitOptions(tol=cfg.tol, max_iter=cfg.max_iter, n_starts=cfg.n_starts, seed=cfg.seed)
    return fit(ctx, options=opts)


def stratum_labels(spec: ModelSpec) -> tuple[str, ...]:
    """Column labels for per-period / per-stratum outputs."""
    return ("all",) if spec.partition is None else spec.partition.labels


def _natural(p: ParamVector) -> dict:
    return {k: np.asarray(getattr(p, k)).tolist() for k in ("alpha0", "alpha", "beta_star", "lam", "sigma")}


def fit_payload(f: FitResult) -> dict:
    """Content of fit.json."""
    spec, ctx = f.spec, f.ctx
    names = list(f.param_names)
    part = spec.partition
    return {
        "variant": spec.variant.value,
        "lag_max": spec.lag_max,
        "partition": None if part is None else {"cutpoints": [str(c) for c in part.cutpoints], "labels": list(part.labels)},
        "covariates": list(ctx.w_names),
        "names": names,
        "theta": _natural(f.theta_hat),
        "theta_packed": dict(zip(names, f.theta.tolist())),
        "se": dict(zip(names, f.se.tolist())),
        "cov": None if f.covariance is None else f.covariance.tolist(),
        "loglik": f.loglik,
        "k": f.k,
        "aic": f.aic,
        "converged": f.converged,
        "n_evals": f.n_evals,
        "starts_used": f.starts_used,
        "seed": f.seed,
        "boundary": [n for n, b in zip(names, f.boundary) if b],
        "message": f.message,
        "diagnostics": list(f.diagnostics),
    }


def _laws(f: FitResult):
    """Lasting law per period (pooled) or stratum (stratified), at full support."""
    spec = f.spec
    fams = families(f.ctx, f.theta_hat)
    L = spec.lag_max
    if spec.variant.stratified:
        return [lasting_law(fam, lag_max=L) for fam in fams]
    if spec.partition is None:
        return [lasting_law(fams[0], lag_max=L)]
    # a representative day inside each period
    part = spec.partition
    days = [part.cutpoints[j + 1] for j in range(part.J)]
    return [lasting_law(fams[0], t=d, lag_max=L) for d in days]


def fit_tables(f: FitResult) -> dict[str, pd.DataFrame]:
    """betastar, expected_beta, lasting_pmf, lasting_cdf and a summary table."""
    spec = f.spec
    L = spec.lag_max
    labels = stratum_labels(spec)
    tau = np.arange(L + 1)
    p = f.theta_hat
    beta = np.atleast_2d(np.asarray(p.beta_star, float))
    se_beta = np.atleast_2d(f.se[f.ctx.layout.beta_star].reshape(beta.shape))
    laws = _laws(f)

    bs = {"tau": tau}
    if spec.variant.stratified:
        for j, lab in enumerate(labels):
            bs[lab] = beta[j]
            bs[f"se_{lab}"] = se_beta[j]
    else:
        bs["beta_star"] = beta[0]
        bs["se"] = se_beta[0]

    def beta_for(j):
        return beta[j] if spec.variant.stratified else beta[0]

    expected = {"tau": tau, **{lab: beta_for(j) * laws[j].survival for j, lab in enumerate(labels)}}
    pmf = {"tau": tau, **{lab: laws[j].pmf for j, lab in enumerate(labels)}}
    cdf = {"tau": tau, **{lab: laws[j].cdf for j, lab in enumerate(labels)}}
    return {
        "betastar.csv": pd.DataFrame(bs),
        "expected_beta.csv": pd.DataFrame(expected),
        "lasting_pmf.csv": pd.DataFrame(pmf),
        "lasting_cdf.csv": pd.DataFrame(cdf),
        "table.csv": summary_table(f),
    }


def summary_table(f: FitResult) -> pd.DataFrame:
    """Estimates (SE) for intercepts, covariates, transition parameters and sigma."""
    spec, lay = f.spec, f.ctx.layout
    labels = stratum_labels(spec)
    rows = []

    def add(name, label, i=None, est=None, se=None):
        if i is not None:
            est, se = f.theta[i], f.se[i]
        rows.append({"parameter": name, "label": label, "estimate": float(est), "se": float(se)})

    v = spec.variant
    if v.stratified:
        for j, lab in enumerate(labels):
            add(f"alpha0[{j + 1}]", f"intercept ({lab})", lay.alpha0.start + j)
    else:
        add("alpha0", "intercept" if spec.partition is None else f"intercept ({labels[0]})", lay.alpha0.start)
    for k, nm in enumerate(f.ctx.w_names):
        lab = f"indicator of {nm.split(':', 1)[1]}" if nm.startswith("period:") else nm
        add(f"alpha[{k}]", lab, lay.alpha.start + k)
    t0 = lay.transition.start
    if v is Variant.CONSTANT_RHO:
        rho, se = delta_rho(f, 1)
        add("rho", "rho", est=rho, se=se)
    elif v is Variant.SEMI_MARKOV:
        add("lambda0", "intercept of eta", t0)
        for j, lab in enumerate(labels, 1):
            add(f"lambda[{j}]", f"change rate ({lab})", t0 + j)
    elif v is Variant.PERIOD_CONSTANT_RHO:
        for j, lab in enumerate(labels, 1):
            rho, se = delta_rho(f, j)
            add(f"rho[{j}]", f"rho ({lab})", est=rho, se=se)
    else:
        for j, lab in enumerate(labels):
            add(f"lambda0[{j + 1}]", f"intercept of eta ({lab})", t0 + 2 * j)
            add(f"lambda1[{j + 1}]", f"change rate ({lab})", t0 + 2 * j + 1)
    sig = np.atleast_1d(np.asarray(f.theta_hat.sigma, float))
    for j, i in enumerate(range(lay.log_sigma.start, lay.log_sigma.stop)):
        lab = "sigma" if not v.stratified else f"sigma ({labels[j]})"
        # delta method from log sigma
        add(f"sigma[{j + 1}]" if v.stratified else "sigma", lab, est=sig[j], se=sig[j] * f.se[i])
    return pd.DataFrame(rows)


def posterior_table(ctx: LikelihoodContext, params, kind: str = "variance") -> pd.DataFrame:
    post = posterior_all(ctx, params)
    lo, hi = band(post.mean, post.var, kind)
    labels = stratum_labels(ctx.spec)
    return pd.DataFrame(
        {
            "date": pd.DatetimeIndex(post.dates),
            "mean": post.mean,
            "var": post.var,
            "sd": np.sqrt(post.var),
            "lower": lo,
            "upper": hi,
            "stratum": [labels[s] for s in post.stratum],
        }
    )


def baseline_tables(ds: TimeSeriesDataset, cfg: RunConfig) -> tuple[pd.DataFrame, pd.DataFrame, dict[str, BaselineFit]]:
    opts = cfg.baseline
    L = int(opts.get("L_fixed", cfg.lag_max))
    fits = {
        "ols": ols_dlm(ds, L),
        "almon": almon_dlm(ds, L, int(opts.get("almon_degree", 3))),
        "monotone": monotone_dlm(ds, L, float(opts.get("monotone_penalty", 0.0))),
    }
    beta = pd.DataFrame({"tau": np.arange(L + 1), **{k: v.beta for k, v in fits.items()}})
    summary = pd.DataFrame(
        [{"method": k, "alpha0": v.alpha0, "rss": v.rss, "residual_sd": v.residual_sd} for k, v in fits.items()]
    )
    return beta, summary, fits


def compare_table(fits: dict[str, FitResult]) -> pd.DataFrame:
    """loglik, k and AIC per model; deltas are relative to the first model."""
    items = list(fits.items())
    ref = items[0][1]
    rows = []
    for name, f in items:
        rows.append(
            {
                "model": name,
                "variant": f.spec.variant.value,
                "loglik": f.loglik,
                "k": f.k,
                "aic": f.aic,
                "delta_k": f.k - ref.k,
                "delta_loglik": f.loglik - ref.loglik,
                "delta_aic": 2.0 * (f.k - ref.k) - 2.0 * (f.loglik - ref.loglik),
                "converged": f.converged,
            }
        )
    return pd.DataFrame(rows)


def wald_table(fits: dict[str, FitResult], contrasts: list[dict]) -> pd.DataFrame:
    """Wald tests for entries ``{model, weights: {name: coef}, null?, label?}``."""
    rows = []
    for c in contrasts:
        model = c.get("model", next(iter(fits)))
        if model not in fits:
            raise ConfigError(f"contrast refers to unknown model {model!r}")
        weights = c.get("weights")
        if not isinstance(weights, dict) or not weights:
            raise ConfigError("each contrast needs a non-empty 'weights' mapping")
        try:
            w = wald_test(fits[model], weights, float(c.get("null", 0.0)))
        except KeyError as exc:
            raise ConfigError(str(exc)) from exc
        label = c.get("label") or " + ".join(f"{v:g}*{k}" for k, v in weights.items())
        rows.append({"model": model, "contrast": label, "estimate": w.estimate, "se": w.se, "z": w.z, "p": w.p})
    return pd.DataFrame(rows, columns=["model", "contrast", "estimate", "se", "z", "p"])


# --------------------------------------------------------------------------
# simulation


def _beta_rows(spec_beta, L: int, J: int) -> NDArray:
    def one(b):
        if isinstance(b, dict):
            return float(b.get("b0", 1.0)) * float(b.get("decay", 0.8)) ** np.arange(L + 1)
        arr = np.asarray(b, float)
        if arr.shape != (L + 1,):
            raise ConfigError(f"beta_star rows need {L + 1} values")
        return arr

    if isinstance(spec_beta, dict) or np.ndim(spec_beta) == 1:
        rows = [one(spec_beta)] * J
    else:
        rows = [one(b) for b in spec_beta]
    if len(rows) != J:
        raise ConfigError(f"need {J} beta_star rows")
    return np.vstack(rows)


def simulation_params(cfg: RunConfig, ctx: LikelihoodContext) -> ParamVector:
    """True parameters from the ``simulate`` section, shaped for ``ctx``."""
    s = cfg.simulate
    spec = ctx.spec
    J, L = spec.J, spec.lag_max
    strat = spec.variant.stratified
    if "lam" not in s:
        raise ConfigError("simulate.lam is required (rho itself for constant_rho)")
    beta = _beta_rows(s.get("beta_star", {"b0": 2.0, "decay": 0.8}), L, J if strat else 1)
    alpha = np.asarray(s.get("alpha", np.zeros(ctx.n_cov)), float).ravel()
    if alpha.size != ctx.n_cov:
        raise ConfigError(f"simulate.alpha needs {ctx.n_cov} values ({', '.join(ctx.w_names)})")
    a0 = np.asarray(s.get("alpha0", 10.0), float)
    sig = np.asarray(s.get("sigma", 1.0), float)
    lam = np.asarray(s["lam"], float)
    if strat:
        a0 = np.broadcast_to(a0, (J,))
        sig = np.broadcast_to(sig, (J,))
        lam = lam.reshape(J, 2) if lam.size == 2 * J else np.tile(lam.reshape(1, 2), (J, 1))
    else:
        a0, sig = a0.reshape(()), sig.reshape(())
        lam = lam.reshape(-1)
    try:
        return ParamVector.make(a0, beta if strat else beta[0], lam, sig, alpha)
    except ValueError as exc:
        raise ConfigError(f"simulate: {exc}") from exc


def simulate_from_config(cfg: RunConfig) -> tuple[SimulationResult, ParamVector, LikelihoodContext]:
    s = cfg.simulate
    T = int(s.get("T", 800))
    start = to_day(s.get("start", "2020-06-16"))
    dates = start + np.arange(T)
    weights = None
    if cfg.variant is Variant.SOFT_STRATIFIED:
        weights = _soft_weights(cfg, dates)
    # build a throwaway context to size the covariates
    probe = TimeSeriesDataset(dates, np.zeros(T), np.ones(T))
    ctx = build_context(cfg, probe, weights)
    p = simulation_params(cfg, ctx)
    ex = s.get("exposure") or {}
    gen = ExposureGen(
        kind=str(ex.get("kind", "ar1")),
        log_mean=float(ex.get("log_mean", 2.0)),
        phi=float(ex.get("phi", 0.9)),
        sd=float(ex.get("sd", 0.3)),
    )
    res = simulate(SimulationConfig(ctx.spec, p, T, exposure_gen=gen, seed=cfg.seed, start=start))
    return res, p, LikelihoodContext(res.dataset, ctx.spec)


def simulation_tables(res: SimulationResult, spec: ModelSpec) -> dict[str, pd.DataFrame]:
    ds = res.dataset
    d = pd.DatetimeIndex(ds.dates)
    hidden = np.asarray(res.hidden)
    if hidden.ndim == 1:
        h = pd.DataFrame({"date": d, "l": hidden})
    else:
        h = pd.DataFrame({"date": d, **{f"l_{lab}": hidden[:, j] for j, lab in enumerate(stratum_labels(spec))}})
    return {
        "response.csv": pd.DataFrame({"date": d, "value": ds.y}),
        "exposure.csv": pd.DataFrame({"date": d, "value": ds.x}),
        "hidden_l.csv": h,
    }
