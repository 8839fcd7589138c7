"""Shared data model: datasets, period partitions, model specs and parameters.

Everything here is an immutable value object. Arrays held by these objects
are copied on construction and marked read-only.

Packed parameter layout
-----------------------
Pooled variants (``constant_rho``, ``semi_markov``, ``period_constant_rho``)::

    alpha0, alpha[0..p-1], beta_star[0..L], <transition>, log_sigma

where ``<transition>`` is ``logit_rho`` (constant_rho), ``lambda0,
lambda[1..J]`` (semi_markov) or ``lambda0, lambda[1..J-1]``
(period_constant_rho).

Stratified variants (``hard_stratified``, ``soft_stratified``)::

    alpha0[1..J], alpha[0..p-1], beta_star[1][0..L] .. beta_star[J][0..L],
    lambda0[1], lambda1[1] .. lambda0[J], lambda1[J], log_sigma[1..J]
"""

from __future__ import annotations

import datetime as _dt
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "Variant",
    "TimeSeriesDataset",
    "PeriodPartition",
    "ModelSpec",
    "ParamVector",
    "ParamLayout",
    "param_layout",
    "pack_params",
    "unpack_params",
    "period_index",
    "to_day",
]


class Variant(str, Enum):
    """Model variants. Values double as CLI / config names."""

    CONSTANT_RHO = "constant_rho"
    SEMI_MARKOV = "semi_markov"
    PERIOD_CONSTANT_RHO = "period_constant_rho"
    HARD_STRATIFIED = "hard_stratified"
    SOFT_STRATIFIED = "soft_stratified"

    @property
    def stratified(self) -> bool:
        return self in (Variant.HARD_STRATIFIED, Variant.SOFT_STRATIFIED)

    @property
    def pooled(self) -> bool:
        return not self.stratified


def to_day(value) -> np.datetime64:
    """Coerce a date-like value (str, date, datetime64, Timestamp) to datetime64[D]."""
    if isinstance(value, np.datetime64):
        return value.astype("datetime64[D]")
    if isinstance(value, (_dt.datetime, _dt.date)):
        return np.datetime64(value.isoformat()[:10], "D")
    if hasattr(value, "to_datetime64"):
        return value.to_datetime64().astype("datetime64[D]")
    return np.datetime64(str(value)[:10], "D")


def _frozen(a: ArrayLike, dtype=float) -> NDArray:
    arr = np.array(a, dtype=dtype, copy=True)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class TimeSeriesDataset:
    """Aligned daily response, exposure(s) and covariates.

    Parameters
    ----------
    dates : sequence of dates
        Strictly increasing, daily spacing.
    y : array (T,)
        Response per day.
    x : array (T,)
        Non-negative exposure per day.
    x_strata : array (J, T), optional
        Per-stratum exposures.
    w : array (T, p), optional
        Covariates. Defaults to an empty (T, 0) matrix.
    w_names : sequence of str, optional
    mask : bool array (T,), optional
        True where the exposure value was imputed.
    exposure_smoothing : int, optional
        Window of a moving average already applied to the exposure, if any.
    """

    dates: NDArray
    y: NDArray
    x: NDArray
    x_strata: NDArray | None = None
    w: NDArray | None = None
    w_names: tuple[str, ...] = ()
    mask: NDArray | None = None
    exposure_smoothing: int | None = None

    def __post_init__(self) -> None:
        dates = np.array([to_day(d) for d in np.atleast_1d(self.dates)], dtype="datetime64[D]")
        T = dates.size
        if T < 1:
            raise ValueError("dataset must contain at least one day")
        if T > 1 and not np.all(np.diff(dates).astype(int) == 1):
            raise ValueError("dates must be strictly increasing with daily spacing")
        dates.flags.writeable = False
        object.__setattr__(self, "dates", dates)

        y = _frozen(self.y)
        x = _frozen(self.x)
        if y.shape != (T,) or x.shape != (T,):
            raise ValueError(f"y and x must have shape ({T},), got {y.shape} and {x.shape}")
        if not np.all(np.isfinite(y)):
            raise ValueError("responses must be complete and finite")
        if not np.all(np.isfinite(x)) or np.any(x < 0):
            raise ValueError("exposure must be finite and non-negative")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

        if self.x_strata is not None:
            xs = _frozen(self.x_strata)
            if xs.ndim != 2 or xs.shape[1] != T:
                raise ValueError(f"x_strata must have shape (J, {T})")
            if not np.all(np.isfinite(xs)) or np.any(xs < 0):
                raise ValueError("per-stratum exposures must be finite and non-negative")
            object.__setattr__(self, "x_strata", xs)

        w = np.zeros((T, 0)) if self.w is None else np.asarray(self.w, dtype=float)
        if w.ndim == 1:
            w = w[:, None]
        if w.shape[0] != T:
            raise ValueError(f"w must have {T} rows")
        object.__setattr__(self, "w", _frozen(w))
        names = tuple(self.w_names) or tuple(f"w{i}" for i in range(w.shape[1]))
        if len(names) != w.shape[1]:
            raise ValueError("w_names length must match the number of covariates")
        object.__setattr__(self, "w_names", names)

        mask = np.zeros(T, bool) if self.mask is None else np.asarray(self.mask, bool)
        if mask.shape != (T,):
            raise ValueError("mask must have one flag per day")
        object.__setattr__(self, "mask", _frozen(mask, bool))

    @property
    def T(self) -> int:
        return self.y.size

    @property
    def n_strata_exposures(self) -> int:
        return 0 if self.x_strata is None else self.x_strata.shape[0]

    def stratum_exposure(self, j: int) -> NDArray:
        """Exposure used by stratum ``j`` (0-based); falls back to ``x``."""
        if self.x_strata is None:
            return self.x
        return self.x_strata[j]


@dataclass(frozen=True)
class PeriodPartition:
    """Cutpoints t_0 < t_1 < ... < t_J splitting the study span into J periods.

    Period j covers (t_{j-1}, t_j]; the first period also includes t_0.
    """

    cutpoints: NDArray
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        cuts = np.array([to_day(c) for c in self.cutpoints], dtype="datetime64[D]")
        if cuts.size < 2:
            raise ValueError("a partition needs at least two cutpoints")
        if np.any(np.diff(cuts).astype(int) <= 0):
            raise ValueError("cutpoints must be strictly increasing")
        cuts.flags.writeable = False
        object.__setattr__(self, "cutpoints", cuts)
        labels = tuple(self.labels) or tuple(f"period{j}" for j in range(1, cuts.size))
        if len(labels) != cuts.size - 1:
            raise ValueError("need exactly one label per period")
        object.__setattr__(self, "labels", labels)

    @property
    def J(self) -> int:
        return self.cutpoints.size - 1

    @classmethod
    def single(cls, dates: Sequence, label: str = "all") -> "PeriodPartition":
        """One-period partition spanning ``dates``."""
        d = [to_day(v) for v in dates]
        return cls((min(d), max(d)), (label,))

    def codes(self, dates) -> NDArray[np.intp]:
        """0-based period code for every date (vectorized :func:`period_index` - 1)."""
        d = np.array([to_day(v) for v in np.atleast_1d(dates)], dtype="datetime64[D]")
        if np.any(d < self.cutpoints[0]) or np.any(d > self.cutpoints[-1]):
            bad = d[(d < self.cutpoints[0]) | (d > self.cutpoints[-1])][0]
            raise ValueError(
                f"date {bad} outside partition span "
                f"[{self.cutpoints[0]}, {self.cutpoints[-1]}]"
            )
        k = np.searchsorted(self.cutpoints, d, side="left")
        return np.maximum(k, 1).astype(np.intp) - 1

    def covers(self, dates) -> bool:
        d = np.array([to_day(v) for v in np.atleast_1d(dates)], dtype="datetime64[D]")
        return bool(d.min() >= self.cutpoints[0] and d.max() <= self.cutpoints[-1])


def period_index(partition: PeriodPartition, date) -> int:
    """1-based period containing ``date`` under the (t_{j-1}, t_j] convention."""
    return int(partition.codes([date])[0]) + 1


@dataclass(frozen=True)
class ModelSpec:
    """Which model variant is fitted, and how.

    ``period_intercepts`` adds indicators of periods 2..J as covariates for the
    pooled partitioned variants (semi_markov, period_constant_rho).
    """

    variant: Variant
    lag_max: int = 30
    partition: PeriodPartition | None = None
    beta_nonneg: bool = True
    soft_weights: NDArray | None = None
    period_intercepts: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "variant", Variant(self.variant))
        if int(self.lag_max) != self.lag_max or self.lag_max < 1:
            raise ValueError("lag_max must be an integer >= 1")
        object.__setattr__(self, "lag_max", int(self.lag_max))
        if self.variant is not Variant.CONSTANT_RHO and self.partition is None:
            raise ValueError(f"variant {self.variant.value} requires a period partition")
        if self.variant is Variant.SOFT_STRATIFIED:
            if self.soft_weights is None:
                raise ValueError("soft_stratified requires soft_weights")
            pw = np.asarray(self.soft_weights, dtype=float)
            if pw.ndim != 2 or pw.shape[1] != self.partition.J:
                raise ValueError(f"soft_weights must have shape (T, {self.partition.J})")
            if not np.all(np.isfinite(pw)) or np.any(pw < 0):
                raise ValueError("soft_weights must be finite and non-negative")
            if np.any(np.abs(pw.sum(axis=1) - 1.0) > 1e-10):
                raise ValueError("each soft_weights row must sum to 1 within 1e-10")
            object.__setattr__(self, "soft_weights", _frozen(pw))
        elif self.soft_weights is not None:
            raise ValueError("soft_weights are only valid for soft_stratified")

    @property
    def J(self) -> int:
        return 1 if self.partition is None else self.partition.J

    @property
    def n_transition(self) -> int:
        """Number of transition parameters in the packed vector."""
        v = self.variant
        if v is Variant.CONSTANT_RHO:
            return 1
        if v is Variant.SEMI_MARKOV:
            return self.J + 1
        if v is Variant.PERIOD_CONSTANT_RHO:
            return self.J
        return 2 * self.J

    def n_period_indicators(self) -> int:
        if self.variant in (Variant.SEMI_MARKOV, Variant.PERIOD_CONSTANT_RHO) and self.period_intercepts:
            return self.J - 1
        return 0


@dataclass(frozen=True)
class ParamVector:
    """Model parameters on their natural scales.

    Attributes
    ----------
    alpha0 : float or array (J,)
        Intercept; per stratum for stratified variants.
    alpha : array (p,)
        Covariate coefficients (including period indicators when present).
    beta_star : array (L+1,) or (J, L+1)
        Lag coefficients.
    lam : array
        Transition parameters. For ``constant_rho`` this holds the single
        probability rho itself; for ``semi_markov`` (lambda0, lambda1..lambdaJ);
        for ``period_constant_rho`` (lambda0, lambda1..lambda_{J-1}); for the
        stratified variants a (J, 2) array of (lambda0, lambda1) rows.
    sigma : float or array (J,)
        Emission standard deviation.
    """

    alpha0: NDArray
    alpha: NDArray
    beta_star: NDArray
    lam: NDArray
    sigma: NDArray

    def __post_init__(self) -> None:
        for name in ("alpha0", "alpha", "beta_star", "lam", "sigma"):
            arr = _frozen(getattr(self, name))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            object.__setattr__(self, name, arr)
        if np.any(self.sigma < 0):
            raise ValueError("sigma must be non-negative")

    @classmethod
    def make(cls, alpha0, beta_star, lam, sigma, alpha=()) -> "ParamVector":
        return cls(alpha0=alpha0, alpha=np.asarray(alpha, float).ravel(), beta_star=beta_star, lam=lam, sigma=sigma)

    def replace(self, **changes) -> "ParamVector":
        kw = dict(alpha0=self.alpha0, alpha=self.alpha, beta_star=self.beta_star, lam=self.lam, sigma=self.sigma)
        kw.update(changes)
        return ParamVector(**kw)

    def equals(self, other: "ParamVector", atol: float = 0.0) -> bool:
        return all(
            np.shape(getattr(self, n)) == np.shape(getattr(other, n))
            and np.allclose(getattr(self, n), getattr(other, n), rtol=0, atol=atol)
            for n in ("alpha0", "alpha", "beta_star", "lam", "sigma")
        )


@dataclass(frozen=True)
class ParamLayout:
    """Slices into the packed vector for a given (spec, covariate count)."""

    alpha0: slice
    alpha: slice
    beta_star: slice
    transition: slice
    log_sigma: slice
    names: tuple[str, ...]
    lower: NDArray = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise KeyError(f"unknown parameter name {name!r}; known: {', '.join(self.names)}") from None

    def contrast(self, weights: dict[str, float]) -> NDArray:
        """Contrast vector from ``{parameter name: coefficient}``."""
        c = np.zeros(self.size)
        for name, coef in weights.items():
            c[self.index(name)] += float(coef)
        return c


def param_layout(spec: ModelSpec, n_cov: int) -> ParamLayout:
    """Layout of the packed vector. ``n_cov`` counts all covariates incl. period indicators."""
    L1 = spec.lag_max + 1
    J = spec.J
    names: list[str] = []
    if spec.variant.stratified:
        names += [f"alpha0[{j}]" for j in range(1, J + 1)]
        n_a0, n_beta, n_sig = J, J * L1, J
    else:
        names.append("alpha0")
        n_a0, n_beta, n_sig = 1, L1, 1
    names += [f"alpha[{i}]" for i in range(n_cov)]
    if spec.variant.stratified:
        names += [f"beta_star[{j}][{t}]" for j in range(1, J + 1) for t in range(L1)]
    else:
        names += [f"beta_star[{t}]" for t in range(L1)]
    v = spec.variant
    if v is Variant.CONSTANT_RHO:
        names.append("logit_rho")
    elif v is Variant.SEMI_MARKOV:
        names += ["lambda0"] + [f"lambda[{j}]" for j in range(1, J + 1)]
    elif v is Variant.PERIOD_CONSTANT_RHO:
        names += ["lambda0"] + [f"lambda[{j}]" for j in range(1, J)]
    else:
        for j in range(1, J + 1):
            names += [f"lambda0[{j}]", f"lambda1[{j}]"]
    names += [f"log_sigma[{j}]" for j in range(1, J + 1)] if v.stratified else ["log_sigma"]

    a0 = slice(0, n_a0)
    al = slice(a0.stop, a0.stop + n_cov)
    be = slice(al.stop, al.stop + n_beta)
    tr = slice(be.stop, be.stop + spec.n_transition)
    ls = slice(tr.stop, tr.stop + n_sig)
    assert ls.stop == len(names)
    lower = np.full(len(names), -np.inf)
    if spec.beta_nonneg:
        lower[be] = 0.0
    lower.flags.writeable = False
    return ParamLayout(a0, al, be, tr, ls, tuple(names), lower)


def _expected_shapes(spec: ModelSpec, n_cov: int) -> dict[str, tuple[int, ...]]:
    L1, J = spec.lag_max + 1, spec.J
    if spec.variant.stratified:
        return dict(alpha0=(J,), alpha=(n_cov,), beta_star=(J, L1), lam=(J, 2), sigma=(J,))
    lam = {Variant.CONSTANT_RHO: (1,), Variant.SEMI_MARKOV: (J + 1,), Variant.PERIOD_CONSTANT_RHO: (J,)}
    return dict(alpha0=(), alpha=(n_cov,), beta_star=(L1,), lam=lam[spec.variant], sigma=())


def _check_shapes(p: ParamVector, spec: ModelSpec) -> None:
    n_cov = p.alpha.size
    for name, shape in _expected_shapes(spec, n_cov).items():
        got = np.shape(getattr(p, name))
        # scalars may be given as length-1 arrays and vice versa
        if got != shape and not (shape == () and got == (1,)) and not (shape == (1,) and got == ()):
            raise ValueError(f"{name} has shape {got}; {spec.variant.value} with lag_max={spec.lag_max}, J={spec.J} needs {shape}")
    if spec.variant is Variant.CONSTANT_RHO:
        rho = float(np.ravel(p.lam)[0])
        if not 0.0 < rho < 1.0:
            raise ValueError("rho must lie strictly inside (0, 1)")


def pack_params(p: ParamVector, spec: ModelSpec) -> NDArray:
    """Flatten ``p`` into the canonical unconstrained vector (log sigma, logit rho)."""
    _check_shapes(p, spec)
    if np.any(np.asarray(p.sigma) <= 0):
        raise ValueError("sigma must be positive to be packed")
    if spec.variant is Variant.CONSTANT_RHO:
        rho = float(np.ravel(p.lam)[0])
        trans = np.array([np.log(rho) - np.log1p(-rho)])
    else:
        trans = np.ravel(p.lam)
    return np.concatenate(
        [np.ravel(p.alpha0), p.alpha, np.ravel(p.beta_star), trans, np.log(np.ravel(p.sigma))]
    ).astype(float)


def unpack_params(theta: ArrayLike, spec: ModelSpec, n_cov: int) -> ParamVector:
    """Inverse of :func:`pack_params`."""
    theta = np.asarray(theta, dtype=float)
    lay = param_layout(spec, n_cov)
    if theta.shape != (lay.size,):
        raise ValueError(f"packed vector has length {theta.size}, expected {lay.size}")
    shapes = _expected_shapes(spec, n_cov)
    trans = theta[lay.transition]
    if spec.variant is Variant.CONSTANT_RHO:
        lam = np.array([1.0 / (1.0 + np.exp(-trans[0]))])
    else:
        lam = trans.reshape(shapes["lam"])
    return ParamVector(
        alpha0=theta[lay.alpha0].reshape(shapes["alpha0"]),
        alpha=theta[lay.alpha].copy(),
        beta_star=theta[lay.beta_star].reshape(shapes["beta_star"]),
        lam=lam,
        sigma=np.exp(theta[lay.log_sigma]).reshape(shapes["sigma"]),
    )
