"""Transition families rho(tau, t) and the lasting-time law they induce.

All families are parameterized through a linear predictor ``eta`` with
``rho = 1 / (1 + exp(eta))``; the constant family stores rho directly.
Log-probabilities use ``log rho = -log1pexp(eta)`` and
``log(1 - rho) = -log1pexp(-eta)`` so extreme predictors stay finite.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from mmdlm.core import PeriodPartition

__all__ = [
    "Constant",
    "LogisticInTau",
    "PeriodLogistic",
    "PeriodConstant",
    "TransitionFamily",
    "LastingLaw",
    "transition_prob",
    "lasting_law",
    "expect_z",
    "log_lasting_pmf",
]


@dataclass(frozen=True)
class Constant:
    rho: float

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must lie strictly inside (0, 1)")

    def eta(self, tau: ArrayLike, codes: ArrayLike | None = None) -> NDArray:
        shape = np.broadcast_shapes(np.shape(tau), np.shape(codes) if codes is not None else ())
        return np.full(shape, np.log1p(-self.rho) - np.log(self.rho))


@dataclass(frozen=True)
class LogisticInTau:
    lambda0: float
    lambda1: float

    def eta(self, tau: ArrayLike, codes: ArrayLike | None = None) -> NDArray:
        tau = np.asarray(tau, dtype=float)
        out = self.lambda0 + self.lambda1 * tau
        if codes is not None:
            out = np.broadcast_to(out, np.broadcast_shapes(out.shape, np.shape(codes))).copy()
        return out


@dataclass(frozen=True)
class PeriodLogistic:
    """``1 / (1 + exp(lambda0 + slopes[j] * tau))`` for days in period j."""

    lambda0: float
    slopes: tuple[float, ...]
    partition: PeriodPartition

    def __post_init__(self) -> None:
        object.__setattr__(self, "slopes", tuple(float(s) for s in self.slopes))
        if len(self.slopes) != self.partition.J:
            raise ValueError(f"need one slope per period ({self.partition.J}), got {len(self.slopes)}")

    def eta(self, tau: ArrayLike, codes: ArrayLike) -> NDArray:
        return self.lambda0 + np.asarray(self.slopes)[np.asarray(codes)] * np.asarray(tau, dtype=float)


@dataclass(frozen=True)
class PeriodConstant:
    """Step function of t: ``1 / (1 + exp(lambda0))`` in the first period and
    ``1 / (1 + exp(lambda0 + shifts[j-1]))`` in period j >= 2."""

    lambda0: float
    shifts: tuple[float, ...]
    partition: PeriodPartition

    def __post_init__(self) -> None:
        object.__setattr__(self, "shifts", tuple(float(s) for s in self.shifts))
        if len(self.shifts) != self.partition.J - 1:
            raise ValueError(f"need J-1 = {self.partition.J - 1} period shifts, got {len(self.shifts)}")

    def eta(self, tau: ArrayLike, codes: ArrayLike) -> NDArray:
        full = np.concatenate([[0.0], self.shifts])
        shift = full[np.asarray(codes)]
        return np.broadcast_to(self.lambda0 + shift, np.broadcast_shapes(np.shape(tau), np.shape(shift))).copy()


TransitionFamily = Constant | LogisticInTau | PeriodLogistic | PeriodConstant


def _codes_for(fam, t) -> NDArray | None:
    partition = getattr(fam, "partition", None)
    if partition is None:
        return None
    if t is None:
        raise ValueError("a day is required for period-indexed transition families")
    return partition.codes([t])[0]


def transition_prob(fam: TransitionFamily, tau: int, t=None) -> float:
    """P(Z*_t(tau + 1) = 0 | Z*_t(tau) = 1)."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    if isinstance(fam, Constant):
        return fam.rho
    eta = float(fam.eta(tau, _codes_for(fam, t)))
    # expit(-eta) without overflow
    return float(np.exp(-np.logaddexp(0.0, eta)))


@dataclass(frozen=True)
class LastingLaw:
    """Truncated lasting-time law on {0, ..., L}; tail mass folded into L."""

    pmf: NDArray
    survival: NDArray

    @property
    def cdf(self) -> NDArray:
        return np.cumsum(self.pmf)

    @property
    def mean(self) -> float:
        return float(np.arange(self.pmf.size) @ self.pmf)


def log_lasting_pmf(eta: NDArray, support: ArrayLike | None = None) -> tuple[NDArray, NDArray]:
    """Log pmf and log survival of the lasting time, row-wise.

    Parameters
    ----------
    eta : array (..., L)
        Linear predictors for tau = 0..L-1.
    support : int array (...), optional
        Per-row truncation point K <= L. Mass beyond K is folded into K and
        entries l > K are set to -inf. Defaults to L everywhere.

    Returns
    -------
    logpmf : array (..., L+1)
    logsurv : array (..., L+1)
        log P(L >= tau), tau = 0..L (rows are not truncated).
    """
    eta = np.asarray(eta, dtype=float)
    L = eta.shape[-1]
    log_rho = -np.logaddexp(0.0, eta)
    log_stay = -np.logaddexp(0.0, -eta)
    logsurv = np.zeros(eta.shape[:-1] + (L + 1,))
    np.cumsum(log_stay, axis=-1, out=logsurv[..., 1:])
    logpmf = np.empty_like(logsurv)
    logpmf[..., :L] = log_rho + logsurv[..., :L]
    logpmf[..., L] = logsurv[..., L]
    if support is not None:
        K = np.asarray(support)
        lags = np.arange(L + 1)
        K_b = K[..., None]
        fold = lags == K_b
        logpmf = np.where(fold, logsurv, logpmf)
        logpmf = np.where(lags > K_b, -np.inf, logpmf)
    return logpmf, logsurv


def lasting_law(fam: TransitionFamily, t=None, lag_max: int = 30) -> LastingLaw:
    """Law of L(t) truncated at ``lag_max`` with the tail folded into ``lag_max``."""
    if lag_max < 1:
        raise ValueError("lag_max must be >= 1")
    taus = np.arange(lag_max)
    codes = _codes_for(fam, t)
    eta = fam.eta(taus, codes) if codes is not None else fam.eta(taus)
    logpmf, logsurv = log_lasting_pmf(np.broadcast_to(eta, (lag_max,)))
    return LastingLaw(pmf=np.exp(logpmf), survival=np.exp(logsurv))


def expect_z(fam: TransitionFamily, tau: int, t=None, lag_max: int = 30) -> float:
    """E(Z*_t(tau)) = P(L(t) >= tau)."""
    if not 0 <= tau <= lag_max:
        raise ValueError(f"tau must lie in [0, {lag_max}]")
    if tau == 0:
        return 1.0
    return float(lasting_law(fam, t, lag_max).survival[tau])
