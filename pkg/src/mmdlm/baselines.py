"""Conventional fixed-lag distributed lag fits used as comparators.

All three estimators regress ``y_t`` on ``(1, x_t, ..., x_{t-L})`` over days
``t >= L`` (the first L days are dropped rather than zero-padded).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import nnls

from mmdlm.core import TimeSeriesDataset
from mmdlm.likelihood import lag_matrix

__all__ = ["BaselineFit", "RankDeficientError", "ols_dlm", "almon_dlm", "monotone_dlm", "design"]


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when a baseline design matrix is not of full column rank."""


@dataclass(frozen=True)
class BaselineFit:
    beta: NDArray
    alpha0: float
    residual_sd: float
    method: str
    rss: float
    fitted: NDArray
    degree: int | None = None
    coef: NDArray | None = None

    @property
    def L(self) -> int:
        return self.beta.size - 1


def design(dataset: TimeSeriesDataset, L_fixed: int) -> tuple[NDArray, NDArray]:
    """Lag matrix and response restricted to days t >= L_fixed."""
    if dataset.T <= L_fixed + 2:
        raise ValueError(f"need more than L_fixed + 2 = {L_fixed + 2} days, got {dataset.T}")
    X = lag_matrix(dataset.x, L_fixed)[L_fixed:]
    return X, dataset.y[L_fixed:]


def _lstsq(Z: NDArray, y: NDArray) -> NDArray:
    rank = np.linalg.matrix_rank(Z)
    if rank < Z.shape[1]:
        raise RankDeficientError(f"design has rank {rank} < {Z.shape[1]} columns")
    coef, *_ = np.linalg.lstsq(Z, y, rcond=None)
    return coef


def _finish(y, fitted, beta, alpha0, n_coef, method, **extra) -> BaselineFit:
    resid = y - fitted
    rss = float(resid @ resid)
    dof = max(y.size - n_coef, 1)
    return BaselineFit(
        beta=np.asarray(beta, float),
        alpha0=float(alpha0),
        residual_sd=float(np.sqrt(rss / dof)),
        method=method,
        rss=rss,
        fitted=fitted,
        **extra,
    )


def ols_dlm(dataset: TimeSeriesDataset, L_fixed: int = 30) -> BaselineFit:
    """Unrestricted least squares on the current and L_fixed lagged exposures."""
    X, y = design(dataset, L_fixed)
    Z = np.column_stack([np.ones(y.size), X])
    coef = _lstsq(Z, y)
    return _finish(y, Z @ coef, coef[1:], coef[0], Z.shape[1], "ols")


def almon_dlm(dataset: TimeSeriesDataset, L_fixed: int = 30, degree: int = 3) -> BaselineFit:
    """Polynomial (Almon) lag: beta_tau = sum_d c_d tau**d.

    The collapsed design uses the rescaled powers ``(tau / L)**d``, which span
    the same space as ``tau**d`` but stay well conditioned; ``coef`` is reported
    on the raw ``tau**d`` scale. ``degree == L_fixed`` is the saturated case and
    reproduces the OLS fit.
    """
    if not 0 <= degree <= L_fixed:
        raise ValueError(f"degree must lie in [0, L_fixed={L_fixed}]")
    X, y = design(dataset, L_fixed)
    taus = np.arange(L_fixed + 1, dtype=float)
    scale = float(max(L_fixed, 1))
    P = (taus[:, None] / scale) ** np.arange(degree + 1)[None, :]
    Z = np.column_stack([np.ones(y.size), X @ P])
    coef = _lstsq(Z, y)
    c_scaled = coef[1:]
    beta = P @ c_scaled
    c_raw = c_scaled / scale ** np.arange(degree + 1)
    return _finish(y, Z @ coef, beta, coef[0], Z.shape[1], "almon", degree=degree, coef=c_raw)


def monotone_dlm(
    dataset: TimeSeriesDataset,
    L_fixed: int = 30,
    penalty: float = 0.0,
    max_iter: int | None = None,
) -> BaselineFit:
    """Least squares subject to beta_0 >= beta_1 >= ... >= beta_L >= 0.

    Writing ``beta_tau = sum_{k >= tau} d_k`` with ``d >= 0`` turns the problem
    into non-negative least squares, solved by the Lawson-Hanson active-set
    method after profiling out the intercept. ``penalty`` adds
    ``penalty * sum_tau |beta_tau|`` (linear in d on the feasible set).
    """
    if penalty < 0:
        raise ValueError("penalty must be non-negative")
    X, y = design(dataset, L_fixed)
    n = L_fixed + 1
    U = np.triu(np.ones((n, n)))  # beta = U @ d, U[tau, k] = 1 for k >= tau
    A = X @ U
    A_c = A - A.mean(axis=0)
    y_c = y - y.mean()
    if penalty > 0:
        # ||A d - y||^2 + 2 g'd == ||A d - y'||^2 + const with A'(y - y') = g
        g = 0.5 * penalty * (np.arange(n) + 1.0)
        y_c = y_c - A_c @ np.linalg.lstsq(A_c.T @ A_c, g, rcond=None)[0]
    try:
        d, _ = nnls(A_c, y_c, maxiter=max_iter if max_iter is not None else 50 * n)
    except RuntimeError as exc:
        raise RuntimeError(f"monotone fit did not reach a KKT point: {exc}") from exc
    beta = U @ d
    alpha0 = y.mean() - A.mean(axis=0) @ d
    fitted = alpha0 + X @ beta
    return _finish(y, fitted, beta, alpha0, n + 1, "monotone")
