import dataclasses
from types import SimpleNamespace

import numpy as np
import pytest

from mmdlm.core import ModelSpec, ParamVector, PeriodPartition
from mmdlm.estimation import (
    FitError,
    aic,
    default_init,
    delta_rho,
    fit,
    logistic_delta,
    numerical_hessian,
    wald_test,
)
from mmdlm.likelihood import LikelihoodContext
from mmdlm.simulation import SimulationConfig, simulate

from conftest import START, make_dataset, two_periods


def model3_data(T=400, L=8, seed=1, rho=0.3, sigma=2.0):
    spec = ModelSpec("constant_rho", L)
    p = ParamVector.make(10.0, 2.0 * 0.8 ** np.arange(L + 1), [rho], sigma)
    return LikelihoodContext(simulate(SimulationConfig(spec, p, T, seed=seed)).dataset, spec), p


@pytest.fixture(scope="module")
def m3_fit():
    ctx, _ = model3_data()
    return fit(ctx, n_starts=2, seed=0)


def test_hessian_of_quadratic():
    rng = np.random.default_rng(0)
    B = rng.normal(size=(5, 5))
    A = B @ B.T + 5 * np.eye(5)
    f = lambda th: -0.5 * th @ A @ th
    theta = rng.normal(size=5)
    np.testing.assert_allclose(numerical_hessian(f, theta), -A, rtol=1e-6, atol=1e-6 * np.abs(A).max())
    np.testing.assert_allclose(numerical_hessian(f, theta, grad=lambda th: -A @ th), -A, rtol=1e-6)
    assert numerical_hessian(lambda th: -0.5 * th[0] ** 2, np.zeros(1))[0, 0] == pytest.approx(-1.0, rel=1e-8)


def test_hessian_rejects_nonfinite_stencil():
    with pytest.raises(ValueError):
        numerical_hessian(lambda th: -np.inf if th[0] > 0 else 0.0, np.zeros(1))


def richardson_hessian(f, theta, h0=1e-2, levels=4):
    """Mixed central differences extrapolated in h (error O(h^2) per level)."""
    n = theta.size
    scale = np.maximum(np.abs(theta), 1.0)

    def D(h):
        H = np.empty((n, n))
        e = np.eye(n) * (h * scale)
        f0 = f(theta)
        for i in range(n):
            H[i, i] = (f(theta + e[i]) - 2 * f0 + f(theta - e[i])) / (h * scale[i]) ** 2
            for j in range(i):
                H[i, j] = H[j, i] = (
                    f(theta + e[i] + e[j]) - f(theta + e[i] - e[j]) - f(theta - e[i] + e[j]) + f(theta - e[i] - e[j])
                ) / (4 * h * h * scale[i] * scale[j])
        return H

    table = [D(h0 / 2**k) for k in range(levels)]
    for m in range(1, levels):
        table = [(4**m * table[k + 1] - table[k]) / (4**m - 1) for k in range(len(table) - 1)]
    return table[0]


def test_hessian_matches_richardson_on_model3_fit(m3_fit):
    ctx, theta = m3_fit.ctx, m3_fit.theta
    ref = richardson_hessian(ctx.loglik, theta)
    H = numerical_hessian(ctx.loglik, theta, grad=lambda t: ctx.loglik_and_grad(t)[1])
    assert np.linalg.norm(H - ref) <= 1e-4 * np.linalg.norm(ref)
    big = np.abs(ref) > 1e-3 * np.abs(ref).max()
    np.testing.assert_allclose(H[big], ref[big], rtol=1e-4)
    # function-value mode agrees too
    Hf = numerical_hessian(ctx.loglik, theta)
    assert np.linalg.norm(Hf - ref) <= 1e-4 * np.linalg.norm(ref)


def test_fit_recovers_model3(m3_fit):
    p = m3_fit.theta_hat
    assert m3_fit.converged
    assert abs(p.lam[0] - 0.3) < 0.1
    assert np.all(p.beta_star >= 0)
    assert m3_fit.covariance is not None
    cov = m3_fit.covariance
    ok = np.isfinite(np.diag(cov))
    sub = cov[np.ix_(ok, ok)]
    np.testing.assert_allclose(sub, sub.T, rtol=1e-8, atol=0)
    assert np.all(np.diag(sub) >= 0)
    assert m3_fit.loglik >= max(v for v in m3_fit.start_logliks if np.isfinite(v)) - 1e-9
    assert m3_fit.loglik >= m3_fit.ctx.loglik(default_init(m3_fit.ctx))


def test_fit_is_deterministic():
    ctx, _ = model3_data(T=200, L=5, seed=4)
    a, b = fit(ctx, n_starts=3, seed=7), fit(ctx, n_starts=3, seed=7)
    np.testing.assert_array_equal(a.theta, b.theta)
    assert a.loglik == b.loglik


def test_init_outside_bounds_is_projected():
    ctx, p = model3_data(T=200, L=5, seed=2)
    bad = p.replace(beta_star=-np.ones(6))
    res = fit(ctx, init=bad, n_starts=1)
    assert np.all(res.theta_hat.beta_star >= 0)


def test_noiseless_intercept_only():
    T = 100
    ds = make_dataset(T, y=np.full(T, 4.25))
    ctx = LikelihoodContext(ds, ModelSpec("constant_rho", 3))
    pins = {f"beta_star[{k}]": 0.0 for k in range(4)}
    res = fit(ctx, fixed=pins, n_starts=1, compute_cov=False)
    assert res.theta_hat.alpha0 == pytest.approx(4.25, abs=1e-6)
    # sigma runs towards 0: the likelihood is unbounded on noiseless data
    assert float(res.theta_hat.sigma) < 1e-3
    assert res.k == ctx.n_params - 4


def test_fit_errors():
    ds = make_dataset(10)
    with pytest.raises(FitError):
        fit(LikelihoodContext(ds, ModelSpec("constant_rho", 8)))


def test_pinned_refit_never_beats_free_fit():
    rng = np.random.default_rng(3)
    T, L = 300, 6
    part = PeriodPartition.single(START + np.arange(T))
    spec = ModelSpec("semi_markov", L, part)
    p = ParamVector.make(5.0, 1.5 * 0.8 ** np.arange(L + 1), [1.0, -0.2], 1.0)
    ctx = LikelihoodContext(simulate(SimulationConfig(spec, p, T, seed=3)).dataset, spec)
    pinned = fit(ctx, fixed={"lambda[1]": 0.0}, n_starts=1)
    free = fit(ctx, init=pinned.theta, n_starts=1)
    assert free.loglik >= pinned.loglik - 1e-9
    assert free.k == pinned.k + 1
    assert aic(free) - aic(pinned) == pytest.approx(2 - 2 * (free.loglik - pinned.loglik))


def test_aic_formula():
    assert aic(SimpleNamespace(k=2, loglik=-10.0)) == 24.0


def test_wald_examples(m3_fit):
    n = m3_fit.theta.size
    theta = np.zeros(n)
    theta[2] = 1.96
    fake = dataclasses.replace(m3_fit, theta=theta, covariance=np.eye(n))
    c = np.zeros(n)
    c[2] = 1.0
    w = wald_test(fake, c)
    assert w.z == pytest.approx(1.96) and w.se == 1.0
    assert w.p == pytest.approx(0.05, abs=1e-4)
    assert wald_test(fake, c, null_value=1.96).z == 0.0
    with pytest.raises(ValueError):
        wald_test(fake, np.zeros(n))
    with pytest.raises(ValueError):
        wald_test(fake, np.ones(n + 1))
    with pytest.raises(KeyError):
        wald_test(fake, {"nope": 1.0})


def test_wald_rejects_nonpositive_variance(m3_fit):
    n = m3_fit.theta.size
    V = np.eye(n)
    V[0, 0] = 0.0
    fake = dataclasses.replace(m3_fit, covariance=V)
    with pytest.raises(ValueError):
        wald_test(fake, np.eye(n)[0])


def test_logistic_delta_examples():
    assert logistic_delta(0.0, 1.0) == (0.5, 0.25)
    rho, se = logistic_delta(800.0, 1.0)
    assert rho == 0.0 and se == 0.0
    rho, se = logistic_delta(30.0, 2.0)
    assert rho < 1e-12 and se < 1e-11


def test_delta_rho_consistent_and_matches_bootstrap(m3_fit):
    rho, se = delta_rho(m3_fit)
    i = m3_fit.ctx.layout.index("logit_rho")
    assert rho == pytest.approx(1 / (1 + np.exp(-m3_fit.theta[i])), rel=1e-14)
    assert rho == pytest.approx(float(m3_fit.theta_hat.lam[0]), rel=1e-14)
    rng = np.random.default_rng(11)
    draws = rng.normal(m3_fit.theta[i], m3_fit.se[i], 500)
    boot = np.std(1 / (1 + np.exp(-draws)), ddof=1)
    assert se == pytest.approx(boot, rel=0.15)
    with pytest.raises(IndexError):
        delta_rho(m3_fit, period=2)


def test_delta_rho_period_constant_matches_bootstrap():
    T, L = 500, 6
    part = two_periods(T)
    spec = ModelSpec("period_constant_rho", L, part)
    p = ParamVector.make(5.0, 2.0 * 0.8 ** np.arange(L + 1), [1.0, -1.5], 1.0, alpha=[1.0])
    ctx = LikelihoodContext(simulate(SimulationConfig(spec, p, T, seed=5)).dataset, spec)
    res = fit(ctx, n_starts=2)
    lay = ctx.layout
    c = np.zeros(lay.size)
    c[lay.index("lambda0")] = c[lay.index("lambda[1]")] = 1.0
    rho, se = delta_rho(res, period=2)
    eta = c @ res.theta
    assert rho == pytest.approx(1 / (1 + np.exp(eta)), rel=1e-14)
    V = res.covariance[np.ix_(c != 0, c != 0)]
    draws = np.random.default_rng(2).multivariate_normal(res.theta[c != 0], V, 500) @ np.ones(2)
    boot = np.std(1 / (1 + np.exp(draws)), ddof=1)
    assert se == pytest.approx(boot, rel=0.15)
