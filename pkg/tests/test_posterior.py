import itertools
import math

import numpy as np
import pytest

from mmdlm.core import ModelSpec, ParamVector, PeriodPartition
from mmdlm.lasting import lasting_law, LogisticInTau
from mmdlm.likelihood import LikelihoodContext, conditional_mean
from mmdlm.posterior import band, posterior_all, posterior_law, posterior_summaries

from conftest import START, make_dataset, random_params, two_periods
from oracles import brute_posterior, normal_pdf, pmf, rho_fn


def test_flat_emission_gives_prior():
    ds = make_dataset(40, seed=3)
    L = 6
    part = PeriodPartition.single(ds.dates)
    ctx = LikelihoodContext(ds, ModelSpec("semi_markov", L, part))
    p = ParamVector.make(2.0, np.zeros(L + 1), [0.4, -0.2], 3.0)
    post = posterior_all(ctx, p)
    for t in range(40):
        K = min(t, L)
        prior = np.array(pmf(rho_fn(ctx.spec, p, 0), K))
        np.testing.assert_allclose(post.pmf[t, : K + 1], prior, rtol=0, atol=1e-12)
        np.testing.assert_allclose(posterior_law(ctx, t, p), prior, rtol=0, atol=1e-12)


def test_point_prior_gives_point_posterior():
    ds = make_dataset(30, seed=1)
    L, k = 6, 3
    part = PeriodPartition.single(ds.dates)
    ctx = LikelihoodContext(ds, ModelSpec("semi_markov", L, part))
    # eta > 0 (stay) before k, eta << 0 (leave) at k
    lam1 = -700.0 / (k - 0.5)
    p = ParamVector.make(2.0, np.ones(L + 1), [700.0, lam1], 3.0)
    post = posterior_all(ctx, p)
    for t in range(k, 30):
        expect = np.zeros(L + 1)
        expect[k] = 1.0
        np.testing.assert_allclose(post.pmf[t], expect, atol=1e-12)


@pytest.mark.parametrize("variant", ["constant_rho", "semi_markov", "period_constant_rho"])
def test_matches_enumeration(variant):
    rng = np.random.default_rng(4)
    T, L = 8, 3
    ds = make_dataset(T, seed=5)
    spec = ModelSpec(variant, L, None if variant == "constant_rho" else two_periods(T))
    ctx = LikelihoodContext(ds, spec)
    p = random_params(spec, ctx.n_cov, rng)
    post = posterior_all(ctx, p)
    for t in range(T):
        ref = brute_posterior(ds, spec, p, t)
        np.testing.assert_allclose(post.pmf[t, : ref.size], ref, rtol=0, atol=1e-12)
        m, v = posterior_summaries(ref)
        l = np.arange(ref.size)
        assert m[0] == pytest.approx(l @ ref, abs=1e-12)
        assert post.mean[t] == pytest.approx(l @ ref, abs=1e-12)
        assert post.var[t] == pytest.approx(l**2 @ ref - (l @ ref) ** 2, abs=1e-12)


def test_hard_stratified_uses_day_stratum():
    rng = np.random.default_rng(8)
    T, L = 10, 3
    ds = make_dataset(T, seed=2)
    spec = ModelSpec("hard_stratified", L, two_periods(T))
    ctx = LikelihoodContext(ds, spec)
    p = random_params(spec, 0, rng)
    post = posterior_all(ctx, p)
    for t in range(T):
        j = int(ctx.codes[t])
        K = min(t, L)
        g = pmf(rho_fn(spec, p, j), K)
        w = [g[l] * normal_pdf(ds.y[t], conditional_mean(ctx, t, l, p), p.sigma[j]) for l in range(K + 1)]
        np.testing.assert_allclose(post.pmf[t, : K + 1], np.array(w) / sum(w), atol=1e-12)
        assert post.stratum[t] == j


def test_soft_mixed_day_marginal():
    rng = np.random.default_rng(6)
    T, L = 9, 3
    ds = make_dataset(T, seed=9, x_strata=rng.gamma(2, 1, (2, T)))
    share = np.linspace(0, 1, T)
    w = np.column_stack([1 - share, share])
    spec = ModelSpec("soft_stratified", L, two_periods(T), soft_weights=w)
    ctx = LikelihoodContext(ds, spec)
    p = random_params(spec, 0, rng)
    for j in (0, 1):
        post = posterior_all(ctx, p, stratum=j)
        for t in range(1, T - 1):
            K = min(t, L)
            laws = [pmf(rho_fn(spec, p, s), K) for s in (0, 1)]
            sd = math.sqrt(w[t] @ p.sigma**2)
            marg = np.zeros(K + 1)
            for l0, l1 in itertools.product(range(K + 1), repeat=2):
                marg[(l0, l1)[j]] += laws[0][l0] * laws[1][l1] * normal_pdf(ds.y[t], conditional_mean(ctx, t, [l0, l1], p), sd)
            np.testing.assert_allclose(post.pmf[t, : K + 1], marg / marg.sum(), atol=1e-12)


def test_normalisation_and_bounds():
    rng = np.random.default_rng(1)
    T, L = 60, 8
    ds = make_dataset(T, seed=4)
    spec = ModelSpec("semi_markov", L, two_periods(T))
    ctx = LikelihoodContext(ds, spec)
    post = posterior_all(ctx, random_params(spec, ctx.n_cov, rng))
    np.testing.assert_allclose(post.pmf.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(post.mean >= 0) and np.all(post.mean <= np.minimum(np.arange(T), L) + 1e-12)
    assert np.all(post.var >= 0)
    assert np.all(post.pmf[np.arange(L + 1) > np.minimum(np.arange(T), L)[:, None]] == 0)


def test_shift_invariance():
    rng = np.random.default_rng(2)
    T, L = 30, 5
    ds = make_dataset(T, seed=6)
    ctx = LikelihoodContext(ds, ModelSpec("constant_rho", L))
    p = random_params(ctx.spec, 0, rng)
    shifted = LikelihoodContext(make_dataset(T, seed=6, y=ds.y + 1e3), ctx.spec)
    a = posterior_all(ctx, p)
    b = posterior_all(shifted, p.replace(alpha0=p.alpha0 + 1e3))
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-9)


def test_concentrates_as_sigma_shrinks():
    rng = np.random.default_rng(0)
    T, L = 25, 5
    ds = make_dataset(T, seed=3)
    ctx = LikelihoodContext(ds, ModelSpec("constant_rho", L))
    p = ParamVector.make(10.0, rng.uniform(0.5, 1.5, L + 1), [0.3], 1e-3)
    post = posterior_all(ctx, p)
    for t in range(L, T):
        best = np.argmin([(ds.y[t] - conditional_mean(ctx, t, l, p)) ** 2 for l in range(L + 1)])
        assert post.pmf[t, best] == pytest.approx(1.0, abs=1e-9)


def test_summary_examples():
    m, v = posterior_summaries(np.eye(8)[5])
    assert (m[0], v[0]) == (5.0, 0.0)
    m, v = posterior_summaries([1 / 3, 1 / 3, 1 / 3])
    assert m[0] == pytest.approx(1.0) and v[0] == pytest.approx(2 / 3)


def test_band_kinds():
    lo, hi = band([3.0], [4.0])
    assert (lo[0], hi[0]) == (-1.0, 7.0)
    lo, hi = band([3.0], [4.0], "sd")
    assert (lo[0], hi[0]) == (1.0, 5.0)
    with pytest.raises(ValueError):
        band([1.0], [1.0], "iqr")
