"""Independent reference computations used by several test modules.

Everything here is written from the model definition in plain loops and
linear space, without touching the package's vectorised code paths.
"""

import itertools
import math

import numpy as np


def period_code(dates, cutpoints):
    """0-based period for (t_{j-1}, t_j] intervals, first one closed on the left."""
    out = []
    for d in dates:
        for j in range(len(cutpoints) - 1):
            if (j == 0 and d == cutpoints[0]) or (cutpoints[j] < d <= cutpoints[j + 1]):
                out.append(j)
                break
        else:
            raise ValueError("outside span")
    return out


def rho_fn(spec, p, j):
    """tau -> transition probability for period/stratum j."""
    v = spec.variant.value
    lam = np.asarray(p.lam, float)
    logistic = lambda eta: 1.0 / (1.0 + math.exp(eta))
    if v == "constant_rho":
        return lambda tau: float(lam.ravel()[0])
    if v == "semi_markov":
        return lambda tau: logistic(lam[0] + lam[1 + j] * tau)
    if v == "period_constant_rho":
        return lambda tau: logistic(lam[0] + (lam[j] if j > 0 else 0.0))
    lam = lam.reshape(spec.J, 2)
    return lambda tau: logistic(lam[j, 0] + lam[j, 1] * tau)


def pmf(rho, K):
    out, stay = [], 1.0
    for l in range(K):
        out.append(rho(l) * stay)
        stay *= 1.0 - rho(l)
    out.append(stay)
    return out


def normal_pdf(y, mu, sd):
    return math.exp(-0.5 * ((y - mu) / sd) ** 2) / (sd * math.sqrt(2 * math.pi))


def brute_day_likelihoods(ds, spec, p):
    """Linear-space per-day marginal likelihoods."""
    T, L = ds.T, spec.lag_max
    v = spec.variant.value
    codes = period_code(ds.dates, spec.partition.cutpoints) if spec.partition is not None else [0] * T
    W = np.asarray(ds.w, float)
    if v in ("semi_markov", "period_constant_rho") and spec.period_intercepts:
        W = np.column_stack([W] + [[1.0 if c == j else 0.0 for c in codes] for j in range(1, spec.J)])
    alpha = np.asarray(p.alpha, float)
    out = []
    for t in range(T):
        K = min(t, L)
        wa = float(W[t] @ alpha) if alpha.size else 0.0

        def lagsum(beta, x, l):
            return sum(beta[tau] * x[t - tau] for tau in range(l + 1))

        if not spec.variant.stratified:
            a0, beta, sd = float(np.ravel(p.alpha0)[0]), np.ravel(p.beta_star), float(np.ravel(p.sigma)[0])
            g = pmf(rho_fn(spec, p, codes[t]), K)
            out.append(sum(g[l] * normal_pdf(ds.y[t], a0 + wa + lagsum(beta, ds.x, l), sd) for l in range(K + 1)))
            continue
        a0 = np.ravel(p.alpha0)
        beta = np.asarray(p.beta_star, float).reshape(spec.J, L + 1)
        sig = np.ravel(p.sigma)
        xs = [ds.stratum_exposure(j) for j in range(spec.J)]
        if v == "hard_stratified":
            pi = [1.0 if j == codes[t] else 0.0 for j in range(spec.J)]
        else:
            pi = list(spec.soft_weights[t])
        act = [j for j in range(spec.J) if pi[j] > 0]
        sd = math.sqrt(sum(pi[j] * sig[j] ** 2 for j in act))
        laws = {j: pmf(rho_fn(spec, p, j), K) for j in act}
        total = 0.0
        for ls in itertools.product(range(K + 1), repeat=len(act)):
            prob, mu = 1.0, wa
            for j, l in zip(act, ls):
                prob *= laws[j][l]
                mu += pi[j] * (a0[j] + lagsum(beta[j], xs[j], l))
            total += prob * normal_pdf(ds.y[t], mu, sd)
        out.append(total)
    return np.array(out)


def brute_posterior(ds, spec, p, t):
    """Posterior of L(t) for a pooled model by direct enumeration."""
    L = spec.lag_max
    K = min(t, L)
    codes = period_code(ds.dates, spec.partition.cutpoints) if spec.partition is not None else [0] * ds.T
    W = list(ds.w[t])
    if spec.variant.value in ("semi_markov", "period_constant_rho") and spec.period_intercepts:
        W += [1.0 if codes[t] == j else 0.0 for j in range(1, spec.J)]
    wa = sum(a * w for a, w in zip(p.alpha, W))
    g = pmf(rho_fn(spec, p, codes[t]), K)
    a0, beta, sd = float(np.ravel(p.alpha0)[0]), np.ravel(p.beta_star), float(np.ravel(p.sigma)[0])
    mu = [a0 + wa + sum(beta[k] * ds.x[t - k] for k in range(l + 1)) for l in range(K + 1)]
    w = [g[l] * normal_pdf(ds.y[t], mu[l], sd) for l in range(K + 1)]
    s = sum(w)
    return np.array([v / s for v in w])
