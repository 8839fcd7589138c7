import numpy as np
import pytest

from mmdlm.core import ModelSpec, ParamVector, PeriodPartition, TimeSeriesDataset

START = np.datetime64("2020-06-16")


def make_dataset(T, seed=0, x=None, y=None, start=START, **kw):
    rng = np.random.default_rng(seed)
    x = rng.gamma(2.0, 2.0, T) if x is None else x
    y = rng.normal(10.0, 3.0, T) if y is None else y
    return TimeSeriesDataset(start + np.arange(T), y, x, **kw)


def two_periods(T, start=START, split=None):
    split = T // 2 if split is None else split
    return PeriodPartition([start, start + split - 1, start + T - 1], ("first", "second"))


def random_params(spec, n_cov, rng):
    L1, J = spec.lag_max + 1, spec.J
    v = spec.variant.value
    if spec.variant.stratified:
        return ParamVector.make(
            rng.normal(5, 2, J), rng.uniform(0, 2, (J, L1)), rng.normal(0, 1, (J, 2)), rng.uniform(0.5, 3, J),
            rng.normal(0, 1, n_cov),
        )
    lam = {
        "constant_rho": rng.uniform(0.05, 0.95, 1),
        "semi_markov": rng.normal(0, 1, J + 1),
        "period_constant_rho": rng.normal(0, 1, J),
    }[v]
    return ParamVector.make(rng.normal(5, 2), rng.uniform(0, 2, L1), lam, rng.uniform(0.5, 3), rng.normal(0, 1, n_cov))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria outcomes, echoed at the end of the run
ACCEPTANCE = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for the calling test, then assert it."""

    def record(label, ok, detail=""):
        ok = bool(ok)
        line = f"{'PASS' if ok else 'FAIL'} [{label}] {detail}".rstrip()
        ACCEPTANCE.append(line)
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
