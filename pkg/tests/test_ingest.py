import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

from mmdlm.ingest import (
    build_soft_weights,
    impute_missing,
    moving_average,
    read_csv,
    read_series,
    smooth_exposure,
    write_csv,
)

from conftest import START, make_dataset


def test_impute_no_gaps_is_identity():
    v = np.random.default_rng(0).normal(size=30)
    out, mask = impute_missing(v)
    np.testing.assert_array_equal(out, v)
    assert not mask.any()


def test_impute_linear_interior_gap():
    v = 3.0 + 0.7 * np.arange(40)
    g = v.copy()
    g[17] = np.nan
    out, mask = impute_missing(g)
    assert out[17] == pytest.approx(v[17], abs=1e-6)
    assert mask.sum() == 1 and mask[17]


def test_impute_sinusoid_reconstruction():
    rng = np.random.default_rng(2024)
    t = np.arange(300)
    v = 10 * np.sin(2 * np.pi * t / 60) + rng.normal(0, 1, t.size)
    gaps = rng.choice(np.arange(1, 299), 30, replace=False)
    g = v.copy()
    g[gaps] = np.nan
    out, mask = impute_missing(g)
    rmse = np.sqrt(np.mean((out[gaps] - v[gaps]) ** 2))
    assert rmse < v.std() / 3
    np.testing.assert_array_equal(out[~mask], v[~mask])
    again, mask2 = impute_missing(out)
    np.testing.assert_array_equal(again, out)
    assert not mask2.any()


def test_impute_minimum_points():
    with pytest.raises(ValueError):
        impute_missing([1.0, np.nan, 2.0, 3.0])
    out, mask = impute_missing([0.0, 1.0, np.nan, 3.0, 4.0])
    assert out[2] == pytest.approx(2.0, abs=1e-12)


def test_moving_average_examples():
    np.testing.assert_allclose(moving_average(np.full(20, 3.5), 7), 3.5, rtol=0, atol=1e-15)
    imp = np.zeros(30)
    imp[12] = 1.0
    out = moving_average(imp, 7)
    expect = np.zeros(30)
    expect[9:16] = 1 / 7
    np.testing.assert_allclose(out, expect, atol=1e-15)
    with pytest.raises(ValueError):
        moving_average(imp, 6)
    with pytest.raises(ValueError):
        moving_average(imp, 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), T=st.integers(1, 60), half=st.integers(0, 5))
def test_moving_average_matches_direct_sum(seed, T, half):
    v = np.random.default_rng(seed).normal(0, 100, T)
    w = 2 * half + 1
    ref = np.empty(T)
    for i in range(T):
        h = min(half, i, T - 1 - i)
        ref[i] = sum(v[i - h : i + h + 1]) / (2 * h + 1)
    np.testing.assert_allclose(moving_average(v, w), ref, rtol=0, atol=1e-12 * max(1, np.abs(v).max()))


def test_double_smoothing_guard():
    ds = make_dataset(30)
    once = smooth_exposure(ds, 7)
    assert once.exposure_smoothing == 7
    with pytest.raises(ValueError):
        smooth_exposure(once, 7)
    twice = smooth_exposure(once, 7, force=True)
    assert not np.allclose(twice.x, once.x)


def test_soft_weight_anchors():
    dates = np.datetime64("2021-10-30") + np.arange(6)
    share = np.array([0.9, 0.2, 0.4, 1.3, -0.1, 0.5])
    w = build_soft_weights(dates, share, "2021-11-01", "2021-11-03")
    np.testing.assert_allclose(w[0], [1, 0])
    np.testing.assert_allclose(w[3], [0.0, 1.0])  # clamped
    np.testing.assert_allclose(w[2], [0.6, 0.4])
    np.testing.assert_allclose(w[4], [1.0, 0.0])  # anchor day itself, clamped from -0.1
    np.testing.assert_allclose(w[5], [0, 1])
    np.testing.assert_allclose(w.sum(axis=1), 1.0)
    with pytest.raises(ValueError):
        build_soft_weights(dates, share, "2021-11-03", "2021-11-01")
    share[2] = np.nan
    with pytest.raises(ValueError):
        build_soft_weights(dates, share, "2021-11-01", "2021-11-03")


def test_read_series(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("date,value\n2021-01-03,3\n2021-01-01,1\n2021-01-02,\n2021-01-05,5\n")
    dates, vals = read_series(p)
    assert str(dates[0]) == "2021-01-01" and dates.size == 5
    np.testing.assert_array_equal(np.isnan(vals), [False, True, False, True, False])
    p.write_text("date,value\n2021-01-01,1\n2021-01-01,2\n")
    with pytest.raises(ValueError):
        read_series(p)
    p.write_text("date,value\n2021-01-01,1\n2021-01-02,\n")
    with pytest.raises(ValueError):
        read_series(p)
    p.write_text("day,value\n2021-01-01,1\n")
    with pytest.raises(ValueError):
        read_series(p)
    with pytest.raises(FileNotFoundError):
        read_series(tmp_path / "missing.csv")


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), scale=st.sampled_from([1e-8, 1.0, 1e6]))
def test_csv_round_trip(tmp_path_factory, seed, scale):
    rng = np.random.default_rng(seed)
    df = pd.DataFrame({"date": pd.date_range("2020-06-16", periods=20), "a": rng.normal(0, scale, 20), "b": np.arange(20)})
    path = tmp_path_factory.mktemp("rt") / "t.csv"
    write_csv(path, df)
    back = read_csv(path)
    # 12 significant digits on the first write
    np.testing.assert_allclose(back["a"], df["a"], rtol=5e-12, atol=0)
    assert (back["date"] == df["date"]).all()
    # an emitted file is a fixed point: reading and re-emitting loses nothing
    write_csv(path, back)
    again = read_csv(path)
    np.testing.assert_allclose(again["a"], back["a"], rtol=1e-12, atol=0)
    assert path.read_text() == path.read_text()
    assert not [f for f in path.parent.iterdir() if f.name.endswith(".tmp")]
