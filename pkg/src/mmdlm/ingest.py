"""Reading, cleaning and writing daily series.

CSV schema for inputs: a header row with ``date`` (ISO-8601) and ``value``
columns; an empty ``value`` cell marks a missing day. Outputs use ISO dates
and 12 significant digits and are written atomically (temp file, then rename).
"""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import ArrayLike, NDArray
from scipy.interpolate import CubicSpline, make_smoothing_spline

from mmdlm.core import TimeSeriesDataset, to_day

__all__ = [
    "FLOAT_FORMAT",
    "read_series",
    "write_csv",
    "read_csv",
    "write_json",
    "atomic_write",
    "impute_missing",
    "moving_average",
    "smooth_exposure",
    "build_soft_weights",
]

FLOAT_FORMAT = "%.12g"


def read_series(path: str | os.PathLike) -> tuple[NDArray, NDArray]:
    """Read a ``date,value`` CSV into (dates, values) sorted by date; NaN marks gaps.

    Gaps in the calendar (absent rows) are expanded into NaN days, so the
    result is always on a contiguous daily grid.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"series file not found: {path}")
    df = pd.read_csv(path, dtype={"date": str})
    missing = {"date", "value"} - set(df.columns)
    if missing:
        raise ValueError(f"{path}: missing column(s) {', '.join(sorted(missing))}")
    try:
        dates = pd.to_datetime(df["date"], format="ISO8601").to_numpy().astype("datetime64[D]")
    except (ValueError, TypeError) as exc:
        raise ValueError(f"{path}: unparseable date ({exc})") from exc
    values = pd.to_numeric(df["value"], errors="raise").to_numpy(dtype=float)
    if len(np.unique(dates)) != dates.size:
        raise ValueError(f"{path}: duplicate dates")
    if np.count_nonzero(np.isfinite(values)) < 2:
        raise ValueError(f"{path}: fewer than 2 non-missing values")
    order = np.argsort(dates)
    dates, values = dates[order], values[order]
    grid = np.arange(dates[0], dates[-1] + 1)
    full = np.full(grid.size, np.nan)
    full[(dates - dates[0]).astype(int)] = values
    return grid, full


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write ``text`` to ``path`` via a temp file in the same directory and a rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def _iso_dates(df: pd.DataFrame) -> pd.DataFrame:
    out = df.copy()
    for col in out.columns:
        if np.issubdtype(out[col].dtype, np.datetime64):
            out[col] = out[col].dt.strftime("%Y-%m-%d")
    return out


def write_csv(path: str | os.PathLike, df: pd.DataFrame) -> None:
    """Atomically write a table with ISO dates and 12 significant digits."""
    atomic_write(path, _iso_dates(df).to_csv(index=False, float_format=FLOAT_FORMAT, lineterminator="\n"))


def read_csv(path: str | os.PathLike) -> pd.DataFrame:
    """Read a table written by :func:`write_csv` (a ``date`` column is parsed)."""
    df = pd.read_csv(path)
    if "date" in df.columns:
        df["date"] = pd.to_datetime(df["date"], format="ISO8601")
    return df


def _jsonable(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return float(FLOAT_FORMAT % v) if np.isfinite(v) else None
    if isinstance(obj, np.datetime64):
        return str(obj.astype("datetime64[D]"))
    return obj


def write_json(path: str | os.PathLike, payload: dict) -> None:
    """Atomically write JSON; floats get 12 significant digits, non-finite become null."""
    atomic_write(path, json.dumps(_jsonable(payload), indent=2) + "\n")


def impute_missing(values: ArrayLike) -> tuple[NDArray, NDArray]:
    """Fill NaN days with a cubic smoothing spline over the day index.

    The smoothing parameter is chosen by generalized cross-validation. With
    exactly four observed points (too few for GCV) a natural interpolating
    cubic is used. Observed values are returned untouched.

    Returns
    -------
    filled : array
    imputed : bool array
        True on the days that were filled.
    """
    v = np.asarray(values, dtype=float)
    miss = ~np.isfinite(v)
    obs = np.flatnonzero(~miss)
    if obs.size < 4:
        raise ValueError(f"imputation needs at least 4 observed points, got {obs.size}")
    out = v.copy()
    if not miss.any():
        return out, miss
    t = obs.astype(float)
    if obs.size == 4:
        spline = CubicSpline(t, v[obs], bc_type="natural")
    else:
        spline = make_smoothing_spline(t, v[obs])
    out[miss] = spline(np.flatnonzero(miss).astype(float))
    return out, miss


def moving_average(values: ArrayLike, window: int = 7) -> NDArray:
    """Centered moving average; near the ends the window shrinks symmetrically.

    Day ``i`` averages days ``i-h .. i+h`` with ``h = min(window // 2, i, T-1-i)``,
    so the first and last days are left as they are.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError("window must be a positive odd integer")
    v = np.asarray(values, dtype=float)
    T = v.size
    csum = np.concatenate([[0.0], np.cumsum(v)])
    i = np.arange(T)
    h = np.minimum(window // 2, np.minimum(i, T - 1 - i))
    return (csum[i + h + 1] - csum[i - h]) / (2 * h + 1)


def smooth_exposure(dataset: TimeSeriesDataset, window: int = 7, force: bool = False) -> TimeSeriesDataset:
    """Moving-average the exposure(s), recording the window on the dataset.

    Smoothing is not idempotent, so a dataset that already carries a window
    is rejected unless ``force`` is set.
    """
    if dataset.exposure_smoothing is not None and not force:
        raise ValueError(
            f"exposure already smoothed with window {dataset.exposure_smoothing}; pass force=True to smooth again"
        )
    xs = None if dataset.x_strata is None else np.vstack([moving_average(r, window) for r in dataset.x_strata])
    return TimeSeriesDataset(
        dates=dataset.dates,
        y=dataset.y,
        x=moving_average(dataset.x, window),
        x_strata=xs,
        w=dataset.w,
        w_names=dataset.w_names,
        mask=dataset.mask,
        exposure_smoothing=window,
    )


def build_soft_weights(dates: ArrayLike, new_share: ArrayLike, all_old_before, all_new_after) -> NDArray:
    """Per-day (old, new) stratum weights from a new-variant share series.

    The new share is 0 strictly before ``all_old_before``, 1 strictly after
    ``all_new_after`` and the observed share clamped to [0, 1] in between.
    """
    a, b = to_day(all_old_before), to_day(all_new_after)
    if b < a:
        raise ValueError(f"anchors out of order: {a} is after {b}")
    d = np.array([to_day(x) for x in np.atleast_1d(dates)], dtype="datetime64[D]")
    share = np.asarray(new_share, dtype=float)
    if share.shape != d.shape:
        raise ValueError("one share per date is required")
    new = np.clip(share, 0.0, 1.0)
    new = np.where(d < a, 0.0, np.where(d > b, 1.0, new))
    if not np.all(np.isfinite(new)):
        bad = d[~np.isfinite(new)][0]
        raise ValueError(f"missing new-variant share inside the anchor window (first at {bad})")
    return np.column_stack([1.0 - new, new])
