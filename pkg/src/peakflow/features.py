"""Lag features, trailing rolling statistics and the one-step-ahead design matrix."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import CatchmentSeries, FrameworkConfig, InsufficientDataError


def lag(values, l: int) -> np.ndarray:
    """``out[t] = values[t - l]``; the first ``l`` entries are NaN (unavailable)."""
    x = np.asarray(values, dtype=float)
    if l < 1:
        raise ValueError(f"lag order must be >= 1, got {l}")
    if l >= x.size:
        raise ValueError(f"lag order {l} must be shorter than the series ({x.size})")
    out = np.full(x.size, np.nan)
    out[l:] = x[:-l]
    return out


def rolling_stat(values, w: int, stat: str = "mean") -> np.ndarray:
    """Trailing-window statistic over ``values[t-w+1 .. t]``.

    ``stat`` is ``"mean"`` or ``"std"`` (sample standard deviation, ddof=1).
    The first ``w - 1`` entries are NaN.
    """
    x = np.asarray(values, dtype=float)
    if stat not in ("mean", "std"):
        raise ValueError(f"unknown rolling statistic {stat!r}")
    if w < 1 or (stat == "std" and w < 2):
        raise ValueError(f"window {w} too short for rolling {stat}")
    if w > x.size:
        raise ValueError(f"window {w} longer than the series ({x.size})")
    out = np.full(x.size, np.nan)
    windows = np.lib.stride_tricks.sliding_window_view(x, w)
    if stat == "mean":
        out[w - 1:] = windows.mean(axis=1)
    else:
        # shifting by the window's first value keeps constant windows at exactly 0
        out[w - 1:] = (windows - windows[:, :1]).std(axis=1, ddof=1)
    return out


def feature_columns(config: FrameworkConfig) -> tuple[str, ...]:
    cols = ["rain"]
    cols += [f"rain_lag{l}" for l in range(1, config.rain_lags + 1)]
    cols += [f"q_lag{l}" for l in range(1, config.q_lags + 1)]
    cols += [
        f"q_rollmean{config.q_rollmean_w}",
        f"q_rollstd{config.q_rollstd_w}",
        f"rain_rollmean{config.rain_rollmean_w}",
        f"rain_rollstd{config.rain_rollstd_w}",
    ]
    return tuple(cols)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    """Supervised rows: features observed at ``row_timestamps`` and the
    discharge one step later as target."""

    X: np.ndarray
    y: np.ndarray
    columns: tuple[str, ...]
    row_timestamps: np.ndarray
    target_timestamps: np.ndarray

    def __post_init__(self):
        if self.X.ndim != 2 or self.X.shape[1] != len(self.columns):
            raise ValueError("X must be 2-d with one column per feature name")
        if not (self.X.shape[0] == self.y.size == self.row_timestamps.size == self.target_timestamps.size):
            raise ValueError("rows, targets and timestamps must have equal length")
        for arr in (self.X, self.y, self.row_timestamps, self.target_timestamps):
            arr.setflags(write=False)

    def __len__(self):
        return int(self.y.size)

    def take(self, index) -> "FeatureMatrix":
        index = np.asarray(index)
        return FeatureMatrix(
            self.X[index].copy(),
            self.y[index].copy(),
            self.columns,
            self.row_timestamps[index].copy(),
            self.target_timestamps[index].copy(),
        )

    @staticmethod
    def concat(parts: list["FeatureMatrix"]) -> "FeatureMatrix":
        parts = [p for p in parts if len(p)]
        if not parts:
            raise InsufficientDataError("no rows to concatenate")
        cols = parts[0].columns
        if any(p.columns != cols for p in parts):
            raise ValueError("cannot concatenate matrices with different columns")
        return FeatureMatrix(
            np.vstack([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            cols,
            np.concatenate([p.row_timestamps for p in parts]),
            np.concatenate([p.target_timestamps for p in parts]),
        )

    def to_csv(self, path: str | Path) -> None:
        issue = np.datetime_as_string(self.row_timestamps, unit="s")
        valid = np.datetime_as_string(self.target_timestamps, unit="s")
        with Path(path).open("w", encoding="utf-8", newline="") as fh:
            fh.write(",".join(("timestamp", "target_timestamp", *self.columns, "target")) + "\n")
            for i in range(len(self)):
                vals = ",".join(repr(float(v)) for v in self.X[i])
                fh.write(f"{issue[i]},{valid[i]},{vals},{float(self.y[i])!r}\n")


def build_matrix(block: CatchmentSeries, config: FrameworkConfig) -> FeatureMatrix:
    """Assemble the design matrix for one contiguous block.

    Row ``t`` holds current rainfall, rainfall and discharge lags and the
    trailing rolling statistics, all computed from indices ``<= t``; the target
    is discharge at ``t + 1``. The first ``config.max_history`` rows and the
    last row (no target) are dropped.
    """
    n = len(block)
    start = config.max_history
    if n < start + 2:
        raise InsufficientDataError(
            f"block of {n} steps is too short: needs more than {start + 1} steps"
        )
    rain = np.asarray(block.rainfall, dtype=float)
    q = np.asarray(block.discharge, dtype=float)
    cols = [rain]
    cols += [lag(rain, l) for l in range(1, config.rain_lags + 1)]
    cols += [lag(q, l) for l in range(1, config.q_lags + 1)]
    cols += [
        rolling_stat(q, config.q_rollmean_w, "mean"),
        rolling_stat(q, config.q_rollstd_w, "std"),
        rolling_stat(rain, config.rain_rollmean_w, "mean"),
        rolling_stat(rain, config.rain_rollstd_w, "std"),
    ]
    X = np.column_stack(cols)[start:n - 1]
    y = q[start + 1:]
    ok = ~np.isnan(X).any(axis=1) & ~np.isnan(y)
    if not ok.any():
        raise InsufficientDataError("no complete feature rows in block")
    return FeatureMatrix(
        np.ascontiguousarray(X[ok]),
        y[ok].copy(),
        feature_columns(config),
        block.timestamps[start:n - 1][ok].copy(),
        block.timestamps[start + 1:][ok].copy(),
    )
