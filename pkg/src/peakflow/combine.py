"""Fusing the boosted baseline with the peak forest."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True, eq=False)
class CombinedForecast:
    baseline: np.ndarray
    peak_adjusted: np.ndarray
    adjusted_indices: np.ndarray

    @property
    def is_adjusted(self) -> np.ndarray:
        mask = np.zeros(self.baseline.size, dtype=bool)
        mask[self.adjusted_indices] = True
        return mask


def identify_peak_indices(baseline, threshold: float, observed=None, mode: str = "forecast") -> np.ndarray:
    """Indices to adjust: where the baseline forecast (``mode="forecast"``) or
    the observation (``mode="observed"``, leaks the target) exceeds ``threshold``."""
    if mode == "forecast":
        ref = np.asarray(baseline, dtype=float)
    elif mode == "observed":
        if observed is None:
            raise ValueError("observed values are required in 'observed' mode")
        ref = np.asarray(observed, dtype=float)
    else:
        raise ValueError(f"unknown peak identification mode {mode!r}")
    if not np.isfinite(ref).all():
        raise ValueError("non-finite values in peak identification input")
    return np.flatnonzero(ref > threshold)


def fuse(baseline, indices, peak_predictions, weight: float = 0.95) -> CombinedForecast:
    """``fused[i] = baseline[i] + weight * peak[j]`` for the j-th identified
    index ``i``; every other entry is the baseline, bit for bit."""
    base = np.array(baseline, dtype=float)
    idx = np.asarray(indices, dtype=np.int64).ravel()
    peak = np.asarray(peak_predictions, dtype=float).ravel()
    if idx.size != peak.size:
        raise ValueError(
            f"{idx.size} peak indices but {peak.size} peak predictions; forecasts are misaligned"
        )
    if idx.size and (idx.min() < 0 or idx.max() >= base.size):
        raise IndexError("peak index outside the forecast vector")
    if np.unique(idx).size != idx.size:
        raise ValueError("duplicate peak indices")
    fused = base.copy()
    if weight != 0:
        fused[idx] = base[idx] + weight * peak
    for arr in (base, fused, idx):
        arr.setflags(write=False)
    return CombinedForecast(base, fused, idx)


def write_forecast_csv(path: str | Path, timestamps, observed, forecast: CombinedForecast) -> None:
    ts = np.datetime_as_string(np.asarray(timestamps, dtype="datetime64[s]"), unit="s")
    adjusted = forecast.is_adjusted
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("timestamp,observed,baseline,fused,is_adjusted\n")
        for t, o, b, f, a in zip(ts, observed, forecast.baseline, forecast.peak_adjusted, adjusted):
            fh.write(f"{t},{float(o)!r},{float(b)!r},{float(f)!r},{int(a)}\n")
