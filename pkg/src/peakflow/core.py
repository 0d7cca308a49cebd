"""Domain types, configuration and shared errors."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np


class PeakflowError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PeakflowError, ValueError):
    """Invalid configuration; the message names the offending field."""

    def __init__(self, field_name: str, message: str):
        self.field = field_name
        super().__init__(f"{field_name}: {message}")


class IngestError(PeakflowError, ValueError):
    pass


class GapError(PeakflowError, ValueError):
    """Missing steps inside the modelling range.

    ``gaps`` lists ``(start, end)`` index ranges (inclusive) of missing steps,
    or timestamp strings when the gap is reported against a time axis.
    """

    def __init__(self, message: str, gaps: list):
        self.gaps = list(gaps)
        super().__init__(f"{message}; gaps: {self.gaps[:10]}{' ...' if len(self.gaps) > 10 else ''}")


class InsufficientDataError(PeakflowError, ValueError):
    pass


class DegenerateInputError(PeakflowError, ValueError):
    """A metric is undefined for the given input (e.g. zero variance)."""


def _frozen_array(values, dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def missing_runs(mask: np.ndarray) -> list[tuple[int, int]]:
    """Inclusive ``(start, end)`` index runs where ``mask`` is True."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return []
    padded = np.concatenate(([False], mask, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    return [(int(a), int(b) - 1) for a, b in zip(edges[::2], edges[1::2])]


@dataclass(frozen=True, eq=False)
class CatchmentSeries:
    """Aligned, regular-step rainfall and discharge for one catchment.

    ``rainfall`` is areal rainfall in mm per step and ``discharge`` the mean
    discharge (m3/s) over the trailing step. Timestamps are numpy
    ``datetime64[s]``. Missing values are not allowed here; ingestion reports
    them as gaps instead.
    """

    catchment_id: str
    timestamps: np.ndarray
    rainfall: np.ndarray
    discharge: np.ndarray
    step_hours: int = 6

    def __post_init__(self):
        if not isinstance(self.step_hours, (int, np.integer)) or self.step_hours < 1:
            raise ValueError(f"step_hours must be a positive integer, got {self.step_hours!r}")
        ts = np.array(self.timestamps, dtype="datetime64[s]")
        rain = np.asarray(self.rainfall, dtype=float)
        q = np.asarray(self.discharge, dtype=float)
        if ts.ndim != 1 or rain.shape != ts.shape or q.shape != ts.shape:
            raise ValueError(
                f"timestamps, rainfall and discharge must be 1-d with equal length "
                f"(got {ts.shape}, {rain.shape}, {q.shape})"
            )
        if ts.size > 1:
            step = np.timedelta64(int(self.step_hours) * 3600, "s")
            diffs = np.diff(ts)
            if np.any(diffs != step):
                bad = int(np.flatnonzero(diffs != step)[0])
                raise ValueError(
                    f"timestamps must be strictly increasing at {self.step_hours}h spacing; "
                    f"violation after index {bad} ({ts[bad]} -> {ts[bad + 1]})"
                )
        missing = np.isnan(rain) | np.isnan(q)
        if missing.any():
            raise GapError(f"catchment {self.catchment_id}: missing values", missing_runs(missing))
        if np.isinf(rain).any() or np.isinf(q).any():
            raise ValueError("rainfall and discharge must be finite")
        if (rain < 0).any():
            raise ValueError(f"negative rainfall at index {int(np.flatnonzero(rain < 0)[0])}")
        if (q < 0).any():
            raise ValueError(f"negative discharge at index {int(np.flatnonzero(q < 0)[0])}")
        object.__setattr__(self, "catchment_id", str(self.catchment_id))
        object.__setattr__(self, "step_hours", int(self.step_hours))
        object.__setattr__(self, "timestamps", _frozen_array(ts, "datetime64[s]"))
        object.__setattr__(self, "rainfall", _frozen_array(rain))
        object.__setattr__(self, "discharge", _frozen_array(q))

    def __len__(self) -> int:
        return int(self.timestamps.size)

    def slice(self, start: int, stop: int) -> "CatchmentSeries":
        return CatchmentSeries(
            self.catchment_id,
            self.timestamps[start:stop],
            self.rainfall[start:stop],
            self.discharge[start:stop],
            self.step_hours,
        )

    def with_values(self, rainfall=None, discharge=None) -> "CatchmentSeries":
        return CatchmentSeries(
            self.catchment_id,
            self.timestamps,
            self.rainfall if rainfall is None else rainfall,
            self.discharge if discharge is None else discharge,
            self.step_hours,
        )


@dataclass(frozen=True)
class SplitSpec:
    """Chronological train / validation / test split.

    The validation block is carved from the tail of the training block.
    """

    train_fraction: float = 0.7
    validation_fraction: float = 0.15

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction", f"must lie in (0, 1), got {self.train_fraction}")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise ConfigError(
                "validation_fraction", f"must lie in [0, 1), got {self.validation_fraction}"
            )

    def boundaries(self, n: int) -> tuple[int, int]:
        """Return ``(train_end, boundary_index)`` for a series of length ``n``.

        Rounding to 9 decimals first keeps e.g. ``0.7 * 1000`` from flooring to 699.
        """
        boundary = math.floor(round(self.train_fraction * n, 9))
        n_valid = math.floor(round(self.validation_fraction * boundary, 9))
        return boundary - n_valid, boundary


@dataclass(frozen=True)
class FrameworkConfig:
    # gradient-boosted trees
    learning_rate: float = 0.1
    max_depth: int = 5
    subsample: float = 0.95
    colsample: float = 0.90
    min_child_weight: float = 1.0
    l1_penalty: float = 0.0
    l2_penalty: float = 1.0
    min_split_loss: float = 0.0
    n_rounds: int = 400
    early_stop_patience: int = 30
    # peak random forest
    rf_n_trees: int = 700
    rf_max_depth: int = 8
    rf_min_samples_leaf: int = 5
    rf_feature_fraction: float = 0.80
    min_peak_rows: int = 10
    # feature windows
    rain_lags: int = 4
    q_lags: int = 3
    q_rollmean_w: int = 4
    q_rollstd_w: int = 5
    rain_rollmean_w: int = 2
    rain_rollstd_w: int = 5
    # peaks and fusion
    peak_quantile: float = 0.999
    fusion_weight: float = 0.95
    peak_mode: str = "forecast"
    max_offset: int = 4
    # data handling
    train_fraction: float = 0.7
    validation_fraction: float = 0.15
    step_hours: int = 6
    rng_seed: int = 0

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.train_fraction, self.validation_fraction)

    @property
    def max_history(self) -> int:
        return max(
            self.rain_lags,
            self.q_lags,
            self.q_rollmean_w,
            self.q_rollstd_w,
            self.rain_rollmean_w,
            self.rain_rollstd_w,
        )

    def replace(self, **changes) -> "FrameworkConfig":
        return validate_config({**self.to_dict(), **changes})

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    def overrides(self) -> dict[str, Any]:
        """Fields whose value differs from the defaults."""
        default = FrameworkConfig()
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) != getattr(default, f.name)}


_INT_FIELDS = {f.name for f in fields(FrameworkConfig) if f.type in ("int", int)}
_FLOAT_FIELDS = {f.name for f in fields(FrameworkConfig) if f.type in ("float", float)}
PEAK_MODES = ("forecast", "observed")

# (lower, upper, lower_inclusive, upper_inclusive)
_RANGES: dict[str, tuple[float, float, bool, bool]] = {
    "learning_rate": (0.0, 1.0, False, True),
    "subsample": (0.0, 1.0, False, True),
    "colsample": (0.0, 1.0, False, True),
    "rf_feature_fraction": (0.0, 1.0, False, True),
    "peak_quantile": (0.0, 1.0, False, False),
    "train_fraction": (0.0, 1.0, False, False),
    "validation_fraction": (0.0, 1.0, True, False),
    "min_child_weight": (0.0, math.inf, True, False),
    "l1_penalty": (0.0, math.inf, True, False),
    "l2_penalty": (0.0, math.inf, True, False),
    "min_split_loss": (0.0, math.inf, True, False),
    "fusion_weight": (0.0, math.inf, True, False),
    "max_depth": (1, math.inf, True, False),
    "rf_max_depth": (1, math.inf, True, False),
    "n_rounds": (1, math.inf, True, False),
    "early_stop_patience": (1, math.inf, True, False),
    "rf_n_trees": (1, math.inf, True, False),
    "rf_min_samples_leaf": (1, math.inf, True, False),
    "min_peak_rows": (1, math.inf, True, False),
    "rain_lags": (1, math.inf, True, False),
    "q_lags": (1, math.inf, True, False),
    "q_rollmean_w": (1, math.inf, True, False),
    "rain_rollmean_w": (1, math.inf, True, False),
    "q_rollstd_w": (2, math.inf, True, False),
    "rain_rollstd_w": (2, math.inf, True, False),
    "max_offset": (0, math.inf, True, False),
    "step_hours": (1, math.inf, True, False),
    "rng_seed": (0, math.inf, True, False),
}


def _in_range(value, lo, hi, lo_inc, hi_inc) -> bool:
    above = value >= lo if lo_inc else value > lo
    below = value <= hi if hi_inc else value < hi
    return above and below


def validate_config(config: FrameworkConfig | dict | None = None) -> FrameworkConfig:
    """Check every field of ``config`` and return a normalized FrameworkConfig.

    Accepts a FrameworkConfig, a (possibly partial) mapping of overrides, or
    None for the defaults. Unknown keys and out-of-range values raise
    ConfigError naming the field.
    """
    if config is None:
        raw: dict[str, Any] = {}
    elif isinstance(config, FrameworkConfig):
        raw = config.to_dict()
    else:
        raw = dict(config)
    known = {f.name for f in fields(FrameworkConfig)}
    for key in raw:
        if key not in known:
            raise ConfigError(str(key), "unknown configuration key")

    values = FrameworkConfig().to_dict()
    for key, value in raw.items():
        if key in _INT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                if isinstance(value, float) and value.is_integer():
                    value = int(value)
                else:
                    raise ConfigError(key, f"expected an integer, got {value!r}")
            value = int(value)
        elif key in _FLOAT_FIELDS:
            if isinstance(value, bool) or not isinstance(value, (int, float, np.integer, np.floating)):
                raise ConfigError(key, f"expected a number, got {value!r}")
            value = float(value)
            if not math.isfinite(value):
                raise ConfigError(key, f"must be finite, got {value!r}")
        elif key == "peak_mode":
            if value not in PEAK_MODES:
                raise ConfigError(key, f"must be one of {PEAK_MODES}, got {value!r}")
        values[key] = value

    for key, (lo, hi, lo_inc, hi_inc) in _RANGES.items():
        if not _in_range(values[key], lo, hi, lo_inc, hi_inc):
            lb = "[" if lo_inc else "("
            ub = "]" if hi_inc else ")"
            raise ConfigError(key, f"value {values[key]!r} outside {lb}{lo}, {hi}{ub}")
    return FrameworkConfig(**values)


def load_config(path: str | Path) -> FrameworkConfig:
    """Parse a flat JSON key-value config file; missing keys take defaults."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"{path}: not valid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<file>", f"{path}: expected a flat key-value object")
    for key, value in raw.items():
        if isinstance(value, (dict, list)):
            raise ConfigError(key, "nested values are not allowed in the config file")
    return validate_config(raw)


def dump_config(config: FrameworkConfig, path: str | Path | None = None) -> str:
    text = json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n"
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    return text


def parse_config(text: str) -> FrameworkConfig:
    return validate_config(json.loads(text))
