"""Reading per-catchment CSV series, 6-hour resampling, alignment and splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .core import (
    CatchmentSeries,
    FrameworkConfig,
    GapError,
    IngestError,
    InsufficientDataError,
    SplitSpec,
    missing_runs,
)

HOUR = np.timedelta64(3600, "s")
MISSING_TOKENS = {"", "nan", "na", "null", "none"}


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """Timestamped values; NaN marks a missing observation."""

    timestamps: np.ndarray  # datetime64[s]
    values: np.ndarray

    def __len__(self):
        return int(self.timestamps.size)


def _parse_timestamp(text: str) -> np.datetime64:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    dt = datetime.fromisoformat(text)
    if dt.tzinfo is not None:
        dt = dt.astimezone(timezone.utc).replace(tzinfo=None)
    return np.datetime64(dt, "s")


def read_series(path: str | Path) -> TimeSeries:
    """Read a two-column ``timestamp,value`` CSV file.

    Values spelled ``NaN`` (or empty) become NaN, the explicit missing marker.
    Raises IngestError with the 1-based line number on parse failures,
    duplicate timestamps and non-increasing timestamps.
    """
    path = Path(path)
    if not path.exists():
        raise IngestError(f"{path}: file not found")
    stamps: list[np.datetime64] = []
    values: list[float] = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip().lower() for h in header[:2]] != ["timestamp", "value"]:
            raise IngestError(f"{path}:1: expected header 'timestamp,value', got {header!r}")
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise IngestError(f"{path}:{line}: expected 2 columns, got {len(row)}")
            try:
                ts = _parse_timestamp(row[0])
            except ValueError as exc:
                raise IngestError(f"{path}:{line}: bad timestamp {row[0]!r}") from exc
            raw = row[1].strip()
            if raw.lower() in MISSING_TOKENS:
                value = math.nan
            else:
                try:
                    value = float(raw)
                except ValueError as exc:
                    raise IngestError(f"{path}:{line}: bad value {raw!r}") from exc
                if math.isinf(value):
                    raise IngestError(f"{path}:{line}: infinite value")
            if stamps:
                if ts == stamps[-1]:
                    raise IngestError(f"{path}:{line}: duplicate timestamp {row[0].strip()}")
                if ts < stamps[-1]:
                    if ts in set(stamps):
                        raise IngestError(f"{path}:{line}: duplicate timestamp {row[0].strip()}")
                    raise IngestError(f"{path}:{line}: timestamp {row[0].strip()} is not increasing")
            stamps.append(ts)
            values.append(value)
    return TimeSeries(np.array(stamps, dtype="datetime64[s]"), np.array(values, dtype=float))


def write_series(path: str | Path, timestamps, values) -> None:
    ts = np.datetime_as_string(np.asarray(timestamps, dtype="datetime64[s]"), unit="s")
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        fh.write("timestamp,value\n")
        for t, v in zip(ts, np.asarray(values, dtype=float)):
            fh.write(f"{t},{'NaN' if math.isnan(v) else repr(float(v))}\n")


def native_step_hours(series: TimeSeries) -> int:
    """Smallest spacing between consecutive timestamps, in whole hours."""
    if len(series) < 2:
        raise IngestError("cannot infer the time step of a series with fewer than 2 points")
    step = np.diff(series.timestamps).min()
    hours = step / HOUR
    if hours != int(hours) or hours < 1:
        raise IngestError(f"time step {step} is not a whole number of hours")
    return int(hours)


def resample_to_step(series: TimeSeries, target_step: int = 6, native_step: int | None = None) -> TimeSeries:
    """Average a fine-step series onto ``target_step``-hour trailing blocks.

    The output value stamped ``t`` is the mean over ``(t - target_step, t]``.
    Blocks end on multiples of ``target_step`` hours since the Unix epoch.
    Partial blocks at either end are dropped; an interior block with any
    missing (NaN or absent) native step yields NaN.
    """
    if native_step is None:
        native_step = native_step_hours(series)
    if native_step > target_step:
        raise IngestError(f"cannot upsample: native step {native_step}h > target {target_step}h")
    if target_step % native_step:
        raise IngestError(f"native step {native_step}h does not divide target step {target_step}h")
    per_block = target_step // native_step
    if len(series) == 0:
        return TimeSeries(np.array([], dtype="datetime64[s]"), np.array([], dtype=float))

    secs = series.timestamps.astype("int64")
    native = native_step * 3600
    target = target_step * 3600
    if np.any(secs % native):
        raise IngestError(f"timestamps are not aligned to the {native_step}h grid")
    block_end = -(-secs // target) * target  # ceil to the block end
    first, last = block_end[0], block_end[-1]
    n_blocks = (last - first) // target + 1
    idx = (block_end - first) // target
    counts = np.bincount(idx, minlength=n_blocks)
    sums = np.bincount(idx, weights=np.nan_to_num(series.values, nan=0.0), minlength=n_blocks)
    nan_hits = np.bincount(idx, weights=np.isnan(series.values).astype(float), minlength=n_blocks)

    ends = first + np.arange(n_blocks, dtype=np.int64) * target
    keep = np.ones(n_blocks, dtype=bool)
    # drop leading/trailing blocks that the record only partially covers
    if secs[0] > ends[0] - target + native:
        keep[0] = False
    if secs[-1] < ends[-1]:
        keep[-1] = False
    out = np.where((counts == per_block) & (nan_hits == 0), sums / np.maximum(counts, 1), np.nan)
    return TimeSeries(ends[keep].astype("datetime64[s]"), out[keep])


def align_and_build(
    catchment_id: str,
    rainfall: TimeSeries,
    discharge: TimeSeries,
    step_hours: int = 6,
) -> CatchmentSeries:
    """Trim rainfall and discharge to their common span and build a CatchmentSeries.

    Both inputs must already be at ``step_hours``. Raises IngestError on an
    empty overlap and GapError if any step inside the overlap is absent or
    missing in either series.
    """
    if len(rainfall) == 0 or len(discharge) == 0:
        raise IngestError(f"catchment {catchment_id}: empty input series")
    start = max(rainfall.timestamps[0], discharge.timestamps[0])
    end = min(rainfall.timestamps[-1], discharge.timestamps[-1])
    if start > end:
        raise IngestError(f"catchment {catchment_id}: rainfall and discharge do not overlap")
    step = np.timedelta64(step_hours * 3600, "s")
    if (end - start) % step:
        raise IngestError(f"catchment {catchment_id}: series are not on a common {step_hours}h grid")
    grid = np.arange(start, end + step, step)

    def on_grid(series: TimeSeries) -> np.ndarray:
        out = np.full(grid.size, np.nan)
        pos = (series.timestamps - start) // step
        on = (series.timestamps >= start) & (series.timestamps <= end) & ((series.timestamps - start) % step == np.timedelta64(0, "s"))
        out[pos[on].astype(np.int64)] = series.values[on]
        return out

    rain = on_grid(rainfall)
    q = on_grid(discharge)
    missing = np.isnan(rain) | np.isnan(q)
    if missing.any():
        gaps = [
            (str(grid[a]), str(grid[b])) for a, b in missing_runs(missing)
        ]
        raise GapError(f"catchment {catchment_id}: missing steps inside the overlap", gaps)
    return CatchmentSeries(catchment_id, grid, rain, q, step_hours)


def load_catchment(
    catchment_id: str,
    rain_path: str | Path,
    q_path: str | Path,
    step_hours: int = 6,
) -> CatchmentSeries:
    """Read both files, resample discharge to ``step_hours`` and align."""
    rain = read_series(rain_path)
    q = read_series(q_path)
    if len(rain) > 1 and native_step_hours(rain) != step_hours:
        raise IngestError(
            f"{rain_path}: rainfall must already be at {step_hours}h steps "
            f"(found {native_step_hours(rain)}h)"
        )
    if len(q) > 1 and native_step_hours(q) != step_hours:
        q = resample_to_step(q, step_hours)
    return align_and_build(catchment_id, rain, q, step_hours)


def chronological_split(
    series: CatchmentSeries,
    spec: SplitSpec,
    min_block: int,
) -> tuple[CatchmentSeries, CatchmentSeries, CatchmentSeries]:
    """Split into contiguous (train, validation, test) blocks in time order.

    ``min_block`` is the shortest admissible block length; an empty
    validation block is allowed (validation_fraction = 0).
    """
    n = len(series)
    train_end, boundary = spec.boundaries(n)
    blocks = (
        ("train", series.slice(0, train_end)),
        ("validation", series.slice(train_end, boundary)),
        ("test", series.slice(boundary, n)),
    )
    for name, block in blocks:
        if name == "validation" and len(block) == 0 and spec.validation_fraction == 0:
            continue
        if len(block) < min_block:
            raise InsufficientDataError(
                f"catchment {series.catchment_id}: {name} block has {len(block)} steps, "
                f"need at least {min_block}"
            )
    return blocks[0][1], blocks[1][1], blocks[2][1]


def min_block_length(config: FrameworkConfig) -> int:
    """History rows plus one row with a target inside the block."""
    return config.max_history + 2
