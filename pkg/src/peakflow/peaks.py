"""Peak threshold, exceedance flags and magnitudes, event runs and event matching."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass(frozen=True)
class PeakEvent:
    start: int
    end: int
    apex: int
    apex_value: float


@dataclass(frozen=True, eq=False)
class PeakSet:
    threshold: float
    flags: np.ndarray
    magnitudes: np.ndarray
    events: tuple[PeakEvent, ...]


def compute_threshold(train_discharge, q: float = 0.999) -> float:
    """Empirical quantile, interpolating linearly between order statistics at
    rank ``(n - 1) * q``."""
    x = np.sort(np.asarray(train_discharge, dtype=float).ravel())
    if x.size == 0:
        raise ValueError("cannot compute a threshold from an empty sample")
    if not 0.0 < q < 1.0:
        raise ValueError(f"quantile must lie in (0, 1), got {q}")
    pos = (x.size - 1) * q
    lo = math.floor(pos)
    hi = min(lo + 1, x.size - 1)
    frac = pos - lo
    return float(x[lo] + frac * (x[hi] - x[lo]))


def peak_magnitude(q6h, threshold: float):
    """Exceedance above ``threshold``; zero at or below it. Works elementwise."""
    q6h = np.asarray(q6h, dtype=float)
    out = np.where(q6h > threshold, q6h - threshold, 0.0)
    return float(out) if out.ndim == 0 else out


def extract_events(flags, discharge) -> list[PeakEvent]:
    """Maximal runs of consecutive flagged steps.

    The apex is the first index of the run's maximum discharge.
    """
    flags = np.asarray(flags, dtype=bool).ravel()
    q = np.asarray(discharge, dtype=float).ravel()
    if flags.size != q.size:
        raise ValueError("flags and discharge must have equal length")
    padded = np.concatenate(([False], flags, [False]))
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    events = []
    for a, b in zip(edges[::2], edges[1::2]):
        apex = int(a + np.argmax(q[a:b]))
        events.append(PeakEvent(int(a), int(b) - 1, apex, float(q[apex])))
    return events


def peak_set(discharge, threshold: float) -> PeakSet:
    q = np.asarray(discharge, dtype=float)
    flags = q > threshold
    return PeakSet(
        float(threshold),
        flags,
        peak_magnitude(q, threshold),
        tuple(extract_events(flags, q)),
    )


def match_events(observed, forecast, max_offset: int = 4):
    """Greedy one-to-one pairing of observed and forecast events by apex time.

    Candidate pairs within ``max_offset`` steps are taken in order of
    increasing absolute apex offset; ties go to the earlier forecast event,
    then the earlier observed event.

    Returns
    -------
    pairs : list of (observed_event, forecast_event), sorted by observed apex
    unmatched_observed, unmatched_forecast : lists of PeakEvent
    """
    if max_offset < 0:
        raise ValueError("max_offset must be >= 0")
    candidates = []
    for i, ob in enumerate(observed):
        for j, fc in enumerate(forecast):
            d = fc.apex - ob.apex
            if abs(d) <= max_offset:
                candidates.append((abs(d), fc.apex, j, ob.apex, i))
    candidates.sort()
    used_obs, used_fc = set(), set()
    pairs = []
    for _, _, j, _, i in candidates:
        if i in used_obs or j in used_fc:
            continue
        used_obs.add(i)
        used_fc.add(j)
        pairs.append((observed[i], forecast[j]))
    pairs.sort(key=lambda p: (p[0].apex, p[1].apex))
    unmatched_obs = [ob for i, ob in enumerate(observed) if i not in used_obs]
    unmatched_fc = [fc for j, fc in enumerate(forecast) if j not in used_fc]
    return pairs, unmatched_obs, unmatched_fc


def write_events_csv(path: str | Path, events) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        fh.write("start,end,apex,apex_value\n")
        for ev in events:
            fh.write(f"{ev.start},{ev.end},{ev.apex},{ev.apex_value!r}\n")
