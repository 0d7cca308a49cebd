"""Forecast verification: hydrological efficiencies, peak errors, WMO continuous
and binary scores, and time-step contingency tables.

Undefined scores are reported as ``None`` (``null`` in JSON), never as a
sentinel number.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional

import numpy as np

from .core import DegenerateInputError

UNDEFINED = None


def _pair(sim, obs, min_len: int = 1) -> tuple[np.ndarray, np.ndarray]:
    sim = np.asarray(sim, dtype=float).ravel()
    obs = np.asarray(obs, dtype=float).ravel()
    if sim.size != obs.size:
        raise ValueError(f"sim and obs differ in length ({sim.size} vs {obs.size})")
    if sim.size < min_len:
        raise ValueError(f"need at least {min_len} values, got {sim.size}")
    if not (np.isfinite(sim).all() and np.isfinite(obs).all()):
        raise ValueError("sim and obs must be finite")
    return sim, obs


def _constant(x: np.ndarray) -> bool:
    # exact test; a rounded mean can leave a tiny nonzero spread
    return bool(x.max() == x.min())


def nse(sim, obs) -> float:
    """Nash-Sutcliffe efficiency, ``1 - SSE / sum((obs - mean(obs))**2)``."""
    sim, obs = _pair(sim, obs)
    denom = np.sum((obs - obs.mean()) ** 2)
    if denom == 0 or _constant(obs):
        raise DegenerateInputError("NSE undefined for constant observations")
    return float(1.0 - np.sum((sim - obs) ** 2) / denom)


def pearson_r(sim, obs) -> float:
    sim, obs = _pair(sim, obs, 2)
    ds = sim - sim.mean()
    do = obs - obs.mean()
    denom = math.sqrt(float(np.sum(ds * ds)) * float(np.sum(do * do)))
    if denom == 0 or _constant(sim) or _constant(obs):
        raise DegenerateInputError("correlation undefined for a constant series")
    return float(np.clip(np.sum(ds * do) / denom, -1.0, 1.0))


def _kge_parts(sim, obs):
    sim, obs = _pair(sim, obs, 2)
    mu_s, mu_o = sim.mean(), obs.mean()
    sd_s, sd_o = sim.std(), obs.std()
    if sd_s == 0 or sd_o == 0 or _constant(sim) or _constant(obs):
        raise DegenerateInputError("KGE undefined for a constant series")
    if mu_o == 0:
        raise DegenerateInputError("KGE undefined for zero-mean observations")
    r = pearson_r(sim, obs)
    beta = mu_s / mu_o
    return r, beta, mu_s, mu_o, sd_s, sd_o


def _distance(r, beta, var_ratio) -> float:
    return float(1.0 - math.sqrt((r - 1.0) ** 2 + (beta - 1.0) ** 2 + (var_ratio - 1.0) ** 2))


def kge(sim, obs) -> tuple[float, float, float, float]:
    """Kling-Gupta efficiency with the coefficient-of-variation ratio.

    Returns
    -------
    (kge, r, beta, gamma)
    """
    r, beta, mu_s, mu_o, sd_s, sd_o = _kge_parts(sim, obs)
    if mu_s == 0:
        raise DegenerateInputError("KGE variability ratio undefined for zero-mean simulation")
    gamma = (sd_s / mu_s) / (sd_o / mu_o)
    return _distance(r, beta, gamma), r, float(beta), float(gamma)


def kge_mod(sim, obs) -> tuple[float, float, float, float]:
    """Modified KGE (standard deviation ratio). Returns ``(kge', r, beta, gamma')``."""
    r, beta, _, _, sd_s, sd_o = _kge_parts(sim, obs)
    gamma_p = sd_s / sd_o
    return _distance(r, beta, gamma_p), r, float(beta), float(gamma_p)


def rpe(sim_peak: float, obs_peak: float) -> tuple[float, float]:
    """Signed and absolute relative peak error."""
    if obs_peak <= 0:
        raise ValueError(f"observed peak must be positive, got {obs_peak}")
    e = (sim_peak - obs_peak) / obs_peak
    return float(e), float(abs(e))


def peak_timing_error(pairs) -> list[int]:
    """Forecast apex index minus observed apex index, in steps, for each pair.

    ``pairs`` holds ``(observed_event, forecast_event)`` tuples as produced by
    :func:`peakflow.peaks.match_events`. Positive means the forecast peak is late.
    """
    return [int(fc.apex - ob.apex) for ob, fc in pairs]


def continuous_metrics(sim, obs) -> dict[str, Optional[float]]:
    """WMO continuous error metrics for ``e = sim - obs``.

    Variances use the population divisor so that
    ``mse == mse_mean_bias2 + mse_second_order_bias + mse_correlation_term``.
    """
    sim, obs = _pair(sim, obs, 2)
    e = sim - obs
    mse = float(np.mean(e * e))
    sd_s, sd_o = float(sim.std()), float(obs.std())
    try:
        r = pearson_r(sim, obs)
    except DegenerateInputError:
        r = UNDEFINED
    var_e = float(e.var())
    return {
        "mae": float(np.mean(np.abs(e))),
        "mse": mse,
        "rmse": math.sqrt(mse),
        "me": float(e.mean()),
        "r": r,
        "var_e": var_e,
        "sd_e": math.sqrt(var_e),
        "mse_mean_bias2": float(e.mean()) ** 2,
        "mse_second_order_bias": (sd_s - sd_o) ** 2,
        "mse_correlation_term": UNDEFINED if r is None else 2.0 * sd_s * sd_o * (1.0 - r),
    }


@dataclass(frozen=True)
class ContingencyTable:
    hits: int = 0
    false_alarms: int = 0
    misses: int = 0
    true_negatives: int = 0

    def __post_init__(self):
        for name in ("hits", "false_alarms", "misses", "true_negatives"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 0:
                raise ValueError(f"{name} must be a nonnegative integer, got {v!r}")
            object.__setattr__(self, name, int(v))

    @property
    def n(self) -> int:
        return self.hits + self.false_alarms + self.misses + self.true_negatives

    def __add__(self, other: "ContingencyTable") -> "ContingencyTable":
        return ContingencyTable(
            self.hits + other.hits,
            self.false_alarms + other.false_alarms,
            self.misses + other.misses,
            self.true_negatives + other.true_negatives,
        )

    def to_dict(self) -> dict[str, int]:
        return asdict(self)

    def write_csv(self, path: str | Path) -> None:
        """2x2 layout: forecast yes/no rows against observed yes/no columns, with totals."""
        h, fa, m, tn = self.hits, self.false_alarms, self.misses, self.true_negatives
        rows = [
            ["", "observed_yes", "observed_no", "total"],
            ["forecast_yes", h, fa, h + fa],
            ["forecast_no", m, tn, m + tn],
            ["total", h + m, fa + tn, self.n],
        ]
        with Path(path).open("w", newline="", encoding="utf-8") as fh:
            csv.writer(fh, lineterminator="\n").writerows(rows)


def build_contingency(obs_flags, fc_flags) -> ContingencyTable:
    obs = np.asarray(obs_flags, dtype=bool).ravel()
    fc = np.asarray(fc_flags, dtype=bool).ravel()
    if obs.size != fc.size:
        raise ValueError(f"flag vectors differ in length ({obs.size} vs {fc.size})")
    return ContingencyTable(
        hits=int(np.sum(obs & fc)),
        false_alarms=int(np.sum(~obs & fc)),
        misses=int(np.sum(obs & ~fc)),
        true_negatives=int(np.sum(~obs & ~fc)),
    )


def aggregate_tables(tables: Iterable[ContingencyTable]) -> ContingencyTable:
    total = ContingencyTable()
    for t in tables:
        total = total + t
    return total


def _ratio(num, den):
    return num / den if den > 0 else UNDEFINED


def binary_metrics(table: ContingencyTable) -> dict[str, Optional[float]]:
    """Dichotomous scores from a contingency table; undefined ones are ``None``."""
    h, fa, m, tn = table.hits, table.false_alarms, table.misses, table.true_negatives
    n = table.n
    pod = _ratio(h, h + m)
    pofd = _ratio(fa, fa + tn)
    if n > 0:
        h_random = (h + m) * (h + fa) / n
        ets = _ratio(h - h_random, h + m + fa - h_random)
    else:
        ets = UNDEFINED
    return {
        "pod": pod,
        "sr": _ratio(h, h + fa),
        "far": _ratio(fa, h + fa),
        "pofd": pofd,
        "fb": _ratio(h + fa, h + m),
        "fc": _ratio(h + tn, n),
        "csi": _ratio(h, h + m + fa),
        "ets": ets,
        "pss": UNDEFINED if pod is None or pofd is None else pod - pofd,
    }


def _safe(fn, *args):
    try:
        return fn(*args)
    except DegenerateInputError:
        return None


@dataclass
class VerificationReport:
    catchment_id: str
    n_steps: int
    threshold: Optional[float]
    nse: Optional[float]
    kge: Optional[float]
    kge_r: Optional[float]
    kge_beta: Optional[float]
    kge_gamma: Optional[float]
    kge_mod: Optional[float]
    kge_mod_gamma: Optional[float]
    continuous: dict
    contingency: ContingencyTable
    binary: dict
    rpe: list = field(default_factory=list)
    abs_rpe: list = field(default_factory=list)
    timing_error: list = field(default_factory=list)
    n_observed_events: int = 0
    n_forecast_events: int = 0
    n_matched_events: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def event_pod(self) -> Optional[float]:
        return _ratio(self.n_matched_events, self.n_observed_events)

    @property
    def event_far(self) -> Optional[float]:
        return _ratio(self.n_forecast_events - self.n_matched_events, self.n_forecast_events)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["contingency"] = self.contingency.to_dict()
        d["event_pod"] = self.event_pod
        d["event_far"] = self.event_far
        return d

    def to_json(self, path: str | Path | None = None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"
        if path is not None:
            Path(path).write_text(text, encoding="utf-8")
        return text


def build_report(
    catchment_id: str,
    sim,
    obs,
    threshold: Optional[float],
    max_offset: int = 4,
    extra: Optional[dict] = None,
) -> VerificationReport:
    """Compute every metric for one forecast/observation pair.

    Peak events are runs above ``threshold`` in each series; RPE and timing
    errors cover matched events only, unmatched observed events still count
    as misses in the contingency table.
    """
    from .peaks import extract_events, match_events

    sim, obs = _pair(sim, obs)
    k = _safe(kge, sim, obs) or (None, None, None, None)
    km = _safe(kge_mod, sim, obs) or (None, None, None, None)
    cont = continuous_metrics(sim, obs) if sim.size >= 2 else {}
    rpe_list, abs_list, timing = [], [], []
    n_obs_ev = n_fc_ev = n_match = 0
    if threshold is not None:
        obs_flags = obs > threshold
        fc_flags = sim > threshold
        table = build_contingency(obs_flags, fc_flags)
        obs_events = extract_events(obs_flags, obs)
        fc_events = extract_events(fc_flags, sim)
        pairs, _, _ = match_events(obs_events, fc_events, max_offset)
        for ob, fc in pairs:
            signed, absolute = rpe(fc.apex_value, ob.apex_value)
            rpe_list.append(signed)
            abs_list.append(absolute)
        timing = peak_timing_error(pairs)
        n_obs_ev, n_fc_ev, n_match = len(obs_events), len(fc_events), len(pairs)
    else:
        table = ContingencyTable()
    return VerificationReport(
        catchment_id=catchment_id,
        n_steps=int(sim.size),
        threshold=None if threshold is None else float(threshold),
        nse=_safe(nse, sim, obs),
        kge=k[0],
        kge_r=k[1],
        kge_beta=k[2],
        kge_gamma=k[3],
        kge_mod=km[0],
        kge_mod_gamma=km[3],
        continuous=cont,
        contingency=table,
        binary=binary_metrics(table),
        rpe=rpe_list,
        abs_rpe=abs_list,
        timing_error=timing,
        n_observed_events=n_obs_ev,
        n_forecast_events=n_fc_ev,
        n_matched_events=n_match,
        extra=dict(extra or {}),
    )


def aggregate_reports(reports: list[VerificationReport]) -> dict:
    """Fold per-catchment reports (in catchment-id order) into one summary."""
    reports = sorted(reports, key=lambda r: r.catchment_id)
    table = aggregate_tables(r.contingency for r in reports)

    def summary(values):
        vals = np.array([v for v in values if v is not None], dtype=float)
        if vals.size == 0:
            return {"n": 0, "mean": None, "median": None, "min": None, "max": None}
        return {
            "n": int(vals.size),
            "mean": float(vals.mean()),
            "median": float(np.median(vals)),
            "min": float(vals.min()),
            "max": float(vals.max()),
        }

    n_obs = sum(r.n_observed_events for r in reports)
    n_fc = sum(r.n_forecast_events for r in reports)
    n_match = sum(r.n_matched_events for r in reports)
    return {
        "catchments": [r.catchment_id for r in reports],
        "contingency": table.to_dict(),
        "binary": binary_metrics(table),
        "nse": summary(r.nse for r in reports),
        "kge": summary(r.kge for r in reports),
        "kge_mod": summary(r.kge_mod for r in reports),
        "abs_rpe": summary(v for r in reports for v in r.abs_rpe),
        "timing_error": summary(v for r in reports for v in r.timing_error),
        "events": {
            "observed": n_obs,
            "forecast": n_fc,
            "matched": n_match,
            "event_pod": _ratio(n_match, n_obs),
            "event_far": _ratio(n_fc - n_match, n_fc),
        },
    }
