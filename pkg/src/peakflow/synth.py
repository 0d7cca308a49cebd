"""Deterministic synthetic catchments driven by a linear reservoir."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .core import CatchmentSeries, ConfigError


@dataclass(frozen=True)
class SynthSpec:
    """Storm process and reservoir parameters.

    Storms arrive with probability ``storm_prob`` per step; depths (mm) are
    ``storm_scale * Lomax(storm_tail)``, so a smaller ``storm_tail`` gives a
    heavier tail.
    """

    catchment_id: str = "synth"
    n_steps: int = 20000
    rng_seed: int = 0
    storm_prob: float = 0.25
    storm_scale: float = 10.0
    storm_tail: float = 5.0
    k: float = 0.4
    c: float = 0.6
    q0: float = 2.0
    noise_std: float = 0.0
    s0: float = 0.0
    step_hours: int = 6
    start: str = "2000-01-01T00:00:00"

    def __post_init__(self):
        if self.n_steps < 1:
            raise ConfigError("n_steps", "must be >= 1")
        if not 0.0 < self.k < 1.0:
            raise ConfigError("k", f"recession coefficient must lie in (0, 1), got {self.k}")
        if not 0.0 < self.c <= 1.0:
            raise ConfigError("c", f"runoff coefficient must lie in (0, 1], got {self.c}")
        if self.q0 < 0:
            raise ConfigError("q0", "baseflow must be >= 0")
        if self.noise_std < 0:
            raise ConfigError("noise_std", "must be >= 0")
        if not 0.0 <= self.storm_prob <= 1.0:
            raise ConfigError("storm_prob", "must lie in [0, 1]")
        if self.storm_scale < 0 or self.storm_tail <= 0:
            raise ConfigError("storm_tail", "storm scale must be >= 0 and tail index > 0")
        if self.s0 < 0:
            raise ConfigError("s0", "initial storage must be >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        known = {f.name for f in fields(cls)}
        for key in d:
            if key not in known:
                raise ConfigError(key, "unknown synthetic-spec key")
        return cls(**d)


def simulate(rain, k: float, c: float, q0: float, s0: float = 0.0) -> np.ndarray:
    """Noise-free reservoir response: ``S[t+1] = k S[t] + c rain[t]``,
    ``Q[t] = q0 + (1 - k) S[t]``."""
    rain = np.asarray(rain, dtype=float)
    storage = np.empty(rain.size)
    s = s0
    for t in range(rain.size):
        storage[t] = s
        s = k * s + c * rain[t]
    return q0 + (1.0 - k) * storage


def storm_rainfall(spec: SynthSpec, rng: np.random.Generator) -> np.ndarray:
    storms = rng.random(spec.n_steps) < spec.storm_prob
    depth = spec.storm_scale * rng.pareto(spec.storm_tail, size=spec.n_steps)
    return np.where(storms, depth, 0.0)


def generate(spec: SynthSpec) -> CatchmentSeries:
    rng = np.random.default_rng(spec.rng_seed)
    rain = storm_rainfall(spec, rng)
    q = simulate(rain, spec.k, spec.c, spec.q0, spec.s0)
    if spec.noise_std > 0:
        q = np.maximum(q + rng.normal(0.0, spec.noise_std, size=q.size), 0.0)
    step = np.timedelta64(spec.step_hours * 3600, "s")
    ts = np.datetime64(spec.start, "s") + step * np.arange(spec.n_steps)
    return CatchmentSeries(spec.catchment_id, ts, rain, q, spec.step_hours)


def write_catchment(series: CatchmentSeries, out_dir: str | Path) -> tuple[Path, Path]:
    """Write ``<id>_rain.csv`` and ``<id>_q.csv`` in the ingest schema."""
    from .ingest import write_series

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rain_path = out / f"{series.catchment_id}_rain.csv"
    q_path = out / f"{series.catchment_id}_q.csv"
    write_series(rain_path, series.timestamps, series.rainfall)
    write_series(q_path, series.timestamps, series.discharge)
    return rain_path, q_path


def load_specs(path: str | Path) -> list[SynthSpec]:
    """A spec file holds one JSON object or a list of them."""
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    items = raw if isinstance(raw, list) else [raw]
    return [SynthSpec.from_dict(d) for d in items]


def spec_dict(spec: SynthSpec) -> dict:
    return asdict(spec)
