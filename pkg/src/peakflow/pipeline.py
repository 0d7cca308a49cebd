"""Per-catchment training/forecast/verification workflow, batch deployment and
the energy estimate for a batch of tasks."""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .boosting import GbtModel, fit_gbt, predict_gbt
from .combine import CombinedForecast, fuse, identify_peak_indices, write_forecast_csv
from .core import CatchmentSeries, FrameworkConfig, PeakflowError, validate_config
from .features import FeatureMatrix, build_matrix
from .forest import PeakModelUnavailable, RfModel, fit_rf, predict_rf
from .ingest import chronological_split, load_catchment, min_block_length
from .peaks import compute_threshold, extract_events, peak_magnitude, write_events_csv
from .verify import VerificationReport, aggregate_reports, build_report

logger = logging.getLogger(__name__)

STATUS_OK = "ok"
STATUS_FALLBACK = "peak-model-fallback"
STATUS_FAILED = "failed"


class StageError(PeakflowError):
    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"{stage}: {type(cause).__name__}: {cause}")


@dataclass
class Prepared:
    series: CatchmentSeries
    train: FeatureMatrix
    valid: Optional[FeatureMatrix]
    test: FeatureMatrix
    threshold: float


@dataclass
class CatchmentRun:
    prepared: Prepared
    gbt: GbtModel
    rf: Optional[RfModel]
    forecast: CombinedForecast
    report: VerificationReport
    fallback_reason: Optional[str] = None


@dataclass
class TaskResult:
    catchment_id: str
    status: str
    reason: Optional[str] = None
    stage: Optional[str] = None
    wall_seconds: float = 0.0
    paths: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PeakModelUnavailable:
        raise
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - any stage failure is reported with its stage
        raise StageError(name, exc) from exc


def prepare(series: CatchmentSeries, config: FrameworkConfig) -> Prepared:
    """Split chronologically, build per-block matrices, compute the peak threshold.

    The threshold uses only the training block (train + validation).
    """
    train_s, valid_s, test_s = _stage(
        "split", chronological_split, series, config.split, min_block_length(config)
    )
    train = _stage("features", build_matrix, train_s, config)
    valid = _stage("features", build_matrix, valid_s, config) if len(valid_s) else None
    test = _stage("features", build_matrix, test_s, config)
    pre_test = np.concatenate([train_s.discharge, valid_s.discharge])
    threshold = _stage("threshold", compute_threshold, pre_test, config.peak_quantile)
    return Prepared(series, train, valid, test, threshold)


def peak_training_rows(prepared: Prepared) -> FeatureMatrix:
    """Training-block rows whose target exceeds the threshold; target becomes
    the exceedance magnitude."""
    parts = [prepared.train] + ([prepared.valid] if prepared.valid is not None else [])
    pre_test = FeatureMatrix.concat(parts)
    flagged = np.flatnonzero(pre_test.y > prepared.threshold)
    rows = pre_test.take(flagged)
    return FeatureMatrix(
        rows.X, peak_magnitude(rows.y, prepared.threshold), rows.columns, rows.row_timestamps, rows.target_timestamps
    )


def train_models(prepared: Prepared, config: FrameworkConfig, rf_workers: int = 1):
    """Returns ``(gbt, rf, fallback_reason)``; ``rf`` is None on fallback."""
    gbt = _stage("fit_gbt", fit_gbt, prepared.train, prepared.valid, config)
    peaks = peak_training_rows(prepared)
    try:
        rf = _stage("fit_rf", fit_rf, peaks, None, config, rf_workers)
        reason = None
    except PeakModelUnavailable as exc:
        rf, reason = None, str(exc)
    return gbt, rf, reason


def forecast(prepared: Prepared, gbt: GbtModel, rf: Optional[RfModel], config: FrameworkConfig) -> CombinedForecast:
    baseline = predict_gbt(gbt, prepared.test)
    if rf is None:
        return fuse(baseline, [], [], config.fusion_weight)
    idx = identify_peak_indices(baseline, prepared.threshold, prepared.test.y, config.peak_mode)
    peak = predict_rf(rf, prepared.test.X[idx]) if idx.size else np.array([])
    return fuse(baseline, idx, peak, config.fusion_weight)


def run_series(series: CatchmentSeries, config: FrameworkConfig, rf_workers: int = 1) -> CatchmentRun:
    """Everything after ingestion, in memory."""
    prepared = prepare(series, config)
    gbt, rf, reason = train_models(prepared, config, rf_workers)
    fc = _stage("forecast", forecast, prepared, gbt, rf, config)
    extra = {
        "status": STATUS_OK if rf is not None else STATUS_FALLBACK,
        "fallback_reason": reason,
        "n_adjusted": int(fc.adjusted_indices.size),
        "gbt": dict(gbt.meta),
        "rf_peak_rows": None if rf is None else rf.n_train,
        "config": config.to_dict(),
        "config_overrides": config.overrides(),
    }
    try:
        extra["baseline_kge"] = build_report(series.catchment_id, fc.baseline, prepared.test.y, None).kge
    except ValueError:
        extra["baseline_kge"] = None
    report = _stage(
        "verify", build_report, series.catchment_id, fc.peak_adjusted, prepared.test.y,
        prepared.threshold, config.max_offset, extra,
    )
    return CatchmentRun(prepared, gbt, rf, fc, report, reason)


def write_artifacts(run: CatchmentRun, out_dir: Path, dump_features: bool = False) -> dict:
    cid = run.prepared.series.catchment_id
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "forecast": out_dir / f"{cid}_forecast.csv",
        "gbt_model": out_dir / f"{cid}_gbt.json",
        "report": out_dir / f"{cid}_report.json",
        "observed_events": out_dir / f"{cid}_observed_events.csv",
        "forecast_events": out_dir / f"{cid}_forecast_events.csv",
    }
    test = run.prepared.test
    write_forecast_csv(paths["forecast"], test.target_timestamps, test.y, run.forecast)
    run.gbt.to_json(paths["gbt_model"])
    if run.rf is not None:
        paths["rf_model"] = out_dir / f"{cid}_rf.json"
        run.rf.to_json(paths["rf_model"])
    run.report.to_json(paths["report"])
    thr = run.prepared.threshold
    write_events_csv(paths["observed_events"], extract_events(test.y > thr, test.y))
    fused = run.forecast.peak_adjusted
    write_events_csv(paths["forecast_events"], extract_events(fused > thr, fused))
    if dump_features:
        for name in ("train", "valid", "test"):
            fm = getattr(run.prepared, name)
            if fm is not None:
                paths[f"features_{name}"] = out_dir / f"{cid}_features_{name}.csv"
                fm.to_csv(paths[f"features_{name}"])
    return {k: str(v) for k, v in paths.items()}


def run_catchment(
    catchment_id: str,
    rain_path,
    q_path,
    config: FrameworkConfig,
    out_dir,
    rf_workers: int = 1,
    dump_features: bool = False,
) -> TaskResult:
    """Ingest, train, forecast, verify and persist one catchment.

    Never raises for data or model problems: failures come back as
    ``status="failed"`` with the stage name.
    """
    t0 = time.perf_counter()
    result = TaskResult(catchment_id, STATUS_FAILED)
    try:
        series = _stage("ingest", load_catchment, catchment_id, rain_path, q_path, config.step_hours)
        run = run_series(series, config, rf_workers)
        result.paths = _stage("persist", write_artifacts, run, Path(out_dir) / catchment_id, dump_features)
        result.status = STATUS_OK if run.rf is not None else STATUS_FALLBACK
        result.reason = run.fallback_reason
    except StageError as exc:
        result.stage = exc.stage
        result.reason = str(exc)
        logger.warning("catchment %s failed at %s: %s", catchment_id, exc.stage, exc.cause)
    result.wall_seconds = time.perf_counter() - t0
    return result


@dataclass(frozen=True)
class ManifestEntry:
    catchment_id: str
    rain_path: str
    q_path: str


def read_manifest(path) -> list[ManifestEntry]:
    """CSV with header ``catchment_id,rain_path,q_path``; relative paths are
    resolved against the manifest's directory."""
    path = Path(path)
    base = path.parent
    entries = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"catchment_id", "rain_path", "q_path"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: manifest lacks columns {sorted(missing)}")
        for row in reader:
            def resolve(p):
                p = Path(p.strip())
                return str(p if p.is_absolute() else base / p)

            entries.append(ManifestEntry(row["catchment_id"].strip(), resolve(row["rain_path"]), resolve(row["q_path"])))
    ids = [e.catchment_id for e in entries]
    if len(set(ids)) != len(ids):
        raise ValueError(f"{path}: duplicate catchment ids in manifest")
    return entries


def write_manifest(path, entries) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["catchment_id", "rain_path", "q_path"])
        for e in entries:
            w.writerow([e.catchment_id, e.rain_path, e.q_path])


def _run_entry(args) -> TaskResult:
    entry, config_dict, out_dir, dump_features = args
    config = validate_config(config_dict)
    return run_catchment(entry.catchment_id, entry.rain_path, entry.q_path, config, out_dir, 1, dump_features)


def run_batch(
    manifest: list[ManifestEntry],
    config: FrameworkConfig,
    out_dir,
    workers: int = 1,
    dump_features: bool = False,
) -> tuple[list[TaskResult], dict]:
    """Run every catchment with one shared config over a bounded worker pool.

    A failing catchment is reported and skipped; the aggregate covers the
    rest. Writes ``aggregate.json``, ``aggregate_contingency.csv`` and
    ``batch_summary.json`` (the only file carrying wall times) to ``out_dir``.
    """
    if not manifest:
        raise ValueError("empty manifest")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [(e, config.to_dict(), str(out_dir), dump_features) for e in manifest]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_run_entry, jobs))
    else:
        results = [_run_entry(j) for j in jobs]

    reports = []
    for r in results:
        if r.status != STATUS_FAILED:
            d = json.loads(Path(r.paths["report"]).read_text(encoding="utf-8"))
            reports.append(report_from_dict(d))
    aggregate = aggregate_reports(reports) if reports else {"catchments": []}
    aggregate["n_tasks"] = len(results)
    aggregate["n_failed"] = sum(r.status == STATUS_FAILED for r in results)
    aggregate["n_fallback"] = sum(r.status == STATUS_FALLBACK for r in results)
    aggregate["config"] = config.to_dict()
    aggregate["config_overrides"] = config.overrides()
    (out_dir / "aggregate.json").write_text(json.dumps(aggregate, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if reports:
        from .verify import aggregate_tables

        aggregate_tables(r.contingency for r in sorted(reports, key=lambda r: r.catchment_id)).write_csv(
            out_dir / "aggregate_contingency.csv"
        )
    summary = {"tasks": [r.to_dict() for r in results]}
    (out_dir / "batch_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    return results, aggregate


def report_from_dict(d: dict) -> VerificationReport:
    from .verify import ContingencyTable

    d = dict(d)
    d.pop("event_pod", None)
    d.pop("event_far", None)
    d["contingency"] = ContingencyTable(**d["contingency"])
    return VerificationReport(**d)


@dataclass(frozen=True)
class EnergyModel:
    """Workload-weighted mean wall power from high- and low-load draw (W)."""

    p_high: float = 130.0
    p_low: float = 60.0
    w_high: float = 0.33
    w_low: Optional[float] = None

    def __post_init__(self):
        w_low = 1.0 - self.w_high if self.w_low is None else self.w_low
        object.__setattr__(self, "w_low", w_low)
        if self.p_high <= 0 or self.p_low <= 0:
            raise ValueError("powers must be positive")
        if not (0.0 <= self.w_high <= 1.0 and 0.0 <= w_low <= 1.0) or abs(self.w_high + w_low - 1.0) > 1e-12:
            raise ValueError(f"phase weights must lie in [0, 1] and sum to 1, got {self.w_high}, {w_low}")

    @property
    def p_mean(self) -> float:
        return self.w_high * self.p_high + self.w_low * self.p_low


def estimate_energy(model: EnergyModel, task_seconds: float, n_tasks: int) -> tuple[float, float]:
    """Per-task and cumulative energy in kWh (cumulative is linear in tasks)."""
    if task_seconds <= 0:
        raise ValueError("task duration must be positive")
    if n_tasks <= 0:
        raise ValueError("task count must be positive")
    per_task = model.p_mean * task_seconds / 3.6e6
    return per_task, per_task * n_tasks
