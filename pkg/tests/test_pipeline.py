import json
from pathlib import Path

import pytest

from peakflow.core import FrameworkConfig
from peakflow.pipeline import (
    STATUS_FAILED,
    STATUS_FALLBACK,
    STATUS_OK,
    EnergyModel,
    ManifestEntry,
    estimate_energy,
    peak_training_rows,
    prepare,
    read_manifest,
    run_batch,
    run_catchment,
    write_manifest,
)
from peakflow.synth import SynthSpec, generate, write_catchment

FAST = FrameworkConfig(n_rounds=60, rf_n_trees=40)


def _files(tmp_path, **spec):
    series = generate(SynthSpec(**spec))
    rain, q = write_catchment(series, tmp_path / "data")
    return series, rain, q


def test_ok_with_many_training_peaks(tmp_path):
    cfg = FAST.replace(peak_quantile=0.99)
    series, rain, q = _files(tmp_path, catchment_id="p", n_steps=9000, rng_seed=2, noise_std=0.05)
    assert len(peak_training_rows(prepare(series, cfg))) >= 50
    res = run_catchment("p", rain, q, cfg, tmp_path / "out")
    assert res.status == STATUS_OK, res.reason
    for key in ("forecast", "gbt_model", "rf_model", "report", "observed_events", "forecast_events"):
        assert Path(res.paths[key]).is_file()
    report = json.loads(Path(res.paths["report"]).read_text())
    assert report["extra"]["status"] == STATUS_OK
    assert report["extra"]["rf_peak_rows"] >= 50
    assert report["kge"] > 0.5
    header = Path(res.paths["forecast"]).read_text().splitlines()[0]
    assert header == "timestamp,observed,baseline,fused,is_adjusted"


def test_zero_peaks_falls_back(tmp_path):
    # no storms and no noise: discharge sits at baseflow, nothing exceeds the threshold
    _, rain, q = _files(tmp_path, catchment_id="flat", n_steps=800, storm_prob=0.0)
    res = run_catchment("flat", rain, q, FAST, tmp_path / "out")
    assert res.status == STATUS_FALLBACK
    assert "peak rows" in res.reason
    report = json.loads(Path(res.paths["report"]).read_text())
    assert report["extra"]["status"] == STATUS_FALLBACK
    assert report["extra"]["n_adjusted"] == 0
    assert "rf_model" not in res.paths


def test_missing_rain_file_fails_at_ingest(tmp_path):
    _, _, q = _files(tmp_path, catchment_id="m", n_steps=300)
    res = run_catchment("m", tmp_path / "nope.csv", q, FAST, tmp_path / "out")
    assert res.status == STATUS_FAILED and res.stage == "ingest"


def test_short_series_fails_at_split(tmp_path):
    _, rain, q = _files(tmp_path, catchment_id="s", n_steps=30)
    res = run_catchment("s", rain, q, FAST, tmp_path / "out")
    assert res.status == STATUS_FAILED and res.stage == "split"


def test_threshold_uses_only_pre_test_discharge():
    series = generate(SynthSpec(n_steps=3000, rng_seed=1))
    cfg = FAST
    a = prepare(series, cfg)
    n_test = len(series) - cfg.split.boundaries(len(series))[1]
    q = series.discharge.copy()
    q[-n_test:] *= 10.0
    b = prepare(series.with_values(discharge=q), cfg)
    assert a.threshold == b.threshold


def _manifest(tmp_path, n=3, steps=1500):
    entries = []
    for i in range(n):
        series = generate(SynthSpec(catchment_id=f"c{i}", n_steps=steps, rng_seed=i + 1, noise_std=0.03))
        rain, q = write_catchment(series, tmp_path / "data")
        entries.append(ManifestEntry(f"c{i}", rain.name, q.name))
    path = tmp_path / "data" / "manifest.csv"
    write_manifest(path, entries)
    return path


def _tree_bytes(root):
    return {p.relative_to(root).as_posix(): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()
            and p.name != "batch_summary.json"}


def test_batch_deterministic_across_workers(tmp_path):
    manifest = read_manifest(_manifest(tmp_path))
    r1, agg1 = run_batch(manifest, FAST, tmp_path / "w1", workers=1)
    r2, agg2 = run_batch(manifest, FAST, tmp_path / "w2", workers=2)
    assert [r.status for r in r1] == [r.status for r in r2]
    assert _tree_bytes(tmp_path / "w1") == _tree_bytes(tmp_path / "w2")
    assert agg1 == agg2


def test_rerun_overwrites_identically(tmp_path):
    manifest = read_manifest(_manifest(tmp_path, n=1))
    run_batch(manifest, FAST, tmp_path / "out")
    first = _tree_bytes(tmp_path / "out")
    run_batch(manifest, FAST, tmp_path / "out")
    assert _tree_bytes(tmp_path / "out") == first


def test_batch_isolates_corrupt_entry(tmp_path):
    path = _manifest(tmp_path)
    (tmp_path / "data" / "bad_q.csv").write_text("timestamp,value\n2000-01-01T00:00:00,oops\n")
    entries = read_manifest(path) + [ManifestEntry("bad", str(tmp_path / "data" / "c0_rain.csv"),
                                                   str(tmp_path / "data" / "bad_q.csv"))]
    results, agg = run_batch(entries, FAST, tmp_path / "out")
    status = {r.catchment_id: r.status for r in results}
    assert status["bad"] == STATUS_FAILED
    assert sum(s != STATUS_FAILED for s in status.values()) == 3
    assert agg["catchments"] == ["c0", "c1", "c2"] and agg["n_failed"] == 1
    assert (tmp_path / "out" / "aggregate_contingency.csv").is_file()


def test_manifest_errors(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        run_batch([], FAST, tmp_path)
    p = tmp_path / "m.csv"
    p.write_text("catchment_id,rain_path,q_path\na,r.csv,q.csv\na,r.csv,q.csv\n")
    with pytest.raises(ValueError, match="duplicate"):
        read_manifest(p)
    p.write_text("id,rain\n")
    with pytest.raises(ValueError, match="lacks"):
        read_manifest(p)


def test_energy_examples():
    assert EnergyModel().p_mean == pytest.approx(0.33 * 130 + 0.67 * 60)
    model = EnergyModel(130.0, 60.0, w_high=24 / 70)
    assert model.p_mean == pytest.approx(84.0, rel=1e-12)
    per, total = estimate_energy(model, 240, 857)
    assert per == pytest.approx(84 * 240 / 3.6e6) and round(per, 4) == 0.0056
    assert total == pytest.approx(per * 857)
    # zero-weight high phase, 60 W for 60 s
    per, _ = estimate_energy(EnergyModel(130.0, 60.0, w_high=0.0), 60, 1)
    assert per == pytest.approx(60 * 60 / 3.6e6) == 0.001


def test_energy_linear_and_errors():
    m = EnergyModel()
    a, _ = estimate_energy(m, 10, 1)
    b, tb = estimate_energy(m, 30, 7)
    assert b == pytest.approx(3 * a) and tb == pytest.approx(21 * a)
    with pytest.raises(ValueError):
        estimate_energy(m, 0, 1)
    with pytest.raises(ValueError):
        estimate_energy(m, 1, 0)
    with pytest.raises(ValueError):
        EnergyModel(p_high=-1.0)
    with pytest.raises(ValueError):
        EnergyModel(w_high=0.5, w_low=0.6)
