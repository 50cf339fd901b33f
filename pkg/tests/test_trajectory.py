import json
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from vecal.errors import ParseError, SchemaError, ValidationError  # noqa: E402
from vecal.models import ObdRecord, VehicleMode  # noqa: E402
from vecal.trajectory import (  # noqa: E402
    IngestOptions,
    load_dataset,
    load_runs,
    records_to_frame,
    resample,
    to_records,
)


def records(times, maf, soc=0.5, speed=10.0, run_id=1, mode=VehicleMode.ACC):
    socs = soc if isinstance(soc, (list, tuple)) else [soc] * len(times)
    speeds = speed if isinstance(speed, (list, tuple)) else [speed] * len(times)
    return [ObdRecord(run_id, mode, float(t), float(m), float(s), float(v))
            for t, m, s, v in zip(times, maf, socs, speeds)]


def test_load_runs_percent_soc():
    data = b"run_id,mode,t,maf_gps,soc_pct,speed_mps\n1,acc,0.00,0.90,55.0,12.5\n"
    runs = load_runs(data)
    rec = runs[(VehicleMode.ACC, 1)][0]
    assert rec == ObdRecord(1, VehicleMode.ACC, 0.0, 0.90, 0.55, 12.5)


def test_load_runs_empty_file_with_header():
    assert load_runs(b"run_id,mode,t,maf_gps,soc,speed_mps\n") == {}


def test_load_runs_soc_out_of_range():
    data = b"run_id,mode,t,maf_gps,soc_pct,speed_mps\n1,acc,0,0.9,101,12\n"
    with pytest.raises(ValidationError, match="soc out of range"):
        load_runs(data)


def test_load_runs_schema_errors():
    with pytest.raises(SchemaError):
        load_runs(b"run_id,mode,t,maf_gps,soc,soc_pct,speed_mps\n")
    with pytest.raises(SchemaError):
        load_runs(b"run_id,mode,t,maf_gps,speed_mps\n")


def test_load_runs_malformed_row_reports_line():
    data = b"# comment\nrun_id,mode,t,maf_gps,soc,speed_mps\n1,acc,0,1,0.5,10\n1,acc,1,oops,0.5,10\n"
    with pytest.raises(ParseError) as exc:
        load_runs(data)
    assert exc.value.line == 4


def test_load_runs_line_numbers_count_blank_lines():
    data = (b"# comment\nrun_id,mode,t,maf_gps,soc,speed_mps\n\n1,acc,0,1,0.5,10\n"
            b"   \n\n1,acc,1,oops,0.5,10\n")
    with pytest.raises(ParseError) as exc:
        load_runs(data)
    assert exc.value.line == 7

    data = b"run_id,mode,t,maf_gps,soc,speed_mps\n1,acc,0,1,0.5,10\n\n1,acc,1,1,1.5,10\n"
    with pytest.raises(ValidationError, match="line 4"):
        load_runs(data)


def test_load_runs_rejects_non_monotone_timestamps():
    data = b"run_id,mode,t,maf_gps,soc,speed_mps\n1,hv,1,1,0.5,10\n1,hv,0,1,0.5,10\n"
    with pytest.raises(ValidationError, match="non-monotone"):
        load_runs(data)
    runs = load_runs(data, IngestOptions(allow_unsorted=True))
    assert [r.timestamp for r in runs[(VehicleMode.HV, 1)]] == [0.0, 1.0]


def test_load_runs_mode_case_insensitive_and_grouped():
    data = (b"run_id,mode,t,maf_gps,soc,speed_mps\n"
            b"2,HV,0,1,0.5,10\n1,Acc,0,1,0.5,10\n1,hv,0,1,0.5,10\n")
    assert list(load_runs(data)) == [(VehicleMode.ACC, 1), (VehicleMode.HV, 1), (VehicleMode.HV, 2)]


def test_resample_constant_maf():
    series = resample(records([0, 1, 2, 3], [1, 1, 1, 1]))
    assert len(series) == 3
    assert series.maf_integrals == pytest.approx([1.0, 1.0, 1.0])


def test_resample_linear_maf_trapezoid():
    series = resample(records([0, 1], [0, 2]))
    assert len(series) == 1
    assert series.ticks[0].maf_integral == pytest.approx(1.0)


def test_resample_interpolates_speed_at_boundary():
    raw = records([-0.5, 0.5, 1.5], [1, 1, 1], speed=[10.0, 12.0, 14.0])
    series = resample(raw)
    assert series.ticks[0].speed == pytest.approx(10.0)
    assert series.ticks[1].speed == pytest.approx(12.0)


def test_resample_too_short():
    with pytest.raises(ValidationError, match="run too short"):
        resample(records([0, 0.5], [1, 1]))


def test_resample_drops_partial_window_and_counts():
    times = np.arange(0, 5.3, 0.1)
    series = resample(records(times, np.ones_like(times)))
    assert len(series) == 5


def test_resample_is_idempotent_on_gridded_data():
    raw = records([0, 1, 2, 3], [1, 1, 1, 1], soc=[0.5, 0.49, 0.48, 0.47])
    once = resample(raw)
    again = resample(to_records(once))
    np.testing.assert_allclose(again.maf_integrals, once.maf_integrals, atol=1e-12)
    np.testing.assert_allclose(again.socs, once.socs, atol=1e-12)
    assert again.end_soc == pytest.approx(once.end_soc, abs=1e-12)


def test_resample_preserves_total_integral():
    rng = np.random.default_rng(3)
    times = np.cumsum(rng.uniform(0.01, 0.03, 600))
    maf = rng.uniform(0, 5, times.size)
    series = resample(records(times, maf))
    covered = times[0] + len(series)
    mask = times <= covered
    grid = np.append(times[mask], covered)
    rate = np.interp(grid, times, maf)
    expected = np.sum(np.diff(grid) * (rate[1:] + rate[:-1]) / 2)
    assert series.maf_integrals.sum() == pytest.approx(expected, rel=1e-9)


def test_load_dataset_from_manifest(tmp_path):
    frame = records_to_frame(records([0, 1, 2], [1, 1, 1], run_id=4, mode=VehicleMode.HV))
    frame.to_csv(tmp_path / "hv.csv", index=False)
    (tmp_path / "manifest.json").write_text(json.dumps({"files": [{"path": "hv.csv", "mode": "hv"}]}))
    runs = load_dataset([tmp_path / "manifest.json"])
    assert list(runs) == [(VehicleMode.HV, 4)]

    (tmp_path / "bad.json").write_text(json.dumps({"files": [{"path": "hv.csv", "mode": "acc"}]}))
    with pytest.raises(ValidationError, match="manifest mode"):
        load_dataset([tmp_path / "bad.json"])


def test_load_dataset_rejects_duplicate_runs(tmp_path):
    frame = records_to_frame(records([0, 1], [1, 1]))
    frame.to_csv(tmp_path / "a.csv", index=False)
    frame.to_csv(tmp_path / "b.csv", index=False)
    with pytest.raises(ValidationError, match="more than one input file"):
        load_dataset([tmp_path / "a.csv", tmp_path / "b.csv"])
