import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.append(str(Path(__file__).resolve().parents[1]))

from vecal.artifacts import ArtifactStore, read_json  # noqa: E402
from vecal.consumption import make_coefficients, predict  # noqa: E402
from vecal.energy import build_samples, process_series  # noqa: E402
from vecal.errors import ValidationError  # noqa: E402
from vecal.models import ModelKind, PowertrainParams, VehicleMode  # noqa: E402
from vecal.synth import (  # noqa: E402
    DEFAULT_SPEED_BOUNDS,
    SynthConfig,
    default_truth_acc,
    gen_energy,
    gen_speed_profile,
    invert_to_obd,
    make_dataset,
    make_run,
    run_seeds,
    split_energy,
    tick_accelerations,
    write_dataset,
)
from vecal.trajectory import load_dataset, resample, to_records  # noqa: E402


def test_speed_profile_stays_in_bounds():
    config = SynthConfig(speed_sigma=3.0)
    speeds = gen_speed_profile(config, seed=1, length=2000)
    lo, hi = DEFAULT_SPEED_BOUNDS
    assert speeds[0] == pytest.approx(config.speed_mean)
    assert speeds.min() >= lo and speeds.max() <= hi
    np.testing.assert_array_equal(speeds, gen_speed_profile(config, seed=1, length=2000))


def test_run_seeds_differ_per_run_and_mode():
    seeds = {run_seeds(0, mode, run_id) for mode in VehicleMode for run_id in range(1, 10)}
    assert len(seeds) == 18
    assert run_seeds(0, VehicleMode.ACC, 1) == run_seeds(0, VehicleMode.ACC, 1)


def test_gen_energy_noise_free_matches_truth():
    speeds = np.linspace(9, 17, 50)
    truth = default_truth_acc()
    energy = gen_energy(truth, speeds, noise_rel=0.0)
    np.testing.assert_allclose(energy, predict(truth, speeds, tick_accelerations(speeds, 1.0)))


def test_split_energy_routes_demand():
    config = SynthConfig(battery_share=0.25, regen_share=0.5)
    engine, battery = split_energy(np.array([1000.0, -400.0, -400.0]), np.array([0.5, -1.0, 0.2]), config)
    np.testing.assert_allclose(engine, [750.0, 0.0, 0.0])
    np.testing.assert_allclose(battery, [250.0, -200.0, -400.0])


def test_split_energy_battery_only_and_engine_only():
    energy = np.array([25_200.0, 1197.279])
    accel = np.zeros(2)
    _, battery = split_energy(energy, accel, SynthConfig(battery_share=1.0))
    engine, _ = split_energy(energy, accel, SynthConfig(battery_share=0.0))
    assert battery[0] == pytest.approx(25_200.0)
    assert engine[1] == pytest.approx(1197.279)


def test_invert_to_obd_signals():
    speeds = np.array([12.0, 12.0, 12.0])
    series = invert_to_obd(np.array([25_200.0, 25_200.0, 25_200.0]), speeds, SynthConfig(battery_share=1.0))
    assert series.socs[1] - series.socs[0] == pytest.approx(-0.01)
    assert np.all(series.maf_integrals == 0)

    series = invert_to_obd(np.full(3, 1197.279), speeds, SynthConfig(battery_share=0.0))
    np.testing.assert_allclose(series.maf_integrals, 1.0, rtol=1e-6)
    assert series.end_soc == pytest.approx(0.55)


def test_invert_to_obd_rejects_depleted_battery():
    speeds = np.full(200, 12.0)
    config = SynthConfig(battery_share=1.0, powertrain=PowertrainParams(battery_capacity=1e6))
    with pytest.raises(ValidationError, match="state of charge"):
        invert_to_obd(np.full(200, 25_000.0), speeds, config)


def test_pipeline_recovers_generated_energy():
    config = SynthConfig(run_length=10_000, noise_rel=0.0,
                         powertrain=PowertrainParams(battery_capacity=5.04e9))
    run = make_run(config, VehicleMode.ACC, 1)
    started = time.perf_counter()
    samples = build_samples(resample(to_records(run.series)), config.powertrain)
    assert time.perf_counter() - started < 1.0
    assert len(samples) == config.run_length - 1

    speeds = run.series.speeds
    ticks = np.array([s.t for s in samples])
    np.testing.assert_array_equal(ticks, np.arange(1, config.run_length))
    np.testing.assert_allclose([s.speed for s in samples], speeds[ticks], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose([s.accel for s in samples], tick_accelerations(speeds, config.dt)[ticks],
                               rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose([s.total_j for s in samples], run.total_j[ticks], rtol=1e-9, atol=1e-9)
    direct = build_samples(run.series, config.powertrain)
    np.testing.assert_allclose([s.total_j for s in direct], run.total_j[ticks], rtol=1e-9, atol=1e-9)


def braking_truth():
    # strong v*a term so decelerating ticks carry negative demand
    return make_coefficients(ModelKind.ARRB, (1000.0, 0.0, 0.0, 0.0, 2000.0, 0.0))


def test_friction_braking_is_recorded_and_energy_is_conserved():
    config = SynthConfig(seed=2, run_length=400, regen_share=0.4, truth_acc=braking_truth())
    run = make_run(config, VehicleMode.ACC, 1)
    accel = tick_accelerations(run.series.speeds, config.dt)
    engine, battery = split_energy(run.total_j, accel, config)
    assert np.any(run.friction_j < 0)
    np.testing.assert_array_equal(run.friction_j[~((accel < 0) & (run.total_j < 0))], 0.0)
    assert np.sum(engine) + np.sum(battery) + np.sum(run.friction_j) == pytest.approx(np.sum(run.total_j),
                                                                                     rel=1e-12)

    samples = build_samples(run.series, config.powertrain)
    ticks = np.array([s.t for s in samples])
    np.testing.assert_allclose([s.total_j for s in samples], run.recorded_j[ticks], rtol=1e-9, atol=1e-9)

    manifest = make_dataset(config.with_overrides(n_runs=1)).manifest()
    entry = manifest["runs"][0]
    assert entry["total_j"] == [float(x) for x in run.total_j]
    assert entry["friction_j"] == [float(x) for x in run.friction_j]


def test_full_regeneration_has_no_friction_loss():
    run = make_run(SynthConfig(seed=2, run_length=200, truth_acc=braking_truth()), VehicleMode.ACC, 1)
    assert np.any(run.total_j < 0)
    np.testing.assert_array_equal(run.friction_j, 0.0)
    np.testing.assert_array_equal(run.recorded_j, run.total_j)


def test_make_dataset_is_deterministic_and_keyed():
    config = SynthConfig(seed=4, n_runs=3, run_length=50)
    first = make_dataset(config)
    second = make_dataset(config)
    assert list(first.runs) == [(m, r) for m in VehicleMode for r in (1, 2, 3)]
    for key in first.runs:
        np.testing.assert_array_equal(first.runs[key].total_j, second.runs[key].total_j)
    assert first.manifest() == second.manifest()


def test_synthetic_samples_reach_cleaning():
    config = SynthConfig(seed=5, n_runs=2, run_length=120)
    for run in make_dataset(config).runs.values():
        kept, report = process_series(run.series, config.powertrain)
        assert report.reconciles()
        assert report.dropped_low_speed == 0
        assert len(kept) > 100


def test_written_dataset_loads_back(tmp_path):
    config = SynthConfig(seed=6, n_runs=2, run_length=40)
    dataset = make_dataset(config)
    written = write_dataset(dataset, ArtifactStore(tmp_path))
    assert len(written) == 5
    manifest = read_json(tmp_path / "manifest.json")
    assert manifest["truth"]["acc"]["kind"] == "aa_micro"
    assert len(manifest["runs"][0]["total_j"]) == 40

    runs = load_dataset([tmp_path / "manifest.json"])
    assert list(runs) == list(dataset.runs)
    series = resample(runs[(VehicleMode.HV, 2)])
    original = dataset.runs[(VehicleMode.HV, 2)].series
    np.testing.assert_allclose(series.maf_integrals, original.maf_integrals, rtol=1e-9, atol=1e-12)
    np.testing.assert_allclose(series.socs, original.socs, atol=1e-12)


def test_synth_config_validation():
    with pytest.raises(ValidationError):
        SynthConfig(speed_bounds=(10.0, 5.0))
    with pytest.raises(ValidationError):
        SynthConfig(regen_share=1.5)
    with pytest.raises(ValidationError):
        SynthConfig(run_length=2)
