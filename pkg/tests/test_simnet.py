import math

import numpy as np
import pytest
from scipy import signal

from conftest import small_spec, two_sensor_spec
from dpnet.physics import DpdmParams, ShieldGeometry, wall_field_amplitude
from dpnet.records import TimeSeriesRecord
from dpnet.wire import align_records
from dpnet.simnet import (
    ConfigError,
    RunSpec,
    SensorConfig,
    StationConfig,
    apply_clock_error,
    generate_run,
    keyed_normal,
    white_noise_asd_check,
)


def test_default_topology():
    spec = RunSpec()
    assert len(spec.sensors) == 15
    assert spec.n_samples == 2_000_000
    assert sum(s.station_id == "suzhou" for s in spec.sensors) == 13


def test_default_run_shape_short():
    run = generate_run(small_spec(duration=5.0))
    assert len(run) == 15
    assert all(len(r) == 5000 for r in run)
    assert run.is_aligned()


def test_zero_duration_is_empty():
    run = generate_run(small_spec(duration=0.0))
    assert len(run) == 15 and run.n_samples == 0


def test_determinism_and_workers():
    a = generate_run(small_spec(duration=5.0, seed=9))
    b = generate_run(small_spec(duration=5.0, seed=9), workers=4)
    assert a.same_records(b)
    c = generate_run(small_spec(duration=5.0, seed=10))
    assert not a.same_records(c)


def test_keyed_normal_subranges_are_consistent():
    full = keyed_normal(5, (1, 2), 0, 300_000)
    part = keyed_normal(5, (1, 2), 131_000, 5_000)
    assert np.array_equal(full[131_000:136_000], part)


def test_noiseless_dpdm_is_exact_cosine():
    p = DpdmParams(250.25, 1e-5)
    spec = small_spec(duration=4.0, noise_asd=0.0, common_mode_asd=0.0, dpdm=p)
    run = generate_run(spec)
    amp = wall_field_amplitude(1e-5, 250.25, ShieldGeometry(2.0, 1.0))
    t = np.arange(run.n_samples) / 1000.0
    expected = amp * np.cos(2 * np.pi * 250.25 * t)
    for r in run:
        assert np.allclose(r.samples, expected, rtol=0, atol=amp * 1e-9)


def test_signal_coherence_follows_coupling():
    stations = (StationConfig("a", common_mode_asd=0), StationConfig("b", common_mode_asd=0))
    sensors = (SensorConfig("A1", "a", 0.0, 0.5), SensorConfig("B1", "b", 0.0, 1.0))
    run = generate_run(RunSpec(duration=2.0, stations=stations, sensors=sensors, dpdm=DpdmParams(37.0, 1e-4, phase=1.1)))
    a, b = (r.samples for r in run)
    assert np.array_equal(a, 0.5 * b) or np.allclose(a, 0.5 * b, rtol=1e-15, atol=0)


def test_white_noise_asd_estimate():
    run = generate_run(two_sensor_spec(duration=200.0, seed=4))
    est = white_noise_asd_check(run.records[0])
    assert 14.25e-15 <= est <= 15.75e-15


def test_common_mode_cross_asd():
    stations = (StationConfig("a", common_mode_asd=5e-15),)
    sensors = (SensorConfig("A1", "a", 0.0), SensorConfig("A2", "a", 0.0))
    run = generate_run(RunSpec(duration=200.0, seed=2, stations=stations, sensors=sensors))
    est = white_noise_asd_check(run.records[0], run.records[1])
    assert est == pytest.approx(5e-15, rel=0.05)


def test_zero_noise_asd_check_is_zero():
    rec = TimeSeriesRecord("x", "y", 0, 1000.0, np.zeros(20_000))
    assert white_noise_asd_check(rec) == 0.0


def test_station_common_modes_independent():
    run = generate_run(small_spec(duration=100.0, noise_asd=0.0, n_suzhou=1, n_harbin=1))
    a, b = (r.samples for r in run)
    r = np.corrcoef(a, b)[0, 1]
    assert abs(r) < 3 / math.sqrt(a.size)


def test_parseval_variance():
    run = generate_run(two_sensor_spec(duration=2000.0, seed=1))
    x = run.records[0].samples
    expected = (15e-15) ** 2 * 500.0
    assert np.var(x) == pytest.approx(expected, rel=0.02)


def test_clock_error_identity():
    rec = generate_run(two_sensor_spec(duration=2.0)).records[0]
    assert apply_clock_error(rec, 0.0, 0.0, seed=1) is rec


def test_clock_offset_phase_shift():
    fs, f = 1000.0, 100.0
    x = np.cos(2 * np.pi * f * np.arange(20_000) / fs)
    rec = TimeSeriesRecord("s1", "st", 0, fs, x)
    shifted = apply_clock_error(TimeSeriesRecord("s2", "st", 0, fs, x), 1e-3, 0.0, seed=0)
    assert shifted.start_time == 1_000_000
    a, b = align_records([rec, shifted]).records
    _, pxy = signal.csd(a.samples, b.samples, fs=fs, nperseg=2000)
    assert abs(np.angle(pxy[200])) == pytest.approx(0.628, abs=1e-3)


def test_clock_jitter_amplitude_loss_small():
    fs = 1000.0
    n = 200_000
    for f in (10.0, 500.0 - 0.5):
        x = np.cos(2 * np.pi * f * np.arange(n) / fs)
        rec = TimeSeriesRecord("s", "st", 0, fs, x)
        y = apply_clock_error(rec, 0.0, 1e-6, seed=3).samples
        amp = 2 * abs(np.vdot(np.exp(2j * np.pi * f * np.arange(n) / fs), y)) / n
        assert abs(amp - 1) < 1e-4


def test_config_errors():
    with pytest.raises(ConfigError):
        RunSpec(sample_rate=500.0)
    with pytest.raises(ConfigError):
        RunSpec(duration=-1)
    with pytest.raises(ConfigError):
        SensorConfig("x", "suzhou", noise_asd=-1)
    with pytest.raises(ConfigError):
        RunSpec(sensors=(SensorConfig("x", "nowhere"),))
    with pytest.raises(ConfigError):
        RunSpec(sensors=(SensorConfig("x", "suzhou"), SensorConfig("x", "suzhou")))
    with pytest.raises(ConfigError):
        RunSpec(seed=2**64)


def test_spec_dict_roundtrip():
    spec = small_spec(duration=3.0, dpdm=DpdmParams(12.5, 1e-6))
    again = RunSpec.from_dict(spec.to_dict())
    assert again == spec
    assert again.spec_hash() == spec.spec_hash()
    with pytest.raises(ConfigError):
        RunSpec.from_dict({"bogus": 1})
