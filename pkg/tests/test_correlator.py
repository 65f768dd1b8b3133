import numpy as np
import pytest
from scipy import signal

from conftest import small_spec, two_sensor_spec
from dpnet.correlator import (
    SpectralConfig,
    SpectralError,
    all_pair_spectra,
    auto_spectra,
    fit_power_law,
    local_robust_sigma,
    mad_window_correction,
    network_average,
    select_subset,
    sensitivity_curve,
    welch_cross_spectrum,
)
from dpnet.physics import DpdmParams
from dpnet.records import TimeSeriesRecord
from dpnet.simnet import generate_run


def rec(x, name="a", fs=1000.0):
    return TimeSeriesRecord(name, "st", 0, fs, x)


@pytest.mark.parametrize("window", ["hann", "rectangular"])
def test_matches_scipy_csd(rng, window):
    x, y = rng.standard_normal((2, 20_000))
    cfg = SpectralConfig(segment_length=2000, window=window)
    got = welch_cross_spectrum(rec(x), rec(y, "b"), cfg)
    f, pxy = signal.csd(
        x, y, fs=1000.0, window="boxcar" if window == "rectangular" else "hann",
        nperseg=2000, noverlap=1000, detrend=False, scaling="density",
    )
    k = cfg.bin_indices(1000.0)
    assert np.allclose(got.frequencies, f[k])
    # scipy halves the Nyquist bin of a one-sided density; the pipeline keeps it on the same footing
    assert np.allclose(got.values[:-1], pxy[k][:-1], rtol=1e-10, atol=0)
    assert got.n_segments == 19


def test_auto_psd_of_unit_white_noise(rng):
    x = rng.standard_normal(400_000)
    got = welch_cross_spectrum(rec(x), rec(x), SpectralConfig(segment_length=4000))
    assert np.mean(got.values.real) == pytest.approx(2e-3, rel=0.05)
    assert np.all(got.values.imag == 0) and np.all(got.values.real >= 0)


def test_independent_streams_zero_mean(rng):
    x, y = rng.standard_normal((2, 400_000))
    re = welch_cross_spectrum(rec(x), rec(y, "b"), SpectralConfig(segment_length=4000)).values.real
    assert abs(re.mean()) < 3 * re.std() / np.sqrt(re.size)


def test_tone_response_against_window_oracle():
    fs, n_seg = 1000.0, 2000
    f0 = 125.0  # bin centre
    B0 = 3.0
    x = B0 * np.cos(2 * np.pi * f0 * np.arange(20_000) / fs)
    w = signal.get_window("hann", n_seg)
    # single-bin oracle: DFT of the windowed tone, one-sided density normalisation
    X = np.sum(w * B0 * np.cos(2 * np.pi * f0 * np.arange(n_seg) / fs) * np.exp(-2j * np.pi * f0 * np.arange(n_seg) / fs))
    oracle = 2 * abs(X) ** 2 / (fs * np.sum(w**2))
    gain = oracle / (B0**2 * n_seg / fs / 2)  # relative to the rectangular value
    cfg = SpectralConfig(segment_length=n_seg)
    got = welch_cross_spectrum(rec(x), rec(x, "b"), cfg)
    k = np.argmin(abs(got.frequencies - f0))
    assert got.values.real[k] == pytest.approx(B0**2 * (n_seg / fs) * gain / 2, rel=0.01)


def test_conjugate_symmetry_and_linearity(rng):
    x, y = rng.standard_normal((2, 10_000))
    cfg = SpectralConfig(segment_length=1000)
    a = welch_cross_spectrum(rec(x), rec(y, "b"), cfg).values
    b = welch_cross_spectrum(rec(y, "b"), rec(x), cfg).values
    assert np.array_equal(a, np.conj(b))
    c = welch_cross_spectrum(rec(2 * x), rec(y, "b"), cfg).values
    assert np.allclose(c, 2 * a, rtol=1e-12)


def test_pair_counts(short_run, short_cfg):
    pairs = all_pair_spectra(short_run, short_cfg)
    assert len(pairs) == 105
    assert len(select_subset(pairs, "cross_station_only")) == 26
    assert len(select_subset(pairs, "same_station_only")) == 79
    labels = [p.label for p in pairs]
    assert labels == sorted(labels)
    two = generate_run(two_sensor_spec(duration=4.0))
    assert len(all_pair_spectra(two, short_cfg)) == 1


def test_network_average_identity_and_subset(short_run, short_cfg):
    pairs = all_pair_spectra(short_run, short_cfg)
    one = network_average(pairs[:1])
    assert np.array_equal(one.mean_real, pairs[0].values.real)
    assert network_average(pairs, "cross_station_only").n_correlators == 26
    with pytest.raises(SpectralError):
        network_average(pairs, "bogus")


def test_common_tone_equal_in_every_pair():
    spec = small_spec(duration=20.0, noise_asd=0.0, common_mode_asd=0.0, dpdm=DpdmParams(100.0, 1e-4))
    pairs = all_pair_spectra(generate_run(spec), SpectralConfig(segment_length=2000))
    k = int(np.argmin(abs(pairs[0].frequencies - 100.0)))
    peaks = np.array([p.values.real[k] for p in pairs])
    assert np.all(peaks > 0)
    assert np.max(np.abs(peaks / peaks[0] - 1)) < 1e-6


def test_auto_spectra_nonnegative(short_run, short_cfg):
    for v in auto_spectra(short_run, short_cfg).values():
        assert np.all(v >= 0)


def test_mad_sigma_is_unbiased_for_gaussian(rng):
    x = rng.standard_normal(200_000)
    s = local_robust_sigma(x, 64)
    # the correction makes 1/sigma unbiased in quadrature: E[x^2 / s^2] = 1
    assert np.mean((x / s) ** 2) == pytest.approx(1.0, abs=0.02)
    assert mad_window_correction(64) == pytest.approx(1.0457, abs=0.01)
    assert mad_window_correction(2048) < mad_window_correction(64) < mad_window_correction(16)


def test_fit_power_law_recovers_generator():
    n = np.arange(1, 106)
    fit = fit_power_law(list(zip(n, 7.0 * n**-0.25)))
    assert fit.exponent == pytest.approx(0.25, abs=1e-6)
    assert fit.prefactor == pytest.approx(7.0, rel=1e-9)
    assert fit_power_law([(k, 3.0) for k in range(1, 10)]).exponent == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(ValueError):
        fit_power_law([(1, 1.0)])


def test_sensitivity_noiseless_is_zero():
    run = generate_run(small_spec(duration=20.0, noise_asd=0.0, common_mode_asd=0.0, n_suzhou=3, n_harbin=1))
    curve = sensitivity_curve(all_pair_spectra(run, SpectralConfig(segment_length=2000)), 10.1, window=128)
    assert all(s == 0 for _, s in curve)


def test_single_pair_sensitivity_matches_sensor_asd():
    run = generate_run(two_sensor_spec(duration=200.0, seed=3))
    cfg = SpectralConfig(segment_length=10_000)
    curve = sensitivity_curve(all_pair_spectra(run, cfg), 10.1, window=512)
    assert curve[0][1] == pytest.approx(15e-15, rel=0.10)


def test_misaligned_records_rejected(rng):
    x = rng.standard_normal(5000)
    a = rec(x)
    b = TimeSeriesRecord("b", "st", 1_000_000, 1000.0, x)
    with pytest.raises(SpectralError):
        welch_cross_spectrum(a, b, SpectralConfig(segment_length=1000))


def test_spectral_config_validation():
    with pytest.raises(SpectralError):
        SpectralConfig(window="kaiser")
    with pytest.raises(SpectralError):
        SpectralConfig(overlap_fraction=1.0)
    with pytest.raises(SpectralError):
        SpectralConfig(band=(10.0, 1.0))
    with pytest.raises(SpectralError):
        SpectralConfig(band=(1.0, 600.0)).bin_indices(1000.0)
