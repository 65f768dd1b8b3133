"""Welch cross-spectral densities for every sensor pair and their network average.

Conventions: one-sided density (T^2/Hz), ``C_xy = <conj(X) Y>`` over
segments (the :func:`scipy.signal.csd` convention), DC and Nyquist bins not
doubled, no detrending.
"""

from __future__ import annotations

import functools
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import get_window

MAD_TO_SIGMA = 1.482602218505602
SUBSETS = ("all", "cross_station_only", "same_station_only")
WEIGHTINGS = ("uniform", "inverse_variance")


class SpectralError(ValueError):
    """Inputs cannot be cross-correlated (misaligned, too short, bad config)."""


@dataclass(frozen=True)
class SpectralConfig:
    segment_length: int = 100_000
    overlap_fraction: float = 0.5
    window: str = "hann"
    band: tuple = (1.0, 500.0)

    def __post_init__(self):
        object.__setattr__(self, "band", tuple(float(b) for b in self.band))
        if self.segment_length < 2:
            raise SpectralError("segment_length must be >= 2")
        if not 0 <= self.overlap_fraction < 1:
            raise SpectralError("overlap_fraction must be in [0, 1)")
        if self.window not in ("hann", "rectangular"):
            raise SpectralError(f"unknown window {self.window!r}")
        lo, hi = self.band
        if not 0 < lo < hi:
            raise SpectralError("band must satisfy 0 < f_lo < f_hi")

    @property
    def step(self):
        return self.segment_length - int(round(self.overlap_fraction * self.segment_length))

    def window_array(self):
        if self.window == "rectangular":
            return np.ones(self.segment_length)
        return get_window("hann", self.segment_length)  # periodic

    def n_segments(self, n):
        if n < self.segment_length:
            return 0
        return 1 + (n - self.segment_length) // self.step

    def bin_indices(self, sample_rate):
        lo, hi = self.band
        if hi > sample_rate / 2 + 1e-9:
            raise SpectralError(f"band top {hi} Hz above Nyquist {sample_rate / 2} Hz")
        df = sample_rate / self.segment_length
        k0 = max(1, math.ceil(lo / df - 1e-9))
        k1 = min(self.segment_length // 2, math.floor(hi / df + 1e-9))
        return np.arange(k0, k1 + 1)

    def frequencies(self, sample_rate):
        return self.bin_indices(sample_rate) * (sample_rate / self.segment_length)

    def effective_segments(self, n_segments, linear=False):
        """Number of independent averages equivalent to ``n_segments`` overlapped segments.

        Quadratic noise terms (noise x noise) decorrelate as the squared
        window overlap; ``linear=True`` is for terms linear in the noise,
        such as a deterministic tone beating against it.
        """
        if n_segments <= 1:
            return float(n_segments)
        w = self.window_array()
        w2 = np.sum(w**2)
        acc = 0.0
        for j in range(1, n_segments):
            shift = j * self.step
            if shift >= w.size:
                break
            rho = np.sum(w[shift:] * w[: w.size - shift]) / w2
            acc += (1 - j / n_segments) * (rho if linear else rho**2)
        return n_segments / (1 + 2 * acc)


@dataclass(frozen=True, eq=False)
class CrossSpectrum:
    pair: tuple  # ((station, sensor), (station, sensor))
    frequencies: np.ndarray
    values: np.ndarray  # complex, T^2/Hz
    n_segments: int
    same_station: bool
    cfg: SpectralConfig = SpectralConfig()
    sample_rate: float = 1000.0
    coupling: float = 1.0  # product of the two sensors' coupling factors

    @property
    def label(self):
        return "-".join("/".join(k) for k in self.pair)


@dataclass(frozen=True, eq=False)
class AveragedSpectrum:
    frequencies: np.ndarray
    mean_real: np.ndarray
    bin_sigma: np.ndarray
    n_correlators: int
    subset_label: str = "all"
    weighting: str = "uniform"
    n_segments: int = 0
    cfg: SpectralConfig = SpectralConfig()
    sample_rate: float = 1000.0
    mean_coupling: float = 1.0
    sigma_window: int = 64
    mean_imag: np.ndarray | None = None

    @property
    def effective_segments(self):
        return self.cfg.effective_segments(self.n_segments)


def segment_spectra(samples, cfg, sample_rate):
    """Windowed, density-scaled FFT of every segment, restricted to the band.

    Returns ``(n_segments, n_bins)`` complex so that a cross-spectral density
    is ``mean(conj(X_a) * X_b, axis=0)``.
    """
    x = np.asarray(samples, dtype=float)
    L = cfg.segment_length
    bins = cfg.bin_indices(sample_rate)
    n_seg = cfg.n_segments(x.size)
    if n_seg == 0:
        raise SpectralError(f"record of {x.size} samples shorter than segment_length {L}")
    w = cfg.window_array()
    scale = np.full(bins.size, 2.0 / (sample_rate * np.sum(w**2)))
    if L % 2 == 0:
        scale[bins == L // 2] /= 2
    segs = sliding_window_view(x, L)[:: cfg.step][:n_seg]
    out = np.empty((n_seg, bins.size), dtype=complex)
    for i, seg in enumerate(segs):
        out[i] = np.fft.rfft(seg * w)[bins]
    out *= np.sqrt(scale)
    return out


def _check_aligned(x, y):
    if (x.start_time, x.sample_rate, len(x)) != (y.start_time, y.sample_rate, len(y)):
        raise SpectralError(f"records {x.label} and {y.label} are not aligned")


def _cross(X, Y):
    """``conj(X) * Y`` from real and imaginary parts, so swapping the inputs
    conjugates the result bit for bit and ``X == Y`` gives an exactly real product."""
    re = X.real * Y.real + X.imag * Y.imag
    im = X.real * Y.imag - X.imag * Y.real
    return re + 1j * im


def _planes(X):
    return np.ascontiguousarray(X.real), np.ascontiguousarray(X.imag)


def _mean_cross(a, b):
    """Segment mean of ``conj(X) * Y`` given ``(real, imag)`` planes of each.

    Same exactness as :func:`_cross`; sums in place instead of building
    complex temporaries.
    """
    (ar, ai), (br, bi) = a, b
    dot = lambda u, v: np.einsum("ij,ij->j", u, v)  # noqa: E731
    n = ar.shape[0]
    return ((dot(ar, br) + dot(ai, bi)) + 1j * (dot(ar, bi) - dot(ai, br))) / n


def welch_cross_spectrum(x, y, cfg=SpectralConfig(), coupling=1.0):
    """Welch cross-spectral density of two aligned records."""
    _check_aligned(x, y)
    X = segment_spectra(x.samples, cfg, x.sample_rate)
    Y = X if y is x else segment_spectra(y.samples, cfg, y.sample_rate)
    vals = _mean_cross(_planes(X), _planes(Y))
    return CrossSpectrum(
        (x.key, y.key),
        cfg.frequencies(x.sample_rate),
        vals,
        X.shape[0],
        x.station_id == y.station_id,
        cfg,
        x.sample_rate,
        coupling,
    )


def cross_spectrogram(x, y, cfg=SpectralConfig()):
    """Per-segment real cross-power ``(segment_start_s, frequencies, Re[n_seg, n_bins])``."""
    _check_aligned(x, y)
    X = segment_spectra(x.samples, cfg, x.sample_rate)
    Y = segment_spectra(y.samples, cfg, y.sample_rate)
    t = np.arange(X.shape[0]) * cfg.step / x.sample_rate
    return t, cfg.frequencies(x.sample_rate), _cross(X, Y).real


def ordered_records(run):
    return sorted(run.records, key=lambda r: r.key)


def run_segment_spectra(run, cfg, workers=1):
    """Segment spectra of every record, keyed by (station, sensor), in lexicographic order."""
    if not run.is_aligned():
        raise SpectralError("run records are not aligned")
    recs = ordered_records(run)
    fn = lambda r: segment_spectra(r.samples, cfg, r.sample_rate)  # noqa: E731
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            specs = list(pool.map(fn, recs))
    else:
        specs = [fn(r) for r in recs]
    return {r.key: s for r, s in zip(recs, specs)}


def all_pair_spectra(run, cfg=SpectralConfig(), workers=1, segment_cache=None):
    """Cross-spectra of all C(n, 2) pairs, ordered lexicographically by pair ids."""
    if len(run) < 2:
        raise SpectralError("need at least two sensors")
    X = segment_cache if segment_cache is not None else run_segment_spectra(run, cfg, workers)
    freqs = cfg.frequencies(run.sample_rate)
    planes = {k: _planes(v) for k, v in X.items()}
    out = []
    for ka, kb in itertools.combinations(sorted(X), 2):
        vals = _mean_cross(planes[ka], planes[kb])
        out.append(
            CrossSpectrum(
                (ka, kb),
                freqs,
                vals,
                X[ka].shape[0],
                ka[0] == kb[0],
                cfg,
                run.sample_rate,
                run.coupling(ka) * run.coupling(kb),
            )
        )
    return out


def auto_spectra(run, cfg=SpectralConfig(), segment_cache=None):
    """One-sided auto-PSD of every record, keyed by (station, sensor)."""
    X = segment_cache if segment_cache is not None else run_segment_spectra(run, cfg)
    return {k: np.mean(np.abs(v) ** 2, axis=0) for k, v in X.items()}


def _neighbour_index(n, window, at=None):
    """Indices of each bin's neighbours, excluding the bin itself; ``(len(at), window)``.

    Windows are centred where possible and slide inward at the band edges.
    """
    rows = np.arange(n) if at is None else np.atleast_1d(np.asarray(at, dtype=int))
    if n <= window:
        idx = np.tile(np.arange(n), (rows.size, 1))
        keep = idx != rows[:, None]
        return idx[keep].reshape(rows.size, n - 1)
    half = window // 2
    start = np.clip(rows - half, 0, n - window - 1)
    span = start[:, None] + np.arange(window + 1)[None, :]
    keep = span != rows[:, None]
    return span[keep].reshape(rows.size, window)


def _mad(nb):
    med = np.median(nb, axis=-1, keepdims=True)
    return MAD_TO_SIGMA * np.median(np.abs(nb - med), axis=-1)


@functools.lru_cache(maxsize=None)
def mad_window_correction(n_neighbours, draws=20_000):
    """Finite-window factor making ``x / sigma_hat`` unit-variance for Gaussian noise.

    A MAD from ``n`` neighbours is itself noisy, which inflates the variance
    of a ratio normalized by it by roughly ``6/n`` (about 10% for 64 bins).
    The factor is ``sqrt(E[1 / sigma_hat^2])`` for unit-sigma input, evaluated once per window
    size by a fixed-seed Monte Carlo.
    """
    if n_neighbours < 2:
        return 1.0
    rng = np.random.default_rng(0x5EED)
    acc, done = 0.0, 0
    chunk = max(1, 2_000_000 // n_neighbours)
    while done < draws:
        m = min(chunk, draws - done)
        s = _mad(rng.standard_normal((m, n_neighbours)))
        acc += float(np.sum(1.0 / s**2))  # E[x^2 / s^2] = E[1 / s^2] for independent x
        done += m
    return math.sqrt(acc / draws)


def local_robust_sigma(values, window=64, at=None):
    """Gaussian-equivalent MAD of each bin's ``window`` neighbours (the bin excluded).

    Includes :func:`mad_window_correction`, so a Gaussian bin divided by its
    sigma has unit variance.
    """
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        return np.zeros(n if at is None else len(np.atleast_1d(at)))
    idx = _neighbour_index(n, window, at)
    out = np.empty(idx.shape[0])
    for lo in range(0, idx.shape[0], 8192):
        out[lo : lo + 8192] = _mad(values[idx[lo : lo + 8192]])
    return out * mad_window_correction(idx.shape[1])


def local_median(values, window=64, at=None):
    """Median of each bin's ``window`` neighbours (the bin excluded): the local continuum."""
    values = np.asarray(values, dtype=float)
    if values.size < 2:
        return np.zeros(values.size if at is None else len(np.atleast_1d(at)))
    idx = _neighbour_index(values.size, window, at)
    out = np.empty(idx.shape[0])
    for lo in range(0, idx.shape[0], 8192):
        out[lo : lo + 8192] = np.median(values[idx[lo : lo + 8192]], axis=1)
    return out


def select_subset(spectra, subset_label):
    if subset_label not in SUBSETS:
        raise SpectralError(f"unknown subset {subset_label!r}")
    if subset_label == "all":
        return list(spectra)
    same = subset_label == "same_station_only"
    return [s for s in spectra if s.same_station == same]


def network_average(spectra, subset_label="all", weighting="uniform", sigma_window=64):
    """Per-bin mean of the real cross-power over a subset of pairs, with a per-bin standard error.

    The standard error is the robust scatter of the averaged spectrum over the
    ``sigma_window`` neighbouring bins. Inverse-variance weights use the same
    band-local scatter of each individual spectrum.
    """
    if weighting not in WEIGHTINGS:
        raise SpectralError(f"unknown weighting {weighting!r}")
    chosen = select_subset(spectra, subset_label)
    if not chosen:
        raise SpectralError(f"no spectra in subset {subset_label!r}")
    re = np.stack([s.values.real for s in chosen])
    im = np.stack([s.values.imag for s in chosen])
    couplings = np.array([s.coupling for s in chosen])
    if weighting == "uniform" or len(chosen) == 1:
        w = np.full(re.shape, 1.0 / len(chosen))
    else:
        var = np.stack([local_robust_sigma(r, sigma_window) ** 2 for r in re])
        with np.errstate(divide="ignore"):
            w = np.where(var > 0, 1.0 / var, 0.0)
        tot = w.sum(axis=0)
        w = np.where(tot > 0, w / np.where(tot > 0, tot, 1), 1.0 / len(chosen))
    mean_re = np.sum(w * re, axis=0)
    mean_im = np.sum(w * im, axis=0)
    s0 = chosen[0]
    return AveragedSpectrum(
        s0.frequencies,
        mean_re,
        local_robust_sigma(mean_re, sigma_window),
        len(chosen),
        subset_label,
        weighting,
        s0.n_segments,
        s0.cfg,
        s0.sample_rate,
        float(np.sum(np.mean(w, axis=1) * couplings)),
        sigma_window,
        mean_im,
    )


def power_to_asd(power_sigma, n_effective):
    """White-noise ASD (T/sqrt(Hz)) whose single-pair cross-power scatter after
    ``n_effective`` averages equals ``power_sigma`` (T^2/Hz)."""
    return np.sqrt(np.asarray(power_sigma) * math.sqrt(2.0 * n_effective))


def sensitivity_curve(spectra, reference_frequency, window=512):
    """Network field sensitivity versus number of averaged correlators.

    Correlators enter in the given (lexicographic) order. For each N the
    N-average's real part is taken over ``window`` bins around the reference
    bin, its robust scatter converted to an equivalent white-noise ASD.
    Returns a list of ``(N, T/sqrt(Hz))``.
    """
    if not spectra:
        raise SpectralError("no spectra")
    f = spectra[0].frequencies
    if not f[0] <= reference_frequency <= f[-1]:
        raise SpectralError(f"reference frequency {reference_frequency} Hz outside band")
    k = int(np.argmin(np.abs(f - reference_frequency)))
    lo = max(0, min(k - window // 2, f.size - window - 1))
    hi = min(f.size, lo + window + 1)
    centre = k - lo
    n_eff = spectra[0].cfg.effective_segments(spectra[0].n_segments)
    acc = np.zeros(hi - lo)
    curve = []
    for n, s in enumerate(spectra, start=1):
        acc += s.values.real[lo:hi]
        sig = local_robust_sigma(acc / n, window, at=[centre])[0]
        curve.append((n, float(power_to_asd(sig, n_eff))))
    return curve


@dataclass(frozen=True)
class PowerLawFit:
    prefactor: float
    exponent: float
    residual: float  # rms of log residuals

    def __call__(self, n):
        return self.prefactor * np.asarray(n, dtype=float) ** (-self.exponent)


def fit_power_law(curve):
    """Least-squares fit of ``s(N) = prefactor * N**-exponent`` in log-log space."""
    n, s = (np.asarray(v, dtype=float) for v in zip(*curve)) if curve else (np.array([]), np.array([]))
    if n.size < 5:
        raise ValueError("need at least 5 points for a power-law fit")
    if np.any(s <= 0) or np.any(n <= 0):
        raise ValueError("power-law fit needs positive values")
    slope, intercept = np.polyfit(np.log(n), np.log(s), 1)
    resid = np.log(s) - (intercept + slope * np.log(n))
    return PowerLawFit(float(np.exp(intercept)), float(-slope), float(np.sqrt(np.mean(resid**2))))


def network_spectrum(run, cfg=SpectralConfig(), subset_label="all", weighting="uniform", sigma_window=64, workers=1):
    """Convenience: all pairs of ``run`` averaged over ``subset_label``."""
    return network_average(all_pair_spectra(run, cfg, workers), subset_label, weighting, sigma_window)
