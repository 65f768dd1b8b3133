"""Per-bin signal-to-noise ratio of an averaged cross-spectrum and its asymmetry."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..correlator import local_robust_sigma


@dataclass(frozen=True, eq=False)
class SnrSpectrum:
    frequencies: np.ndarray
    snr: np.ndarray
    sigma: np.ndarray
    sigma_window: int
    source: object = None  # the AveragedSpectrum it was computed from


def snr_spectrum(avg, window_bins=64):
    """SNR = mean real cross-power / robust local sigma.

    The sigma of each bin is the MAD (scaled to a Gaussian sigma) of the
    ``window_bins`` neighbouring bins, the bin itself excluded; windows slide
    inward at the band edges. Bins with zero sigma get SNR 0.
    """
    if window_bins < 16:
        raise ValueError("window_bins must be >= 16")
    if getattr(avg, "sigma_window", None) == window_bins and avg.bin_sigma is not None:
        sigma = avg.bin_sigma
    else:
        sigma = local_robust_sigma(avg.mean_real, window_bins)
    snr = np.divide(avg.mean_real, sigma, out=np.zeros_like(avg.mean_real), where=sigma > 0)
    return SnrSpectrum(avg.frequencies, snr, sigma, window_bins, avg)


@dataclass(frozen=True)
class AsymmetryStats:
    n_above: int
    n_below: int
    skewness: float  # standardized third moment about zero
    central_skewness: float  # conventional skewness about the sample mean
    bound: float

    @property
    def ratio(self):
        return self.n_above / self.n_below if self.n_below else float("inf")


def snr_asymmetry_stats(snr, bound):
    """Counts beyond +/-``bound`` and the skewness of the SNR distribution.

    ``skewness`` is measured about zero, the centre expected for noise that
    is uncorrelated between the two sensors, so a one-sided shift from
    correlated (common-mode) noise shows up as a positive value.
    """
    if not bound > 0:
        raise ValueError("bound must be > 0")
    x = np.asarray(getattr(snr, "snr", snr), dtype=float)
    m2 = np.mean(x**2)
    skew0 = float(np.mean(x**3) / m2**1.5) if m2 > 0 else 0.0
    d = x - x.mean()
    c2 = np.mean(d**2)
    central = float(np.mean(d**3) / c2**1.5) if c2 > 0 else 0.0
    return AsymmetryStats(int(np.sum(x > bound)), int(np.sum(x < -bound)), skew0, central, float(bound))
