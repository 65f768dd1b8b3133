"""Tone response of the spectral pipeline: cross-power per tesla^2 of tone amplitude."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from ..physics import ShieldGeometry, epsilon_from_field
from ..correlator import SpectralConfig, welch_cross_spectrum
from ..records import TimeSeriesRecord
from ..simnet import tone


@dataclass(frozen=True)
class BinResponse:
    frequency: float  # requested tone frequency
    bin_frequency: float  # nearest analysis bin
    center: float  # s (= T^2/Hz per T^2), tone on the bin centre
    edge: float  # worst-case scalloping, tone half a bin off
    at_frequency: float  # tone exactly at ``frequency``

    @property
    def scalloping(self):
        return self.edge / self.center


def _peak(cfg, sample_rate, f, amplitude, k):
    """Phase-averaged Re cross-power in bin ``k`` for a noiseless tone at ``f``."""
    vals = []
    for phase in (0.0, math.pi / 2):
        x = tone(amplitude, f, phase, sample_rate, cfg.segment_length)
        rec = TimeSeriesRecord("cal", "cal", 0, sample_rate, x)
        spec = welch_cross_spectrum(rec, rec, cfg)
        vals.append(spec.values.real[k])
    return float(np.mean(vals))


def calibrate_bin_response(cfg=SpectralConfig(), f=100.0, sample_rate=1000.0, amplitude=1.0):
    """Measure the pipeline's peak-bin response to a unit tone near ``f``.

    A noiseless single-segment tone goes through :func:`welch_cross_spectrum`;
    the result is averaged over two quadrature phases so that bins at DC or
    Nyquist follow the same rms convention as interior bins.
    """
    freqs = cfg.frequencies(sample_rate)
    if not freqs[0] <= f <= freqs[-1]:
        raise ValueError(f"{f} Hz outside the analysis band")
    df = sample_rate / cfg.segment_length
    k = int(np.argmin(np.abs(freqs - f)))
    fc = float(freqs[k])
    center = _peak(cfg, sample_rate, fc, amplitude, k) / amplitude**2
    if k + 1 < freqs.size:
        edge = _peak(cfg, sample_rate, fc + df / 2, amplitude, k) / amplitude**2
    else:
        edge = _peak(cfg, sample_rate, fc - df / 2, amplitude, k) / amplitude**2
    at = center if f == fc else _peak(cfg, sample_rate, f, amplitude, k) / amplitude**2
    return BinResponse(float(f), fc, center, edge, at)


def analytic_center_response(cfg, sample_rate):
    """Closed-form bin-centre response, (sum w)^2 / (2 fs sum w^2), for cross-checks."""
    w = cfg.window_array()
    return float(np.sum(w) ** 2 / (2 * sample_rate * np.sum(w**2)))


@functools.lru_cache(maxsize=32)
def center_response(cfg=SpectralConfig(), sample_rate=1000.0):
    """Bin-centre response for ``cfg``; the same for every bin, so one measurement serves the band."""
    lo, hi = cfg.frequencies(sample_rate)[[0, -1]]
    return calibrate_bin_response(cfg, 0.5 * (lo + hi), sample_rate).center


def epsilon_from_power(power, f, response, mean_coupling=1.0, edge_length=2.0):
    """Kinetic mixing implied by a tone excess ``power`` (T^2/Hz) in an averaged spectrum.

    A pair's real cross-power from a common tone is ``c_a c_b B^2 response``
    with ``B`` the wall field at unit coupling, so the average carries
    ``mean_coupling`` in place of ``c_a c_b``.
    """
    power = np.clip(np.asarray(power, dtype=float), 0.0, None)
    field = np.sqrt(power / (response * mean_coupling))
    return epsilon_from_field(field, f, ShieldGeometry(edge_length, 1.0))
