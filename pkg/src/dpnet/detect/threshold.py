"""Monte-Carlo SNR thresholds from a measured noise model.

Trials are drawn directly in the frequency domain: each sensor's
density-scaled segment coefficients are complex Gaussians whose variance is
its measured PSD, plus a station-shared common-mode part. Averaging the
real cross-power over a pair subset and normalizing by the same local MAD
sigma as the real pipeline gives the noise-only SNR distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..correlator import SUBSETS, SpectralConfig, auto_spectra, local_robust_sigma, run_segment_spectra


class InsufficientTrialsError(ValueError):
    """Too few Monte-Carlo samples land in the tail to resolve the requested confidence level."""


MODES = ("per_bin", "global")
MIN_TAIL_PER_BIN = 50
MIN_TAIL_GLOBAL = 5


@dataclass(frozen=True)
class NoiseModel:
    """Per-sensor independent PSD and per-station common-mode PSD (T^2/Hz)."""

    sensors: tuple  # ((station, sensor), ...)
    independent_psd: tuple
    common_mode_psd: dict = field(default_factory=dict)  # station -> PSD
    n_segments: float = 37.0  # effective number of independent averages
    n_bins: int = 49_901  # bins in the analysis band

    def __post_init__(self):
        object.__setattr__(self, "sensors", tuple(tuple(k) for k in self.sensors))
        object.__setattr__(self, "independent_psd", tuple(float(p) for p in self.independent_psd))
        if len(self.sensors) != len(self.independent_psd):
            raise ValueError("one PSD per sensor required")
        if len(self.sensors) < 2:
            raise ValueError("need at least two sensors")
        if any(p < 0 for p in self.independent_psd) or any(p < 0 for p in self.common_mode_psd.values()):
            raise ValueError("PSDs must be >= 0")
        if self.n_segments < 1:
            raise ValueError("n_segments must be >= 1")

    @classmethod
    def white(cls, n_sensors_by_station, asd, common_mode_asd=0.0, n_segments=37.0, n_bins=49_901):
        sensors = [(st, f"{st}{i:02d}") for st, n in n_sensors_by_station.items() for i in range(n)]
        cm = {st: common_mode_asd**2 for st in n_sensors_by_station}
        return cls(tuple(sensors), (asd**2,) * len(sensors), cm, n_segments, n_bins)

    @classmethod
    def from_run(cls, run, cfg=SpectralConfig(), segment_cache=None):
        """Estimate the model from a run: band medians of auto-spectra and of same-station cross-power."""
        X = segment_cache if segment_cache is not None else run_segment_spectra(run, cfg)
        autos = auto_spectra(run, cfg, X)
        keys = sorted(X)
        cm = {}
        for st in sorted({k[0] for k in keys}):
            members = [k for k in keys if k[0] == st]
            if len(members) < 2:
                cm[st] = 0.0
                continue
            Z = sum(X[k] for k in members)
            Q = sum(np.abs(X[k]) ** 2 for k in members)
            pair_sum = np.mean((np.abs(Z) ** 2 - Q) / 2, axis=0)
            n_pairs = len(members) * (len(members) - 1) / 2
            cm[st] = max(float(np.median(pair_sum / n_pairs)), 0.0)
        psd = [max(float(np.median(autos[k])) - cm[k[0]], 0.0) for k in keys]
        n_seg = next(iter(X.values())).shape[0]
        return cls(tuple(keys), tuple(psd), cm, cfg.effective_segments(n_seg), next(iter(X.values())).shape[1])

    @property
    def stations(self):
        return sorted({k[0] for k in self.sensors})

    def pair_count(self, subset):
        counts = {st: sum(1 for k in self.sensors if k[0] == st) for st in self.stations}
        n = len(self.sensors)
        same = sum(c * (c - 1) // 2 for c in counts.values())
        return {"all": n * (n - 1) // 2, "same_station_only": same, "cross_station_only": n * (n - 1) // 2 - same}[
            subset
        ]

    def simulate_average(self, rng, n_bins, subset="all"):
        """One noise-only realization of the subset-averaged real cross-power, shape ``(n_bins,)``."""
        n_seg = max(1, int(round(self.n_segments)))
        shape = (n_seg, n_bins)

        def cgauss(var):
            s = math.sqrt(var / 2)
            return s * (rng.standard_normal(shape) + 1j * rng.standard_normal(shape))

        total_Z = np.zeros(shape, complex)
        total_Q = np.zeros(shape)
        same = np.zeros(shape)
        for st in self.stations:
            idx = [i for i, k in enumerate(self.sensors) if k[0] == st]
            common = cgauss(self.common_mode_psd.get(st, 0.0)) if self.common_mode_psd.get(st, 0.0) > 0 else 0.0
            Z = np.zeros(shape, complex)
            Q = np.zeros(shape)
            for i in idx:
                x = cgauss(self.independent_psd[i]) + common
                Z += x
                Q += np.abs(x) ** 2
            same += (np.abs(Z) ** 2 - Q) / 2
            total_Z += Z
            total_Q += Q
        everything = (np.abs(total_Z) ** 2 - total_Q) / 2
        sums = {"all": everything, "same_station_only": same, "cross_station_only": everything - same}
        n_pairs = self.pair_count(subset)
        if n_pairs == 0:
            raise ValueError(f"noise model has no pairs in subset {subset!r}")
        return np.mean(sums[subset], axis=0) / n_pairs


@dataclass(frozen=True)
class Threshold:
    """SNR threshold; ``value`` applies to every bin (the noise model is locally white)."""

    value: float
    cl: float
    mode: str
    n_trials: int
    subset: str
    n_samples: int  # MC SNR samples behind the quantile
    seed: int

    def at(self, frequencies):
        return np.full(np.shape(frequencies), self.value)

    def __float__(self):
        return float(self.value)


def _trial_snr(model, seed, key, n_bins, subset, window_bins):
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))
    avg = model.simulate_average(rng, n_bins, subset)
    sigma = local_robust_sigma(avg, window_bins)
    return np.divide(avg, sigma, out=np.zeros_like(avg), where=sigma > 0)


def noise_snr_samples(model, n_trials, subset="all", window_bins=64, bins_per_trial=512, seed=0):
    """Pooled noise-only SNR values, ``(n_trials, bins_per_trial)``."""
    return np.stack([_trial_snr(model, seed, (0, t), bins_per_trial, subset, window_bins) for t in range(n_trials)])


def mc_threshold(model, n_trials=200, cl=0.95, subset="all", window_bins=64, mode="per_bin", bins_per_trial=512, seed=0):
    """SNR above which a noise-only bin lies with probability ``1 - cl``.

    ``mode="per_bin"`` pools ``bins_per_trial`` bins of every trial (all bins
    share one distribution under a locally white model). ``mode="global"``
    takes the maximum SNR over the whole band in each trial, giving a
    look-elsewhere-corrected threshold.
    """
    if n_trials < 100:
        raise ValueError("n_trials must be >= 100")
    if not 0 < cl < 1:
        raise ValueError("cl must be in (0, 1)")
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if subset not in SUBSETS:
        raise ValueError(f"unknown subset {subset!r}")
    if mode == "per_bin":
        n = n_trials * bins_per_trial
        if n * (1 - cl) < MIN_TAIL_PER_BIN:
            raise InsufficientTrialsError(
                f"{n} samples leave {n * (1 - cl):.1f} in the tail at cl={cl}; need >= {MIN_TAIL_PER_BIN}"
            )
        samples = noise_snr_samples(model, n_trials, subset, window_bins, bins_per_trial, seed).ravel()
    else:
        if n_trials * (1 - cl) < MIN_TAIL_GLOBAL:
            raise InsufficientTrialsError(
                f"{n_trials} trials leave {n_trials * (1 - cl):.1f} in the tail at cl={cl}; need >= {MIN_TAIL_GLOBAL}"
            )
        samples = np.array(
            [_trial_snr(model, seed, (1, t), model.n_bins, subset, window_bins).max() for t in range(n_trials)]
        )
        n = samples.size
    return Threshold(float(np.quantile(samples, cl)), cl, mode, n_trials, subset, int(n), seed)
