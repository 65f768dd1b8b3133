"""Candidate bins above threshold and the veto battery that tests them.

Vetoes
------
half_run_inconsistent
    The SNR must exceed ``threshold / sqrt(2)`` in each half of the run.
cross_station_absent
    The cross-station-only average must be positive at the bin and within a
    factor of 3 of the all-pair average (skipped for single-station runs).
pair_amplitude_nonuniform
    Per-pair excesses must fit ``c_a c_b P`` for a single common power ``P``
    (chi-square tail probability above the one-sided 5-sigma level).
known_technical_line
    The bin lies within tolerance of a listed technical line.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from ..correlator import (
    MAD_TO_SIGMA,
    SpectralConfig,
    all_pair_spectra,
    auto_spectra,
    local_median,
    local_robust_sigma,
    mad_window_correction,
    network_average,
    run_segment_spectra,
)
from .response import center_response, epsilon_from_power
from .snr import snr_spectrum

PENDING, PASSED, REJECTED = "pending", "passed", "rejected"
REASONS = ("half_run_inconsistent", "cross_station_absent", "pair_amplitude_nonuniform", "known_technical_line")


@dataclass(frozen=True)
class Candidate:
    frequency: float
    snr: float
    implied_epsilon: float
    veto_status: str = PENDING
    reasons: tuple = ()
    bin_index: int = -1
    excess_power: float = 0.0  # T^2/Hz above the local continuum

    def __post_init__(self):
        if self.implied_epsilon < 0:
            raise ValueError("implied_epsilon must be >= 0")
        if self.veto_status not in (PENDING, PASSED, REJECTED):
            raise ValueError(f"bad veto_status {self.veto_status!r}")
        if self.veto_status == REJECTED and not self.reasons:
            raise ValueError("rejected candidates need at least one reason")
        if any(r not in REASONS for r in self.reasons):
            raise ValueError(f"unknown veto reason in {self.reasons}")

    def to_json(self):
        return {
            "frequency": self.frequency,
            "snr": self.snr,
            "implied_epsilon": self.implied_epsilon,
            "veto_status": self.veto_status,
            "reasons": list(self.reasons),
        }


def _threshold_values(threshold, n):
    if hasattr(threshold, "at"):
        return threshold.at(np.zeros(n))
    return np.broadcast_to(np.asarray(threshold, dtype=float), (n,))


def excess_power(avg, window_bins=64, at=None):
    """Mean real cross-power above the local median continuum."""
    vals = avg.mean_real if at is None else avg.mean_real[np.asarray(at)]
    return vals - local_median(avg.mean_real, window_bins, at)


def find_candidates(snr, threshold, edge_length=2.0, window_bins=None):
    """Every bin with SNR above ``threshold``, with its implied kinetic mixing.

    ``snr`` must carry its source :class:`AveragedSpectrum`. The implied
    epsilon comes from the excess over the local continuum (so a flat
    common-mode floor does not masquerade as signal) converted with the
    calibrated bin response.
    """
    thr = _threshold_values(threshold, snr.snr.size)
    hits = np.flatnonzero(snr.snr > thr)
    if hits.size == 0:
        return []
    avg = snr.source
    window_bins = window_bins or snr.sigma_window
    excess = excess_power(avg, window_bins, hits)
    resp = center_response(avg.cfg, avg.sample_rate)
    eps = epsilon_from_power(excess, snr.frequencies[hits], resp, avg.mean_coupling, edge_length)
    return [
        Candidate(float(snr.frequencies[k]), float(snr.snr[k]), float(e), bin_index=int(k), excess_power=float(p))
        for k, e, p in zip(hits, np.atleast_1d(eps), excess)
    ]


@dataclass(frozen=True)
class VetoPolicy:
    threshold: float = 1.645  # SNR threshold the candidates were selected with
    window_bins: int = 64
    technical_lines: tuple = ()  # Hz
    line_tolerance_hz: float = 0.05
    amplitude_ratio_bounds: tuple = (1 / 3, 3.0)
    uniformity_sigma: float = 5.0
    subset: str = "all"
    cfg: SpectralConfig = field(default_factory=SpectralConfig)

    @property
    def uniformity_p(self):
        return float(stats.norm.sf(self.uniformity_sigma))


@dataclass(frozen=True, eq=False)
class VetoContext:
    """Spectra a veto pass needs; build once with :meth:`from_run` and reuse."""

    full: object  # AveragedSpectrum, policy subset
    cross: object | None  # cross-station-only AveragedSpectrum, or None for one station
    halves: tuple  # two SNR arrays
    pairs: list  # CrossSpectrum list of the full run
    autos: dict
    couplings: dict
    n_effective: float  # averages seen by terms linear in the noise (tone beats)

    @classmethod
    def from_run(cls, run, policy=VetoPolicy(), pairs=None, segment_cache=None):
        cfg = policy.cfg
        if pairs is None:
            X = segment_cache if segment_cache is not None else run_segment_spectra(run, cfg)
            pairs = all_pair_spectra(run, cfg, segment_cache=X)
        else:
            X = segment_cache
        autos = auto_spectra(run, cfg, X) if X is not None else auto_spectra(run, cfg)
        full = network_average(pairs, policy.subset, sigma_window=policy.window_bins)
        n_stations = len({r.station_id for r in run.records})
        cross = network_average(pairs, "cross_station_only", sigma_window=policy.window_bins) if n_stations > 1 else None
        n = run.n_samples
        halves = []
        for a, b in ((0, n // 2), (n // 2, 2 * (n // 2))):
            avg = network_average(all_pair_spectra(run.slice(a, b), cfg), policy.subset, sigma_window=policy.window_bins)
            halves.append(snr_spectrum(avg, policy.window_bins).snr)
        return cls(
            full,
            cross,
            tuple(halves),
            pairs,
            autos,
            {r.key: run.coupling(r.key) for r in run.records},
            cfg.effective_segments(pairs[0].n_segments, linear=True),
        )


def _guarded_stats(values, k, window, guard):
    """Median and Gaussian-equivalent MAD of ``window`` bins around ``k``, skipping ``k +- guard``.

    The guard keeps a strong line's own main lobe out of its continuum.
    """
    n = values.size
    span = window + 2 * guard + 1
    lo = max(0, min(k - span // 2, n - span))
    idx = np.arange(lo, min(n, lo + span))
    nb = values[idx[np.abs(idx - k) > guard]]
    med = float(np.median(nb))
    return med, MAD_TO_SIGMA * float(np.median(np.abs(nb - med))) * mad_window_correction(nb.size)


def pair_uniformity_pvalue(ctx, k, window_bins=64, guard=2):
    """Chi-square tail probability that per-pair excesses at bin ``k`` share one common field.

    A common tone also beats against every noise source it meets: each
    sensor's own noise and each station's common-mode field. One beat is
    shared by every pair touching that sensor or station, so the beats
    enter as correlated terms of the residual covariance (a generalized
    chi-square) rather than as independent per-pair scatter.
    """
    r, med, var0, g, keys = [], [], [], [], []
    for sp in ctx.pairs:
        re = sp.values.real
        m, sig = _guarded_stats(re, k, window_bins, guard)
        r.append(re[k] - m)
        med.append(m)
        var0.append(sig**2)
        ka, kb = sp.pair
        g.append((ctx.couplings.get(ka, 1.0), ctx.couplings.get(kb, 1.0)))
        keys.append((ka, kb))
    r, med, var0 = np.array(r), np.array(med), np.maximum(np.array(var0), 1e-300)
    ca, cb = np.array(g).T
    gg = ca * cb

    # noise sources: each sensor's own noise, then each station's common mode
    sensors = sorted({key for pair in keys for key in pair})
    stations = sorted({key[0] for key in sensors})
    same = {st: [i for i, (a, b) in enumerate(keys) if a[0] == b[0] == st] for st in stations}
    cm = {st: max(float(np.median(med[idx])), 0.0) if idx else 0.0 for st, idx in same.items()}
    psd = [max(_guarded_stats(ctx.autos[key], k, window_bins, guard)[0] - cm[key[0]], 0.0) for key in sensors]
    psd = np.array(psd + [cm[st] for st in stations])
    # Re(X_a X_b*) picks up c_a * beat(sources of b) + c_b * beat(sources of a)
    load = np.zeros((len(keys), psd.size))
    col = {key: i for i, key in enumerate(sensors)} | {st: len(sensors) + i for i, st in enumerate(stations)}
    for i, (a, b) in enumerate(keys):
        for src_a, src_b in ((a, b), (a[0], b[0])):
            load[i, col[src_b]] += ca[i]
            load[i, col[src_a]] += cb[i]

    p_hat = 0.0
    for _ in range(3):
        beat = p_hat * psd / (2 * ctx.n_effective)
        cov = np.diag(var0) + (load * beat) @ load.T
        ci_g, ci_r = np.linalg.solve(cov, np.column_stack([gg, r])).T
        p_hat = max(float(gg @ ci_r / (gg @ ci_g)), 0.0)
    resid = r - gg * p_hat
    chi2 = float(resid @ np.linalg.solve(cov, resid))
    return float(stats.chi2.sf(chi2, max(len(r) - 1, 1)))


def veto_candidates(candidates, run=None, policy=VetoPolicy(), context=None):
    """Apply the veto battery; returns new candidates with status ``passed`` or ``rejected``."""
    candidates = list(candidates)
    if not candidates:
        return []
    if context is None:
        if run is None:
            raise ValueError("need a run or a prepared VetoContext")
        if run.n_samples < 2 * policy.cfg.segment_length:
            raise ValueError("run too short to split into halves of at least one segment")
        context = VetoContext.from_run(run, policy)
    ctx = context
    freqs = ctx.full.frequencies
    df = freqs[1] - freqs[0] if freqs.size > 1 else 1.0
    half_thr = policy.threshold / math.sqrt(2)
    lo_r, hi_r = policy.amplitude_ratio_bounds
    out = []
    for c in candidates:
        k = c.bin_index if c.bin_index >= 0 else int(np.argmin(np.abs(freqs - c.frequency)))
        reasons = []
        if not all(h[k] > half_thr for h in ctx.halves):
            reasons.append("half_run_inconsistent")
        if ctx.cross is not None:
            full_x = excess_power(ctx.full, policy.window_bins, [k])[0]
            cross_x = excess_power(ctx.cross, policy.window_bins, [k])[0]
            ratio = cross_x / full_x if full_x > 0 else math.inf
            cross_snr = ctx.cross.mean_real[k] / ctx.cross.bin_sigma[k] if ctx.cross.bin_sigma[k] > 0 else 0.0
            if not (cross_snr > 0 and cross_x > 0 and lo_r <= ratio <= hi_r):
                reasons.append("cross_station_absent")
        if pair_uniformity_pvalue(ctx, k, policy.window_bins) < policy.uniformity_p:
            reasons.append("pair_amplitude_nonuniform")
        tol = max(policy.line_tolerance_hz, df)
        if any(abs(c.frequency - f) <= tol for f in policy.technical_lines):
            reasons.append("known_technical_line")
        out.append(replace(c, veto_status=REJECTED if reasons else PASSED, reasons=tuple(reasons)))
    return out
