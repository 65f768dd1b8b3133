"""Detection statistics: SNR, thresholds, candidates, vetoes, limits and injections."""

from .candidates import (
    REASONS,
    Candidate,
    VetoContext,
    VetoPolicy,
    excess_power,
    find_candidates,
    pair_uniformity_pvalue,
    veto_candidates,
)
from .injection import Recovery, epsilon_for_snr, inject, inject_and_recover, recover
from .limits import ExclusionCurve, exclusion_curve, loglog_slope, upper_limit_power
from .response import BinResponse, analytic_center_response, calibrate_bin_response, center_response, epsilon_from_power
from .snr import AsymmetryStats, SnrSpectrum, snr_asymmetry_stats, snr_spectrum
from .threshold import InsufficientTrialsError, NoiseModel, Threshold, mc_threshold, noise_snr_samples

__all__ = [name for name in dir() if not name.startswith("_")]
