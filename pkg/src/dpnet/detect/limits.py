"""Per-bin upper limits on the kinetic mixing."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from ..physics import freq_to_mass
from .response import center_response, epsilon_from_power

THRESHOLD_METHOD = "one-sided gaussian: max(mean_real, 0) + z_cl * bin_sigma"
AMPLITUDE_CONVENTION = "deterministic rms amplitude (amplitude_scale = 1); no stochastic-field correction"


@dataclass(frozen=True, eq=False)
class ExclusionCurve:
    frequencies: np.ndarray
    masses: np.ndarray  # eV
    epsilon_95: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(~(self.epsilon_95 > 0)):
            raise ValueError("epsilon_95 must be > 0 everywhere")

    def to_csv(self):
        buf = io.StringIO()
        buf.write(f"# config_hash={self.provenance.get('config_hash', '')} version={self.provenance.get('tool_version', '')}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["mass_eV", "epsilon_95"])
        for m, e in zip(self.masses, self.epsilon_95):
            w.writerow([repr(float(m)), repr(float(e))])
        return buf.getvalue()

    def provenance_json(self):
        return json.dumps(self.provenance, sort_keys=True, indent=2) + "\n"

    def to_bytes(self):
        return self.to_csv().encode() + self.provenance_json().encode()


def upper_limit_power(avg, cl=0.95):
    """One-sided upper limit on tone power per bin, positive-truncated (T^2/Hz)."""
    if not 0 < cl < 1:
        raise ValueError("cl must be in (0, 1)")
    return np.maximum(avg.mean_real, 0.0) + stats.norm.ppf(cl) * avg.bin_sigma


def exclusion_curve(avg, edge_length=2.0, cl=0.95, run_id="", config_hash="", tool_version=""):
    """Upper limit on epsilon for every bin of ``avg``, reported against mass."""
    from .. import __version__

    resp = center_response(avg.cfg, avg.sample_rate)
    p_up = upper_limit_power(avg, cl)
    # a bin with no scatter and no power still cannot exclude everything
    p_up = np.maximum(p_up, np.finfo(float).tiny)
    eps = epsilon_from_power(p_up, avg.frequencies, resp, avg.mean_coupling, edge_length)
    provenance = {
        "run_id": run_id,
        "config_hash": config_hash,
        "tool_version": tool_version or __version__,
        "cl": cl,
        "threshold_method": THRESHOLD_METHOD,
        "bin_response_s": resp,
        "mean_coupling": avg.mean_coupling,
        "edge_length_m": edge_length,
        "subset": avg.subset_label,
        "n_correlators": avg.n_correlators,
        "amplitude_convention": AMPLITUDE_CONVENTION,
    }
    return ExclusionCurve(avg.frequencies, freq_to_mass(avg.frequencies), np.asarray(eps), provenance)


def loglog_slope(curve, f_lo=None, f_hi=None):
    """Least-squares slope of log(epsilon_95) against log(frequency)."""
    f, e = curve.frequencies, curve.epsilon_95
    m = np.ones(f.size, bool)
    if f_lo is not None:
        m &= f >= f_lo
    if f_hi is not None:
        m &= f <= f_hi
    return float(np.polyfit(np.log(f[m]), np.log(e[m]), 1)[0])
