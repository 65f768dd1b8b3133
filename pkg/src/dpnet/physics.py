"""Dark-photon dark matter parameters and the field they induce at a shield wall."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import constants as K


class DomainError(ValueError):
    """Raised when a physical quantity is outside its domain."""


@dataclass(frozen=True)
class HaloModel:
    """Local dark-matter halo: density (GeV/cm^3), velocity dispersion (c), quality factor."""

    local_density: float = K.LOCAL_DM_DENSITY_GEV_CM3
    velocity_dispersion: float = K.HALO_VELOCITY_DISPERSION
    quality_factor: float | None = None

    def __post_init__(self):
        if not self.local_density > 0:
            raise DomainError(f"local_density must be > 0, got {self.local_density}")
        if not 0 < self.velocity_dispersion < 1:
            raise DomainError(f"velocity_dispersion must be in (0, 1), got {self.velocity_dispersion}")
        expected = self.velocity_dispersion**-2
        if self.quality_factor is None:
            object.__setattr__(self, "quality_factor", expected)
        elif not math.isinf(self.quality_factor) and abs(self.quality_factor / expected - 1) > 0.01:
            raise DomainError(
                f"quality_factor {self.quality_factor} inconsistent with velocity_dispersion^-2 = {expected}"
            )


@dataclass(frozen=True)
class ShieldGeometry:
    """Shield room size (cube root of the volume, m) and a sensor's coupling to the wall field."""

    edge_length: float = 2.0
    coupling_factor: float = 1.0

    def __post_init__(self):
        if not self.edge_length > 0:
            raise DomainError(f"edge_length must be > 0, got {self.edge_length}")
        if not 0 < self.coupling_factor <= 1:
            raise DomainError(f"coupling_factor must be in (0, 1], got {self.coupling_factor}")


@dataclass(frozen=True)
class DpdmParams:
    """One coherent dark-photon realisation.

    ``mass`` is derived from ``frequency`` when omitted. ``amplitude_scale``
    multiplies the rms field; 1.0 is the deterministic rms convention.
    """

    frequency: float
    epsilon: float
    mass: float | None = None
    polarization: tuple[float, float, float] = (0.0, 0.0, 1.0)
    phase: float = 0.0
    amplitude_scale: float = 1.0

    def __post_init__(self):
        if not self.frequency > 0:
            raise DomainError(f"frequency must be > 0, got {self.frequency}")
        if self.mass is None:
            object.__setattr__(self, "mass", freq_to_mass(self.frequency))
        elif abs(self.mass / freq_to_mass(self.frequency) - 1) > 1e-9:
            raise DomainError("mass and frequency disagree by more than 1e-9")
        pol = np.asarray(self.polarization, dtype=float)
        if pol.shape != (3,) or abs(np.linalg.norm(pol) - 1) > 1e-12:
            raise DomainError("polarization must be a unit 3-vector")
        object.__setattr__(self, "polarization", tuple(float(p) for p in pol))
        if self.epsilon < 0:
            raise DomainError("epsilon must be >= 0")
        if self.amplitude_scale < 0:
            raise DomainError("amplitude_scale must be >= 0")
        object.__setattr__(self, "phase", float(self.phase) % (2 * math.pi))


def freq_to_mass(f):
    """Dark-photon mass in eV for an oscillation frequency in Hz."""
    f = np.asarray(f, dtype=float)
    if np.any(~(f > 0)):
        raise DomainError("frequency must be > 0")
    out = K.PLANCK_EV_S * f
    return float(out) if out.ndim == 0 else out


def mass_to_freq(m):
    """Oscillation frequency in Hz for a dark-photon mass in eV."""
    m = np.asarray(m, dtype=float)
    if np.any(~(m > 0)):
        raise DomainError("mass must be > 0")
    out = m / K.PLANCK_EV_S
    return float(out) if out.ndim == 0 else out


def coherence_properties(f, halo=HaloModel()):
    """Return ``(coherence_time_s, coherence_length_m)`` at frequency ``f``.

    The coherence time is Q/f; the coherence length is the de Broglie
    wavelength hbar c / (m v).
    """
    m = freq_to_mass(f)
    tau = halo.quality_factor / f
    length = K.HBAR_C_EV_M / (m * halo.velocity_dispersion)
    return tau, length


def wall_field_amplitude(eps, f, geom=ShieldGeometry()):
    """Oscillating field amplitude (T) next to a shield wall of size ``geom.edge_length``."""
    if np.any(np.asarray(eps) < 0):
        raise DomainError("eps must be >= 0")
    if np.any(~(np.asarray(f) > 0)):
        raise DomainError("frequency must be > 0")
    return (
        K.WALL_FIELD_COEFFICIENT_T
        * eps
        * (f / K.WALL_FIELD_REFERENCE_HZ)
        * (geom.edge_length / K.WALL_FIELD_REFERENCE_M)
        * geom.coupling_factor
    )


def epsilon_from_field(B, f, geom=ShieldGeometry()):
    """Kinetic mixing that produces a wall field of amplitude ``B`` (T); inverse of
    :func:`wall_field_amplitude`."""
    if geom.coupling_factor == 0:
        raise DomainError("zero coupling factor: sensor is blind to the signal")
    if np.any(np.asarray(B) < 0):
        raise DomainError("field amplitude must be >= 0")
    if np.any(~(np.asarray(f) > 0)):
        raise DomainError("frequency must be > 0")
    return B / (
        K.WALL_FIELD_COEFFICIENT_T
        * (f / K.WALL_FIELD_REFERENCE_HZ)
        * (geom.edge_length / K.WALL_FIELD_REFERENCE_M)
        * geom.coupling_factor
    )


def rms_potential(m, halo=HaloModel()):
    """Dark-photon potential amplitude sqrt(2 rho)/m in natural units (eV)."""
    if not m > 0:
        raise DomainError("mass must be > 0")
    rho = halo.local_density * K.GEV_PER_CM3_IN_EV4
    return math.sqrt(2 * rho) / m


def effective_current_field(eps, f, geom=ShieldGeometry(), halo=HaloModel()):
    """Wall field (T) from the effective current eps m^2 A' times the shield size.

    Only one Cartesian component of a randomly polarised A' drives the
    current that sources the tangential wall field, so the rms potential is
    projected by 1/sqrt(3). This is the first-principles counterpart of the
    fixed coefficient used by :func:`wall_field_amplitude`.
    """
    m = freq_to_mass(f)
    a_axis = rms_potential(m, halo) / math.sqrt(3.0)
    current = eps * m**2 * a_axis  # eV^3
    b_nat = current * geom.edge_length * K.METER_IN_INV_EV  # eV^2
    return b_nat / K.TESLA_IN_EV2 * geom.coupling_factor


def draw_amplitude_scale(rng):
    """Rayleigh amplitude multiplier with unit rms (one coherence block)."""
    return float(rng.rayleigh(scale=1 / math.sqrt(2)))
