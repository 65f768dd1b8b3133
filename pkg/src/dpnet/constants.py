"""Physical constants and natural-unit conversion factors.

Every conversion between SI and natural (hbar = c = 1, Heaviside-Lorentz)
units in the package goes through this table. Values are CODATA 2018 as
shipped by ``scipy.constants``; the derived factors are computed here once
so that their provenance is auditable (``dpnet constants`` dumps them).
"""

import math

from scipy import constants as _si

#: Planck constant, eV s.
PLANCK_EV_S = _si.h / _si.e
#: Reduced Planck constant, eV s.
HBAR_EV_S = _si.hbar / _si.e
#: Speed of light, m/s.
SPEED_OF_LIGHT = _si.c
#: hbar * c, eV m.
HBAR_C_EV_M = _si.hbar * _si.c / _si.e
#: hbar * c, eV nm (197.3269804).
HBAR_C_EV_NM = HBAR_C_EV_M * 1e9

#: 1 m expressed in eV^-1.
METER_IN_INV_EV = 1.0 / HBAR_C_EV_M
#: 1 tesla expressed in eV^2 (Heaviside-Lorentz, e = sqrt(4 pi alpha)).
TESLA_IN_EV2 = math.sqrt(HBAR_C_EV_M**3 / (_si.mu_0 * _si.e))
#: 1 GeV/cm^3 expressed in eV^4.
GEV_PER_CM3_IN_EV4 = 1e9 * (HBAR_C_EV_M * 1e2) ** 3
#: 1 GeV/cm^3 as a magnetic energy density B^2/(2 mu0), expressed as B^2 in T^2.
GEV_PER_CM3_IN_T2 = 2.0 * _si.mu_0 * 1e9 * _si.e * 1e6

#: Wall-field coefficient: B = coefficient * eps * (f / 10 Hz) * (edge / 1 m) tesla.
WALL_FIELD_COEFFICIENT_T = 1.63e-12
WALL_FIELD_REFERENCE_HZ = 10.0
WALL_FIELD_REFERENCE_M = 1.0

#: Standard halo model defaults.
LOCAL_DM_DENSITY_GEV_CM3 = 0.45
HALO_VELOCITY_DISPERSION = 1e-3

#: Station baseline (Suzhou to Harbin), m.
BASELINE_M = 1.692e6


def table():
    """Return the constants table as a JSON-serialisable dict."""
    return {
        "PLANCK_EV_S": {"value": PLANCK_EV_S, "unit": "eV s", "source": "CODATA 2018 h / e"},
        "HBAR_EV_S": {"value": HBAR_EV_S, "unit": "eV s", "source": "CODATA 2018 hbar / e"},
        "SPEED_OF_LIGHT": {"value": SPEED_OF_LIGHT, "unit": "m/s", "source": "exact SI"},
        "HBAR_C_EV_NM": {"value": HBAR_C_EV_NM, "unit": "eV nm", "source": "hbar c / e"},
        "METER_IN_INV_EV": {"value": METER_IN_INV_EV, "unit": "eV^-1", "source": "1 / (hbar c)"},
        "TESLA_IN_EV2": {
            "value": TESLA_IN_EV2,
            "unit": "eV^2",
            "source": "sqrt((hbar c)^3 / (mu0 e)), Heaviside-Lorentz",
        },
        "GEV_PER_CM3_IN_EV4": {
            "value": GEV_PER_CM3_IN_EV4,
            "unit": "eV^4",
            "source": "1e9 eV * (hbar c / 1 cm)^3",
        },
        "GEV_PER_CM3_IN_T2": {
            "value": GEV_PER_CM3_IN_T2,
            "unit": "T^2",
            "source": "2 mu0 * (1 GeV/cm^3 in J/m^3)",
        },
        "WALL_FIELD_COEFFICIENT_T": {
            "value": WALL_FIELD_COEFFICIENT_T,
            "unit": "T",
            "source": "wall field at eps=1, f=10 Hz, edge=1 m",
        },
        "LOCAL_DM_DENSITY_GEV_CM3": {
            "value": LOCAL_DM_DENSITY_GEV_CM3,
            "unit": "GeV/cm^3",
            "source": "standard halo model",
        },
        "HALO_VELOCITY_DISPERSION": {
            "value": HALO_VELOCITY_DISPERSION,
            "unit": "c",
            "source": "standard halo model",
        },
        "BASELINE_M": {"value": BASELINE_M, "unit": "m", "source": "station separation"},
    }
