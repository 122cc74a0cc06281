"""Physical inputs and characteristic scales of the trapped atom-ion system.

Everything downstream works in dimensionless units: lengths in units of the
polarization length R*, energies in units of E* = hbar^2 / (2 mu R*^2).  This
module is the only place where SI constants appear; it converts laboratory
parameters (masses, trap frequencies, R*) into the dimensionless numbers the
solvers consume and back.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy.constants import hbar, physical_constants

BOHR = physical_constants["Bohr radius"][0]
AMU = physical_constants["atomic mass constant"][0]
PLANCK = physical_constants["Planck constant"][0]

# Isotope masses (amu), enough for the systems used in the examples.
ATOMIC_MASSES = {
    "Ca40": 39.9625909,
    "Be9": 9.0121831,
    "Rb87": 86.9091805,
    "Na23": 22.9897693,
}


def _require_positive(name: str, value: float) -> None:
    if not value > 0.0:
        raise ValueError(f"{name} must be strictly positive, got {value!r}")


@dataclass(frozen=True)
class SystemParams:
    """Laboratory inputs.

    Masses in amu, angular frequencies in rad/s.  ``rstar`` is the
    characteristic length of the polarization potential, tagged by
    ``rstar_unit`` ('bohr' or 'm').  Transverse frequencies are optional and
    only needed for quasi-1D geometries.
    """

    m_i: float
    m_a: float
    omega_i: float
    omega_a: float
    rstar: float
    rstar_unit: str = "bohr"
    omega_perp_i: float | None = None
    omega_perp_a: float | None = None

    def __post_init__(self):
        _require_positive("m_i", self.m_i)
        _require_positive("m_a", self.m_a)
        _require_positive("omega_i", self.omega_i)
        _require_positive("omega_a", self.omega_a)
        _require_positive("rstar", self.rstar)
        for name in ("omega_perp_i", "omega_perp_a"):
            value = getattr(self, name)
            if value is not None:
                _require_positive(name, value)
        if self.rstar_unit not in ("bohr", "m"):
            raise ValueError(f"rstar_unit must be 'bohr' or 'm', got {self.rstar_unit!r}")

    @property
    def rstar_m(self) -> float:
        return self.rstar * BOHR if self.rstar_unit == "bohr" else self.rstar


@dataclass(frozen=True)
class CharacteristicScales:
    """Derived scales, SI units unless noted.

    ``beta = (R*/l)**4`` is the dimensionless trap stiffness entering the
    relative-motion Hamiltonian h = -d^2/dx^2 - 1/x^4 + beta (x - delta)^2;
    the harmonic level spacing in units of E* is 2 sqrt(beta).
    """

    mu: float                 # reduced mass, kg
    m_total: float            # total mass, kg
    rstar: float              # m
    estar: float              # J
    estar_hz: float           # E*/h, Hz
    l_i: float                # ion oscillator length, m
    l_a: float                # atom oscillator length, m
    l_rel: float              # relative-motion oscillator length, m
    l_perp: float | None      # transverse relative oscillator length, m
    r_i: float                # m
    r_a: float                # m
    r_rel: float              # m
    r_perp: float | None      # m
    r_1d: float | None        # max(r_perp, l_perp), m
    beta: float               # (R*/l_rel)^4
    beta_perp: float | None   # (R*/l_perp)^4
    omega_rel: float          # rad/s
    omega_cm: float           # rad/s
    alpha_e2: float = field(repr=False, default=0.0)  # J m^4

    def in_bohr(self) -> dict:
        """Length fields converted to Bohr radii (for Table-style output)."""
        out = {}
        for name in ("rstar", "l_i", "l_a", "l_rel", "l_perp",
                     "r_i", "r_a", "r_rel", "r_perp", "r_1d"):
            value = getattr(self, name)
            out[name] = None if value is None else value / BOHR
        return out

    @property
    def hbar_omega_rel_estar(self) -> float:
        """Harmonic quantum of the relative motion in units of E* (= 2 sqrt(beta))."""
        return hbar * self.omega_rel / self.estar


def derive_scales(params: SystemParams) -> CharacteristicScales:
    """Characteristic lengths and energies from laboratory inputs.

    Tabulated frequencies quoted as e.g. "1 MHz" are understood as angular
    frequencies 2*pi*1 MHz; callers must pass rad/s.
    """
    m_i = params.m_i * AMU
    m_a = params.m_a * AMU
    m_total = m_i + m_a
    mu = m_i * m_a / m_total
    rstar = params.rstar_m

    estar = hbar**2 / (2.0 * mu * rstar**2)
    alpha_e2 = hbar**2 * rstar**2 / mu  # from R* = sqrt(alpha e^2 mu) / hbar

    omega_rel = math.sqrt((m_a * params.omega_i**2 + m_i * params.omega_a**2) / m_total)
    omega_cm = math.sqrt((m_i * params.omega_i**2 + m_a * params.omega_a**2) / m_total)

    l_i = math.sqrt(hbar / (m_i * params.omega_i))
    l_a = math.sqrt(hbar / (m_a * params.omega_a))
    l_rel = math.sqrt(hbar / (mu * omega_rel))

    r_i = (alpha_e2 / (m_i * params.omega_i**2)) ** (1.0 / 6.0)
    r_a = (alpha_e2 / (m_a * params.omega_a**2)) ** (1.0 / 6.0)
    r_rel = (alpha_e2 / (mu * omega_rel**2)) ** (1.0 / 6.0)

    beta = (rstar / l_rel) ** 4

    if params.omega_perp_i is not None and params.omega_perp_a is not None:
        if not math.isclose(params.omega_perp_i, params.omega_perp_a, rel_tol=1e-12):
            raise ValueError("only equal transverse frequencies are supported "
                             "(omega_perp_i != omega_perp_a)")
        omega_perp = params.omega_perp_i
        l_perp = math.sqrt(hbar / (mu * omega_perp))
        r_perp = (alpha_e2 / (mu * omega_perp**2)) ** (1.0 / 6.0)
        r_1d = max(r_perp, l_perp)
        beta_perp = (rstar / l_perp) ** 4
    else:
        l_perp = r_perp = r_1d = beta_perp = None

    return CharacteristicScales(
        mu=mu, m_total=m_total, rstar=rstar,
        estar=estar, estar_hz=estar / PLANCK,
        l_i=l_i, l_a=l_a, l_rel=l_rel, l_perp=l_perp,
        r_i=r_i, r_a=r_a, r_rel=r_rel, r_perp=r_perp, r_1d=r_1d,
        beta=beta, beta_perp=beta_perp,
        omega_rel=omega_rel, omega_cm=omega_cm,
        alpha_e2=alpha_e2,
    )


def phase_from_scattering_length(a_s: float, rstar: float = 1.0) -> float:
    """Short-range phase phi from the s-wave scattering length.

    Inverts a_s = -R* cot(phi) on the principal branch (-pi/2, pi/2];
    a_s = 0 maps to phi = pi/2.
    """
    if rstar <= 0.0:
        raise ValueError(f"rstar must be strictly positive, got {rstar!r}")
    ratio = a_s / rstar
    if ratio == 0.0:
        return math.pi / 2.0
    return -math.atan(1.0 / ratio)


def scattering_length_from_phase(phi: float, rstar: float = 1.0) -> float:
    """a_s = -R* cot(phi).  phi = 0 has no finite scattering length."""
    if rstar <= 0.0:
        raise ValueError(f"rstar must be strictly positive, got {rstar!r}")
    t = math.tan(phi)
    if t == 0.0:
        raise ValueError("phi = 0 corresponds to a divergent scattering length")
    return -rstar / t


def reduce_phase(phi: float) -> float:
    """Fold a phase into the principal interval (-pi/2, pi/2]."""
    out = math.fmod(phi, math.pi)
    if out > math.pi / 2.0:
        out -= math.pi
    elif out <= -math.pi / 2.0:
        out += math.pi
    return out
