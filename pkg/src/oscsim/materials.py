"""Parameter records and pointwise constitutive formulas shared by all solvers.

Everything is strict SI internally. Carrier densities are m^-3, mobilities
m^2 V^-1 s^-1, rates s^-1, the photon absorption rate m^-3 s^-1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .constants import CONST


@dataclass(frozen=True)
class DeviceGeometry:
    """1D device slab, cathode at x=0 and anode at x=length."""

    length: float            # device thickness (m)
    node_count: int = 201
    grading_ratio: float = 1.0  # >= 1; geometric grading toward the contacts

    def __post_init__(self):
        if self.length <= 0.0:
            raise ValueError("device length must be positive")
        if self.node_count < 3:
            raise ValueError("node_count must be at least 3")
        if not 1.0 <= self.grading_ratio <= 1.1:
            raise ValueError("grading_ratio must lie in [1.0, 1.1]")


@dataclass(frozen=True)
class MaterialParams:
    """Transport and exciton-kinetics coefficients of the blend."""

    mu_n: float                   # electron mobility (m^2/V/s)
    mu_p: float                   # hole mobility (m^2/V/s)
    eps_r: float                  # relative permittivity
    temperature: float            # lattice temperature (K)
    k_rec: float                  # geminate pair decay rate (1/s)
    pair_distance: float          # initial geminate pair separation (m)
    generation: float             # photon absorption rate (m^-3 s^-1)
    gamma_override: float | None = None  # bimolecular coefficient (m^3/s)
    kdiss_override: float | None = None  # constant dissociation rate (1/s)
    v_max: float | None = None    # drift velocity clamp (m/s)

    def __post_init__(self):
        positive = {
            "mu_n": self.mu_n, "mu_p": self.mu_p, "eps_r": self.eps_r,
            "temperature": self.temperature, "k_rec": self.k_rec,
            "pair_distance": self.pair_distance,
        }
        for name, value in positive.items():
            if not value > 0.0:
                raise ValueError(f"{name} must be positive, got {value}")
        if self.generation < 0.0:
            raise ValueError("generation must be non-negative")
        for name in ("gamma_override", "kdiss_override", "v_max"):
            value = getattr(self, name)
            if value is not None and not value > 0.0:
                raise ValueError(f"{name}, when set, must be positive")

    @property
    def eps(self) -> float:
        """Absolute permittivity (F/m)."""
        return self.eps_r * CONST.eps0

    def gamma(self) -> float:
        """Bimolecular coefficient, Langevin unless overridden."""
        if self.gamma_override is not None:
            return self.gamma_override
        return langevin_gamma(self.mu_n, self.mu_p, self.eps)

    def kdiss(self, e_mag):
        """Dissociation rate at field magnitude(s) e_mag (V/m)."""
        if self.kdiss_override is not None:
            return self.kdiss_override * np.ones_like(np.asarray(e_mag, dtype=float))
        return braun_onsager_kdiss(e_mag, self, self.gamma())


@dataclass(frozen=True)
class ContactParams:
    """One metal/blend contact.

    The carrier conditions are kappa_eta * J_eta . nu = beta_eta - alpha_eta * eta;
    in dirichlet mode (kappa = 0 limit) the densities are pinned at beta/alpha.
    The potential is always pinned at psi.
    """

    psi: float                 # contact potential (V), applied + work function
    alpha_n: float             # surface recombination velocity (m/s)
    alpha_p: float
    beta_n: float              # injection rate (m^-2 s^-1)
    beta_p: float
    kappa_n: float = 0.0       # flux relaxation parameter (dimensionless)
    kappa_p: float = 0.0
    mode: str = "dirichlet"    # "dirichlet" | "robin"

    def __post_init__(self):
        if self.mode not in ("dirichlet", "robin"):
            raise ValueError(f"unknown contact mode {self.mode!r}")
        if self.alpha_n <= 0.0 or self.alpha_p <= 0.0:
            raise ValueError("alpha_n, alpha_p must be positive")
        if self.beta_n < 0.0 or self.beta_p < 0.0:
            raise ValueError("beta_n, beta_p must be non-negative")
        if self.kappa_n < 0.0 or self.kappa_p < 0.0:
            raise ValueError("kappa_n, kappa_p must be non-negative")
        if self.mode == "robin" and (self.kappa_n == 0.0 or self.kappa_p == 0.0):
            raise ValueError("robin mode requires kappa_n, kappa_p > 0")
        if self.mode == "dirichlet" and (self.beta_n <= 0.0 or self.beta_p <= 0.0):
            raise ValueError("dirichlet mode requires positive implied densities")

    @classmethod
    def dirichlet(cls, psi: float, n: float, p: float) -> "ContactParams":
        """Contact with pinned densities n, p (m^-3)."""
        return cls(psi=psi, alpha_n=1.0, alpha_p=1.0, beta_n=n, beta_p=p,
                   mode="dirichlet")

    @property
    def n_dirichlet(self) -> float:
        return self.beta_n / self.alpha_n

    @property
    def p_dirichlet(self) -> float:
        return self.beta_p / self.alpha_p


@dataclass
class StateVector:
    """Nodal (phi, n, p, X) fields at simulation time t."""

    phi: np.ndarray   # potential (V)
    n: np.ndarray     # electron density (m^-3)
    p: np.ndarray     # hole density (m^-3)
    X: np.ndarray     # geminate pair density (m^-3)
    t: float = 0.0

    def __post_init__(self):
        sizes = {a.shape for a in (self.phi, self.n, self.p, self.X)}
        if len(sizes) != 1:
            raise ValueError("phi, n, p, X must share the node count")

    def copy(self) -> "StateVector":
        return StateVector(self.phi.copy(), self.n.copy(), self.p.copy(),
                           self.X.copy(), self.t)


def thermal_voltage(temperature: float) -> float:
    """kB*T/q (V)."""
    if temperature <= 0.0:
        raise ValueError("temperature must be positive")
    return CONST.kB * temperature / CONST.q


def einstein_diffusion(mu: float, vth: float) -> float:
    """Diffusivity D = Vth * mu (m^2/s)."""
    if mu <= 0.0 or vth <= 0.0:
        raise ValueError("mobility and thermal voltage must be positive")
    return vth * mu


def langevin_gamma(mu_n: float, mu_p: float, eps: float) -> float:
    """Langevin bimolecular coefficient q*(mu_n + mu_p)/eps (m^3/s)."""
    if mu_n <= 0.0 or mu_p <= 0.0 or eps <= 0.0:
        raise ValueError("mobilities and permittivity must be positive")
    return CONST.q * (mu_n + mu_p) / eps


def pair_binding_energy(params: MaterialParams) -> float:
    """Coulomb binding energy of the geminate pair, q^2/(4 pi eps a) (J)."""
    return CONST.q ** 2 / (4.0 * np.pi * params.eps * params.pair_distance)


def _field_series(b):
    """S(b) = sum_k (2b)^k / (k! (k+1)!), the I1(2*sqrt(2b))/sqrt(2b) series.

    Terms are accumulated until the relative increment drops below 1e-12.
    """
    b = np.asarray(b, dtype=float)
    total = np.ones_like(b)
    term = np.ones_like(b)
    for k in range(1, 500):
        term = term * 2.0 * b / (k * (k + 1))
        total = total + term
        if np.all(np.abs(term) <= 1e-12 * np.abs(total)):
            break
    return total


def braun_onsager_kdiss(e_mag, params: MaterialParams, gamma: float):
    """Field-dependent geminate pair dissociation rate (1/s).

    Braun's Onsager-type model: the zero-field rate
    3*gamma/(4 pi a^3) * exp(-E_B/kB T) is enhanced by the series
    S(b) with b = q^3 |E| / (8 pi eps (kB T)^2).
    """
    e_mag = np.asarray(e_mag, dtype=float)
    if np.any(e_mag < 0.0):
        raise ValueError("field magnitude must be non-negative")
    if params.kdiss_override is not None:
        return params.kdiss_override * np.ones_like(e_mag)
    a = params.pair_distance
    kbt = CONST.kB * params.temperature
    e_b = pair_binding_energy(params)
    b = CONST.q ** 3 * e_mag / (8.0 * np.pi * params.eps * kbt ** 2)
    k0 = 3.0 * gamma / (4.0 * np.pi * a ** 3) * np.exp(-e_b / kbt)
    return k0 * _field_series(b)


def exciton_tau(k_diss: float, k_rec: float) -> float:
    """Response time 1/(k_diss + k_rec) of the pair kinetics (s)."""
    total = k_diss + k_rec
    if total <= 0.0:
        raise ValueError("k_diss + k_rec must be positive")
    return 1.0 / total


def xi(t, x0, generation: float, tau: float):
    """Carrier-free pair density X0*exp(-t/tau) + tau*G*(1 - exp(-t/tau))."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0):
        raise ValueError("time must be non-negative")
    decay = np.exp(-t / tau)
    return x0 * decay + tau * generation * (1.0 - decay)
