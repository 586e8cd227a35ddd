"""Scharfetter-Gummel exponential-fitting assembly on the 1D mesh.

The carrier fluxes follow the constitutive convention
    J_n = D_n n' - mu_n n phi',      J_p = D_p p' + mu_p p phi',
which on an edge (i -> j, width h) integrates exactly to
    J_n = (D_n/h) [B(d) n_j - B(-d) n_i],
    J_p = (D_p/h) [B(-d) p_j - B(d) p_i],        d = (phi_j - phi_i)/Vth,
with the Bernoulli function B. A constant Slotboom variable
(n = c exp(phi/Vth), p = c exp(-phi/Vth)) therefore carries zero flux.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from .constants import CONST
from .materials import ContactParams, MaterialParams, StateVector, thermal_voltage
from .mesh import Mesh1D

_SMALL = 1e-4  # switch point between series and closed-form Bernoulli


def bernoulli(x):
    """B(x) = x/(exp(x)-1), stable for any magnitude of x."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < _SMALL
    xs = x[small]
    out[small] = 1.0 - xs / 2.0 + xs * xs / 12.0
    pos = x >= _SMALL
    xp = x[pos]
    out[pos] = xp * np.exp(-xp) / (-np.expm1(-xp))
    neg = x <= -_SMALL
    xn = x[neg]
    out[neg] = xn / np.expm1(xn)
    return out if out.ndim else float(out)


def dbernoulli(x):
    """Derivative B'(x) = B(x) (1 - B(-x)) / x, with a series near 0."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    small = np.abs(x) < _SMALL
    xs = x[small]
    out[small] = -0.5 + xs / 6.0 - xs ** 3 / 180.0
    big = ~small
    xb = x[big]
    out[big] = bernoulli(xb) * (1.0 - bernoulli(-xb)) / xb
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class EdgeFlux:
    """SG flux J = coeff_i * eta_i + coeff_j * eta_j on one edge (m^-2 s^-1)."""

    value: float
    coeff_i: float
    coeff_j: float


def clamp_delta(delta, mu: float, vth: float, h, v_max: float | None):
    """Clip the edge drift argument so mu*|E| never exceeds v_max."""
    if v_max is None:
        return delta
    cap = v_max * np.asarray(h, dtype=float) / (mu * vth)
    return np.clip(delta, -cap, cap)


def sg_edge_flux(eta_i, eta_j, phi_i, phi_j, mu: float, vth: float, h: float,
                 sign: int, v_max: float | None = None) -> EdgeFlux:
    """Exponentially fitted flux on the edge i -> j.

    sign is the drift coupling of the carrier: +1 for electrons
    (J = D eta' - mu eta phi') and -1 for holes (J = D eta' + mu eta phi').
    """
    if h <= 0.0:
        raise ValueError("edge length must be positive")
    delta = sign * (phi_j - phi_i) / vth
    delta = clamp_delta(delta, mu, vth, h, v_max)
    d = mu * vth
    coeff_j = d / h * bernoulli(delta)
    coeff_i = -d / h * bernoulli(-delta)
    return EdgeFlux(coeff_i * eta_i + coeff_j * eta_j, coeff_i, coeff_j)


def edge_fluxes(eta: np.ndarray, phi: np.ndarray, mu: float, vth: float,
                h: np.ndarray, sign: int, v_max: float | None = None):
    """Vectorized SG fluxes on every edge; returns (J, coeff_i, coeff_j)."""
    delta = sign * (phi[1:] - phi[:-1]) / vth
    delta = clamp_delta(delta, mu, vth, h, v_max)
    d = mu * vth
    coeff_j = d / h * bernoulli(delta)
    coeff_i = -d / h * bernoulli(-delta)
    return coeff_i * eta[:-1] + coeff_j * eta[1:], coeff_i, coeff_j


class BandedSystem:
    """Banded linear system in LAPACK band storage with a right-hand side."""

    def __init__(self, n: int, lower: int, upper: int):
        self.n = n
        self.lower = lower
        self.upper = upper
        self.ab = np.zeros((lower + upper + 1, n))
        self.rhs = np.zeros(n)

    def add_entries(self, rows, cols, vals):
        rows = np.asarray(rows)
        cols = np.asarray(cols)
        np.add.at(self.ab, (self.upper + rows - cols, cols), vals)

    def set_identity_row(self, row: int, rhs: float = 0.0):
        lo = max(row - self.lower, 0)
        hi = min(row + self.upper, self.n - 1)
        cols = np.arange(lo, hi + 1)
        self.ab[self.upper + row - cols, cols] = 0.0
        self.ab[self.upper, row] = 1.0
        self.rhs[row] = rhs

    def scale_rows_cols(self, row_fac: np.ndarray, col_fac: np.ndarray):
        """In-place diagonal scaling diag(row_fac) @ A @ diag(col_fac)."""
        for k in range(-self.upper, self.lower + 1):  # k = row - col
            cols = np.arange(max(0, -k), self.n - max(0, k))
            rows = cols + k
            self.ab[self.upper + k, cols] *= row_fac[rows] * col_fac[cols]
        self.rhs *= row_fac

    def to_dense(self) -> np.ndarray:
        a = np.zeros((self.n, self.n))
        for k in range(-self.upper, self.lower + 1):
            cols = np.arange(max(0, -k), self.n - max(0, k))
            a[cols + k, cols] = self.ab[self.upper + k, cols]
        return a

    def solve(self) -> np.ndarray:
        return solve_banded((self.lower, self.upper), self.ab, self.rhs)


def assemble_poisson(mesh: Mesh1D, n: np.ndarray, p: np.ndarray,
                     contacts: tuple[ContactParams, ContactParams],
                     eps: float) -> BandedSystem:
    """Linear Poisson system -div(eps grad phi) = q(p - n), per unit volume.

    The contact rows pin phi at the contact potentials in both boundary modes.
    """
    nn = mesh.n_nodes
    if n.shape != (nn,) or p.shape != (nn,):
        raise ValueError("field sizes must match the mesh")
    h = mesh.h
    w = mesh.volumes
    sys = BandedSystem(nn, 1, 1)
    i = np.arange(1, nn - 1)
    sys.add_entries(i, i - 1, -eps / (h[:-1] * w[1:-1]))
    sys.add_entries(i, i, eps * (1.0 / h[:-1] + 1.0 / h[1:]) / w[1:-1])
    sys.add_entries(i, i + 1, -eps / (h[1:] * w[1:-1]))
    sys.rhs[1:-1] = CONST.q * (p[1:-1] - n[1:-1])
    sys.set_identity_row(0, contacts[0].psi)
    sys.set_identity_row(nn - 1, contacts[1].psi)
    return sys


def assemble_continuity(mesh: Mesh1D, phi: np.ndarray, carrier: str,
                        reaction: np.ndarray, source: np.ndarray,
                        theta0: float, history_sum: np.ndarray,
                        contacts: tuple[ContactParams, ContactParams],
                        mu: float, vth: float,
                        v_max: float | None = None) -> BandedSystem:
    """Single-carrier continuity system with SG fluxes.

    Assembles theta0*eta - div J_eta + reaction*eta = source - history_sum
    per unit volume. Robin contacts substitute the boundary-face flux
    (alpha*eta - beta)/kappa into the half-cell balance; dirichlet contacts
    pin eta = beta/alpha.
    """
    if carrier not in ("n", "p"):
        raise ValueError("carrier must be 'n' or 'p'")
    nn = mesh.n_nodes
    for name, arr in (("phi", phi), ("reaction", reaction),
                      ("source", source), ("history_sum", history_sum)):
        if np.shape(arr) != (nn,):
            raise ValueError(f"{name} size does not match the mesh")
    if np.any(reaction < 0.0):
        raise ValueError("reaction coefficient must be non-negative")
    sign = 1 if carrier == "n" else -1
    h = mesh.h
    w = mesh.volumes
    _, ci, cj = edge_fluxes(np.zeros(nn), phi, mu, vth, h, sign, v_max)

    sys = BandedSystem(nn, 1, 1)
    i = np.arange(1, nn - 1)
    # -(J_i - J_{i-1})/w_i, J_e = ci[e] eta_e + cj[e] eta_{e+1}
    sys.add_entries(i, i - 1, ci[:-1] / w[1:-1])
    sys.add_entries(i, i, (-ci[1:] + cj[:-1]) / w[1:-1])
    sys.add_entries(i, i + 1, -cj[1:] / w[1:-1])
    sys.add_entries(i, i, theta0 + reaction[1:-1])
    sys.rhs[1:-1] = source[1:-1] - history_sum[1:-1]

    for side, node in ((0, 0), (1, nn - 1)):
        c = contacts[side]
        alpha = c.alpha_n if carrier == "n" else c.alpha_p
        beta = c.beta_n if carrier == "n" else c.beta_p
        kappa = c.kappa_n if carrier == "n" else c.kappa_p
        if c.mode == "dirichlet":
            sys.set_identity_row(node, beta / alpha)
            continue
        # conservative half-cell balance with the Robin boundary-face flux
        if side == 0:
            # J_bnd = (alpha eta_0 - beta)/kappa; residual -(J_0 - J_bnd)/w_0
            sys.add_entries([0, 0], [0, 1], [-ci[0] / w[0], -cj[0] / w[0]])
            sys.add_entries([0], [0], [alpha / (kappa * w[0])])
            sys.add_entries([0], [0], [theta0 + reaction[0]])
            sys.rhs[0] = source[0] - history_sum[0] + beta / (kappa * w[0])
        else:
            # J_bnd = (beta - alpha eta_N)/kappa; residual -(J_bnd - J_last)/w
            m = nn - 1
            sys.add_entries([m, m], [m - 1, m], [ci[-1] / w[m], cj[-1] / w[m]])
            sys.add_entries([m], [m], [alpha / (kappa * w[m])])
            sys.add_entries([m], [m], [theta0 + reaction[m]])
            sys.rhs[m] = source[m] - history_sum[m] + beta / (kappa * w[m])
    return sys


def conduction_current(phi: np.ndarray, n: np.ndarray, p: np.ndarray,
                       params: MaterialParams, mesh: Mesh1D,
                       vth: float | None = None) -> np.ndarray:
    """Per-edge total conduction current density q(J_p - J_n) (A/m^2)."""
    if vth is None:
        vth = thermal_voltage(params.temperature)
    h = mesh.h
    jn, _, _ = edge_fluxes(n, phi, params.mu_n, vth, h, 1, params.v_max)
    jp, _, _ = edge_fluxes(p, phi, params.mu_p, vth, h, -1, params.v_max)
    return CONST.q * (jp - jn)


def edge_field(phi: np.ndarray, mesh: Mesh1D) -> np.ndarray:
    """Electric field E = -dphi/dx on the edges."""
    return -(phi[1:] - phi[:-1]) / mesh.h


def nodal_field(phi: np.ndarray, mesh: Mesh1D) -> np.ndarray:
    """Control-volume averaged electric field at the nodes."""
    e = edge_field(phi, mesh)
    h = mesh.h
    out = np.empty(mesh.n_nodes)
    out[0] = e[0]
    out[-1] = e[-1]
    out[1:-1] = (h[:-1] * e[:-1] + h[1:] * e[1:]) / (h[:-1] + h[1:])
    return out


@dataclass(frozen=True)
class CurrentResult:
    """Edge-wise terminal current, its contact value, and the conduction part."""

    total: np.ndarray        # displacement-corrected current per edge (A/m^2)
    contact: float           # value at the cathode-side edge
    conduction: np.ndarray   # q(J_p - J_n) per edge


def compute_current(state: StateVector, params: MaterialParams, mesh: Mesh1D,
                    theta: np.ndarray | None = None,
                    phi_history: list[np.ndarray] | None = None) -> CurrentResult:
    """Total current q(J_p - J_n), displacement-corrected in transient mode.

    When the BDF stencil (theta, phi at the stencil levels, newest first
    including the current phi) is supplied, the displacement term
    -eps dE/dt is added with the same stencil, which makes the reported
    current spatially constant mid-transient.
    """
    vth = thermal_voltage(params.temperature)
    cond = conduction_current(state.phi, state.n, state.p, params, mesh, vth)
    total = cond.copy()
    if theta is not None:
        if phi_history is None or len(phi_history) != len(theta):
            raise ValueError("phi_history must match the theta stencil")
        dedt = np.zeros(mesh.n_nodes - 1)
        for th, phi_k in zip(theta, phi_history):
            dedt += th * edge_field(phi_k, mesh)
        total -= params.eps * dedt
    return CurrentResult(total, float(total[0]), cond)
