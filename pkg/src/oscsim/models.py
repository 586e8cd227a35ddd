"""Coupled device models: per-timestep residuals and inexact Jacobians.

A model owns the mesh, material and contact data and exposes the nonlinear
system of one BDF time level,
    F(y) = 0,  y = node-major flattening of (phi, n, p[, X]) at the nodes,
in per-unit-volume form. The Poisson block carries no time derivative
(algebraic constraint). The Jacobian is inexact: the field dependence of
the dissociation coefficient (and of any clamped drift velocity) is
neglected, while the Bernoulli-function couplings of the SG fluxes to the
potential are retained.

Residuals come with a positive per-row normalizer (the sum of the absolute
values of the assembled terms plus a characteristic floor) so that
residual/normalizer is a dimensionless imbalance measure; row scaling by
any positive diagonal leaves the Newton direction unchanged.
"""
from __future__ import annotations

import numpy as np

from .constants import CONST
from .discretization import (BandedSystem, assemble_poisson, bernoulli,
                             clamp_delta, dbernoulli, nodal_field)
from .materials import (ContactParams, MaterialParams, StateVector,
                        thermal_voltage)
from .mesh import Mesh1D


class TransportModel:
    """Shared phi/n/p assembly; subclasses define the reaction terms."""

    unknowns: tuple[str, ...]
    IPHI, IN, IP = 0, 1, 2

    def __init__(self, mesh: Mesh1D, params: MaterialParams,
                 contacts: tuple[ContactParams, ContactParams]):
        self.mesh = mesh
        self.params = params
        self.contacts = contacts
        self.vth = thermal_voltage(params.temperature)
        self.d_n = params.mu_n * self.vth
        self.d_p = params.mu_p * self.vth
        self.eps = params.eps
        self.gamma = params.gamma()
        self.h = mesh.h
        self.w = mesh.volumes
        self._h_min = float(self.h.min())

        # characteristic magnitudes; they only floor the row normalizers
        mean_field = abs(contacts[0].psi - contacts[1].psi) / mesh.length
        self.kd_char = float(np.max(params.kdiss(mean_field)))
        dens = [c.n_dirichlet for c in contacts] + [c.p_dirichlet for c in contacts]
        if params.generation > 0.0 and params.k_rec > 0.0:
            dens.append(np.sqrt(self.kd_char * params.generation
                                / (self.gamma * params.k_rec)))
        self.n_char = max(max(dens), 1.0)
        self.psi_char = max(abs(contacts[0].psi), abs(contacts[1].psi), self.vth)

    @property
    def nu(self) -> int:
        return len(self.unknowns)

    @property
    def n_dof(self) -> int:
        return self.mesh.n_nodes * self.nu

    def char_scales(self, theta0: float) -> np.ndarray:
        """Per-unknown characteristic residual magnitudes (normalizer floors)."""
        rate = (abs(theta0) + max(self.d_n, self.d_p) / self._h_min ** 2
                + self.gamma * self.n_char + self.kd_char + self.params.k_rec)
        c_phi = (CONST.q * self.n_char
                 + self.eps * self.psi_char / self._h_min ** 2)
        return np.array([c_phi, self.n_char * rate, self.n_char * rate])

    # subclass hooks ----------------------------------------------------
    def _rates(self, t: float, y: np.ndarray) -> dict:
        """Net carrier rate U (= G - R eta, same for n and p) and partials."""
        raise NotImplementedError

    # assembly ----------------------------------------------------------
    def _edges(self, y: np.ndarray):
        phi, n, p = y[:, 0], y[:, 1], y[:, 2]
        delta = (phi[1:] - phi[:-1]) / self.vth
        v_max = self.params.v_max
        d_n = clamp_delta(delta, self.params.mu_n, self.vth, self.h, v_max)
        d_p = clamp_delta(delta, self.params.mu_p, self.vth, self.h, v_max)
        free_n = np.ones_like(delta) if v_max is None else (d_n == delta).astype(float)
        free_p = np.ones_like(delta) if v_max is None else (d_p == delta).astype(float)
        bnp, bnm = bernoulli(d_n), bernoulli(-d_n)
        bpp, bpm = bernoulli(d_p), bernoulli(-d_p)
        jn = self.d_n / self.h * (bnp * n[1:] - bnm * n[:-1])
        jp = self.d_p / self.h * (bpm * p[1:] - bpp * p[:-1])
        return {
            "jn": jn, "jp": jp,
            "jn_dl": -self.d_n / self.h * bnm, "jn_dr": self.d_n / self.h * bnp,
            "jp_dl": -self.d_p / self.h * bpp, "jp_dr": self.d_p / self.h * bpm,
            "jn_dphi": self.d_n / (self.h * self.vth) * free_n
                       * (dbernoulli(d_n) * n[1:] + dbernoulli(-d_n) * n[:-1]),
            "jp_dphi": self.d_p / (self.h * self.vth) * free_p
                       * (-dbernoulli(-d_p) * p[1:] - dbernoulli(d_p) * p[:-1]),
        }

    def residual(self, t: float, y: np.ndarray, theta0: float,
                 hist: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Residual F and positive normalizer C, both shaped (nodes, nu).

        hist holds sum_{k>=1} theta_k y_{K-k} for the differential unknowns
        (its phi column is ignored).
        """
        mesh, w, h = self.mesh, self.w, self.h
        nn = mesh.n_nodes
        phi, n, p = y[:, 0], y[:, 1], y[:, 2]
        edges = self._edges(y)
        rates = self._rates(t, y)
        cchar = 1e-6 * self.char_scales(theta0)

        f = np.zeros((nn, self.nu))
        c = np.zeros((nn, self.nu))

        # Poisson rows
        lap_l = self.eps * (phi[1:-1] - phi[:-2]) / h[:-1]
        lap_r = self.eps * (phi[2:] - phi[1:-1]) / h[1:]
        f[1:-1, 0] = (lap_l - lap_r) / w[1:-1] - CONST.q * (p[1:-1] - n[1:-1])
        c[1:-1, 0] = ((np.abs(lap_l) + np.abs(lap_r)) / w[1:-1]
                      + CONST.q * (p[1:-1] + n[1:-1]) + cchar[0])
        f[0, 0] = phi[0] - self.contacts[0].psi
        f[-1, 0] = phi[-1] - self.contacts[1].psi
        c[0, 0] = max(abs(phi[0]), self.psi_char)
        c[-1, 0] = max(abs(phi[-1]), self.psi_char)

        u, u_abs = rates["u"], rates["u_abs"]
        for iu, eta, j in ((1, n, edges["jn"]), (2, p, edges["jp"])):
            f[1:-1, iu] = (theta0 * eta[1:-1] + hist[1:-1, iu]
                           - (j[1:] - j[:-1]) / w[1:-1] - u[1:-1])
            c[1:-1, iu] = (np.abs(theta0 * eta[1:-1]) + np.abs(hist[1:-1, iu])
                           + (np.abs(j[1:]) + np.abs(j[:-1])) / w[1:-1]
                           + u_abs[1:-1] + cchar[iu])
            for side, node in ((0, 0), (1, nn - 1)):
                cp = self.contacts[side]
                alpha = cp.alpha_n if iu == 1 else cp.alpha_p
                beta = cp.beta_n if iu == 1 else cp.beta_p
                kappa = cp.kappa_n if iu == 1 else cp.kappa_p
                if cp.mode == "dirichlet":
                    eta_d = beta / alpha
                    f[node, iu] = eta[node] - eta_d
                    # judge against the device density scale, not the (possibly
                    # tiny) minority contact value, so LU round-off stays invisible
                    c[node, iu] = max(abs(eta[node]), eta_d, self.n_char)
                else:
                    if side == 0:
                        j_bnd = (alpha * eta[0] - beta) / kappa
                        flux_div = (j[0] - j_bnd) / w[0]
                    else:
                        j_bnd = (beta - alpha * eta[-1]) / kappa
                        flux_div = (j_bnd - j[-1]) / w[-1]
                    f[node, iu] = (theta0 * eta[node] + hist[node, iu]
                                   - flux_div - u[node])
                    c[node, iu] = (abs(theta0 * eta[node]) + abs(hist[node, iu])
                                   + (abs(j_bnd) + abs(j[0 if side == 0 else -1]))
                                   / w[node] + u_abs[node] + cchar[iu])

        self._extra_residual(t, y, theta0, hist, rates, f, c)
        return f, c

    def _extra_residual(self, t, y, theta0, hist, rates, f, c):
        pass

    def jacobian(self, t: float, y: np.ndarray, theta0: float) -> BandedSystem:
        """Inexact Jacobian in banded storage (rhs left untouched)."""
        mesh, w = self.mesh, self.w
        nn, nu = mesh.n_nodes, self.nu
        edges = self._edges(y)
        rates = self._rates(t, y)
        sys = BandedSystem(nn * nu, nu + 2, nu)
        base = np.arange(nn) * nu
        inner = base[1:-1]

        # Poisson rows
        r = inner + self.IPHI
        sys.add_entries(r, inner - nu, -self.eps / (self.h[:-1] * w[1:-1]))
        sys.add_entries(r, inner,
                        self.eps * (1.0 / self.h[:-1] + 1.0 / self.h[1:]) / w[1:-1])
        sys.add_entries(r, inner + nu, -self.eps / (self.h[1:] * w[1:-1]))
        sys.add_entries(r, inner + self.IN, np.full(nn - 2, CONST.q))
        sys.add_entries(r, inner + self.IP, np.full(nn - 2, -CONST.q))
        sys.set_identity_row(0 + self.IPHI)
        sys.set_identity_row(base[-1] + self.IPHI)

        wi = w[1:-1]
        for iu, dl, dr, dphi in ((1, edges["jn_dl"], edges["jn_dr"], edges["jn_dphi"]),
                                 (2, edges["jp_dl"], edges["jp_dr"], edges["jp_dphi"])):
            r = inner + iu
            sys.add_entries(r, inner - nu + iu, dl[:-1] / wi)
            sys.add_entries(r, inner + iu,
                            theta0 + (-dl[1:] + dr[:-1]) / wi + rates["du_self"][iu][1:-1])
            sys.add_entries(r, inner + nu + iu, -dr[1:] / wi)
            sys.add_entries(r, inner - nu, -dphi[:-1] / wi)
            sys.add_entries(r, inner, (dphi[1:] + dphi[:-1]) / wi)
            sys.add_entries(r, inner + nu, -dphi[1:] / wi)
            other = self.IP if iu == self.IN else self.IN
            sys.add_entries(r, inner + other, rates["du_other"][iu][1:-1])
            if "du_dx" in rates:
                sys.add_entries(r, inner + 3, rates["du_dx"][1:-1])

            for side, node in ((0, 0), (1, nn - 1)):
                cp = self.contacts[side]
                row = base[node] + iu
                if cp.mode == "dirichlet":
                    sys.set_identity_row(row)
                    continue
                alpha = cp.alpha_n if iu == 1 else cp.alpha_p
                kappa = cp.kappa_n if iu == 1 else cp.kappa_p
                diag = theta0 + alpha / (kappa * w[node]) + rates["du_self"][iu][node]
                if side == 0:
                    sys.add_entries([row] * 4,
                                    [iu, nu + iu, self.IPHI, nu + self.IPHI],
                                    [diag - dl[0] / w[0], -dr[0] / w[0],
                                     dphi[0] / w[0], -dphi[0] / w[0]])
                else:
                    m = base[-1]
                    sys.add_entries([row] * 4,
                                    [m + iu, m - nu + iu, m + self.IPHI, m - nu + self.IPHI],
                                    [diag + dr[-1] / w[-1], dl[-1] / w[-1],
                                     dphi[-1] / w[-1], -dphi[-1] / w[-1]])
                sys.add_entries([row], [base[node] + (self.IP if iu == self.IN else self.IN)],
                                [rates["du_other"][iu][node]])
                if "du_dx" in rates:
                    sys.add_entries([row], [base[node] + 3], [rates["du_dx"][node]])

        self._extra_jacobian(t, y, theta0, rates, sys, base)
        return sys

    def _extra_jacobian(self, t, y, theta0, rates, sys, base):
        pass

    def ensure_consistent(self, y: np.ndarray) -> np.ndarray:
        """Enforce the algebraic Poisson constraint for the given densities."""
        sys = assemble_poisson(self.mesh, y[:, 1], y[:, 2], self.contacts, self.eps)
        out = y.copy()
        out[:, 0] = sys.solve()
        return out

    def algebraic_residual_norm(self, t: float, y: np.ndarray) -> float:
        f, c = self.residual(t, y, 0.0, np.zeros_like(y))
        return float(np.max(np.abs(f[:, 0]) / c[:, 0]))


class FullModel(TransportModel):
    """Full three-species model with the geminate pair kinetic equation."""

    unknowns = ("phi", "n", "p", "X")
    IX = 3
    differential = np.array([False, True, True, True])
    density_like = np.array([False, True, True, True])

    def char_scales(self, theta0: float) -> np.ndarray:
        c = np.empty(4)
        c[:3] = super().char_scales(theta0)
        g = self.params.generation
        tau_char = 1.0 / (self.kd_char + self.params.k_rec)
        x_char = max(tau_char * (g + self.gamma * self.n_char ** 2), 1.0)
        c[3] = (g + x_char * (abs(theta0) + self.kd_char + self.params.k_rec)
                + self.gamma * self.n_char ** 2)
        return c

    def kdiss_field(self, y: np.ndarray) -> np.ndarray:
        """Nodal dissociation rate from the control-volume averaged |E|."""
        e_abs = np.abs(nodal_field(y[:, 0], self.mesh))
        return np.asarray(self.params.kdiss(e_abs))

    def _rates(self, t, y):
        n, p, x = y[:, 1], y[:, 2], y[:, 3]
        kd = self.kdiss_field(y)
        recomb = self.gamma * p * n
        return {
            "u": kd * x - recomb,
            "u_abs": kd * x + recomb,
            "kd": kd,
            # partials of -U entering the carrier rows
            "du_self": {1: self.gamma * p, 2: self.gamma * n},
            "du_other": {1: self.gamma * n, 2: self.gamma * p},
            "du_dx": -kd,
        }

    def _extra_residual(self, t, y, theta0, hist, rates, f, c):
        n, p, x = y[:, 1], y[:, 2], y[:, 3]
        g = self.params.generation
        kd, krec = rates["kd"], self.params.k_rec
        recomb = self.gamma * p * n
        w_k = g + recomb - (kd + krec) * x
        f[:, 3] = theta0 * x + hist[:, 3] - w_k
        c[:, 3] = (np.abs(theta0 * x) + np.abs(hist[:, 3]) + g + recomb
                   + (kd + krec) * x + 1e-6 * self.char_scales(theta0)[3])

    def _extra_jacobian(self, t, y, theta0, rates, sys, base):
        n, p = y[:, 1], y[:, 2]
        r = base + self.IX
        sys.add_entries(r, base + self.IN, -self.gamma * p)
        sys.add_entries(r, base + self.IP, -self.gamma * n)
        sys.add_entries(r, base + self.IX, theta0 + rates["kd"] + self.params.k_rec)

    # conversions --------------------------------------------------------
    def to_matrix(self, state: StateVector) -> np.ndarray:
        return np.column_stack([state.phi, state.n, state.p, state.X])

    def to_state(self, y: np.ndarray, t: float) -> StateVector:
        return StateVector(y[:, 0].copy(), y[:, 1].copy(), y[:, 2].copy(),
                           y[:, 3].copy(), t)
