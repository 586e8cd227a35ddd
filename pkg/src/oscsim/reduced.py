"""Reduced formulations: stationary pair elimination, the Slotboom steady
solver with a-priori bounds, the lumped 2-carrier transient model, and the
memory-term diagnostics.

The reductions require the constant-coefficient regime: the dissociation
coefficient and the bimolecular coefficient are frozen at the mean field
|psi_cathode - psi_anode| / L before use.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .bdf import BdfOptions, IntegrationResult, integrate
from .constants import CONST
from .discretization import (BandedSystem, bernoulli, conduction_current,
                             nodal_field)
from .materials import (ContactParams, MaterialParams, StateVector,
                        exciton_tau, thermal_voltage, xi)
from .mesh import Mesh1D
from .models import TransportModel
from .newton import NewtonOptions, ScalingSet

_trapezoid = getattr(np, "trapezoid", None) or np.trapz


def frozen_coefficients(params: MaterialParams,
                        contacts: tuple[ContactParams, ContactParams],
                        mesh: Mesh1D) -> tuple[float, float, float]:
    """(k_diss, gamma, tau) evaluated at the mean field, all constant."""
    gamma = params.gamma()
    e_mean = abs(contacts[0].psi - contacts[1].psi) / mesh.length
    kdiss = float(np.max(params.kdiss(e_mean)))
    return kdiss, gamma, exciton_tau(kdiss, params.k_rec)


def stationary_x(n, p, generation: float, gamma: float, tau: float):
    """Pair density eliminated at steady state: X = tau*G + gamma*tau*p*n."""
    return tau * generation + gamma * tau * np.asarray(p) * np.asarray(n)


def stationary_rates(n, p, generation: float, kdiss: float, krec: float,
                     gamma: float):
    """Stationary net carrier rate tau*(k_diss*G - gamma*k_rec*p*n)."""
    tau = exciton_tau(kdiss, krec)
    return tau * (kdiss * generation - gamma * krec * np.asarray(p) * np.asarray(n))


def modified_rates(t: float, n, p, pn0, xi_t, kdiss: float, krec: float,
                   gamma: float, tau: float):
    """Lumped generation/recombination of the reduced transient model.

    Returns (G_mod, R_mod_pn): the modified generation field and the full
    recombination product R~ * density, both m^-3 s^-1. pn0 is the nodal
    product p(x,0)*n(x,0); xi_t the carrier-free pair density at time t.
    """
    if t < 0.0:
        raise ValueError("time must be non-negative")
    decay = np.exp(-t / tau)
    half_t = 0.5 * t * decay
    g_mod = kdiss * np.asarray(xi_t) + gamma * kdiss * half_t * np.asarray(pn0)
    bracket = gamma * (tau * (krec + kdiss * decay) + kdiss * half_t)
    return g_mod, bracket * np.asarray(p) * np.asarray(n)


class ReducedModel(TransportModel):
    """Two-carrier model with the pair kinetics lumped into the rates."""

    unknowns = ("phi", "n", "p")
    differential = np.array([False, True, True])
    density_like = np.array([False, True, True])

    def __init__(self, mesh, params, contacts, x0: np.ndarray,
                 pn0: np.ndarray):
        super().__init__(mesh, params, contacts)
        self.kdiss_frozen, self.gamma_frozen, self.tau = \
            frozen_coefficients(params, contacts, mesh)
        self.x0 = np.asarray(x0, dtype=float)
        self.pn0 = np.asarray(pn0, dtype=float)

    def _rates(self, t, y):
        n, p = y[:, 1], y[:, 2]
        kd, g, tau = self.kdiss_frozen, self.gamma_frozen, self.tau
        xi_t = xi(t, self.x0, self.params.generation, tau)
        g_mod, r_pn = modified_rates(t, n, p, self.pn0, xi_t, kd,
                                     self.params.k_rec, g, tau)
        decay = np.exp(-t / tau)
        bracket = g * (tau * (self.params.k_rec + kd * decay) + 0.5 * kd * t * decay)
        return {
            "u": g_mod - r_pn,
            "u_abs": g_mod + r_pn,
            "du_self": {1: bracket * p, 2: bracket * n},
            "du_other": {1: bracket * n, 2: bracket * p},
        }

    def reconstruct_pairs(self, t: float, y: np.ndarray) -> np.ndarray:
        """A-posteriori X from the lumped form of the elimination integral."""
        kd, g, tau = self.kdiss_frozen, self.gamma_frozen, self.tau
        pn = y[:, 1] * y[:, 2]
        decay = np.exp(-t / tau)
        lumped = 0.5 * t * decay * (self.pn0 - pn)
        return xi(t, self.x0, self.params.generation, tau) \
            + g * tau * (1.0 - decay) * pn + g * lumped


# ---------------------------------------------------------------------------
# stationary solver in Slotboom variables
# ---------------------------------------------------------------------------

@dataclass
class SlotboomState:
    """Potential and dimensionless densities u, v with n = n_r u e^(phi/Vth)."""

    phi: np.ndarray
    u: np.ndarray
    v: np.ndarray
    n_r: float

    def densities(self, vth: float) -> tuple[np.ndarray, np.ndarray]:
        n = self.n_r * self.u * np.exp(self.phi / vth)
        p = self.n_r * self.v * np.exp(-self.phi / vth)
        return n, p


@dataclass(frozen=True)
class StationaryBounds:
    """A-priori solution bounds of the stationary system.

    The printed bound constants of the source theorem transpose the labels
    of the two families; here density_* always denotes the exponential
    family n_r e^(+-Psi_hat/Vth) and potential_* the sup/inf family.
    """

    psi_plus: float
    psi_hat_plus: float
    phi_n_dirichlet: tuple[float, float]
    phi_p_dirichlet: tuple[float, float]
    density_lower: float
    density_upper: float
    potential_lower: float
    potential_upper: float

    def contains(self, phi: np.ndarray, n: np.ndarray, p: np.ndarray,
                 slack: float = 1e-9) -> bool:
        dens_lo = self.density_lower * (1.0 - slack)
        dens_hi = self.density_upper * (1.0 + slack)
        pot_lo = self.potential_lower - slack
        pot_hi = self.potential_upper + slack
        return bool(np.all(n >= dens_lo) and np.all(n <= dens_hi)
                    and np.all(p >= dens_lo) and np.all(p <= dens_hi)
                    and np.all(phi >= pot_lo) and np.all(phi <= pot_hi))


def reference_concentration(params: MaterialParams,
                            contacts: tuple[ContactParams, ContactParams],
                            kdiss: float, gamma: float) -> float:
    """n_r with gamma*k_rec*n_r^2 = k_diss*G; geometric contact mean at G=0."""
    if params.generation > 0.0:
        return float(np.sqrt(kdiss * params.generation
                             / (gamma * params.k_rec)))
    prod = 1.0
    for c in contacts:
        prod *= c.n_dirichlet * c.p_dirichlet
    return float(prod ** 0.25)


def stationary_bounds(contacts: tuple[ContactParams, ContactParams],
                      n_r: float, vth: float) -> StationaryBounds:
    psi = np.array([c.psi for c in contacts])
    n_d = np.array([c.n_dirichlet for c in contacts])
    p_d = np.array([c.p_dirichlet for c in contacts])
    phi_n = psi - vth * np.log(n_d / n_r)
    phi_p = psi + vth * np.log(p_d / n_r)
    psi_plus = max(max((-phi_n).max(), phi_p.max()),
                   -min((-phi_n).min(), phi_p.min()))
    psi_hat = np.abs(psi).max() + psi_plus
    return StationaryBounds(
        psi_plus=float(psi_plus),
        psi_hat_plus=float(psi_hat),
        phi_n_dirichlet=(float(phi_n[0]), float(phi_n[1])),
        phi_p_dirichlet=(float(phi_p[0]), float(phi_p[1])),
        density_lower=float(n_r * np.exp(-psi_hat / vth)),
        density_upper=float(n_r * np.exp(psi_hat / vth)),
        potential_lower=float(min(psi.min(), -psi_plus)),
        potential_upper=float(max(psi.max(), psi_plus)),
    )


@dataclass
class GummelReport:
    converged: bool = False
    iterations: int = 0
    phi_update: float = np.inf
    bounds_satisfied: bool = False


@dataclass(frozen=True)
class GummelOptions:
    tol_factor: float = 1e-7     # outer tolerance, times Vth
    max_iterations: int = 200
    poisson_tol: float = 1e-12   # inner Newton tolerance, times Vth
    poisson_max_iter: int = 60


def _solve_nonlinear_poisson(mesh, eps, vth, n_r, u, v, phi, psi_bc, opts):
    """Newton on -div(eps grad phi) = q n_r (v e^(-phi/Vth) - u e^(phi/Vth))."""
    h, w = mesh.h, mesh.volumes
    nn = mesh.n_nodes
    phi = phi.copy()
    phi[0], phi[-1] = psi_bc
    for _ in range(opts.poisson_max_iter):
        boltz_n = n_r * u * np.exp(phi / vth)
        boltz_p = n_r * v * np.exp(-phi / vth)
        sys = BandedSystem(nn, 1, 1)
        i = np.arange(1, nn - 1)
        sys.add_entries(i, i - 1, -eps / (h[:-1] * w[1:-1]))
        sys.add_entries(i, i, eps * (1.0 / h[:-1] + 1.0 / h[1:]) / w[1:-1])
        sys.add_entries(i, i + 1, -eps / (h[1:] * w[1:-1]))
        sys.add_entries(i, i, CONST.q * (boltz_n[1:-1] + boltz_p[1:-1]) / vth)
        lap = (eps * (phi[1:-1] - phi[:-2]) / h[:-1]
               - eps * (phi[2:] - phi[1:-1]) / h[1:]) / w[1:-1]
        sys.rhs[1:-1] = -(lap - CONST.q * (boltz_p[1:-1] - boltz_n[1:-1]))
        sys.set_identity_row(0, 0.0)
        sys.set_identity_row(nn - 1, 0.0)
        d_phi = sys.solve()
        # clamp to a few thermal voltages for global convergence
        d_phi = np.clip(d_phi, -5.0 * vth, 5.0 * vth)
        phi += d_phi
        if np.max(np.abs(d_phi)) < opts.poisson_tol * vth:
            break
    return phi


def _solve_slotboom_carrier(mesh, cond_edge, reaction, source, bc):
    """Tridiagonal solve of -div(g grad u) + reaction*u = source, u pinned."""
    nn = mesh.n_nodes
    w = mesh.volumes
    sys = BandedSystem(nn, 1, 1)
    i = np.arange(1, nn - 1)
    sys.add_entries(i, i - 1, -cond_edge[:-1] / w[1:-1])
    sys.add_entries(i, i, (cond_edge[:-1] + cond_edge[1:]) / w[1:-1]
                    + reaction[1:-1])
    sys.add_entries(i, i + 1, -cond_edge[1:] / w[1:-1])
    sys.rhs[1:-1] = source[1:-1]
    sys.set_identity_row(0, bc[0])
    sys.set_identity_row(nn - 1, bc[1])
    return sys.solve()


@dataclass
class SteadyResult:
    state: StateVector
    slotboom: SlotboomState
    bounds: StationaryBounds
    report: GummelReport
    current: float = 0.0
    current_edges: np.ndarray | None = None


def steady_solve(mesh: Mesh1D, params: MaterialParams,
                 contacts: tuple[ContactParams, ContactParams],
                 options: GummelOptions | None = None) -> SteadyResult:
    """Decoupled (Gummel-type) solve of the stationary system.

    Alternates a nonlinear Poisson solve with the self-adjoint u and v
    continuity solves in Slotboom form until the potential update drops
    below tol_factor * Vth. Requires Dirichlet contacts (the kappa = 0
    limit of the flux relaxation).
    """
    opts = options or GummelOptions()
    if any(c.mode != "dirichlet" for c in contacts):
        raise ValueError("steady_solve requires dirichlet contacts")
    vth = thermal_voltage(params.temperature)
    kdiss, gamma, tau = frozen_coefficients(params, contacts, mesh)
    n_r = reference_concentration(params, contacts, kdiss, gamma)
    psi = (contacts[0].psi, contacts[1].psi)
    u_d = [c.n_dirichlet / n_r * np.exp(-c.psi / vth) for c in contacts]
    v_d = [c.p_dirichlet / n_r * np.exp(c.psi / vth) for c in contacts]

    x_rel = (mesh.x - mesh.x[0]) / mesh.length
    phi = psi[0] + (psi[1] - psi[0]) * x_rel
    u = u_d[0] + (u_d[1] - u_d[0]) * x_rel
    v = v_d[0] + (v_d[1] - v_d[0]) * x_rel

    c_rate = tau * kdiss * params.generation  # m^-3 s^-1; rate is c*(1 - u v)
    d_n = params.mu_n * vth
    d_p = params.mu_p * vth
    report = GummelReport()
    for it in range(1, opts.max_iterations + 1):
        phi_old = phi
        phi = _solve_nonlinear_poisson(mesh, params.eps, vth, n_r, u, v,
                                       phi, psi, opts)
        delta = (phi[1:] - phi[:-1]) / vth
        # edge conductances of the self-adjoint Slotboom fluxes
        g_n = d_n * n_r / mesh.h * np.exp(phi[:-1] / vth) * bernoulli(-delta)
        g_p = d_p * n_r / mesh.h * np.exp(-phi[:-1] / vth) * bernoulli(delta)
        u = _solve_slotboom_carrier(mesh, g_n, c_rate * v,
                                    np.full(mesh.n_nodes, c_rate), u_d)
        v = _solve_slotboom_carrier(mesh, g_p, c_rate * u,
                                    np.full(mesh.n_nodes, c_rate), v_d)
        report.iterations = it
        report.phi_update = float(np.max(np.abs(phi - phi_old)))
        if report.phi_update < opts.tol_factor * vth:
            report.converged = True
            break

    slot = SlotboomState(phi, u, v, n_r)
    n, p = slot.densities(vth)
    x_field = stationary_x(n, p, params.generation, gamma, tau)
    state = StateVector(phi, n, p, x_field, 0.0)
    bounds = stationary_bounds(contacts, n_r, vth)
    report.bounds_satisfied = bounds.contains(phi, n, p)
    j_edges = conduction_current(phi, n, p, params, mesh, vth)
    return SteadyResult(state, slot, bounds, report,
                        float(j_edges[0]), j_edges)


def reduced_transient_solve(mesh: Mesh1D, params: MaterialParams,
                            contacts: tuple[ContactParams, ContactParams],
                            initial: StateVector, t_end: float,
                            bdf_opts: BdfOptions | None = None,
                            newton_opts: NewtonOptions | None = None,
                            scaling: ScalingSet | None = None,
                            output_times=(), sink=None) -> IntegrationResult:
    """Integrate the lumped 2-carrier model from the given initial state.

    The initial pair density enters only through x0 and the p(x,0) n(x,0)
    product of the modified rates; X along the trajectory is reconstructed
    a posteriori via ReducedModel.reconstruct_pairs.
    """
    model = ReducedModel(mesh, params, contacts,
                         x0=initial.X, pn0=initial.p * initial.n)
    y0 = np.column_stack([initial.phi, initial.n, initial.p])
    return integrate(model, y0, initial.t, t_end, bdf_opts,
                     output_times=output_times, sink=sink,
                     newton_opts=newton_opts, scaling=scaling)


# ---------------------------------------------------------------------------
# memory-term diagnostics
# ---------------------------------------------------------------------------

@dataclass
class MemoryDiagnostics:
    """Volume-averaged exact memory integral, its lumping, and |I - I~|."""

    t: np.ndarray
    exact: np.ndarray      # I(t), m^-3 s^-1
    lumped: np.ndarray     # I~(t)
    diff: np.ndarray       # volume-averaged |I - I~|


def memory_diagnostics(times: np.ndarray, pn_history: np.ndarray,
                       kdiss: float, gamma: float, tau: float,
                       volumes: np.ndarray,
                       eval_times: np.ndarray | None = None) -> MemoryDiagnostics:
    """Realized quadrature error of the trapezoidal memory-term lumping.

    times (K,) and pn_history (K, nodes) sample the full-model p*n product
    on the accepted time grid starting at t=0. The exact integral uses
    composite trapezoidal quadrature on that grid; the lumped form is the
    2-point rule that defines the reduced model. Fields are reduced to
    scalars by the control-volume average; diff averages |I - I~| nodewise.
    """
    times = np.asarray(times, dtype=float)
    pn = np.asarray(pn_history, dtype=float)
    if times.size < 3:
        raise ValueError("memory diagnostics need at least 3 history samples")
    if eval_times is None:
        eval_times = times
    w = volumes / volumes.sum()
    out_i = np.empty(eval_times.size)
    out_l = np.empty(eval_times.size)
    out_d = np.empty(eval_times.size)
    pn0 = pn[0]
    for idx, t in enumerate(eval_times):
        k = int(np.searchsorted(times, t, side="right"))
        ts = times[:k]
        if ts.size == 0 or ts[-1] < t - 1e-15 * max(t, 1.0):
            raise ValueError("eval time not on the sampled history grid")
        pn_t = pn[k - 1]
        if ts.size < 2 or t == 0.0:
            exact = np.zeros_like(pn_t)
        else:
            integrand = (pn[:k] - pn_t) * np.exp(-(t - ts)[:, None] / tau)
            exact = gamma * kdiss * _trapezoid(integrand, ts, axis=0)
        lump = gamma * kdiss * 0.5 * t * np.exp(-t / tau) * (pn0 - pn_t)
        out_i[idx] = w @ exact
        out_l[idx] = w @ lump
        out_d[idx] = w @ np.abs(exact - lump)
    return MemoryDiagnostics(np.asarray(eval_times, dtype=float),
                             out_i, out_l, out_d)
