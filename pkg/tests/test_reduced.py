"""Stationary elimination, Slotboom steady solver, lumped transient rates
and the memory-term diagnostics."""
import numpy as np
import pytest

from oscsim.constants import CONST
from oscsim.materials import (ContactParams, MaterialParams, StateVector,
                              exciton_tau, thermal_voltage, xi)
from oscsim.mesh import Mesh1D
from oscsim.newton import NewtonOptions
from oscsim.bdf import BdfOptions
from oscsim.reduced import (GummelOptions, ReducedModel, frozen_coefficients,
                            memory_diagnostics, modified_rates,
                            reduced_transient_solve, reference_concentration,
                            stationary_bounds, stationary_rates, stationary_x,
                            steady_solve)

VTH = thermal_voltage(300.0)
MESH = Mesh1D.uniform(70e-9, 201)


def make_params(generation=4.3e28, k_rec=1e7, k_diss=4.4e5, mu=2e-8):
    return MaterialParams(mu_n=mu, mu_p=mu, eps_r=4.0, temperature=300.0,
                          k_rec=k_rec, pair_distance=1.5e-9,
                          generation=generation, kdiss_override=k_diss)


def make_contacts(psi=(0.5, 0.0), nd=1e21):
    pd = nd * np.exp(-(psi[0] - psi[1]) / VTH)
    return (ContactParams.dirichlet(psi[0], nd, pd),
            ContactParams.dirichlet(psi[1], pd, nd))


class TestStationaryOps:
    def test_stationary_x_limits(self):
        tau, g, gamma = 1e-6, 4.3e28, 1.8e-16
        assert stationary_x(0.0, 0.0, g, gamma, tau) == tau * g
        c = 2e20
        assert stationary_x(c, c, 0.0, gamma, tau) == pytest.approx(gamma * tau * c * c)

    def test_stationary_rates(self):
        g, kd, kr, gamma = 4.3e28, 4.4e5, 1e5, 1.8e-16
        # detailed balance root
        pn = kd * g / (gamma * kr)
        root = stationary_rates(np.sqrt(pn), np.sqrt(pn), g, kd, kr, gamma)
        scale = exciton_tau(kd, kr) * kd * g
        assert abs(root) < 1e-10 * scale
        dark = stationary_rates(1e20, 1e20, 0.0, kd, kr, gamma)
        assert dark < 0.0

    def test_slotboom_normalization_choice(self):
        params = make_params()
        kd, gamma, tau = frozen_coefficients(params, make_contacts(), MESH)
        n_r = reference_concentration(params, make_contacts(), kd, gamma)
        assert gamma * params.k_rec * n_r ** 2 == pytest.approx(
            kd * params.generation, rel=1e-12)

    def test_n_r_dark_fallback(self):
        params = make_params(generation=0.0)
        contacts = make_contacts()
        kd, gamma, tau = frozen_coefficients(params, contacts, MESH)
        n_r = reference_concentration(params, contacts, kd, gamma)
        expected = (contacts[0].n_dirichlet * contacts[0].p_dirichlet
                    * contacts[1].n_dirichlet * contacts[1].p_dirichlet) ** 0.25
        assert n_r == pytest.approx(expected)


class TestBounds:
    def test_a_priori_bound_on_slotboom_data(self):
        """e^(-Psi+/Vth) <= u_D, v_D <= e^(Psi+/Vth) with the n_r choice."""
        rng = np.random.default_rng(7)
        for _ in range(10):
            psi = tuple(rng.uniform(-0.6, 0.6, 2))
            nd = tuple(10 ** rng.uniform(14, 21, 2))
            pd = tuple(10 ** rng.uniform(14, 21, 2))
            contacts = (ContactParams.dirichlet(psi[0], nd[0], pd[0]),
                        ContactParams.dirichlet(psi[1], nd[1], pd[1]))
            params = make_params(generation=10 ** rng.uniform(27, 30))
            kd, gamma, tau = frozen_coefficients(params, contacts, MESH)
            n_r = reference_concentration(params, contacts, kd, gamma)
            bounds = stationary_bounds(contacts, n_r, VTH)
            lo, hi = np.exp(-bounds.psi_plus / VTH), np.exp(bounds.psi_plus / VTH)
            for c in contacts:
                u_d = c.n_dirichlet / n_r * np.exp(-c.psi / VTH)
                v_d = c.p_dirichlet / n_r * np.exp(c.psi / VTH)
                assert lo * (1 - 1e-12) <= u_d <= hi * (1 + 1e-12)
                assert lo * (1 - 1e-12) <= v_d <= hi * (1 + 1e-12)

    def test_equilibrium_bounds_are_tight(self):
        contacts = (ContactParams.dirichlet(0.0, 1e18, 1e18),
                    ContactParams.dirichlet(0.0, 1e18, 1e18))
        bounds = stationary_bounds(contacts, 1e18, VTH)
        assert bounds.psi_plus == pytest.approx(0.0, abs=1e-12)
        assert bounds.density_lower == pytest.approx(1e18)
        assert bounds.density_upper == pytest.approx(1e18)
        assert bounds.potential_lower == 0.0 == bounds.potential_upper


class TestSteadySolve:
    def test_equilibrium_uv_constant(self):
        contacts = (ContactParams.dirichlet(0.0, 1e18, 1e18),
                    ContactParams.dirichlet(0.0, 1e18, 1e18))
        params = make_params(generation=0.0)
        res = steady_solve(MESH, params, contacts)
        assert res.report.converged
        assert np.ptp(res.slotboom.u) < 1e-12 * np.abs(res.slotboom.u).max()
        assert np.ptp(res.slotboom.v) < 1e-12 * np.abs(res.slotboom.v).max()
        prod = res.state.n * res.state.p
        assert np.allclose(prod, res.slotboom.n_r ** 2, rtol=1e-8)

    def test_bounds_contain_solution(self):
        res = steady_solve(MESH, make_params(), make_contacts())
        assert res.report.converged
        assert res.report.bounds_satisfied

    def test_requires_dirichlet(self):
        robin = ContactParams(psi=0.0, alpha_n=1e4, alpha_p=1e4, beta_n=1e20,
                              beta_p=1e20, kappa_n=1.0, kappa_p=1.0,
                              mode="robin")
        with pytest.raises(ValueError):
            steady_solve(MESH, make_params(), (robin, robin))

    def test_current_spatially_constant(self):
        res = steady_solve(MESH, make_params(), make_contacts())
        assert np.ptp(res.current_edges) < 1e-6 * abs(res.current)

    def test_pair_field_consistent_with_elimination(self):
        params = make_params()
        res = steady_solve(MESH, params, make_contacts())
        kd, gamma, tau = frozen_coefficients(params, make_contacts(), MESH)
        expected = stationary_x(res.state.n, res.state.p, params.generation,
                                gamma, tau)
        assert np.allclose(res.state.X, expected, rtol=1e-12)

    def test_mirror_symmetry(self):
        res = steady_solve(MESH, make_params(), make_contacts())
        n, p = res.state.n, res.state.p
        # limited by the outer Gummel tolerance (1e-7 * Vth on phi)
        assert np.max(np.abs(p - n[::-1])) < 1e-6 * n.max()


class TestModifiedRates:
    kd, kr, gamma = 4.4e5, 1e5, 1.8e-16

    @property
    def tau(self):
        return exciton_tau(self.kd, self.kr)

    def test_t0(self):
        x0, pn0 = 5e15, 1e40
        n = p = np.array([1e20])
        g_mod, r_pn = modified_rates(0.0, n, p, np.array([pn0]),
                                     np.array([x0]), self.kd, self.kr,
                                     self.gamma, self.tau)
        assert float(g_mod[0]) == pytest.approx(self.kd * x0)
        # bracket collapses to gamma at t=0 since tau*(kr + kd) = 1
        assert float(r_pn[0]) == pytest.approx(self.gamma * 1e40)

    def test_infinite_time_matches_stationary(self):
        g = 4.3e28
        n = p = np.array([2e20])
        x_inf = self.tau * g
        g_mod, r_pn = modified_rates(1.0, n, p, np.array([1e40]),
                                     np.array([x_inf]), self.kd, self.kr,
                                     self.gamma, self.tau)
        assert float(g_mod[0]) == pytest.approx(self.kd * self.tau * g)
        assert float(r_pn[0]) == pytest.approx(self.gamma * self.tau * self.kr * 4e40)
        u_stat = stationary_rates(n, p, g, self.kd, self.kr, self.gamma)
        assert float(g_mod[0] - r_pn[0]) == pytest.approx(float(u_stat[0]))

    def test_t_equals_tau(self):
        g = 4.3e28
        xi_t = xi(self.tau, 0.0, g, self.tau)
        g_mod, _ = modified_rates(self.tau, np.array([0.0]), np.array([0.0]),
                                  np.array([0.0]), np.array([xi_t]), self.kd,
                                  self.kr, self.gamma, self.tau)
        assert float(g_mod[0]) == pytest.approx(
            self.kd * self.tau * g * (1 - np.exp(-1)))

    def test_negative_time_rejected(self):
        with pytest.raises(ValueError):
            modified_rates(-1.0, np.array([1.0]), np.array([1.0]), 0.0, 0.0,
                           self.kd, self.kr, self.gamma, self.tau)


class TestReducedTransient:
    def test_dark_stays_at_equilibrium(self):
        params = make_params(generation=0.0)
        contacts = make_contacts()
        res0 = steady_solve(MESH, params, contacts)
        kd, gamma, tau = frozen_coefficients(params, contacts, MESH)
        x0 = stationary_x(res0.state.n, res0.state.p, 0.0, gamma, tau)
        initial = StateVector(res0.state.phi, res0.state.n, res0.state.p, x0, 0.0)
        js = []
        from oscsim.discretization import compute_current
        model = ReducedModel(MESH, params, contacts, x0=initial.X,
                             pn0=initial.p * initial.n)
        def sink(t, y, ctx):
            if ctx is None:
                return
            st = StateVector(y[:, 0], y[:, 1], y[:, 2],
                             model.reconstruct_pairs(t, y), t)
            cur = compute_current(st, params, MESH, ctx.theta,
                                  [s[:, 0] for s in ctx.stencil_states])
            js.append(cur.contact)
        reduced_transient_solve(MESH, params, contacts, initial, 1e-5,
                                BdfOptions(atol=np.array([1e-6, 1e16, 1e16])),
                                NewtonOptions(max_iterations=14), sink=sink)
        scale = CONST.q * params.mu_n * VTH * 1e21 / 70e-9
        assert np.max(np.abs(js)) < 1e-7 * scale

    def test_pair_reconstruction_limits(self):
        params = make_params()
        contacts = make_contacts()
        kd, gamma, tau = frozen_coefficients(params, contacts, MESH)
        x0 = np.full(201, 3e15)
        n0 = np.full(201, 1e19)
        model = ReducedModel(MESH, params, contacts, x0=x0, pn0=n0 * n0)
        y0 = np.column_stack([np.zeros(201), n0, n0])
        assert np.allclose(model.reconstruct_pairs(0.0, y0), x0, rtol=1e-12)
        # far past the kinetic time: stationary elimination recovered
        y_inf = np.column_stack([np.zeros(201), 2 * n0, 3 * n0])
        x_inf = model.reconstruct_pairs(1.0, y_inf)
        expected = stationary_x(2 * n0, 3 * n0, params.generation, gamma, tau)
        assert np.allclose(x_inf, expected, rtol=1e-12)


class TestMemoryDiagnostics:
    def test_zero_at_start_and_for_stationary_history(self):
        times = np.linspace(0.0, 1e-5, 50)
        pn = np.full((50, 11), 4e40)
        w = np.full(11, 70e-9 / 11)
        diag = memory_diagnostics(times, pn, 4.4e5, 1.8e-16, 1e-6, w)
        assert diag.exact[0] == 0.0 and diag.lumped[0] == 0.0
        assert np.all(np.abs(diag.exact) < 1e-20)
        assert np.all(np.abs(diag.lumped) < 1e-20)

    def test_lumped_formula_shape(self):
        """The lumped term vanishes at t=0 and decays like t e^(-t/tau)."""
        tau = 1e-6
        times = np.geomspace(1e-9, 30 * tau, 300)
        times = np.insert(times, 0, 0.0)
        pn = np.tile(np.linspace(1e40, 5e40, times.size)[:, None], (1, 5))
        w = np.ones(5)
        diag = memory_diagnostics(times, pn, 4.4e5, 1.8e-16, tau, w)
        assert diag.lumped[0] == 0.0
        peak = np.abs(diag.lumped).max()
        assert abs(diag.lumped[-1]) < 1e-8 * peak

    def test_insufficient_history(self):
        with pytest.raises(ValueError):
            memory_diagnostics(np.array([0.0, 1.0]), np.ones((2, 3)),
                               1e5, 1e-16, 1e-6, np.ones(3))

    def test_exact_integral_matches_quadrature_oracle(self):
        """Composite trapezoid against a dense independent quadrature."""
        tau, gamma, kd = 1e-6, 1.8e-16, 4.4e5
        times = np.linspace(0.0, 5e-6, 2001)
        pn_fun = lambda s: 1e40 * (1 - np.exp(-s / 8e-7)) ** 2
        pn = np.tile(pn_fun(times)[:, None], (1, 3))
        w = np.ones(3)
        diag = memory_diagnostics(times, pn, kd, gamma, tau, w,
                                  eval_times=np.array([times[-1]]))
        s = np.linspace(0.0, times[-1], 40001)
        integrand = (pn_fun(s) - pn_fun(times[-1])) * np.exp(-(times[-1] - s) / tau)
        trapezoid = getattr(np, 'trapezoid', None) or np.trapz
        oracle = gamma * kd * trapezoid(integrand, s)
        assert diag.exact[-1] == pytest.approx(oracle, rel=1e-5)


class TestGradedMesh:
    def test_graded_steady_matches_uniform(self):
        """The nonuniform-edge assembly agrees with the uniform mesh."""
        params = make_params()
        contacts = make_contacts()
        res_u = steady_solve(Mesh1D.uniform(70e-9, 201), params, contacts)
        res_g = steady_solve(Mesh1D.graded(70e-9, 201, 1.03), params, contacts)
        assert res_g.report.converged
        assert res_g.current == pytest.approx(res_u.current, rel=5e-4)
