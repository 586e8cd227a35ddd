"""Residual/Jacobian consistency and the damped scaled Newton iteration."""
import numpy as np
import pytest

from oscsim.materials import ContactParams, MaterialParams, thermal_voltage
from oscsim.mesh import Mesh1D
from oscsim.models import FullModel
from oscsim.newton import (NewtonOptions, ScalingSet, newton_solve, residual,
                           scale, unscale)
from oscsim.reduced import steady_solve, stationary_x, frozen_coefficients

VTH = thermal_voltage(300.0)


def make_model(generation=4.3e28, mode="dirichlet", nodes=21,
               kdiss_override=4.4e5, v_max=None):
    params = MaterialParams(mu_n=2e-8, mu_p=2e-8, eps_r=4.0, temperature=300.0,
                            k_rec=1e5, pair_distance=1.5e-9,
                            generation=generation,
                            kdiss_override=kdiss_override, v_max=v_max)
    nd, pd = 1e21, 1e21 * np.exp(-0.5 / VTH)
    if mode == "dirichlet":
        contacts = (ContactParams.dirichlet(0.5, nd, pd),
                    ContactParams.dirichlet(0.0, pd, nd))
    else:
        contacts = (
            ContactParams(psi=0.5, alpha_n=1e4, alpha_p=1e4, beta_n=1e25,
                          beta_p=1e16, kappa_n=1.0, kappa_p=1.0, mode="robin"),
            ContactParams(psi=0.0, alpha_n=1e4, alpha_p=1e4, beta_n=1e16,
                          beta_p=1e25, kappa_n=1.0, kappa_p=1.0, mode="robin"))
    return FullModel(Mesh1D.uniform(70e-9, nodes), params, contacts)


def random_state(model, seed=0):
    rng = np.random.default_rng(seed)
    n = model.mesh.n_nodes
    return np.column_stack([
        np.linspace(0.5, 0.0, n) + 0.01 * rng.standard_normal(n),
        1e20 * (1.0 + 0.5 * rng.random(n)),
        1e20 * (1.0 + 0.5 * rng.random(n)),
        1e22 * (1.0 + 0.5 * rng.random(n))])


def fd_jacobian(model, y, theta0, hist):
    n = y.size
    jac = np.zeros((n, n))
    flat = y.ravel()
    for j in range(n):
        eps = 2e-6 * max(abs(flat[j]), 3e-3)
        up, dn = flat.copy(), flat.copy()
        up[j] += eps
        dn[j] -= eps
        fp, _ = model.residual(0.0, up.reshape(y.shape), theta0, hist)
        fm, _ = model.residual(0.0, dn.reshape(y.shape), theta0, hist)
        jac[:, j] = (fp.ravel() - fm.ravel()) / (2 * eps)
    return jac


@pytest.mark.parametrize("mode", ["dirichlet", "robin"])
def test_jacobian_matches_fd_constant_coefficients(mode):
    """With constant coefficients the quasi-Newton Jacobian is exact."""
    model = make_model(mode=mode)
    y = random_state(model)
    theta0 = 1e7
    hist = -theta0 * y * 0.97
    hist[:, 0] = 0.0
    jac = model.jacobian(0.0, y, theta0).to_dense()
    ref = fd_jacobian(model, y, theta0, hist)
    big = np.abs(ref) > 1e-8 * np.abs(ref).max()
    rel = np.abs(jac - ref)[big] / np.abs(ref)[big]
    assert rel.max() < 1e-3
    # column-wise agreement; the bound absorbs central-difference truncation
    col_scale = np.abs(ref).max(axis=0)
    assert np.all(np.abs(jac - ref).max(axis=0) <= 5e-4 * col_scale)


def test_residual_perturbation_matches_jacobian_row():
    model = make_model()
    y = random_state(model, seed=2)
    theta0 = 3e6
    hist = -theta0 * y
    hist[:, 0] = 0.0
    f0, _ = model.residual(0.0, y, theta0, hist)
    jac = model.jacobian(0.0, y, theta0).to_dense()
    rng = np.random.default_rng(5)
    for _ in range(6):
        j = int(rng.integers(0, y.size))
        eps = 1e-7 * max(abs(y.ravel()[j]), 1e-2)
        pert = y.ravel().copy()
        pert[j] += eps
        f1, _ = model.residual(0.0, pert.reshape(y.shape), theta0, hist)
        df = (f1.ravel() - f0.ravel()) / eps
        big = np.abs(jac[:, j]) > 1e-6 * np.abs(jac[:, j]).max()
        assert np.allclose(df[big], jac[big, j], rtol=1e-3)


def test_field_dependence_dropped_from_jacobian():
    """Braun dissociation couples X rows to phi; the inexact Jacobian omits it."""
    model = make_model(kdiss_override=None)
    y = random_state(model, seed=3)
    jac = model.jacobian(0.0, y, 0.0).to_dense()
    # f_X rows have no phi coupling (columns at node offsets 0)
    n = model.mesh.n_nodes
    for i in range(1, n - 1):
        row = 4 * i + 3
        assert jac[row, 4 * i] == 0.0


def test_x_row_entries():
    model = make_model()
    y = random_state(model, seed=4)
    theta0 = 2e5
    jac = model.jacobian(0.0, y, theta0).to_dense()
    gamma = model.gamma
    i = 7
    row = 4 * i + 3
    assert jac[row, 4 * i + 1] == pytest.approx(-gamma * y[i, 2])
    assert jac[row, 4 * i + 2] == pytest.approx(-gamma * y[i, 1])
    assert jac[row, 4 * i + 3] == pytest.approx(theta0 + 4.4e5 + 1e5)


def test_scale_unscale_roundtrip():
    model = make_model()
    y = random_state(model)
    s = ScalingSet()
    assert np.allclose(unscale(scale(y, s, model), s, model), y, rtol=1e-15)
    # paper defaults
    assert (s.sigma_phi, s.sigma_n, s.sigma_p, s.sigma_X) == (1.0, 1e3, 1e3, 1e2)
    assert (s.phi_bar, s.n_bar, s.p_bar, s.X_bar) == (1.0, 1e22, 1e22, 1e19)


def test_scaling_set_validation():
    with pytest.raises(ValueError):
        ScalingSet(sigma_phi=0.0)


def make_steady_start(model):
    res = steady_solve(model.mesh, model.params, model.contacts)
    return np.column_stack([res.state.phi, res.state.n, res.state.p,
                            res.state.X])


def test_newton_from_exact_solution_converges_immediately():
    model = make_model(nodes=101)
    y0 = make_steady_start(model)
    hist = np.zeros_like(y0)
    y1, rep1 = newton_solve(model, 0.0, y0, 0.0, hist)
    assert rep1.converged and rep1.iterations <= 2
    # restarting from the converged state takes at most one iteration
    y2, rep2 = newton_solve(model, 0.0, y1, 0.0, hist)
    assert rep2.converged and rep2.iterations <= 1


def test_dark_equilibrium_from_flat_guess():
    model = make_model(generation=0.0, nodes=101)
    n = model.mesh.n_nodes
    nd, pd = 1e21, 1e21 * np.exp(-0.5 / VTH)
    y0 = np.column_stack([np.linspace(0.5, 0.0, n),
                          np.geomspace(nd, pd, n),
                          np.geomspace(pd, nd, n),
                          np.full(n, 1e10)])
    y, rep = newton_solve(model, 0.0, y0, 0.0, np.zeros_like(y0),
                          options=NewtonOptions(max_iterations=40))
    assert rep.converged
    from oscsim.discretization import compute_current
    state = model.to_state(y, 0.0)
    cur = compute_current(state, model.params, model.mesh)
    scale_j = 1.602e-19 * 2e-8 * VTH * y[:, 1].max() / 70e-9
    assert abs(cur.contact) < 1e-7 * scale_j


def test_uniqueness_from_two_guesses():
    model = make_model(nodes=101)
    y_a = make_steady_start(model)
    rng = np.random.default_rng(11)
    y_b = y_a.copy()
    y_b[:, 1:] *= np.exp(0.5 * rng.standard_normal(y_b[:, 1:].shape))
    y_b[:, 0] += 0.02 * rng.standard_normal(model.mesh.n_nodes)
    sol_a, rep_a = newton_solve(model, 0.0, y_a, 0.0, np.zeros_like(y_a),
                                options=NewtonOptions(max_iterations=40))
    sol_b, rep_b = newton_solve(model, 0.0, y_b, 0.0, np.zeros_like(y_b),
                                options=NewtonOptions(max_iterations=40))
    assert rep_a.converged and rep_b.converged
    bars = ScalingSet().col_factors(model)
    assert np.max(np.abs(sol_a - sol_b) / bars) < 1e-8


def test_scaling_invariance_of_solution():
    model = make_model(nodes=101)
    y0 = make_steady_start(model)
    y0[:, 1:] *= 1.3  # start off the root
    sols = {}
    for tag, s in (("paper", ScalingSet()), ("unit", ScalingSet.unit()),
                   ("odd", ScalingSet(2.0, 7e2, 5e2, 3e1, 0.5, 3e21, 2e21, 5e18))):
        sol, rep = newton_solve(model, 0.0, y0, 0.0, np.zeros_like(y0),
                                scaling=s, options=NewtonOptions(max_iterations=40))
        assert rep.converged, tag
        sols[tag] = sol
    bars = ScalingSet().col_factors(model)
    opts = NewtonOptions()
    tol = 10 * (opts.atol + opts.rtol * np.max(np.abs(sols["paper"] / bars)))
    for tag in ("unit", "odd"):
        assert np.max(np.abs(sols[tag] - sols["paper"]) / bars) < tol


def test_extreme_scaling_probe():
    """Scales far from the recommended set are probed, not asserted: the
    solver must return a report either way."""
    model = make_model(nodes=41)
    y0 = make_steady_start(model)
    y0[:, 1:] *= 2.0
    wild = ScalingSet(1e6, 1e-6, 1e6, 1e-4, 1e6, 1e10, 1e30, 1e8)
    sol, rep = newton_solve(model, 0.0, y0, 0.0, np.zeros_like(y0), scaling=wild,
                            options=NewtonOptions(max_iterations=40))
    assert rep.iterations <= 40
    assert np.all(np.isfinite(sol))


def test_manufactured_steady_residual_is_roundoff():
    model = make_model(nodes=101)
    y = make_steady_start(model)
    y, rep = newton_solve(model, 0.0, y, 0.0, np.zeros_like(y))
    f, c = model.residual(0.0, y, 0.0, np.zeros_like(y))
    assert np.max(np.abs(f) / c) < 1e-12


def test_residual_wrapper_history_validation():
    model = make_model(nodes=11)
    y = random_state(model, seed=6)[:11]
    with pytest.raises(ValueError):
        residual(y, [y], np.array([1.0, -0.5, -0.5]), model)


def test_superlinear_local_convergence():
    """Scaled residual ratios shrink superlinearly near the root in the
    constant-coefficient regime."""
    model = make_model(nodes=101)
    y0 = make_steady_start(model)
    y0[:, 1:] *= 1.4
    _, rep = newton_solve(model, 0.0, y0, 0.0, np.zeros_like(y0),
                          options=NewtonOptions(max_iterations=40,
                                                atol=1e-12, rtol=1e-12,
                                                ftol=1e-12))
    assert rep.converged
    hist = np.array(rep.residual_history)
    hist = hist[hist > 5e-14]  # drop round-off floor entries
    assert hist.size >= 3
    ratios = hist[1:] / hist[:-1]
    # the last contraction factors shrink (superlinear tail)
    assert ratios[-1] < ratios[-2] < 1.0


def test_global_convergence_from_gross_overshoot():
    """The frozen-norm line search makes proportional overshoots tractable."""
    model = make_model(nodes=101, generation=4.3e30)
    y0 = make_steady_start(model)
    y0[:, 1:] *= 1e3
    _, rep = newton_solve(model, 0.0, y0, 0.0, np.zeros_like(y0),
                          options=NewtonOptions(max_iterations=60))
    assert rep.converged


def test_vmax_clamp_active_in_model():
    """With a drift clamp the edge speed is capped and the solve still runs."""
    model = make_model(nodes=41, v_max=0.5)
    y0 = make_steady_start(make_model(nodes=41))
    y, rep = newton_solve(model, 0.0, y0, 0.0, np.zeros_like(y0),
                          options=NewtonOptions(max_iterations=40))
    assert rep.converged
    phi = y[:, 0]
    delta = (phi[1:] - phi[:-1]) / model.vth
    from oscsim.discretization import clamp_delta
    d_eff = clamp_delta(delta, model.params.mu_n, model.vth, model.mesh.h, 0.5)
    speed = model.params.mu_n * np.abs(d_eff) * model.vth / model.mesh.h
    assert np.all(speed <= 0.5 * (1 + 1e-12))
