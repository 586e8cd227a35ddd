"""Scaled, damped quasi-Newton solver for the per-timestep systems.

The linear systems are solved by direct banded LU. Row scaling combines the
user residual scales sigma with state-independent characteristic magnitudes;
column scaling uses the variable scales (bars). Both change conditioning
only, never the root.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ScalingSet:
    """Residual scales sigma_* and variable scales *_bar per unknown."""

    sigma_phi: float = 1.0
    sigma_n: float = 1.0e3
    sigma_p: float = 1.0e3
    sigma_X: float = 1.0e2
    phi_bar: float = 1.0
    n_bar: float = 1.0e22
    p_bar: float = 1.0e22
    X_bar: float = 1.0e19

    def __post_init__(self):
        for name in ("sigma_phi", "sigma_n", "sigma_p", "sigma_X",
                     "phi_bar", "n_bar", "p_bar", "X_bar"):
            if getattr(self, name) <= 0.0:
                raise ValueError(f"{name} must be positive")

    @classmethod
    def unit(cls) -> "ScalingSet":
        return cls(1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0)

    def row_factors(self, model) -> np.ndarray:
        table = {"phi": self.sigma_phi, "n": self.sigma_n,
                 "p": self.sigma_p, "X": self.sigma_X}
        return np.array([table.get(u, 1.0) for u in model.unknowns])

    def col_factors(self, model) -> np.ndarray:
        table = {"phi": self.phi_bar, "n": self.n_bar,
                 "p": self.p_bar, "X": self.X_bar}
        return np.array([table.get(u, 1.0) for u in model.unknowns])


def scale(y: np.ndarray, scaling: ScalingSet, model) -> np.ndarray:
    """Divide each unknown column by its variable scale."""
    return y / scaling.col_factors(model)


def unscale(y_hat: np.ndarray, scaling: ScalingSet, model) -> np.ndarray:
    """Inverse of scale()."""
    return y_hat * scaling.col_factors(model)


@dataclass(frozen=True)
class NewtonOptions:
    max_iterations: int = 30
    atol: float = 1e-10       # scaled update, absolute
    rtol: float = 1e-8        # scaled update, relative
    ftol: float = 1e-8        # scaled residual (dimensionless imbalance)
    damping_factor: float = 0.5
    damping_min: float = 2.0 ** -10
    armijo: float = 1e-4
    density_floor: float = 1.0  # m^-3, clipped during iteration only

    def __post_init__(self):
        if min(self.atol, self.rtol, self.ftol) <= 0.0:
            raise ValueError("tolerances must be positive")
        if not 0.0 < self.damping_factor < 1.0:
            raise ValueError("damping_factor must lie in (0, 1)")


@dataclass
class NewtonReport:
    converged: bool = False
    iterations: int = 0
    residual_norm: float = np.inf
    update_norm: float = np.inf
    damping_history: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    floor_active: bool = False

    @property
    def damping_min_used(self) -> float:
        return min(self.damping_history, default=1.0)


def residual(y: np.ndarray, history: list[np.ndarray], theta: np.ndarray,
             model, t: float = 0.0) -> np.ndarray:
    """Assembled residual at the newest time level of the BDF stencil.

    history lists the previous states, newest first; theta holds the BDF
    coefficients (theta[0] multiplies the unknown level).
    """
    hist = _history_term(y, history, theta, model)
    f, _ = model.residual(t, y, theta[0], hist)
    return f


def approx_jacobian(y: np.ndarray, theta0: float, model, t: float = 0.0):
    """Inexact Jacobian (field dependences of coefficients dropped)."""
    return model.jacobian(t, y, theta0)


def _history_term(y: np.ndarray, history: list[np.ndarray],
                  theta: np.ndarray, model) -> np.ndarray:
    if len(history) != len(theta) - 1:
        raise ValueError("history length must match the BDF order")
    hist = np.zeros_like(y)
    for th, y_k in zip(theta[1:], history):
        hist += th * y_k
    hist[:, ~model.differential] = 0.0
    return hist


def _clip(y: np.ndarray, model, floor: float) -> np.ndarray:
    out = y.copy()
    mask = model.density_like
    out[:, mask] = np.maximum(out[:, mask], floor)
    return out


def newton_solve(model, t: float, y0: np.ndarray, theta0: float,
                 hist: np.ndarray,
                 scaling: ScalingSet | None = None,
                 options: NewtonOptions | None = None,
                 update_weights: np.ndarray | None = None,
                 update_tol: float | None = None
                 ) -> tuple[np.ndarray, NewtonReport]:
    """Damped quasi-Newton iteration for F(y) = 0 at one time level.

    Backtracks on the scaled residual norm; densities are clipped at a small
    positive floor inside the iteration, and convergence is only declared
    while the floor is inactive.

    When update_weights/update_tol are given (the time integrator passes its
    error weights), the update test becomes a weighted RMS test so that the
    iteration error stays well below the truncation error being controlled.
    """
    scaling = scaling or ScalingSet()
    opts = options or NewtonOptions()
    sigma = scaling.row_factors(model)
    bars = scaling.col_factors(model)
    cchar = model.char_scales(theta0)
    report = NewtonReport()

    def res_norm(f, c):
        return float(np.max(np.abs(f) / (sigma * c)))

    def update_small(dy, y_cur):
        if update_weights is not None:
            wrms = float(np.sqrt(np.mean((dy * update_weights) ** 2)))
            return wrms < update_tol, wrms
        upd = float(np.max(np.abs(dy / bars)))
        y_hat_norm = float(np.max(np.abs(y_cur / bars)))
        return upd < opts.atol + opts.rtol * y_hat_norm, upd

    y = _clip(y0, model, opts.density_floor)
    f, c = model.residual(t, y, theta0, hist)
    rnorm = res_norm(f, c)
    report.residual_history.append(rnorm)
    if not np.isfinite(rnorm):
        report.residual_norm = rnorm
        return y, report

    for it in range(1, opts.max_iterations + 1):
        sys = model.jacobian(t, y, theta0)
        row_fac = np.tile(1.0 / (sigma * cchar), model.mesh.n_nodes)
        col_fac = np.tile(bars, model.mesh.n_nodes)
        sys.scale_rows_cols(row_fac, col_fac)
        sys.rhs = -(f / (sigma * cchar)).ravel()
        try:
            d_hat = sys.solve().reshape(y.shape)
        except np.linalg.LinAlgError:
            break
        d_full = d_hat * bars
        # convergence is judged on the undamped increment; a damped step of
        # tolerance size says nothing about being at the root
        small, upd = update_small(d_full, y)

        # the line search measures descent with the normalizer frozen at the
        # current iterate; a normalizer moving with the state would hide
        # progress on proportional overshoots
        c_frozen = c
        r_base = rnorm
        lam = 1.0
        while True:
            y_try = _clip(y + lam * d_full, model, opts.density_floor)
            f_try, c_try = model.residual(t, y_try, theta0, hist)
            r_try = res_norm(f_try, c_try)
            r_fixed = res_norm(f_try, c_frozen)
            if small and np.isfinite(r_try):
                break  # no line search needed at a tolerance-sized step
            if np.isfinite(r_try) and (r_fixed <= (1.0 - opts.armijo * lam) * r_base
                                       or r_try < 0.1 * opts.ftol):
                break
            if lam <= opts.damping_min:
                break
            lam *= opts.damping_factor
        report.damping_history.append(lam)

        y, f, c, rnorm = y_try, f_try, c_try, r_try
        report.iterations = it
        report.residual_norm = rnorm
        report.residual_history.append(rnorm)
        report.update_norm = upd
        if not np.isfinite(rnorm):
            break
        if small and rnorm < opts.ftol:
            report.floor_active = bool(np.any(y[:, model.density_like]
                                              <= opts.density_floor))
            report.converged = not report.floor_active
            break
    return y, report
