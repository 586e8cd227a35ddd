"""Adaptive variable-order BDF integration of the semi-explicit DAE.

The Poisson block is algebraic (no theta terms, excluded from the error
norm); the carrier and pair densities are differential. Orders 1..5 are
supported on nonuniform stencils; the default order cap is 2 because the
problem is stiff at turn-on and the higher formulas are not A-stable.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from types import SimpleNamespace

import numpy as np

from .newton import NewtonOptions, ScalingSet, newton_solve

MAX_ORDER = 5


class IntegrationError(RuntimeError):
    pass


def fd_weights(xs: np.ndarray, x0: float, m: int) -> np.ndarray:
    """Finite-difference weights for the m-th derivative at x0 on nodes xs.

    Fornberg's recursion; m = 0 yields interpolation weights. Exact for
    polynomials up to degree len(xs) - 1.
    """
    xs = np.asarray(xs, dtype=float)
    n = xs.size
    if m >= n:
        raise ValueError("need more than m nodes for the m-th derivative")
    c = np.zeros((n, m + 1))
    c[0, 0] = 1.0
    c1 = 1.0
    c4 = xs[0] - x0
    for i in range(1, n):
        mn = min(i, m)
        c2 = 1.0
        c5 = c4
        c4 = xs[i] - x0
        for j in range(i):
            c3 = xs[i] - xs[j]
            c2 *= c3
            if j == i - 1:
                for k in range(mn, 0, -1):
                    c[i, k] = c1 * (k * c[i - 1, k - 1] - c5 * c[i - 1, k]) / c2
                c[i, 0] = -c1 * c5 * c[i - 1, 0] / c2
            for k in range(mn, 0, -1):
                c[j, k] = (c4 * c[j, k] - k * c[j, k - 1]) / c3
            c[j, 0] = c4 * c[j, 0] / c3
        c1 = c2
    return c[:, m]


def bdf_coefficients(times: np.ndarray) -> np.ndarray:
    """Derivative coefficients theta_0..theta_m at times[0].

    times runs newest first, t_K > t_{K-1} > ... > t_{K-m}. The coefficients
    satisfy sum(theta) = 0 and reproduce d/dt of any polynomial of degree
    <= m sampled on the stencil.
    """
    times = np.asarray(times, dtype=float)
    m = times.size - 1
    if not 1 <= m <= MAX_ORDER:
        raise ValueError(f"order must lie in 1..{MAX_ORDER}")
    if np.any(np.diff(times) >= 0.0):
        raise ValueError("times must be strictly decreasing (newest first)")
    return fd_weights(times, times[0], 1)


def interpolate_history(times, states, t_new: float, degree: int) -> np.ndarray:
    """Evaluate the degree-`degree` interpolant of the history at t_new.

    times/states are newest first; the most recent degree+1 entries are used.
    """
    k = degree + 1
    if len(times) < k:
        raise ValueError("not enough history for the requested degree")
    wts = fd_weights(np.asarray(times[:k]), t_new, 0)
    out = wts[0] * states[0]
    for wk, yk in zip(wts[1:], states[1:k]):
        out = out + wk * yk
    return out


@dataclass(frozen=True)
class BdfOptions:
    rtol: float = 1e-6
    atol: np.ndarray | float = 1e-6     # scalar or per-unknown array
    order_cap: int = 2
    dt_init: float = 1e-12
    dt_min: float = 1e-20
    dt_max: float = np.inf
    safety: float = 0.9
    growth_cap: float = 2.0
    controller_margin: float = 12.0     # accept when margin*estimate <= 1
    max_steps: int = 200_000
    fixed_dt: float | None = None       # disables the error controller
    fixed_order: int | None = None

    def __post_init__(self):
        if not 1 <= self.order_cap <= MAX_ORDER:
            raise ValueError(f"order_cap must lie in 1..{MAX_ORDER}")


@dataclass
class BdfState:
    """Integration history (newest first) and controller state."""

    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    order: int = 1
    dt_next: float = 0.0
    steps_at_order: int = 0

    def push(self, t: float, y: np.ndarray, keep: int):
        self.times.insert(0, t)
        self.states.insert(0, y)
        del self.times[keep:]
        del self.states[keep:]


@dataclass
class StepResult:
    accepted: bool
    t: float
    state: np.ndarray | None
    error: float
    dt_next: float
    order_next: int
    newton_report: object
    theta: np.ndarray | None = None


def error_weights(y: np.ndarray, opts: BdfOptions) -> np.ndarray:
    atol = np.broadcast_to(np.asarray(opts.atol, dtype=float), (y.shape[1],))
    return 1.0 / (atol + opts.rtol * np.abs(y))


def error_estimate(corrected: np.ndarray, predicted: np.ndarray, order: int,
                   weights: np.ndarray, differential: np.ndarray) -> float:
    """Weighted RMS of the predictor-corrector difference, scaled by 1/(m+1).

    Only differential components enter the norm; the algebraic potential is
    controlled by the Newton solve, not the step size.
    """
    diff = (corrected - predicted) * weights
    diff = diff[:, differential]
    return float(np.sqrt(np.mean(diff ** 2)) / (order + 1))


def predict(state: BdfState, t_new: float, order: int | None = None) -> np.ndarray:
    """Extrapolate the history polynomial to t_new (initial Newton guess)."""
    if not state.times:
        raise ValueError("empty history")
    m = order if order is not None else state.order
    degree = min(m, len(state.times) - 1)
    return interpolate_history(state.times, state.states, t_new, degree)


def _controller_factor(err: float, order: int, opts: BdfOptions) -> float:
    err = max(err, 1e-10)
    return opts.safety * err ** (-1.0 / (order + 1))


def _growth_factor(err: float, order: int, opts: BdfOptions) -> float:
    """Step growth with a deadband to suppress accept/reject saw-toothing."""
    fac = min(_controller_factor(err, order, opts), opts.growth_cap)
    if 0.9 < fac < 1.2:
        return 1.0
    return fac


def step(model, state: BdfState, opts: BdfOptions,
         newton_opts: NewtonOptions, scaling: ScalingSet,
         dt_cap: float = np.inf) -> StepResult:
    """Attempt one BDF step: predict, solve, error-test, propose the next step."""
    fixed = opts.fixed_dt is not None
    dt = min(state.dt_next, dt_cap, opts.dt_max)
    order = min(state.order, len(state.times))
    if fixed and opts.fixed_order is not None:
        order = min(opts.fixed_order, len(state.times))

    t_new = state.times[0] + dt
    if t_new <= state.times[0]:
        raise IntegrationError(
            f"step size underflow in time update at t={state.times[0]:.6e}")
    theta = bdf_coefficients(np.array([t_new] + state.times[:order]))
    y_pred = predict(state, t_new, order)
    hist = np.zeros_like(y_pred)
    for th, yk in zip(theta[1:], state.states[:order]):
        hist += th * yk
    hist[:, ~model.differential] = 0.0

    # keep the iteration error well below the truncation error target
    upd_w = error_weights(state.states[0], opts)
    upd_tol = 0.05 / (opts.controller_margin * (order + 1))
    y_new, report = newton_solve(model, t_new, y_pred, theta[0], hist,
                                 scaling, newton_opts,
                                 update_weights=upd_w, update_tol=upd_tol)
    if not report.converged:
        return StepResult(False, t_new, None, np.inf, dt / 4.0,
                          max(1, order - 1), report)

    if fixed:
        return StepResult(True, t_new, y_new, 0.0, dt, order, report, theta)
    if len(state.times) == 1:
        # blind startup step: the constant predictor measures the increment,
        # not the truncation error; dt_init is documented to be tiny
        return StepResult(True, t_new, y_new, 0.0, dt, 1, report, theta)

    weights = error_weights(state.states[0], opts)
    margin = opts.controller_margin
    err = error_estimate(y_new, y_pred, order, weights, model.differential)
    if margin * err > 1.0:
        fac = min(max(_controller_factor(margin * err, order, opts), 0.25), 0.9)
        return StepResult(False, t_new, None, err, dt * fac, order, report)

    # propose order and step size for the next step
    order_next = order
    dt_next = dt * _growth_factor(margin * err, order, opts)
    if state.steps_at_order >= order + 2:
        best = dt_next
        for q in (order - 1, order + 1):
            if not 1 <= q <= opts.order_cap:
                continue
            if len(state.times) < q + 1:
                continue
            pred_q = interpolate_history(state.times, state.states, t_new, q)
            est_q = error_estimate(y_new, pred_q, q, weights, model.differential)
            dt_q = dt * min(_controller_factor(margin * est_q, q, opts),
                            opts.growth_cap)
            if dt_q > 1.3 * best:
                best, order_next = dt_q, q
        if order_next != order:
            dt_next = best
    return StepResult(True, t_new, y_new, err, dt_next, order_next, report, theta)


@dataclass
class IntegrationResult:
    t: float
    y: np.ndarray
    stats: dict
    runlog: list


def integrate(model, y0: np.ndarray, t0: float, t_end: float,
              opts: BdfOptions | None = None,
              output_times=(), sink=None,
              newton_opts: NewtonOptions | None = None,
              scaling: ScalingSet | None = None) -> IntegrationResult:
    """Advance the DAE from t0 to t_end, hitting every output time exactly.

    sink(t, y, ctx) is invoked at t0 (ctx None) and after every accepted
    step; ctx carries the stencil (theta, states newest first including the
    new one) so the caller can form displacement-corrected currents.
    """
    opts = opts or BdfOptions()
    newton_opts = newton_opts or NewtonOptions()
    scaling = scaling or ScalingSet()

    y0 = np.asarray(y0, dtype=float)
    if model.algebraic_residual_norm(t0, y0) > 1e-9:
        y0 = model.ensure_consistent(y0)

    state = BdfState()
    state.push(t0, y0, MAX_ORDER + 2)
    state.dt_next = opts.fixed_dt if opts.fixed_dt is not None else opts.dt_init
    state.order = 1

    stats = {"steps": 0, "rejected_error": 0, "rejected_newton": 0,
             "max_accepted_error": 0.0}
    runlog = []
    if sink is not None:
        sink(t0, y0, None)

    outputs = sorted(t for t in output_times if t0 < t <= t_end)
    out_idx = 0
    t = t0
    reject_streak = 0
    time_scale = max(abs(t_end), opts.dt_init)

    while t < t_end - 1e-14 * time_scale:
        if stats["steps"] + stats["rejected_error"] + stats["rejected_newton"] \
                >= opts.max_steps:
            raise IntegrationError(f"step budget exceeded at t={t:.3e}")
        target = outputs[out_idx] if out_idx < len(outputs) else t_end
        remaining = target - t
        dt_cap = remaining
        if opts.fixed_dt is None and remaining > state.dt_next * 1.5:
            # avoid a sliver step right before the target
            if remaining < state.dt_next * 2.0:
                dt_cap = 0.5 * remaining

        res = step(model, state, opts, newton_opts, scaling, dt_cap)
        if not res.accepted:
            key = "rejected_newton" if not res.newton_report.converged \
                else "rejected_error"
            stats[key] += 1
            reject_streak += 1
            state.dt_next = res.dt_next
            if key == "rejected_newton":
                state.order = res.order_next
                state.steps_at_order = 0
            if reject_streak >= 6:
                state.order = 1
                state.steps_at_order = 0
                state.dt_next *= 0.25
                reject_streak = 0
            if state.dt_next < opts.dt_min:
                raise IntegrationError(
                    f"step size underflow at t={t:.6e} ({key})")
            continue
        reject_streak = 0

        dt_taken = res.t - t
        t = target if abs(res.t - target) <= 1e-12 * max(abs(target), 1.0) else res.t
        if out_idx < len(outputs) and t >= outputs[out_idx]:
            out_idx += 1
        order_taken = len(res.theta) - 1
        stats["steps"] += 1
        stats["max_accepted_error"] = max(stats["max_accepted_error"], res.error)
        if res.order_next != state.order:
            state.steps_at_order = 0
        else:
            state.steps_at_order += 1
        state.order = res.order_next
        if opts.fixed_dt is None:
            state.dt_next = res.dt_next
        state.push(t, res.state, MAX_ORDER + 2)

        ctx = SimpleNamespace(
            t=t, dt=dt_taken, order=order_taken, theta=res.theta,
            stencil_states=state.states[:order_taken + 1],
            newton=res.newton_report, error=res.error,
        )
        runlog.append({
            "step": stats["steps"], "t": t, "dt": dt_taken,
            "order": order_taken, "newton_iters": res.newton_report.iterations,
            "damping_min": res.newton_report.damping_min_used,
        })
        if sink is not None:
            sink(t, res.state, ctx)

    return IntegrationResult(t, state.states[0], stats, runlog)
