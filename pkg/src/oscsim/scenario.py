"""Scenario configuration, orchestration and CSV emission.

Configs are sectioned key=value text files; every dimensioned quantity
carries an explicit unit and is normalized to SI on load. Unknown sections
or keys are rejected. See config-schema.md for the full schema.
"""
from __future__ import annotations

import configparser
import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .bdf import BdfOptions, IntegrationError, integrate
from .discretization import compute_current, nodal_field
from .materials import (ContactParams, DeviceGeometry, MaterialParams,
                        StateVector, thermal_voltage)
from .mesh import Mesh1D
from .models import FullModel
from .newton import NewtonOptions, ScalingSet, newton_solve
from .reduced import (ReducedModel, frozen_coefficients, memory_diagnostics,
                      reduced_transient_solve, stationary_x, steady_solve)


class ConfigError(ValueError):
    """Configuration parse or validation failure; message names the field."""


_UNIT_TABLES = {
    "length": {"m": 1.0, "cm": 1e-2, "mm": 1e-3, "um": 1e-6, "nm": 1e-9},
    "voltage": {"V": 1.0, "mV": 1e-3},
    "temperature": {"K": 1.0},
    "time": {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9, "ps": 1e-12},
    "rate": {"1/s": 1.0, "s^-1": 1.0},
    "mobility": {"m^2/V/s": 1.0, "cm^2/V/s": 1e-4},
    "generation": {"1/m^3/s": 1.0, "1/cm^3/s": 1e6},
    "density": {"1/m^3": 1.0, "1/cm^3": 1e6},
    "velocity": {"m/s": 1.0, "cm/s": 1e-2},
    "bimolecular": {"m^3/s": 1.0, "cm^3/s": 1e-6},
    "injection": {"1/m^2/s": 1.0, "1/cm^2/s": 1e4},
}

# section -> key -> (kind, list_valued); kind None means a plain number
_SCHEMA = {
    "device": {"thickness": ("length", False), "nodes": (None, False),
               "grading_ratio": (None, False)},
    "material": {"mu_n": ("mobility", False), "mu_p": ("mobility", False),
                 "eps_r": (None, False), "temperature": ("temperature", False),
                 "k_rec": ("rate", False), "pair_distance": ("length", False),
                 "generation": ("generation", False),
                 "kdiss_override": ("rate", False),
                 "gamma_override": ("bimolecular", False),
                 "v_max": ("velocity", False)},
    "contacts": {"mode": ("str", False),
                 "psi_cathode": ("voltage", False), "psi_anode": ("voltage", False),
                 "n_cathode": ("density", False), "p_cathode": ("density", False),
                 "n_anode": ("density", False), "p_anode": ("density", False),
                 "kappa_n": (None, False), "kappa_p": (None, False),
                 "alpha_n_cathode": ("velocity", False), "alpha_p_cathode": ("velocity", False),
                 "alpha_n_anode": ("velocity", False), "alpha_p_anode": ("velocity", False),
                 "beta_n_cathode": ("injection", False), "beta_p_cathode": ("injection", False),
                 "beta_n_anode": ("injection", False), "beta_p_anode": ("injection", False)},
    "run": {"model": ("str", False), "t_end": ("time", False),
            "output_points": (None, False), "output_tmin": ("time", False),
            "snapshots": ("time", True)},
    "integrator": {"rtol": (None, False), "atol_factor": (None, False),
                   "order_cap": (None, False), "dt_init": ("time", False),
                   "dt_min": ("time", False), "max_steps": (None, False)},
    "newton": {"max_iterations": (None, False), "atol": (None, False),
               "rtol": (None, False), "ftol": (None, False)},
    "scaling": {k: (None, False) for k in
                ("sigma_phi", "sigma_n", "sigma_p", "sigma_x",
                 "phi_bar", "n_bar", "p_bar", "x_bar")},
    "sweep": {"mu": ("mobility", True), "k_diss": ("rate", True),
              "k_rec": ("rate", True), "generation": ("generation", True)},
}


def _parse_quantity(text: str, kind: str | None, path: str, want_list: bool):
    """Parse 'value unit' (or comma list) into SI numbers."""
    text = text.strip()
    if kind == "str":
        return text
    if kind is None:
        try:
            vals = [float(tok) for tok in text.split(",")]
        except ValueError as exc:
            raise ConfigError(f"{path}: not a number: {text!r}") from exc
        return vals if want_list else vals[0]
    parts = text.rsplit(None, 1)
    if len(parts) != 2:
        raise ConfigError(f"{path}: expected 'value unit', got {text!r}")
    numbers, unit = parts
    table = _UNIT_TABLES[kind]
    if unit not in table:
        raise ConfigError(f"{path}: unknown {kind} unit {unit!r} "
                          f"(accepted: {', '.join(table)})")
    try:
        vals = [float(tok) * table[unit] for tok in numbers.split(",")]
    except ValueError as exc:
        raise ConfigError(f"{path}: not a number list: {numbers!r}") from exc
    return vals if want_list else vals[0]


@dataclass
class ScenarioConfig:
    """Fully validated, SI-normalized description of one run (or sweep)."""

    geometry: DeviceGeometry
    material: MaterialParams
    cathode: ContactParams
    anode: ContactParams
    model: str = "full"                  # full | reduced | steady
    t_end: float = 1e-3
    output_points: int = 120
    output_tmin: float = 1e-10
    snapshots: tuple = ()
    rtol: float = 1e-6
    atol_factor: float = 1e-6
    order_cap: int = 2
    dt_init: float = 1e-12
    dt_min: float = 1e-20
    max_steps: int = 200_000
    newton: NewtonOptions = field(default_factory=lambda: NewtonOptions(max_iterations=14))
    scaling: ScalingSet = field(default_factory=ScalingSet)
    sweep_axes: dict = field(default_factory=dict)
    source_hash: str = ""

    @property
    def contacts(self) -> tuple[ContactParams, ContactParams]:
        return (self.cathode, self.anode)

    @property
    def mesh(self) -> Mesh1D:
        if self.geometry.grading_ratio > 1.0:
            return Mesh1D.graded(self.geometry.length, self.geometry.node_count,
                                 self.geometry.grading_ratio)
        return Mesh1D.uniform(self.geometry.length, self.geometry.node_count)

    def bdf_options(self, n_unknowns: int = 4) -> BdfOptions:
        s = self.scaling
        atol = self.atol_factor * np.array(
            [1.0, s.n_bar, s.p_bar, s.X_bar][:n_unknowns])
        return BdfOptions(rtol=self.rtol, atol=atol, order_cap=self.order_cap,
                          dt_init=self.dt_init, dt_min=self.dt_min,
                          max_steps=self.max_steps)

    def output_grid(self) -> np.ndarray:
        grid = np.geomspace(self.output_tmin, self.t_end, self.output_points)
        grid[-1] = self.t_end
        return np.unique(np.concatenate([grid, np.asarray(self.snapshots)]))


def _build_config(cp: configparser.ConfigParser, source: str) -> ScenarioConfig:
    for section in cp.sections():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown section [{section}]")
        for key in cp[section]:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown key {section}.{key}")

    def get(section, key, default=None, want_list=False):
        if not cp.has_option(section, key):
            return default
        kind, listable = _SCHEMA[section][key]
        return _parse_quantity(cp.get(section, key), kind, f"{section}.{key}",
                               want_list or listable)

    try:
        geometry = DeviceGeometry(
            length=get("device", "thickness", 70e-9),
            node_count=int(get("device", "nodes", 201)),
            grading_ratio=get("device", "grading_ratio", 1.0))
    except ValueError as exc:
        raise ConfigError(f"device: {exc}") from exc

    try:
        material = MaterialParams(
            mu_n=get("material", "mu_n", 2e-8),
            mu_p=get("material", "mu_p", 2e-8),
            eps_r=get("material", "eps_r", 4.0),
            temperature=get("material", "temperature", 300.0),
            k_rec=get("material", "k_rec", 1e7),
            pair_distance=get("material", "pair_distance", 1.5e-9),
            generation=get("material", "generation", 4.3e28),
            kdiss_override=get("material", "kdiss_override"),
            gamma_override=get("material", "gamma_override"),
            v_max=get("material", "v_max"))
    except ValueError as exc:
        raise ConfigError(f"material: {exc}") from exc

    mode = get("contacts", "mode", "dirichlet")
    if mode not in ("dirichlet", "robin"):
        raise ConfigError(f"contacts.mode: must be dirichlet or robin, got {mode!r}")
    psi_c = get("contacts", "psi_cathode", 0.5)
    psi_a = get("contacts", "psi_anode", 0.0)
    vth = thermal_voltage(material.temperature)
    barrier = np.exp(-(psi_c - psi_a) / vth)
    try:
        if mode == "dirichlet":
            n_c = get("contacts", "n_cathode", 1e21)
            p_a = get("contacts", "p_anode", 1e21)
            # defaults keep the dark device in exact equilibrium
            p_c = get("contacts", "p_cathode", p_a * barrier)
            n_a = get("contacts", "n_anode", n_c * barrier)
            cathode = ContactParams.dirichlet(psi_c, n_c, p_c)
            anode = ContactParams.dirichlet(psi_a, n_a, p_a)
        else:
            kwargs = dict(kappa_n=get("contacts", "kappa_n", 1.0),
                          kappa_p=get("contacts", "kappa_p", 1.0),
                          mode="robin")
            cathode = ContactParams(
                psi=psi_c,
                alpha_n=get("contacts", "alpha_n_cathode", 1e4),
                alpha_p=get("contacts", "alpha_p_cathode", 1e4),
                beta_n=get("contacts", "beta_n_cathode", 1e25),
                beta_p=get("contacts", "beta_p_cathode", 1e25 * barrier),
                **kwargs)
            anode = ContactParams(
                psi=psi_a,
                alpha_n=get("contacts", "alpha_n_anode", 1e4),
                alpha_p=get("contacts", "alpha_p_anode", 1e4),
                beta_n=get("contacts", "beta_n_anode", 1e25 * barrier),
                beta_p=get("contacts", "beta_p_anode", 1e25),
                **kwargs)
    except ValueError as exc:
        raise ConfigError(f"contacts: {exc}") from exc

    model = get("run", "model", "full")
    if model not in ("full", "reduced", "steady"):
        raise ConfigError(f"run.model: unknown model {model!r}")
    if model == "steady" and mode != "dirichlet":
        raise ConfigError("run.model: steady mode requires dirichlet contacts")

    newton = NewtonOptions(
        max_iterations=int(get("newton", "max_iterations", 14)),
        atol=get("newton", "atol", 1e-10),
        rtol=get("newton", "rtol", 1e-8),
        ftol=get("newton", "ftol", 1e-8))
    scaling = ScalingSet(
        sigma_phi=get("scaling", "sigma_phi", 1.0),
        sigma_n=get("scaling", "sigma_n", 1e3),
        sigma_p=get("scaling", "sigma_p", 1e3),
        sigma_X=get("scaling", "sigma_x", 1e2),
        phi_bar=get("scaling", "phi_bar", 1.0),
        n_bar=get("scaling", "n_bar", 1e22),
        p_bar=get("scaling", "p_bar", 1e22),
        X_bar=get("scaling", "x_bar", 1e19))

    axes = {}
    if cp.has_section("sweep"):
        for key in cp["sweep"]:
            vals = get("sweep", key, want_list=True)
            if not vals:
                raise ConfigError(f"sweep.{key}: empty axis")
            axes[key] = tuple(vals)

    t_end = get("run", "t_end", 1e-3)
    output_tmin = get("run", "output_tmin", 1e-10)
    if not 0 < output_tmin < t_end:
        raise ConfigError("run.output_tmin: must lie in (0, t_end)")
    snapshots = get("run", "snapshots", default=[], want_list=True)
    for s in snapshots:
        if not 0.0 < s <= t_end:
            raise ConfigError("run.snapshots: times must lie in (0, t_end]")

    return ScenarioConfig(
        geometry=geometry, material=material, cathode=cathode, anode=anode,
        model=model, t_end=t_end,
        output_points=int(get("run", "output_points", 120)),
        output_tmin=output_tmin,
        snapshots=tuple(snapshots),
        rtol=get("integrator", "rtol", 1e-6),
        atol_factor=get("integrator", "atol_factor", 1e-6),
        order_cap=int(get("integrator", "order_cap", 2)),
        dt_init=get("integrator", "dt_init", 1e-12),
        dt_min=get("integrator", "dt_min", 1e-20),
        max_steps=int(get("integrator", "max_steps", 200_000)),
        newton=newton, scaling=scaling, sweep_axes=axes,
        source_hash=hashlib.sha256(source.encode()).hexdigest()[:16])


def load_config(path_or_text: str) -> ScenarioConfig:
    """Load and validate a scenario configuration file (or literal text)."""
    if os.path.exists(path_or_text):
        with open(path_or_text) as fh:
            source = fh.read()
    elif "\n" not in path_or_text and "=" not in path_or_text:
        raise ConfigError(f"config file not found: {path_or_text}")
    else:
        source = path_or_text
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",),
                                   interpolation=None)
    try:
        cp.read_string(source)
    except configparser.Error as exc:
        raise ConfigError(f"parse error: {exc}") from exc
    return _build_config(cp, source)


# ---------------------------------------------------------------------------
# records
# ---------------------------------------------------------------------------

@dataclass
class TransientRecord:
    """Photocurrent time series with optional field snapshots and metadata."""

    t: np.ndarray
    J: np.ndarray
    snapshots: dict = field(default_factory=dict)   # t -> fields dict
    stats: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.t.size and (self.t[0] != 0.0 or np.any(np.diff(self.t) <= 0)):
            raise ValueError("record times must start at 0 and increase")


@dataclass
class RiseTimeReport:
    j_inf: float
    t10: float
    t50: float
    t90: float

    @property
    def rise_time(self) -> float:
        return self.t90 - self.t10


def extract_rise_time(record: TransientRecord, tail_fraction: float = 0.05,
                      flat_tol: float = 0.02) -> RiseTimeReport:
    """Steady current and 10/50/90% crossing times of a turn-on record.

    J_inf is the mean over the final tail_fraction of the samples; the tail
    must be flat to flat_tol relative or the record has not reached
    stationarity. Crossing times interpolate linearly in log(t).
    """
    t, j = record.t, record.J
    if t.size < 10:
        raise ValueError("record too short for rise-time extraction")
    k = max(2, int(np.ceil(tail_fraction * t.size)))
    j_inf = float(np.mean(j[-k:]))
    if j_inf == 0.0:
        raise ValueError("steady current is zero; thresholds undefined")
    if np.max(np.abs(j[-k:] - j_inf)) > flat_tol * abs(j_inf):
        raise ValueError("record has not converged to steady state")
    jn = j / j_inf
    crossings = {}
    for frac in (0.1, 0.5, 0.9):
        idx = None
        for i in range(1, t.size):
            if jn[i] >= frac:
                idx = i
                break
        if idx is None:
            raise ValueError(f"current never reaches {frac:.0%} of steady value")
        if idx == 1 or t[idx - 1] == 0.0 or jn[idx] == jn[idx - 1]:
            crossings[frac] = float(t[idx])
        else:
            w = (frac - jn[idx - 1]) / (jn[idx] - jn[idx - 1])
            logt = np.log(t[idx - 1]) + w * (np.log(t[idx]) - np.log(t[idx - 1]))
            crossings[frac] = float(np.exp(logt))
    return RiseTimeReport(j_inf, crossings[0.1], crossings[0.5], crossings[0.9])


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------

def dark_initial_state(config: ScenarioConfig) -> StateVector:
    """Steady dark state (G = 0) used as the pre-illumination condition."""
    dark = replace(config.material, generation=0.0)
    mesh = config.mesh
    if config.cathode.mode == "dirichlet":
        res = steady_solve(mesh, dark, config.contacts)
        state = res.state
    else:
        # Gummel guess with the implied beta/alpha densities, then a Newton
        # polish of the stationary full system with the Robin rows
        guess_contacts = (
            ContactParams.dirichlet(config.cathode.psi,
                                    config.cathode.n_dirichlet,
                                    config.cathode.p_dirichlet),
            ContactParams.dirichlet(config.anode.psi,
                                    config.anode.n_dirichlet,
                                    config.anode.p_dirichlet))
        res = steady_solve(mesh, dark, guess_contacts)
        model = FullModel(mesh, dark, config.contacts)
        y0 = np.column_stack([res.state.phi, res.state.n, res.state.p,
                              res.state.X])
        y, rep = newton_solve(model, 0.0, y0, 0.0, np.zeros_like(y0),
                              config.scaling, config.newton)
        if not rep.converged:
            raise IntegrationError("dark steady solve failed for robin contacts")
        state = model.to_state(y, 0.0)
    kdiss, gamma, tau = frozen_coefficients(dark, config.contacts, mesh)
    x0 = stationary_x(state.n, state.p, 0.0, gamma, tau)
    return StateVector(state.phi, state.n, state.p, x0, 0.0)


@dataclass
class ScenarioResult:
    record: TransientRecord
    runlog: list
    fields_final: dict
    config: ScenarioConfig


def _field_dict(mesh: Mesh1D, state: StateVector) -> dict:
    return {"x": mesh.x.copy(), "phi": state.phi.copy(), "n": state.n.copy(),
            "p": state.p.copy(), "X": state.X.copy(),
            "E": nodal_field(state.phi, mesh)}


def run_scenario(config: ScenarioConfig,
                 record_pn_history: bool = False) -> ScenarioResult:
    """Execute one scenario and return its record (nothing written to disk)."""
    mesh = config.mesh
    params = config.material
    t_wall = time.perf_counter()

    if config.model == "steady":
        res = steady_solve(mesh, params, config.contacts)
        state = res.state
        b = res.bounds
        rec = TransientRecord(
            np.array([0.0]), np.array([res.current]),
            snapshots={0.0: _field_dict(mesh, state)},
            stats={"gummel_iterations": res.report.iterations,
                   "bounds_satisfied": res.report.bounds_satisfied,
                   "converged": res.report.converged,
                   "wall_time": time.perf_counter() - t_wall},
            meta={"model": "steady", "config_hash": config.source_hash,
                  "bounds": {
                      "psi_plus_V": b.psi_plus,
                      "psi_hat_plus_V": b.psi_hat_plus,
                      "density_lower_per_m3": b.density_lower,
                      "density_upper_per_m3": b.density_upper,
                      "potential_lower_V": b.potential_lower,
                      "potential_upper_V": b.potential_upper,
                      "reference_concentration_per_m3": res.slotboom.n_r,
                      "satisfied": res.report.bounds_satisfied}})
        return ScenarioResult(rec, [], _field_dict(mesh, state), config)

    initial = dark_initial_state(config)
    out_grid = config.output_grid()
    grid_set = set(out_grid.tolist())
    snap_set = set(float(s) for s in config.snapshots)

    if config.model == "reduced":
        kdiss_f, gamma_f, tau = frozen_coefficients(params, config.contacts, mesh)
        model = ReducedModel(mesh, params, config.contacts,
                             x0=initial.X, pn0=initial.p * initial.n)
    else:
        model = FullModel(mesh, params, config.contacts)

    ts, js = [], []
    snapshots = {}
    pn_t, pn_hist = [], []
    spread_j, spread_ptp = [], []
    stats_extra = {"min_density": np.inf}

    def to_state(t, y):
        if config.model == "reduced":
            return StateVector(y[:, 0], y[:, 1], y[:, 2],
                               model.reconstruct_pairs(t, y), t)
        return model.to_state(y, t)

    def sink(t, y, ctx):
        dens_min = float(y[:, 1:].min())
        if config.model == "reduced":
            dens_min = min(dens_min, float(model.reconstruct_pairs(t, y).min()))
        stats_extra["min_density"] = min(stats_extra["min_density"], dens_min)
        if record_pn_history:
            pn_t.append(t)
            pn_hist.append(y[:, 1] * y[:, 2])
        if ctx is None:
            ts.append(t)
            js.append(0.0)
            return
        state = to_state(t, y)
        cur = compute_current(state, params, mesh, ctx.theta,
                              [s[:, 0] for s in ctx.stencil_states])
        spread_j.append(abs(cur.contact))
        spread_ptp.append(float(np.ptp(cur.total)))
        if t in grid_set:
            ts.append(t)
            js.append(cur.contact)
        if t in snap_set:
            snapshots[t] = _field_dict(mesh, state)

    y0 = np.column_stack([initial.phi, initial.n, initial.p] +
                         ([] if config.model == "reduced" else [initial.X]))
    result = integrate(model, y0, 0.0, config.t_end,
                       config.bdf_options(model.nu),
                       output_times=out_grid, sink=sink,
                       newton_opts=config.newton, scaling=config.scaling)

    stats = dict(result.stats)
    stats.update(stats_extra)
    # relative spatial spread of the terminal current, taken over the steps
    # carrying at least 1% of the final current (the startup has J ~ 0)
    spread_j = np.asarray(spread_j)
    spread_ptp = np.asarray(spread_ptp)
    active = spread_j >= 0.01 * abs(js[-1]) if js and js[-1] != 0.0 \
        else spread_j > 0
    stats["max_current_spread"] = float(
        np.max(spread_ptp[active] / spread_j[active])) if np.any(active) else 0.0
    stats["wall_time"] = time.perf_counter() - t_wall
    rec = TransientRecord(np.array(ts), np.array(js), snapshots, stats,
                          meta={"model": config.model,
                                "config_hash": config.source_hash})
    if record_pn_history:
        rec.stats["pn_times"] = np.array(pn_t)
        rec.stats["pn_history"] = np.array(pn_hist)
    final_state = to_state(result.t, result.y)
    return ScenarioResult(rec, result.runlog, _field_dict(mesh, final_state),
                          config)


def run_memory_diagnostics(config: ScenarioConfig):
    """Full-model run with p*n history, reduced to MemoryDiagnostics."""
    cfg = replace(config, model="full")
    res = run_scenario(cfg, record_pn_history=True)
    kdiss_f, gamma_f, tau = frozen_coefficients(cfg.material, cfg.contacts,
                                                cfg.mesh)
    times = res.record.stats.pop("pn_times")
    pn = res.record.stats.pop("pn_history")
    eval_t = times[:: max(1, times.size // 240)]
    if eval_t[-1] != times[-1]:
        eval_t = np.append(eval_t, times[-1])
    diag = memory_diagnostics(times, pn, kdiss_f, gamma_f, tau,
                              cfg.mesh.volumes, eval_t)
    return diag, res


# ---------------------------------------------------------------------------
# CSV emission (repr floats: exact round trip, deterministic output)
# ---------------------------------------------------------------------------

def _write_table(path, header: list[str], columns: list[np.ndarray]):
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*columns):
            fh.write(",".join(repr(float(v)) for v in row) + "\n")


def write_transient_csv(record: TransientRecord, path: str):
    _write_table(path, ["t_s", "J_A_per_m2"], [record.t, record.J])


def read_transient_csv(path: str) -> TransientRecord:
    data = np.genfromtxt(path, delimiter=",", names=True)
    t = np.atleast_1d(data["t_s"])
    j = np.atleast_1d(data["J_A_per_m2"])
    return TransientRecord(t, j, meta={"path": path})


def write_fields_csv(fields: dict, path: str):
    _write_table(path,
                 ["x_m", "phi_V", "n_per_m3", "p_per_m3", "X_per_m3",
                  "E_V_per_m"],
                 [fields["x"], fields["phi"], fields["n"], fields["p"],
                  fields["X"], fields["E"]])


def read_fields_csv(path: str) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {"x": data["x_m"], "phi": data["phi_V"], "n": data["n_per_m3"],
            "p": data["p_per_m3"], "X": data["X_per_m3"],
            "E": data["E_V_per_m"]}


def write_runlog_csv(runlog: list, path: str):
    with open(path, "w") as fh:
        fh.write("step,t,dt,order,newton_iters,damping_min\n")
        for row in runlog:
            fh.write(f"{row['step']},{row['t']!r},{row['dt']!r},"
                     f"{row['order']},{row['newton_iters']},"
                     f"{row['damping_min']!r}\n")


def write_memory_csv(diag, path: str):
    _write_table(path,
                 ["t_s", "I_per_m3_s", "I_lumped_per_m3_s", "diff_per_m3_s"],
                 [diag.t, diag.exact, diag.lumped, diag.diff])


def _snapshot_name(t: float) -> str:
    return f"fields_{t:.6e}.csv"


def _write_meta(path, config: ScenarioConfig, extra: dict):
    meta = {"config_hash": config.source_hash, "model": config.model}
    meta.update(extra)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=1, default=str)
        fh.write("\n")


def run(config: ScenarioConfig, out_dir: str) -> ScenarioResult:
    """Run one scenario and write transient.csv, runlog.csv and snapshots."""
    os.makedirs(out_dir, exist_ok=True)
    result = run_scenario(config)
    if config.model == "steady":
        write_transient_csv(result.record, os.path.join(out_dir, "transient.csv"))
        write_fields_csv(result.fields_final,
                         os.path.join(out_dir, "fields_steady.csv"))
        with open(os.path.join(out_dir, "bounds.txt"), "w") as fh:
            fh.write("stationary solution bounds\n")
            for key, val in result.record.meta["bounds"].items():
                fh.write(f"{key} = {val!r}\n")
    else:
        write_transient_csv(result.record, os.path.join(out_dir, "transient.csv"))
        write_runlog_csv(result.runlog, os.path.join(out_dir, "runlog.csv"))
        for t, fields in sorted(result.record.snapshots.items()):
            write_fields_csv(fields, os.path.join(out_dir, _snapshot_name(t)))
    stats = {k: v for k, v in result.record.stats.items()
             if isinstance(v, (int, float, bool, str))}
    _write_meta(os.path.join(out_dir, "meta.json"), config, {"stats": stats})
    return result


def compare(config: ScenarioConfig, out_dir: str):
    """Paired full/reduced runs on a common grid plus a difference table.

    Both runs use coefficients frozen at the mean field, matching the
    constant-coefficient regime in which the reduced model is derived.
    """
    os.makedirs(out_dir, exist_ok=True)
    kdiss_f, gamma_f, _ = frozen_coefficients(config.material, config.contacts,
                                              config.mesh)
    locked = replace(config.material, kdiss_override=kdiss_f,
                     gamma_override=gamma_f)
    full_cfg = replace(config, material=locked, model="full")
    red_cfg = replace(config, material=locked, model="reduced")
    res_full = run_scenario(full_cfg)
    res_red = run_scenario(red_cfg)
    write_transient_csv(res_full.record, os.path.join(out_dir, "transient_full.csv"))
    write_transient_csv(res_red.record, os.path.join(out_dir, "transient_reduced.csv"))
    jf, jr = res_full.record.J, res_red.record.J
    ref = np.abs(jf)
    ref[ref == 0.0] = np.max(ref) if np.max(ref) > 0 else 1.0
    _write_table(os.path.join(out_dir, "difference.csv"),
                 ["t_s", "J_full_A_per_m2", "J_reduced_A_per_m2", "rel_diff"],
                 [res_full.record.t, jf, jr, np.abs(jr - jf) / ref])
    _write_meta(os.path.join(out_dir, "meta.json"), config,
                {"mode": "compare"})
    return res_full, res_red


_AXIS_SETTERS = {
    "mu": lambda m, v: replace(m, mu_n=v, mu_p=v),
    "k_diss": lambda m, v: replace(m, kdiss_override=v),
    "k_rec": lambda m, v: replace(m, k_rec=v),
    "generation": lambda m, v: replace(m, generation=v),
}


def sweep_point_config(config: ScenarioConfig, point: dict) -> ScenarioConfig:
    material = config.material
    for axis, value in point.items():
        if axis not in _AXIS_SETTERS:
            raise ConfigError(f"sweep.{axis}: unsupported axis")
        material = _AXIS_SETTERS[axis](material, value)
    return replace(config, material=material, sweep_axes={})


def _sweep_worker(args):
    config, point = args
    cfg = sweep_point_config(config, point)
    cfg = replace(cfg, model="full" if cfg.model == "steady" else cfg.model)
    try:
        result = run_scenario(cfg)
        rise = extract_rise_time(result.record)
        return {"point": point, "ok": True, "j_inf": rise.j_inf,
                "t10": rise.t10, "t50": rise.t50, "t90": rise.t90,
                "record": result.record}
    except Exception as exc:  # noqa: BLE001 - row failures recorded, sweep continues
        return {"point": point, "ok": False, "error": str(exc)}


@dataclass
class SweepResult:
    axes: list
    rows: list
    records: dict


def sweep(config: ScenarioConfig, out_dir: str | None = None,
          workers: int | None = None) -> SweepResult:
    """Cartesian sweep over the configured axes (full-model runs).

    Rows are merged in axis order regardless of worker completion order.
    Individual failures produce an error row and do not abort the sweep.
    """
    axes = list(config.sweep_axes.keys())
    if not axes:
        raise ConfigError("sweep: no axes configured")
    points = [{}]
    for axis in axes:
        points = [dict(p, **{axis: v}) for p in points
                  for v in config.sweep_axes[axis]]
    tasks = [(config, p) for p in points]
    if workers is None:
        workers = min(len(points), os.cpu_count() or 1, 8)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_worker, tasks))
    else:
        results = [_sweep_worker(t) for t in tasks]

    rows, records = [], {}
    for res in results:
        key = tuple(res["point"][a] for a in axes)
        if res["ok"]:
            records[key] = res["record"]
            rows.append({**{f"param_{a}": res["point"][a] for a in axes},
                         "J_inf": res["j_inf"], "t10": res["t10"],
                         "t50": res["t50"], "t90": res["t90"]})
        else:
            rows.append({**{f"param_{a}": res["point"][a] for a in axes},
                         "error": res["error"]})
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        header = [f"param_{a}" for a in axes] + ["J_inf", "t10", "t50", "t90"]
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                if "error" in row:
                    cells = [repr(row[f"param_{a}"]) for a in axes]
                    cells += ["nan"] * 4
                else:
                    cells = [repr(row[c]) for c in header]
                fh.write(",".join(cells) + "\n")
        for key, rec in records.items():
            tag = "_".join(f"{v:.3e}" for v in key)
            write_transient_csv(rec, os.path.join(out_dir, f"transient_{tag}.csv"))
        _write_meta(os.path.join(out_dir, "meta.json"), config,
                    {"mode": "sweep", "axes": axes})
    return SweepResult(axes, rows, records)
