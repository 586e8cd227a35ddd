"""Shared fixtures: baseline configs and the cached parameter-grid runs."""
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace

import numpy as np
import pytest

from oscsim.materials import ContactParams, DeviceGeometry, MaterialParams, thermal_voltage
from oscsim.newton import NewtonOptions, ScalingSet
from oscsim.scenario import ScenarioConfig, run_scenario, sweep_point_config

VTH300 = thermal_voltage(300.0)
N_MAJORITY = 1e21          # assumed majority contact density (m^-3)
PSI_CATHODE, PSI_ANODE = 0.5, 0.0

# baseline exciton kinetics for single-scenario criteria; the sweep grid
# spans both values of each rate
KD_BASE, KR_BASE = 4.4e5, 1e7
G_LOW, G_HIGH = 4.3e28, 4.3e30

SWEEP_MU = (2e-9, 2e-8)
SWEEP_KDISS = (4.4e5, 8e6)
SWEEP_KREC = (1e5, 1e7)
SWEEP_G = (G_LOW, G_HIGH)


def make_config(generation=G_LOW, k_rec=KR_BASE, k_diss=KD_BASE, mu=2e-8,
                model="full", nodes=201, t_end=1e-3, **kwargs) -> ScenarioConfig:
    minority = N_MAJORITY * np.exp(-(PSI_CATHODE - PSI_ANODE) / VTH300)
    material = MaterialParams(mu_n=mu, mu_p=mu, eps_r=4.0, temperature=300.0,
                              k_rec=k_rec, pair_distance=1.5e-9,
                              generation=generation, kdiss_override=k_diss)
    return ScenarioConfig(
        geometry=DeviceGeometry(length=70e-9, node_count=nodes),
        material=material,
        cathode=ContactParams.dirichlet(PSI_CATHODE, N_MAJORITY, minority),
        anode=ContactParams.dirichlet(PSI_ANODE, minority, N_MAJORITY),
        model=model, t_end=t_end, output_points=141, output_tmin=1e-10,
        newton=NewtonOptions(max_iterations=14),
        scaling=ScalingSet(),
        **kwargs)


def _grid_worker(point):
    cfg = make_config(generation=point["generation"], k_rec=point["k_rec"],
                      k_diss=point["k_diss"], mu=point["mu"])
    out = {"point": point}
    for model in ("full", "reduced"):
        res = run_scenario(replace(cfg, model=model))
        out[model] = {
            "t": res.record.t, "J": res.record.J,
            "min_density": res.record.stats["min_density"],
            "max_current_spread": res.record.stats["max_current_spread"],
            "wall_time": res.record.stats["wall_time"],
        }
    return out


@pytest.fixture(scope="session")
def sweep_grid():
    """Full and reduced transients on the 16-point parameter grid.

    Returns (rows, wall_time_full_batch). Each row holds the point plus the
    full/reduced photocurrent series on the shared output grid.
    """
    points = [{"mu": mu, "k_diss": kd, "k_rec": kr, "generation": g}
              for mu in SWEEP_MU for kd in SWEEP_KDISS
              for kr in SWEEP_KREC for g in SWEEP_G]
    start = time.perf_counter()
    workers = min(os.cpu_count() or 1, 4)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(_grid_worker, points))
    else:
        rows = [_grid_worker(p) for p in points]
    wall = time.perf_counter() - start
    return rows, wall


@pytest.fixture(scope="session")
def baseline_snapshots():
    """Baseline low/high-G full runs with field snapshots at every output time."""
    out = {}
    for tag, g in (("low", G_LOW), ("high", G_HIGH)):
        cfg = make_config(generation=g)
        cfg = replace(cfg, snapshots=tuple(cfg.output_grid().tolist()))
        out[tag] = run_scenario(cfg)
    return out
