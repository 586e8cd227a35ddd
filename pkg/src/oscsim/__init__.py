"""1D transient drift-diffusion simulator for bulk-heterojunction organic
solar cells: coupled Poisson / electron / hole / geminate-pair system with
Scharfetter-Gummel spatial discretization, adaptive BDF time integration
and a scaled quasi-Newton corrector, plus the reduced 2-carrier model."""

from .constants import CONST, PhysicalConstants
from .materials import (ContactParams, DeviceGeometry, MaterialParams,
                        StateVector, braun_onsager_kdiss, einstein_diffusion,
                        exciton_tau, langevin_gamma, thermal_voltage, xi)
from .mesh import Mesh1D
from .discretization import (BandedSystem, EdgeFlux, assemble_continuity,
                             assemble_poisson, bernoulli, compute_current,
                             sg_edge_flux)
from .models import FullModel
from .newton import (NewtonOptions, NewtonReport, ScalingSet, newton_solve,
                     scale, unscale)
from .bdf import (BdfOptions, BdfState, IntegrationError, bdf_coefficients,
                  error_estimate, integrate, predict, step)
from .reduced import (MemoryDiagnostics, ReducedModel, SlotboomState,
                      StationaryBounds, memory_diagnostics, modified_rates,
                      reduced_transient_solve, stationary_rates, stationary_x,
                      steady_solve)
from .scenario import (ConfigError, RiseTimeReport, ScenarioConfig,
                       TransientRecord, compare, extract_rise_time,
                       load_config, run, run_scenario, sweep)

__version__ = "0.1.0"
