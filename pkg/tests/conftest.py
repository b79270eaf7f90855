import time

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from backupcbf.integrate import HorizonGrid
from backupcbf.models import aircraft_scenario, double_integrator_scenario
from backupcbf.models.aircraft import trim_state
from backupcbf.sim import SimConfig, simulate

settings.register_profile(
    "default", max_examples=200, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

DI_GRID = HorizonGrid(2.0, 100, 0.02)
DI_X0 = np.array([-1.0, 0.0])
AC_GRID = HorizonGrid(20.0, 100, 0.05)

# wall seconds spent building the shared simulation fixtures
RUN_SECONDS = {}


@pytest.fixture(scope="session")
def di():
    return double_integrator_scenario()


@pytest.fixture(scope="session")
def aircraft():
    return aircraft_scenario()


@pytest.fixture(scope="session")
def di_runs(di):
    """The shipped double-integrator scenario, 10 s, every controller."""
    t0 = time.perf_counter()
    out = {}
    for name in ("oi", "bcbf_qp", "blended", "cbf", "nominal", "backup"):
        cfg = SimConfig(di, name, DI_X0, 10.0, 0.005, 0.005, grid=DI_GRID, eta=10.0)
        out[name] = (cfg, simulate(cfg))
    RUN_SECONDS["di_runs"] = time.perf_counter() - t0
    return out


@pytest.fixture(scope="session")
def aircraft_runs(aircraft):
    """The shipped aircraft scenario, 120 s from wings-level trim."""
    t0 = time.perf_counter()
    x0 = trim_state(prm=aircraft.extras["params"])
    out = {}
    for name in ("oi", "bcbf_qp", "blended", "nominal"):
        cfg = SimConfig(aircraft, name, x0, 120.0, 0.05, 0.05, grid=AC_GRID, eta=10.0)
        out[name] = (cfg, simulate(cfg))
    RUN_SECONDS["aircraft_runs"] = time.perf_counter() - t0
    return out
