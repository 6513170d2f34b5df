import math

import numpy as np
import pytest

from rfcrystal.equilibrium import PseudoHarmonicTrap, find_equilibrium
from rfcrystal.floquet_modes import (assemble_mathieu_system, continued_fraction_tail, hessian_normal_modes,
                                     solve_micromotion, trap_coefficients)
from rfcrystal.trap_model import YB171, TrapConfiguration, mathieu_parameters

MHZ = 2.0 * math.pi * 1e6
MEASURED_OMEGA = (0.416 * MHZ, 0.446 * MHZ, 1.124 * MHZ)
DRIVE = 2.0 * math.pi * 27.51e6


def measured_config(omega=MEASURED_OMEGA) -> TrapConfiguration:
    return TrapConfiguration.fitted(YB171, 150.0, 14.4, DRIVE, 230e-6, 200e-6, omega)


@pytest.fixture(scope="session")
def config17():
    return measured_config()


@pytest.fixture(scope="session")
def model17(config17):
    return mathieu_parameters(config17)


@pytest.fixture(scope="session")
def trap17(model17):
    return PseudoHarmonicTrap.from_model(model17, YB171)


@pytest.fixture(scope="session")
def crystal17(trap17):
    return find_equilibrium(trap17, 17, seed=0)


@pytest.fixture(scope="session")
def floquet17(config17, trap17, crystal17):
    decomp = hessian_normal_modes(crystal17, trap17)
    system = assemble_mathieu_system(decomp, trap_coefficients(config17), trap17)
    tail = continued_fraction_tail(system)
    return decomp, system, tail, solve_micromotion(system, tail)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


#: one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
