import numpy as np
import pytest

from vslcontrol import ExponentialDiagram, FreeInletGain, Scenario, bump_profile
from vslcontrol import fixed_inlet


@pytest.fixture(scope="session")
def diagram():
    """The reference diagram: f(rho) = rho * exp(-rho) on [0, 1.6]."""
    return ExponentialDiagram(rho_max=1.6)


@pytest.fixture(scope="session")
def bump400():
    return bump_profile(1.0, 400, 0.7)


@pytest.fixture(scope="session")
def free_gain():
    return FreeInletGain(0.3, 1.0, 0.7)


@pytest.fixture(scope="session")
def fixed_gains(diagram):
    return fixed_inlet.calibrate(diagram, 0.7, 1.0, 0.12, 0.1, mode="override")


@pytest.fixture(scope="session")
def free_scenario(diagram, bump400):
    return Scenario(diagram=diagram, length=1.0, rho_star=0.7, rho0=bump400,
                    horizon=30.0, output_interval=0.75)


@pytest.fixture(scope="session")
def fixed_scenario(diagram, bump400):
    return Scenario(diagram=diagram, length=1.0, rho_star=0.7, rho0=bump400,
                    horizon=60.0, output_interval=1.5)
