import numpy as np
import pytest

from qedmarkov.lindblad import RadialKernel
from qedmarkov.model import CutoffFn, build_harmonic_model, build_spin_model

GAUSS = CutoffFn("gauss", 1.0)
VANISH = CutoffFn("gauss_vanishing", 1.0)


@pytest.fixture(scope="session")
def spin():
    return build_spin_model(1.0, (0.0, 0.0, 0.0), GAUSS)


@pytest.fixture(scope="session")
def spin_offset():
    return build_spin_model(0.7, (0.2, -0.1, 0.3), GAUSS)


@pytest.fixture(scope="session")
def harmonic3():
    return build_harmonic_model(3, 1, GAUSS)


@pytest.fixture(scope="session")
def harmonic1():
    return build_harmonic_model(1, 3, GAUSS)


@pytest.fixture(scope="session")
def spin_kernel(spin):
    return RadialKernel(spin)


@pytest.fixture(scope="session")
def harmonic3_kernel(harmonic3):
    return RadialKernel(harmonic3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
