import numpy as np
import pytest

from nilheat.discretization.initial import InitialDataSpec, make_initial_density
from nilheat.geometry import ModelKind, build_model


@pytest.fixture(scope="session")
def cr16():
    return build_model(ModelKind.CR, 1, (16, 16, 16))


@pytest.fixture(scope="session")
def cr2_small():
    return build_model(ModelKind.CR, 2, (8, 8, 8, 8, 8))


@pytest.fixture(scope="session")
def qc8():
    return build_model(ModelKind.QC, 1, (8,) * 7)


@pytest.fixture(scope="session")
def density16(cr16):
    return make_initial_density(InitialDataSpec(band_limit=1, seed=3), cr16)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
