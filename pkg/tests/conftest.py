import numpy as np
import pytest

from wbm.nsdf import NsdfFitConfig, fit_nsdf
from wbm.robot import default_humanoid


@pytest.fixture(scope="session")
def spec():
    return default_humanoid()


@pytest.fixture(scope="session")
def nsdf_quick(spec):
    """Cheap low-accuracy SDF fit shared by tests that only need mechanics."""
    cfg = NsdfFitConfig(samples_per_link=5000, epochs=2, holdout=200)
    return fit_nsdf(spec, cfg, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
