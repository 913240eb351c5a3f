import numpy as np
import pytest

from weakkam import config
from weakkam.grid import GridFunction, PeriodicGrid
from weakkam.model import make_preset
from weakkam.schema import schema_experiment
from weakkam.semigroup import SemigroupConfig, solve_stationary

# coarse resolution used by the fast tests
N_COARSE = 64
DT_COARSE = 2e-2


@pytest.fixture(autouse=True)
def no_site_config(monkeypatch):
    """Keep site and user configuration files out of the tests."""
    monkeypatch.setattr(config, "paths", [])
    monkeypatch.delenv("WEAKKAM_LOGFILE", raising=False)


@pytest.fixture
def make_config(tmp_path):
    """Validated experiment configuration writing under ``tmp_path``."""

    def factory(**sections):
        sections.setdefault("output", {"dir": str(tmp_path / "out")})
        return schema_experiment(sections)

    return factory


@pytest.fixture(scope="session")
def cosine():
    return make_preset("cosine").build(0.5)


@pytest.fixture(scope="session")
def free():
    return make_preset("free").build(0.5)


@pytest.fixture(scope="session")
def constant():
    return make_preset("constant", {"constant": 1.0}).build(0.5)


@pytest.fixture(scope="session")
def coarse_sg():
    return SemigroupConfig(dt=DT_COARSE)


@pytest.fixture(scope="session")
def cosine_u(cosine, coarse_sg):
    """u^- of the cosine preset at the coarse resolution."""
    grid = PeriodicGrid(N_COARSE, 1)
    u, _ = solve_stationary(GridFunction.constant(grid, 0.0), coarse_sg, cosine, tol=1e-5)
    return u


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
