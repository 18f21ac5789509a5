import numpy as np
import pytest

from sasakiflow import flow as fl
from sasakiflow import geometry as geo


@pytest.fixture(scope="session")
def small_bg():
    return geo.build_background(geo.GeometryConfig(grid_nodes=129))


@pytest.fixture(scope="session")
def small_bg_sasaki():
    return geo.build_background(geo.GeometryConfig(grid_nodes=129, normalization="sasaki"))


@pytest.fixture(scope="session")
def bg():
    return geo.build_background()


@pytest.fixture(scope="session")
def small_traj(small_bg):
    """Short converging even run on the coarse grid (t_max = 4)."""
    phi = geo.sample_potential(small_bg, geo.SampleSpec(), 3)
    cfg = fl.FlowConfig(dt=1e-4, t_max=4.0, sample_every=10, record_every=1)
    return fl.run(small_bg, cfg, phi)


@pytest.fixture
def rng():
    return np.random.default_rng(2024)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance PASS/FAIL lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
