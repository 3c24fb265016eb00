import numpy as np
import pytest

from ptychodv.physics import make_probe, make_scan_grid
from ptychodv.trainer import make_phantom


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def dense_oracle():
    """Noise-free dense-overlap instance: image 24, s=8, 25 positions, spacing 2."""
    x = make_phantom(24, 5, 0)
    probe = make_probe("A", 8)
    grid = make_scan_grid(24, 8, 25, 2)
    return x, probe, grid


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {'PASS' if ok else 'FAIL'}  {detail}")
