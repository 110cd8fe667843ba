import numpy as np
import pytest

from magcgo.grid import make_grid

# criterion number -> (passed, detail); filled by test_acceptance
ACCEPTANCE: dict = {}


@pytest.fixture(scope="session")
def grid16():
    return make_grid(1.0, 16)


@pytest.fixture(scope="session")
def grid32():
    return make_grid(1.0, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
