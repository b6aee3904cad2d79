import numpy as np
import pytest

from wmblowup.core import RadialGrid, modal_decompose


@pytest.fixture(scope="session")
def grid256():
    return RadialGrid.from_spacing(4.0, 1 / 256)


@pytest.fixture(scope="session")
def basis256(grid256):
    return modal_decompose(grid256, 5)


@pytest.fixture(scope="session")
def grid64():
    return RadialGrid.from_spacing(4.0, 1 / 64)


@pytest.fixture(scope="session")
def basis64(grid64):
    return modal_decompose(grid64, 5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = __import__("sys").modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, (ok, detail) in sorted(acceptance.RESULTS.items()):
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
