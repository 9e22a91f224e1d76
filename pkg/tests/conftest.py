import numpy as np
import pytest

from gfkqmc import system as S


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def h2_nbo_physical():
    return S.h2(mode="nBO", scaling="PhysicalCoordinates")


@pytest.fixture
def h2_nbo_scaled():
    return S.h2(mode="nBO", scaling="ScaledCoordinates")


def random_configuration(spec, rng, spread=1.0):
    """Physical configuration around the default start, converted to walk coordinates."""
    from gfkqmc.walk import default_start

    x = default_start(spec) + spread * rng.standard_normal(spec.dim)
    return spec.from_physical(x)


# -- acceptance report ---------------------------------------------------------------

ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line for an acceptance criterion."""

    def record(criterion, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
