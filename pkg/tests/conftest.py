import numpy as np
import pytest

from eulerfsi.mesh import FlustrukGeometry, box_mesh, build_flustruk_mesh


@pytest.fixture(scope="session")
def flustruk_coarse():
    return build_flustruk_mesh(FlustrukGeometry(target_vertex_count=300))


@pytest.fixture(scope="session")
def flustruk_600():
    return build_flustruk_mesh(FlustrukGeometry(target_vertex_count=600))


@pytest.fixture(scope="session")
def flustruk_2500():
    return build_flustruk_mesh(FlustrukGeometry())


@pytest.fixture(scope="session")
def two_squares():
    sq = lambda x0, y0, s: [(x0, y0), (x0 + s, y0), (x0 + s, y0 + s), (x0, y0 + s)]
    return box_mesh(0.08, solids=[sq(0.2, 0.2, 0.2), sq(0.6, 0.55, 0.25)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_line():
    """Record a one-line verdict; the lines are repeated in the terminal summary."""
    def record(number, title, ok, detail=""):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
