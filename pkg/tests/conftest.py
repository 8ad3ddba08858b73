import numpy as np
import pytest

from mfpd import HelmholtzOperator, gen_disk_mesh, homogeneous


@pytest.fixture(scope="session")
def disk_coarse():
    return gen_disk_mesh(1.0, 0.1)


@pytest.fixture(scope="session")
def disk():
    return gen_disk_mesh(1.0, 0.05)


@pytest.fixture(scope="session")
def homog_op(disk):
    return HelmholtzOperator(disk, homogeneous(disk))


@pytest.fixture(scope="session")
def homog_op_coarse(disk_coarse):
    return HelmholtzOperator(disk_coarse, homogeneous(disk_coarse))


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
