import numpy as np
import pytest

from stochhom.mac import Grid2D


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def grid32():
    return Grid2D(32, 32)


def random_elliptic_field(rng, n=16, n_tau=1, diagonal=False):
    """Random symmetric field with eigenvalues in roughly [0.5, 5]."""
    from stochhom.cell.coefficients import CellCoefficient
    shape = (n_tau, n, n)
    l1 = rng.uniform(0.5, 5.0, shape)
    l2 = rng.uniform(0.5, 5.0, shape)
    theta = np.zeros(shape) if diagonal else rng.uniform(0, np.pi, shape)
    c, s = np.cos(theta), np.sin(theta)
    samples = np.empty(shape + (2, 2))
    samples[..., 0, 0] = l1 * c ** 2 + l2 * s ** 2
    samples[..., 1, 1] = l1 * s ** 2 + l2 * c ** 2
    samples[..., 0, 1] = samples[..., 1, 0] = (l1 - l2) * c * s
    return CellCoefficient(samples)


ACCEPTANCE_LINES = []


def record_criterion(number, title, passed, detail):
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} :: {detail}"
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
