"""Shared oracles.

The oracles here deliberately avoid the package's closed-form propagator:
they build Hamiltonians as dense matrices and exponentiate them with
``scipy.linalg.expm``.
"""

import numpy as np
import pytest
from scipy.linalg import expm

SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)


def expm_propagator(samples, dt, detuning, scale=1.0):
    u = np.eye(2, dtype=complex)
    for u1, u2 in samples:
        h = 0.5 * (detuning * SZ + scale * u1 * SX + scale * u2 * SY)
        u = expm(-1j * dt * h) @ u
    return u


def expm_axis_angle(c):
    return expm(-1j * (c[0] * SX + c[1] * SY + c[2] * SZ))


def rabi_transfer(rabi, detuning, t):
    """Generalized Rabi formula for a constant drive."""
    w = np.hypot(rabi, detuning)
    return (rabi / w) ** 2 * np.sin(0.5 * w * t) ** 2


def same_up_to_phase(a, b):
    """``|tr(a^dag b)| / 2``; equals 1 when the unitaries agree up to global phase."""
    return abs(np.trace(a.conj().T @ b)) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
