import math
import sys

import numpy as np
import pytest

from crystalgs import lattice_algebra as la
from crystalgs import spectral_profile as sp

K0 = 2.0 * math.pi


@pytest.fixture(scope="session")
def k0():
    return K0


@pytest.fixture(scope="session")
def bump3():
    """Mollified test profile in 3D (7-fold bump stack, phi_hat(0) = 1)."""
    return sp.PairPotential(sp.bump_stack_profile(K0, 3))


@pytest.fixture(scope="session")
def bump2():
    return sp.PairPotential(sp.bump_stack_profile(K0, 2))


@pytest.fixture(scope="session")
def bump1():
    return sp.PairPotential(sp.bump_stack_profile(K0, 1))


@pytest.fixture(scope="session")
def cos_r4():
    return sp.PairPotential(sp.cos_r4_profile(K0))


@pytest.fixture(scope="session")
def triangle1():
    return sp.PairPotential(sp.triangle_profile(K0, 1))


@pytest.fixture(scope="session")
def rho3():
    return la.threshold_closed_form("bcc", K0)


@pytest.fixture(scope="session")
def bcc_threshold(rho3):
    return la.scale_to_density(la.named_lattice("bcc"), rho3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
