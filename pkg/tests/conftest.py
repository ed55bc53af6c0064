"""Shared fixtures: repository root on sys.path, common lattices."""
import os
import sys

import pytest

sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from backend.circuit import CircuitParams, synthesize_circuit  # noqa: E402
from physics.lattice import LatticeSpec  # noqa: E402


@pytest.fixture
def sensing_lattice_5():
    """5 x 5, lambda = 1.9, lambda' = 0.1 on both axes."""
    return LatticeSpec(order=2, extent=(5, 5), couplings=((1.9, 0.1), (1.9, 0.1)))


@pytest.fixture
def sensing_lattice_9():
    return LatticeSpec(order=2, extent=(9, 9), couplings=((1.9, 0.1), (1.9, 0.1)))


@pytest.fixture
def strong_skin_lattice():
    """13 x 13, lambda = 2, lambda' = 1e-3."""
    return LatticeSpec(order=2, extent=(13, 13), couplings=((2.0, 1e-3), (2.0, 1e-3)))


@pytest.fixture
def weak_skin_lattice():
    """13 x 13, lambda = 1, lambda' = 0.9."""
    return LatticeSpec(order=2, extent=(13, 13), couplings=((1.0, 0.9), (1.0, 0.9)))


@pytest.fixture
def single_unit_params():
    """One unit, C1 = 5 pF, C1 / C2 = 160, L = 1 nH."""
    return CircuitParams(c1=5e-12, c2=5e-12 / 160, ground_l=1e-9, units=1)


@pytest.fixture
def sensing_circuit():
    """Two units, C1 / C2 = 10: shifts of 1e-17 F land well above the 1 kHz grid."""
    return synthesize_circuit(None, CircuitParams(c1=5e-12, c2=5e-13, ground_l=1e-9, units=2))
