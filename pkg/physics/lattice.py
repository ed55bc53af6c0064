"""
Lattice Model Module
Builds the non-reciprocal two-band lattice models used by the sensor:
- Bloch Hamiltonians for orders 1, 2 and 3
- open or periodic real-space hopping matrices
- analytic zero modes (right and left) of the open lattice

Conventions:
- Cells are indexed m_j = 1..L_j, sublattices s = 1, 2.
- Row index of (m, s) is ravel(m - 1) * 2 + (s - 1), axis 1 varying slowest.
- lambda_j is the hop in the +j direction on sublattice 1; axis-1 hops on
  sublattice 2 run the other way. Axes 2 and 3 connect the sublattices
  through sigma_x and sigma_y.
- H(k) = sum_j A_j e^{i k_j} + Abar_j e^{-i k_j}, where A_j is the block
  H[cell m, cell m - e_j] and Abar_j the block H[cell m, cell m + e_j].
"""
import logging
from dataclasses import dataclass, replace
from functools import reduce
from typing import List, Sequence, Tuple

import numpy as np
from scipy import sparse

from exceptions import LatticeError

logger = logging.getLogger(__name__)

SIGMA_0 = np.array([[1, 0], [0, 1]], dtype=complex)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

BOUNDARIES = ("open", "periodic")
MAX_REAL_SPACE_ORDER = 3


@dataclass(frozen=True)
class LatticeSpec:
    """Order, extents and per-axis (lambda, lambda') coupling pairs of a lattice."""
    order: int
    extent: Tuple[int, ...]
    couplings: Tuple[Tuple[float, float], ...]
    intra_cell: float = 0.0

    def __post_init__(self):
        extent = tuple(int(length) for length in np.atleast_1d(self.extent))
        couplings = tuple((float(pair[0]), float(pair[1])) for pair in self.couplings)
        object.__setattr__(self, 'extent', extent)
        object.__setattr__(self, 'couplings', couplings)
        object.__setattr__(self, 'intra_cell', float(self.intra_cell))

        if int(self.order) != self.order or self.order < 1:
            raise LatticeError(f"order must be a positive integer, got {self.order}", path="lattice.order")
        if len(extent) != self.order:
            raise LatticeError(f"expected {self.order} extents, got {len(extent)}", path="lattice.extent")
        for axis, length in enumerate(extent):
            if length < 1:
                raise LatticeError(f"extent must be >= 1, got {length}", path=f"lattice.extent[{axis}]")
        if len(couplings) != self.order:
            raise LatticeError(f"expected {self.order} coupling pairs, got {len(couplings)}",
                               path="lattice.couplings")
        for axis, (lam, lam_p) in enumerate(couplings):
            if not (lam > 0 and lam_p > 0) or not np.isfinite([lam, lam_p]).all():
                raise LatticeError("couplings must be finite and > 0", path=f"lattice.couplings[{axis}]")
        if not self.intra_cell >= 0:
            raise LatticeError("intra_cell must be >= 0", path="lattice.intra_cell")

    @property
    def ratios(self) -> np.ndarray:
        return np.array([lam / lam_p for lam, lam_p in self.couplings])

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.extent))

    @property
    def dim(self) -> int:
        return 2 * self.n_cells

    @property
    def all_odd(self) -> bool:
        return all(length % 2 == 1 for length in self.extent)

    @property
    def is_hermitian(self) -> bool:
        return all(lam == lam_p for lam, lam_p in self.couplings)

    def with_extent(self, extent: Sequence[int]) -> "LatticeSpec":
        return replace(self, extent=tuple(extent))

    def cell_coordinates(self) -> np.ndarray:
        """(n_cells, order) array of 1-based cell coordinates in row order."""
        grids = np.indices(self.extent).reshape(self.order, -1).T
        return grids + 1

    def site_index(self, cell: Sequence[int], sublattice: int = 1) -> int:
        cell = tuple(int(c) for c in cell)
        if len(cell) != self.order:
            raise LatticeError(f"cell {cell} does not have {self.order} coordinates")
        if sublattice not in (1, 2):
            raise LatticeError(f"sublattice must be 1 or 2, got {sublattice}")
        if any(c < 1 or c > length for c, length in zip(cell, self.extent)):
            raise LatticeError(f"cell {cell} outside lattice {self.extent}")
        flat = np.ravel_multi_index(tuple(c - 1 for c in cell), self.extent)
        return int(flat) * 2 + (sublattice - 1)

    def site_coordinates(self, index: int) -> Tuple[Tuple[int, ...], int]:
        if not 0 <= index < self.dim:
            raise LatticeError(f"site index {index} outside 0..{self.dim - 1}")
        cell = np.unravel_index(index // 2, self.extent)
        return tuple(int(c) + 1 for c in cell), index % 2 + 1


@dataclass
class BlochHamiltonian:
    k: Tuple[float, ...]
    matrix: np.ndarray

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.matrix)


@dataclass
class RealSpaceMatrix:
    """Dense real-space hopping matrix together with the lattice it was built from."""
    matrix: np.ndarray
    spec: LatticeSpec
    boundary: str = "open"

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def site_index(self, cell: Sequence[int], sublattice: int = 1) -> int:
        return self.spec.site_index(cell, sublattice)

    def __add__(self, other):
        other_matrix = other.matrix if isinstance(other, RealSpaceMatrix) else np.asarray(other)
        return RealSpaceMatrix(self.matrix + other_matrix, self.spec, self.boundary)


@dataclass
class ZeroMode:
    """Right/left eigen-pair; `left` is a row vector with left @ H = E left."""
    eigenvalue: complex
    right: np.ndarray
    left: np.ndarray
    residual_right: float = 0.0
    residual_left: float = 0.0
    origin: str = "numeric"
    sublattice: int = 1
    condition: float = 1.0

    @property
    def overlap(self) -> complex:
        return complex(self.left @ self.right)


def _axis_blocks(spec: LatticeSpec, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    lam, lam_p = spec.couplings[axis]
    if axis == 0:
        return np.diag([lam, lam_p]).astype(complex), np.diag([lam_p, lam]).astype(complex)
    pauli = SIGMA_X if axis == 1 else SIGMA_Y
    return lam * pauli, lam_p * pauli


def build_bloch(spec: LatticeSpec, k: Sequence[float]) -> BlochHamiltonian:
    """2x2 Bloch matrix. For order 2 this is
    (lx + lx')cos kx s0 + [(ly + ly')cos ky + i(ly - ly')sin ky] sx + i(lx - lx')sin kx sz,
    and order 3 adds the same form along z with sy. Amplitudes are lambda_j, lambda'_j
    (t_j = (lambda_j + lambda'_j) / 2, g_j = (lambda_j - lambda'_j) / 2)."""
    if spec.order > MAX_REAL_SPACE_ORDER:
        raise LatticeError(f"no closed Bloch form for order {spec.order}", path="lattice.order")
    k = tuple(float(value) for value in np.atleast_1d(k))
    if len(k) != spec.order:
        raise LatticeError(f"wave vector needs {spec.order} components, got {len(k)}")

    matrix = spec.intra_cell * SIGMA_X
    for axis, k_axis in enumerate(k):
        forward, backward = _axis_blocks(spec, axis)
        matrix = matrix + forward * np.exp(1j * k_axis) + backward * np.exp(-1j * k_axis)
    return BlochHamiltonian(k=k, matrix=matrix)


def _shift_operator(length: int, periodic: bool) -> sparse.csr_matrix:
    shift = sparse.lil_matrix((length, length), dtype=complex)
    for site in range(1, length):
        shift[site, site - 1] = 1.0
    if periodic:
        shift[0, length - 1] += 1.0
    return shift.tocsr()


def build_obc_hamiltonian(spec: LatticeSpec, boundary: str = "open") -> RealSpaceMatrix:
    if spec.order > MAX_REAL_SPACE_ORDER:
        raise LatticeError(f"real-space construction supports order <= {MAX_REAL_SPACE_ORDER}",
                           path="lattice.order")
    if boundary not in BOUNDARIES:
        raise LatticeError(f"boundary must be one of {BOUNDARIES}, got {boundary!r}")
    periodic = boundary == "periodic"

    identities = [sparse.identity(length, dtype=complex, format='csr') for length in spec.extent]
    hamiltonian = sparse.kron(sparse.identity(spec.n_cells, dtype=complex), spec.intra_cell * SIGMA_X)

    for axis, length in enumerate(spec.extent):
        factors: List[sparse.spmatrix] = list(identities)
        factors[axis] = _shift_operator(length, periodic)
        cell_shift = reduce(lambda a, b: sparse.kron(a, b, format='csr'), factors)
        forward, backward = _axis_blocks(spec, axis)
        hamiltonian = hamiltonian + sparse.kron(cell_shift, forward) + sparse.kron(cell_shift.T, backward)

    matrix = np.asarray(hamiltonian.toarray(), dtype=complex)
    logger.debug(f"Built {boundary} lattice matrix dim={matrix.shape[0]} extent={spec.extent}")
    return RealSpaceMatrix(matrix=matrix, spec=spec, boundary=boundary)


def analytic_zero_mode(spec: LatticeSpec, sublattice: int = 1) -> ZeroMode:
    """Exact zero mode of the open lattice.

    Sublattice 1: psi_R(m, 1) = prod_j (-r_j)^chi_j and psi_L(m, 1) = prod_j (-1/r_j)^chi_j
    on cells whose coordinates are all odd, chi_j = (m_j - 1) / 2, zero elsewhere.
    Sublattice 2 is the partner mode, with the axis-1 exponent reversed.
    """
    if spec.order > MAX_REAL_SPACE_ORDER:
        raise LatticeError(f"analytic zero mode needs order <= {MAX_REAL_SPACE_ORDER}", path="lattice.order")
    if not spec.all_odd:
        raise LatticeError(f"analytic zero mode needs odd extents, got {spec.extent}", path="lattice.extent")
    if spec.intra_cell != 0:
        raise LatticeError("analytic zero mode assumes intra_cell = 0", path="lattice.intra_cell")
    if sublattice not in (1, 2):
        raise LatticeError(f"sublattice must be 1 or 2, got {sublattice}")

    coords = spec.cell_coordinates()
    support = np.all(coords % 2 == 1, axis=1)
    chi = (coords[support] - 1) // 2

    direction = np.ones(spec.order)
    if sublattice == 2:
        direction[0] = -1.0
    log_ratio = np.log(spec.ratios) * direction
    sign = np.where(chi.sum(axis=1) % 2 == 0, 1.0, -1.0)
    exponent = chi @ log_ratio

    rows = np.flatnonzero(support) * 2 + (sublattice - 1)
    right = np.zeros(spec.dim, dtype=complex)
    left = np.zeros(spec.dim, dtype=complex)
    right[rows] = sign * np.exp(exponent)
    left[rows] = sign * np.exp(-exponent)

    hamiltonian = build_obc_hamiltonian(spec).matrix
    residual_right = float(np.linalg.norm(hamiltonian @ right) / np.linalg.norm(right))
    residual_left = float(np.linalg.norm(left @ hamiltonian) / np.linalg.norm(left))

    return ZeroMode(
        eigenvalue=0j,
        right=right,
        left=left,
        residual_right=residual_right,
        residual_left=residual_left,
        origin="analytic",
        sublattice=sublattice,
    )


def cell_chi(cell: Sequence[int]) -> np.ndarray:
    """chi_j = (m_j - 1) / 2 for a cell."""
    return (np.asarray(cell, dtype=float) - 1.0) / 2.0


def far_corner(spec: LatticeSpec) -> Tuple[int, ...]:
    return tuple(spec.extent)
