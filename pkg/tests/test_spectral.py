"""
Tests for the non-Hermitian eigensolvers, zero-mode extraction and site densities.
"""
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.optimize import linear_sum_assignment

from exceptions import SpectralError
from physics.lattice import LatticeSpec, ZeroMode, analytic_zero_mode, build_obc_hamiltonian
from physics.spectral import (GAUGED, UNRELIABLE, WELL_CONDITIONED, auto_eigendecompose,
                              cluster_projection, density_of_states, eigendecompose,
                              gauged_eigendecompose, gauge_log_factors, needs_gauge, numeric_zero_mode,
                              track_mode, zero_mode_pair)

EIGEN_TOLERANCE = 1e-10
SIMILARITY_TOLERANCE = 1e-7
RESIDUAL_BOUND = 1e-6


def _max_matched_distance(a, b):
    cost = np.abs(np.subtract.outer(np.asarray(a), np.asarray(b)))
    rows, cols = linear_sum_assignment(cost)
    return float(np.max(cost[rows, cols]))


def _alignment(u, v):
    return abs(np.vdot(u, v)) / (np.linalg.norm(u) * np.linalg.norm(v))


def _span_residual(vector, basis):
    coefficients, *_ = np.linalg.lstsq(basis, vector, rcond=None)
    return np.linalg.norm(basis @ coefficients - vector) / np.linalg.norm(vector)


# =============================================================================
# HYPOTHESIS STRATEGIES
# =============================================================================


@st.composite
def random_matrices(draw):
    size = draw(st.integers(min_value=2, max_value=20))
    seed = draw(st.integers(min_value=0, max_value=2 ** 31 - 1))
    rng = np.random.default_rng(seed)
    return rng.normal(size=(size, size)) + 1j * rng.normal(size=(size, size))


@st.composite
def moderate_lattices(draw):
    extent = tuple(draw(st.sampled_from([1, 3, 5])) for _ in range(2))
    couplings = tuple(
        (draw(st.floats(min_value=0.5, max_value=2.0)), draw(st.floats(min_value=0.3, max_value=2.0)))
        for _ in range(2)
    )
    return LatticeSpec(order=2, extent=extent, couplings=couplings)


# =============================================================================
# PLAIN SOLVER
# =============================================================================


def test_hermitian_two_by_two():
    spectrum = eigendecompose(np.array([[0, 1], [1, 0]]))
    assert spectrum.condition_flag == WELL_CONDITIONED
    order = np.argsort(spectrum.eigenvalues.real)
    np.testing.assert_allclose(spectrum.eigenvalues[order], [-1, 1], atol=EIGEN_TOLERANCE)
    antisymmetric = spectrum.right_vectors[:, order[0]]
    symmetric = spectrum.right_vectors[:, order[1]]
    np.testing.assert_allclose(antisymmetric[0], -antisymmetric[1], atol=EIGEN_TOLERANCE)
    np.testing.assert_allclose(symmetric[0], symmetric[1], atol=EIGEN_TOLERANCE)


def test_non_reciprocal_two_by_two_roots():
    spectrum = eigendecompose(np.array([[0, 0.1], [1.9, 0]]))
    np.testing.assert_allclose(np.sort(spectrum.eigenvalues.real), [-0.4358898944, 0.4358898944], atol=1e-9)
    np.testing.assert_allclose(spectrum.eigenvalues.imag, 0, atol=EIGEN_TOLERANCE)


def test_eigenvalue_count_and_biorthonormality(sensing_lattice_5):
    spectrum = eigendecompose(build_obc_hamiltonian(sensing_lattice_5))
    assert spectrum.dim == sensing_lattice_5.dim
    assert spectrum.condition_flag == WELL_CONDITIONED
    np.testing.assert_allclose(spectrum.left_vectors @ spectrum.right_vectors, np.eye(spectrum.dim), atol=1e-6)


@given(matrix=random_matrices())
@settings(max_examples=40, deadline=None)
def test_residual_bound_unless_flagged(matrix):
    spectrum = eigendecompose(matrix)
    assume(spectrum.condition_flag != UNRELIABLE)
    norm = np.linalg.norm(matrix, 2)
    for i, eigenvalue in enumerate(spectrum.eigenvalues):
        right = spectrum.right_vectors[:, i]
        assert np.linalg.norm(matrix @ right - eigenvalue * right) <= RESIDUAL_BOUND * norm * np.linalg.norm(right)


@given(matrix=random_matrices())
@settings(max_examples=40, deadline=None)
def test_biorthogonality_when_well_conditioned(matrix):
    spectrum = eigendecompose(matrix)
    assume(spectrum.condition_flag == WELL_CONDITIONED)
    assume(np.max(spectrum.condition_numbers) < 1e4)
    pairing = spectrum.left_vectors @ spectrum.right_vectors
    np.testing.assert_allclose(pairing, np.eye(len(matrix)), atol=1e-6)


def test_plain_solver_flags_strong_skin(strong_skin_lattice):
    spectrum = eigendecompose(build_obc_hamiltonian(strong_skin_lattice))
    assert spectrum.condition_flag == UNRELIABLE


def test_dimension_cap():
    with pytest.raises(SpectralError, match="exceeds cap"):
        eigendecompose(np.zeros((2001, 2001)))


def test_non_square_rejected():
    with pytest.raises(SpectralError):
        eigendecompose(np.zeros((3, 2)))


def test_non_finite_matrix_is_unreliable():
    spectrum = eigendecompose(np.array([[0.0, np.inf], [1.0, 0.0]]))
    assert spectrum.condition_flag == UNRELIABLE
    assert np.all(np.isnan(spectrum.eigenvalues))


# =============================================================================
# GAUGED SOLVER
# =============================================================================


def test_identity_gauge_matches_plain_solver():
    spec = LatticeSpec(order=2, extent=(5, 5), couplings=((1.2, 1.2), (0.7, 0.7)))
    matrix = build_obc_hamiltonian(spec)
    plain = eigendecompose(matrix)
    gauged = gauged_eigendecompose(matrix, spec)
    np.testing.assert_array_equal(gauged.log_gauge, np.zeros(spec.dim))
    np.testing.assert_allclose(gauged.eigenvalues, plain.eigenvalues, atol=EIGEN_TOLERANCE)


def test_chain_gauged_and_plain_agree():
    spec = LatticeSpec(order=1, extent=(9,), couplings=((1.9, 0.1),))
    matrix = build_obc_hamiltonian(spec)
    plain = eigendecompose(matrix)
    gauged = gauged_eigendecompose(matrix, spec)
    assert _max_matched_distance(plain.eigenvalues, gauged.eigenvalues) < 1e-8


def test_chain_gauge_makes_both_sublattices_reciprocal():
    spec = LatticeSpec(order=1, extent=(9,), couplings=((1.9, 0.1),))
    gauge = np.exp(gauge_log_factors(spec))
    framed = gauge[:, None] * build_obc_hamiltonian(spec).matrix / gauge[None, :]
    np.testing.assert_allclose(framed, framed.T, rtol=1e-12)
    np.testing.assert_allclose(np.abs(framed[framed != 0]), np.sqrt(1.9 * 0.1), rtol=1e-12)


@given(spec=moderate_lattices())
@settings(max_examples=30, deadline=None)
def test_similarity_invariance(spec):
    matrix = build_obc_hamiltonian(spec)
    plain = eigendecompose(matrix)
    gauged = gauged_eigendecompose(matrix, spec)
    assume(plain.condition_flag == WELL_CONDITIONED and gauged.condition_flag == GAUGED)
    assume(np.max(plain.condition_numbers) < 1e6 and np.max(gauged.condition_numbers) < 1e6)
    assert _max_matched_distance(plain.eigenvalues, gauged.eigenvalues) < SIMILARITY_TOLERANCE


def test_gauged_solver_recovers_strong_skin_zero_mode(strong_skin_lattice):
    matrix = build_obc_hamiltonian(strong_skin_lattice)
    spectrum = gauged_eigendecompose(matrix, strong_skin_lattice)
    assert np.all(np.isfinite(spectrum.eigenvalues))
    mode = track_mode(spectrum, analytic_zero_mode(strong_skin_lattice))
    assert abs(mode.eigenvalue) < 1e-6
    assert mode.residual_right < 1e-8


@pytest.mark.parametrize("sublattice, mirrored", [(1, False), (2, True)])
def test_each_zero_mode_is_flat_in_its_frame(strong_skin_lattice, sublattice, mirrored):
    mode = analytic_zero_mode(strong_skin_lattice, sublattice)
    gauge = np.exp(gauge_log_factors(strong_skin_lattice, mirrored=mirrored))
    framed_right = gauge * mode.right
    framed_left = mode.left / gauge
    support = mode.right != 0
    np.testing.assert_allclose(np.abs(framed_right[support]), 1.0, rtol=1e-9)
    np.testing.assert_allclose(np.abs(framed_left[support]), 1.0, rtol=1e-9)


def test_strong_skin_spectrum_holds_both_zero_modes(strong_skin_lattice):
    spectrum = auto_eigendecompose(build_obc_hamiltonian(strong_skin_lattice), strong_skin_lattice)
    assert spectrum.condition_flag == GAUGED
    assert np.count_nonzero(np.abs(spectrum.eigenvalues) < 1e-6) >= 2

    index = spectrum.diagnostics['partner_mode']['index']
    assert abs(spectrum.eigenvalues[index]) < 1e-6
    partner = analytic_zero_mode(strong_skin_lattice, 2)
    assert _alignment(partner.right, spectrum.right_vectors[:, index]) > 0.999

    primary = track_mode(spectrum, analytic_zero_mode(strong_skin_lattice))
    assert abs(primary.eigenvalue) < 1e-6
    assert primary.residual_right < 1e-8


def test_partner_frame_skipped_when_everything_resolves(sensing_lattice_5):
    spectrum = gauged_eigendecompose(build_obc_hamiltonian(sensing_lattice_5), sensing_lattice_5, partner=True)
    assert spectrum.condition_flag == GAUGED
    assert 'partner_mode' not in spectrum.diagnostics


def test_gauge_overflow_is_flagged():
    spec = LatticeSpec(order=1, extent=(301,), couplings=((1e3, 1.0),))
    spectrum = gauged_eigendecompose(build_obc_hamiltonian(spec), spec)
    assert spectrum.condition_flag == UNRELIABLE
    assert "overflow" in spectrum.diagnostics['reason']


def test_gauged_dimension_mismatch(sensing_lattice_5):
    with pytest.raises(SpectralError):
        gauged_eigendecompose(np.eye(4), sensing_lattice_5)


def test_conditioning_policy(strong_skin_lattice, sensing_lattice_5):
    assert needs_gauge(strong_skin_lattice)
    assert not needs_gauge(sensing_lattice_5)
    spectrum = auto_eigendecompose(build_obc_hamiltonian(sensing_lattice_5), sensing_lattice_5)
    assert spectrum.condition_flag == WELL_CONDITIONED


# =============================================================================
# ZERO MODES
# =============================================================================


def test_diagonal_zero_mode():
    spectrum = eigendecompose(np.diag([0.0, 5.0]))
    mode = numeric_zero_mode(spectrum)
    assert mode.eigenvalue == 0
    np.testing.assert_allclose(np.abs(mode.right), [1, 0], atol=EIGEN_TOLERANCE)


def test_no_mode_near_target():
    spectrum = eigendecompose(np.diag([1.0, 5.0]))
    with pytest.raises(SpectralError, match="no mode near target"):
        numeric_zero_mode(spectrum)


def test_numeric_zero_mode_aligns_with_analytic(sensing_lattice_9):
    spectrum = gauged_eigendecompose(build_obc_hamiltonian(sensing_lattice_9), sensing_lattice_9)
    analytic = analytic_zero_mode(sensing_lattice_9)
    mode = track_mode(spectrum, analytic)
    assert abs(mode.eigenvalue) < 1e-6
    assert _alignment(analytic.right, mode.right) > 0.999


def test_degenerate_zero_pair(weak_skin_lattice):
    spectrum = eigendecompose(build_obc_hamiltonian(weak_skin_lattice))
    pair = zero_mode_pair(spectrum)
    assert len(pair) >= 2
    basis = np.stack([mode.right for mode in pair], axis=1)
    for sublattice in (1, 2):
        analytic = analytic_zero_mode(weak_skin_lattice, sublattice)
        assert _span_residual(analytic.right, basis) < 1e-8


def test_cluster_projection_reproduces_analytic_mode(weak_skin_lattice):
    spectrum = eigendecompose(build_obc_hamiltonian(weak_skin_lattice))
    analytic = analytic_zero_mode(weak_skin_lattice)
    projected = cluster_projection(spectrum, analytic)
    np.testing.assert_allclose(projected.right, analytic.right, atol=1e-8 * np.linalg.norm(analytic.right))
    assert abs(projected.eigenvalue) < 1e-8


def test_finite_energy_target(weak_skin_lattice):
    spectrum = eigendecompose(build_obc_hamiltonian(weak_skin_lattice))
    mode = numeric_zero_mode(spectrum, target=0.68, tolerance=0.1)
    assert abs(mode.eigenvalue - 0.68) < 0.1
    assert mode.residual_right < 1e-8


# =============================================================================
# SITE DENSITY
# =============================================================================


def test_single_cell_density():
    mode = ZeroMode(eigenvalue=0j, right=np.array([1.0, 0.0]), left=np.array([1.0, 0.0]))
    np.testing.assert_allclose(density_of_states(mode).weights, [1.0, 0.0])


def test_strong_skin_density_peaks_in_corner(strong_skin_lattice):
    density = density_of_states(analytic_zero_mode(strong_skin_lattice), strong_skin_lattice)
    assert density.argmax_site() == ((13, 13), 1)
    assert density.weight_at((13, 13)) > 0.999
    np.testing.assert_allclose(density.weights.sum(), 1.0)


def test_density_monotone_away_from_corner(sensing_lattice_9):
    density = density_of_states(analytic_zero_mode(sensing_lattice_9), sensing_lattice_9)
    support = density.cell_grid(1)[::2, ::2]
    assert np.all(np.diff(support, axis=0) >= 0)
    assert np.all(np.diff(support, axis=1) >= 0)


def test_hermitian_ring_density_is_uniform():
    spec = LatticeSpec(order=2, extent=(5, 5), couplings=((1.0, 1.0), (1.0, 1.0)))
    values, vectors = np.linalg.eigh(build_obc_hamiltonian(spec, "periodic").matrix)
    np.testing.assert_allclose(values[-1], 4.0, atol=EIGEN_TOLERANCE)
    top = vectors[:, -1]
    density = density_of_states(ZeroMode(eigenvalue=4.0 + 0j, right=top, left=top.conj()))
    np.testing.assert_allclose(density.weights, np.full(spec.dim, 1.0 / spec.dim), atol=1e-6)


def test_zero_vector_density_rejected():
    mode = ZeroMode(eigenvalue=0j, right=np.zeros(4), left=np.zeros(4))
    with pytest.raises(SpectralError):
        density_of_states(mode)
