"""
Spectral Analysis Module
Non-Hermitian eigen-analysis of lattice and circuit matrices:
- full spectra with biorthonormal left/right eigenvectors
- a diagonal-gauge solver for skin-effect matrices whose eigenvectors
  span many orders of magnitude
- zero-mode extraction, mode tracking and site densities
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Union

import numpy as np
import pandas as pd
import scipy.linalg
from scipy import sparse
from scipy.sparse.csgraph import connected_components

import config
from exceptions import SpectralError
from physics.lattice import MAX_REAL_SPACE_ORDER, LatticeSpec, RealSpaceMatrix, ZeroMode, analytic_zero_mode

logger = logging.getLogger(__name__)

WELL_CONDITIONED = "well_conditioned"
GAUGED = "gauged"
UNRELIABLE = "unreliable"

MatrixLike = Union[RealSpaceMatrix, np.ndarray]


@dataclass
class Spectrum:
    """Eigenvalues with paired right (columns) and left (rows) eigenvectors, left @ right = I.

    For gauged solves the spectrum-level flag ignores per-mode conditioning;
    `condition_numbers` holds kappa_i = |l_i| |r_i| measured in the solve frame.
    """
    eigenvalues: np.ndarray
    right_vectors: np.ndarray
    left_vectors: np.ndarray
    condition_flag: str
    matrix: np.ndarray
    condition_numbers: np.ndarray
    log_gauge: Optional[np.ndarray] = None
    diagnostics: Dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.eigenvalues)

    @property
    def reliable(self) -> bool:
        return self.condition_flag != UNRELIABLE

    def to_frame(self, tolerance: float = config.ZERO_MODE_TOLERANCE):
        return pd.DataFrame({
            'index': np.arange(self.dim),
            're': self.eigenvalues.real,
            'im': self.eigenvalues.imag,
            'abs': np.abs(self.eigenvalues),
            'condition': self.condition_numbers,
            'zero_mode': np.abs(self.eigenvalues) < tolerance,
        })


@dataclass
class SiteDensity:
    weights: np.ndarray
    spec: Optional[LatticeSpec] = None

    def weight_at(self, cell, sublattice: int = 1) -> float:
        if self.spec is None:
            raise SpectralError("site density carries no lattice")
        return float(self.weights[self.spec.site_index(cell, sublattice)])

    def cell_grid(self, sublattice: int = 1) -> np.ndarray:
        """Weights of one sublattice reshaped onto the cell grid."""
        if self.spec is None:
            raise SpectralError("site density carries no lattice")
        return self.weights[sublattice - 1::2].reshape(self.spec.extent)

    def argmax_site(self):
        index = int(np.argmax(self.weights))
        if self.spec is None:
            return index
        return self.spec.site_coordinates(index)


def _as_array(matrix: MatrixLike) -> np.ndarray:
    array = matrix.matrix if isinstance(matrix, RealSpaceMatrix) else np.asarray(matrix)
    if array.ndim != 2 or array.shape[0] != array.shape[1]:
        raise SpectralError(f"expected a square matrix, got shape {array.shape}")
    if array.shape[0] > config.MAX_MATRIX_DIM:
        raise SpectralError(f"matrix dimension {array.shape[0]} exceeds cap {config.MAX_MATRIX_DIM}")
    return np.asarray(array, dtype=complex)


def _unreliable(matrix: np.ndarray, reason: str, log_gauge=None) -> Spectrum:
    n = matrix.shape[0]
    logger.warning(f"Eigendecomposition unreliable: {reason}")
    nan_vectors = np.full((n, n), np.nan, dtype=complex)
    return Spectrum(
        eigenvalues=np.full(n, np.nan, dtype=complex),
        right_vectors=nan_vectors,
        left_vectors=nan_vectors.copy(),
        condition_flag=UNRELIABLE,
        matrix=matrix,
        condition_numbers=np.full(n, np.inf),
        log_gauge=log_gauge,
        diagnostics={'reason': reason},
    )


def _pairing_clusters(eigenvalues: np.ndarray, tolerance: float) -> List[np.ndarray]:
    """Groups of eigenvalues linked by distances <= tolerance."""
    close = np.abs(eigenvalues[:, None] - eigenvalues[None, :]) <= tolerance
    count, labels = connected_components(sparse.csr_matrix(close), directed=False)
    return [np.flatnonzero(labels == label) for label in range(count)]


def _biorthonormal_solve(frame_matrix: np.ndarray):
    """LAPACK left/right solve followed by biorthonormalization. Returns
    (eigenvalues, right columns, left rows, conditions, diagnostics) in the solve frame.

    Left rows are paired with right columns cluster by cluster, so a nearly
    singular pairing inside one cluster leaves the other rows untouched.
    Residuals are measured on the raw LAPACK vectors.
    """
    eigenvalues, vl, vr = scipy.linalg.eig(frame_matrix, left=True, right=True)
    raw_left = vl.conj().T
    n = len(eigenvalues)
    norm_m = max(np.linalg.norm(frame_matrix, np.inf), np.finfo(float).tiny)

    right_norms = np.linalg.norm(vr, axis=0)
    raw_left_norms = np.linalg.norm(raw_left, axis=1)
    right_residual = np.linalg.norm(frame_matrix @ vr - vr * eigenvalues, axis=0) / (norm_m * right_norms)
    left_residual = (np.linalg.norm(raw_left @ frame_matrix - eigenvalues[:, None] * raw_left, axis=1)
                     / (norm_m * raw_left_norms))

    left = raw_left.copy()
    for members in _pairing_clusters(eigenvalues, config.CLUSTER_TOLERANCE * norm_m):
        block = raw_left[members] @ vr[:, members]
        try:
            left[members] = scipy.linalg.solve(block, raw_left[members])
        except np.linalg.LinAlgError:
            logger.warning(f"Singular pairing block of size {len(members)}; normalizing row by row")
            left[members] = raw_left[members] / np.diag(block)[:, None]

    left_norms = np.linalg.norm(left, axis=1)
    conditions = left_norms * right_norms
    error = np.abs(left @ vr - np.eye(n)) / np.outer(left_norms, right_norms)
    mode_errors = np.maximum(np.max(error, axis=1), np.max(error, axis=0))

    diagnostics = {
        'biorthogonality_error': float(np.max(error)),
        'residual': float(max(np.max(right_residual), np.max(left_residual))),
        'max_condition': float(np.max(conditions)),
        'mode_biorthogonality': mode_errors,
    }
    return eigenvalues, vr, left, conditions, diagnostics


def _flag(diagnostics: Dict, conditions: np.ndarray, check_conditions: bool, success_flag: str) -> str:
    """Plain solves need every mode resolved. Gauged solves judge biorthogonality
    only on modes whose frame condition number is within config.CONDITION_LIMIT.
    The failing check lands in diagnostics['reason']."""
    resolved = np.isfinite(conditions) & (conditions <= config.CONDITION_LIMIT)
    diagnostics['unresolved_modes'] = int(np.count_nonzero(~resolved))
    if check_conditions:
        checked = np.ones(len(conditions), dtype=bool)
    else:
        checked = resolved

    if not diagnostics['residual'] <= config.RESIDUAL_TOLERANCE:
        diagnostics['reason'] = f"residual {diagnostics['residual']:.3g} above tolerance"
    elif not np.any(checked):
        diagnostics['reason'] = "no mode within the condition limit"
    elif not np.all(diagnostics['mode_biorthogonality'][checked] <= config.BIORTHOGONAL_TOLERANCE):
        diagnostics['reason'] = "left and right vectors not biorthogonal"
    elif check_conditions and diagnostics['unresolved_modes']:
        diagnostics['reason'] = f"condition number {diagnostics['max_condition']:.3g} above limit"
    else:
        return success_flag
    return UNRELIABLE


def eigendecompose(matrix: MatrixLike) -> Spectrum:
    """Plain dense solve. Flags unreliable when any eigenvalue condition number
    exceeds config.CONDITION_LIMIT."""
    array = _as_array(matrix)
    if not np.all(np.isfinite(array)):
        return _unreliable(array, "matrix has non-finite entries")
    try:
        eigenvalues, right, left, conditions, diagnostics = _biorthonormal_solve(array)
    except (np.linalg.LinAlgError, ValueError) as e:
        return _unreliable(array, f"solver failed: {e}")

    flag = _flag(diagnostics, conditions, check_conditions=True, success_flag=WELL_CONDITIONED)
    if flag == UNRELIABLE:
        logger.warning(f"Plain eigendecomposition flagged unreliable: {diagnostics['reason']}")
    return Spectrum(eigenvalues, right, left, flag, array, conditions, diagnostics=diagnostics)


def gauge_log_factors(spec: LatticeSpec, mirrored: bool = False) -> np.ndarray:
    """log of the diagonal gauge d, d(m, s) = prod_j r_j^{-(m_j - 1) / 2}.

    A single decoupled order-1 chain pair gets the opposite axis-1 exponent on
    sublattice 2, which makes both chains reciprocal. `mirrored` reverses the
    axis-1 exponent everywhere; that frame flattens the sublattice-2 zero mode.
    """
    coords = spec.cell_coordinates() - 1
    log_ratios = np.log(spec.ratios)
    if mirrored:
        log_ratios[0] = -log_ratios[0]
    per_cell = -(coords @ log_ratios) / 2.0
    log_gauge = np.repeat(per_cell, 2)
    if spec.order == 1 and spec.intra_cell == 0:
        log_gauge[1::2] = -per_cell
    return log_gauge


def _frame_solve(array: np.ndarray, log_gauge: np.ndarray):
    """Solve d M d^-1 and map back: right = d^-1 r~, left = l~ d. Eigenvalues are unchanged.
    Returns (eigenvalues, right, left, conditions, diagnostics) or a failure reason."""
    if np.max(np.abs(log_gauge)) > config.GAUGE_LOG_LIMIT:
        return "gauge factors overflow"
    gauge = np.exp(log_gauge)
    framed = gauge[:, None] * array / gauge[None, :]
    if not np.all(np.isfinite(framed)):
        return "gauged matrix has non-finite entries"
    try:
        eigenvalues, right, left, conditions, diagnostics = _biorthonormal_solve(framed)
    except (np.linalg.LinAlgError, ValueError) as e:
        return f"gauged solver failed: {e}"
    return eigenvalues, right / gauge[:, None], left * gauge[None, :], conditions, diagnostics


def _has_partner_mode(spec: LatticeSpec) -> bool:
    return (2 <= spec.order <= MAX_REAL_SPACE_ORDER and spec.all_odd and spec.intra_cell == 0
            and spec.ratios[0] != 1.0)


def _splice_partner_mode(spectrum: Spectrum, spec: LatticeSpec) -> Spectrum:
    """Replace the pair tracking the sublattice-2 zero mode by its solve in the mirrored frame.

    The sublattice-1 and sublattice-2 zero modes decay along opposite axis-1
    directions, so no single diagonal frame holds both with small condition numbers.
    """
    solved = _frame_solve(spectrum.matrix, gauge_log_factors(spec, mirrored=True))
    if isinstance(solved, str):
        logger.warning(f"Mirrored frame unavailable: {solved}")
        return spectrum
    eigenvalues, right, left, conditions, _ = solved
    mirrored = Spectrum(eigenvalues, right, left, GAUGED, spectrum.matrix, conditions)

    partner = analytic_zero_mode(spec, sublattice=2)
    source_weights = np.nan_to_num(projector_weights(mirrored, partner), nan=-1.0, posinf=-1.0)
    source_weights[~(conditions <= config.CONDITION_LIMIT)] = -np.inf
    source = int(np.argmax(source_weights))

    # only pairs the primary frame could not resolve are replaced
    unresolved = ~(spectrum.condition_numbers <= config.CONDITION_LIMIT)
    if not np.any(unresolved) or not conditions[source] <= config.CONDITION_LIMIT:
        return spectrum
    weights = np.nan_to_num(projector_weights(spectrum, partner), nan=-1.0, posinf=-1.0)
    weights[~unresolved] = -np.inf
    target = int(np.argmax(weights))

    spectrum.eigenvalues[target] = eigenvalues[source]
    spectrum.right_vectors[:, target] = right[:, source]
    spectrum.left_vectors[target, :] = left[source, :]
    spectrum.condition_numbers[target] = conditions[source]
    spectrum.diagnostics['partner_mode'] = {'index': target, 'condition': float(conditions[source])}
    logger.debug(f"Spliced mirrored-frame partner mode into index {target}, "
                 f"eigenvalue={eigenvalues[source]:.3g}")
    return spectrum


def gauged_eigendecompose(matrix: MatrixLike, spec: LatticeSpec, partner: bool = False) -> Spectrum:
    """Solve in the diagonal gauge frame; eigenvalues are those of `matrix`.

    With `partner`, lattices carrying the analytic zero-mode pair also get the
    sublattice-2 zero mode from a second, mirrored frame.
    """
    array = _as_array(matrix)
    if array.shape[0] != spec.dim:
        raise SpectralError(f"matrix dimension {array.shape[0]} does not match lattice dimension {spec.dim}")

    log_gauge = gauge_log_factors(spec)
    solved = _frame_solve(array, log_gauge)
    if isinstance(solved, str):
        return _unreliable(array, solved, log_gauge)
    eigenvalues, right, left, conditions, diagnostics = solved

    flag = _flag(diagnostics, conditions, check_conditions=False, success_flag=GAUGED)
    if not (np.all(np.isfinite(right)) and np.all(np.isfinite(left))):
        flag = UNRELIABLE
    spectrum = Spectrum(eigenvalues, right, left, flag, array, conditions, log_gauge, diagnostics)
    if partner and flag != UNRELIABLE and _has_partner_mode(spec):
        spectrum = _splice_partner_mode(spectrum, spec)
    logger.debug(f"Gauged eigendecomposition dim={array.shape[0]} flag={flag}")
    return spectrum


def needs_gauge(spec: LatticeSpec) -> bool:
    """max_j r_j^(L_j - 1) above config.GAUGE_RATIO_LIMIT (either skin direction)."""
    exponents = (np.asarray(spec.extent) - 1) * np.abs(np.log(spec.ratios))
    return bool(np.max(exponents) > np.log(config.GAUGE_RATIO_LIMIT))


def auto_eigendecompose(matrix: MatrixLike, spec: LatticeSpec) -> Spectrum:
    if needs_gauge(spec):
        logger.info(f"Routing extent {spec.extent} through the gauged solver")
        return gauged_eigendecompose(matrix, spec, partner=True)
    return eigendecompose(matrix)


def _mode_at(spectrum: Spectrum, index: int) -> ZeroMode:
    right = spectrum.right_vectors[:, index]
    left = spectrum.left_vectors[index, :]
    eigenvalue = spectrum.eigenvalues[index]
    residual_right = np.linalg.norm(spectrum.matrix @ right - eigenvalue * right) / np.linalg.norm(right)
    residual_left = np.linalg.norm(left @ spectrum.matrix - eigenvalue * left) / np.linalg.norm(left)
    return ZeroMode(
        eigenvalue=complex(eigenvalue),
        right=right,
        left=left,
        residual_right=float(residual_right),
        residual_left=float(residual_left),
        origin="numeric",
        condition=float(spectrum.condition_numbers[index]),
    )


def numeric_zero_mode(spectrum: Spectrum, target: complex = 0.0,
                      tolerance: float = config.ZERO_MODE_TOLERANCE) -> ZeroMode:
    """Eigen-pair nearest `target`, residuals measured against the source matrix."""
    if not np.all(np.isfinite(spectrum.eigenvalues)):
        raise SpectralError("spectrum has no finite eigenvalues")
    distances = np.abs(spectrum.eigenvalues - target)
    index = int(np.argmin(distances))
    if distances[index] > tolerance:
        raise SpectralError(
            f"no mode near target {target}: nearest eigenvalue {spectrum.eigenvalues[index]:.6g} "
            f"is {distances[index]:.3g} away")
    return _mode_at(spectrum, index)


def zero_mode_pair(spectrum: Spectrum, tolerance: float = config.ZERO_MODE_TOLERANCE) -> List[ZeroMode]:
    """All eigen-pairs within tolerance of zero, nearest first."""
    magnitudes = np.abs(spectrum.eigenvalues)
    indices = [int(i) for i in np.argsort(magnitudes, kind='stable') if magnitudes[i] <= tolerance]
    return [_mode_at(spectrum, index) for index in indices]


def projector_weights(spectrum: Spectrum, reference: ZeroMode) -> np.ndarray:
    """|<l_ref|r_i><l_i|r_ref>| / <l_ref|r_ref> per eigen-pair; sums to 1 over a complete basis."""
    overlap = reference.left @ reference.right
    if overlap == 0:
        raise SpectralError("reference mode has vanishing biorthogonal overlap")
    return np.abs((reference.left @ spectrum.right_vectors) * (spectrum.left_vectors @ reference.right) / overlap)


def track_mode(spectrum: Spectrum, reference: ZeroMode) -> ZeroMode:
    """Eigen-pair carrying the largest spectral-projector weight of `reference`.

    Pairs above config.CONDITION_LIMIT are skipped whenever any pair is within it;
    their left vectors carry no usable weight.
    """
    weights = projector_weights(spectrum, reference)
    candidates = np.isfinite(weights)
    resolved = candidates & (spectrum.condition_numbers <= config.CONDITION_LIMIT)
    if np.any(resolved):
        candidates = resolved
    if not np.any(candidates):
        raise SpectralError("mode tracking failed: projector weights are not finite")
    index = int(np.argmax(np.where(candidates, weights, -np.inf)))
    mode = _mode_at(spectrum, index)
    logger.debug(f"Tracked mode {index} eigenvalue={mode.eigenvalue:.6g} weight={weights[index]:.4f}")
    return mode


def density_of_states(mode: ZeroMode, spec: Optional[LatticeSpec] = None) -> SiteDensity:
    """Per-site |psi_R|^2 normalized to unit sum."""
    magnitudes = np.abs(np.asarray(mode.right))
    peak = np.max(magnitudes) if magnitudes.size else 0.0
    if not peak > 0 or not np.isfinite(peak):
        raise SpectralError("density of a zero vector is undefined")
    scaled = (magnitudes / peak) ** 2
    return SiteDensity(weights=scaled / scaled.sum(), spec=spec)


def cluster_projection(spectrum: Spectrum, reference: ZeroMode, center: complex = 0.0,
                       radius: float = config.ZERO_MODE_TOLERANCE) -> ZeroMode:
    """Apply the spectral projector of every eigenvalue within `radius` of `center` to a
    reference mode. Independent of how a degenerate cluster's basis was chosen."""
    members = np.flatnonzero(np.abs(spectrum.eigenvalues - center) <= radius)
    if members.size == 0:
        raise SpectralError(f"no mode near target {center}")
    right_block = spectrum.right_vectors[:, members]
    left_block = spectrum.left_vectors[members, :]
    right = right_block @ (left_block @ reference.right)
    left = (reference.left @ right_block) @ left_block
    eigenvalue = complex(left @ spectrum.matrix @ right / (left @ right))
    return ZeroMode(
        eigenvalue=eigenvalue,
        right=right,
        left=left,
        residual_right=float(np.linalg.norm(spectrum.matrix @ right - eigenvalue * right) / np.linalg.norm(right)),
        residual_left=float(np.linalg.norm(left @ spectrum.matrix - eigenvalue * left) / np.linalg.norm(left)),
        origin="numeric",
        sublattice=reference.sublattice,
        condition=float(np.max(spectrum.condition_numbers[members])),
    )
