"""
Sensing Module
Perturbation theory of a measurand coupling two lattice sites:
- first-order zero-mode shifts from the analytic right/left modes
- the closed-form exponential law for any number of axes
- an exact-diagonalization oracle tracked against the analytic mode
- sensitivity curves, saturation onsets, measurement ranges
- the zero-mode vs finite-energy-mode protection contrast
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from joblib import Parallel, delayed

import config
from exceptions import LatticeError, NumericalError, SensingError, SpectralError
from physics.lattice import (LatticeSpec, RealSpaceMatrix, analytic_zero_mode,
                             build_obc_hamiltonian, cell_chi, far_corner)
from physics.spectral import (UNRELIABLE, auto_eigendecompose, cluster_projection,
                              density_of_states, gauged_eigendecompose, numeric_zero_mode,
                              track_mode)

logger = logging.getLogger(__name__)

FIRST_ORDER = "first_order"
CLOSED_FORM = "closed_form"
EXACT = "exact"


@dataclass(frozen=True)
class PerturbationSpec:
    """Measurand of strength gamma coupling site_a and site_b symmetrically."""
    gamma: float
    site_b: Tuple[int, ...]
    site_a: Optional[Tuple[int, ...]] = None
    sublattice_a: int = 1
    sublattice_b: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'gamma', float(self.gamma))
        object.__setattr__(self, 'site_b', tuple(int(c) for c in self.site_b))
        site_a = (1,) * len(self.site_b) if self.site_a is None else tuple(int(c) for c in self.site_a)
        object.__setattr__(self, 'site_a', site_a)
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise SensingError(f"gamma must be finite and >= 0, got {self.gamma}", path="params.gamma")
        if len(site_a) != len(self.site_b):
            raise SensingError("site_a and site_b need the same number of coordinates")
        if self.sublattice_a not in (1, 2) or self.sublattice_b not in (1, 2):
            raise SensingError("sublattices must be 1 or 2")

    def indices(self, lattice: LatticeSpec) -> Tuple[int, int]:
        try:
            a = lattice.site_index(self.site_a, self.sublattice_a)
            b = lattice.site_index(self.site_b, self.sublattice_b)
        except LatticeError as e:
            raise SensingError(f"measurand site rejected: {e.detail}") from e
        if a == b and self.gamma != 0:
            raise SensingError("measurand sites must be distinct")
        return a, b


@dataclass
class ShiftEstimate:
    delta_e: float
    gamma: float
    method: str
    K: float = 0.0
    kappa: np.ndarray = field(default_factory=lambda: np.zeros(0))
    chi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    prefactor: float = 1.0
    signed: complex = 0j
    flag: str = "ok"

    @property
    def asymptotic(self) -> float:
        """C e^K gamma."""
        return float(self.prefactor * np.exp(self.K) * self.gamma)


@dataclass
class MeasurementRange:
    lower: float
    upper: float
    threshold: float
    deviation_cap: float
    evaluations: int = 0

    @property
    def empty(self) -> bool:
        return not self.lower <= self.upper

    @property
    def decades(self) -> float:
        if self.empty:
            return 0.0
        return float(np.log10(self.upper / self.lower))

    def to_dict(self) -> Dict:
        return {
            'lower': self.lower,
            'upper': self.upper,
            'threshold': self.threshold,
            'deviation_cap': self.deviation_cap,
            'empty': self.empty,
            'decades': self.decades,
            'evaluations': self.evaluations,
        }


Perturbations = Union[PerturbationSpec, Sequence[PerturbationSpec]]


def _as_list(perturbations: Perturbations) -> List[PerturbationSpec]:
    if isinstance(perturbations, PerturbationSpec):
        return [perturbations]
    perturbations = list(perturbations)
    if not perturbations:
        raise SensingError("at least one measurand is required")
    return perturbations


def perturbation_matrix(lattice: LatticeSpec, pert: PerturbationSpec) -> RealSpaceMatrix:
    a, b = pert.indices(lattice)
    matrix = np.zeros((lattice.dim, lattice.dim), dtype=complex)
    if pert.gamma != 0:
        matrix[a, b] = pert.gamma
        matrix[b, a] = pert.gamma
    return RealSpaceMatrix(matrix=matrix, spec=lattice)


def perturbed_hamiltonian(lattice: LatticeSpec, perturbations: Perturbations) -> RealSpaceMatrix:
    hamiltonian = build_obc_hamiltonian(lattice)
    for pert in _as_list(perturbations):
        hamiltonian = hamiltonian + perturbation_matrix(lattice, pert)
    return hamiltonian


def _require_forward_skin(ratios: np.ndarray):
    if np.any(np.asarray(ratios) <= 1):
        raise SensingError(f"skin direction reversed: coupling ratios {np.round(ratios, 6).tolist()} must exceed 1",
                           path="lattice.couplings")


def shift_closed_form(ratios: Sequence[float], chis: Sequence[float], gamma: float) -> ShiftEstimate:
    """|dE| = prod_j 1/(chi_j + 1) * exp(sum_j chi_j ln r_j) * gamma, for any number of axes."""
    ratios = np.asarray(ratios, dtype=float)
    chis = np.asarray(chis, dtype=float)
    if ratios.shape != chis.shape or ratios.ndim != 1:
        raise SensingError("ratios and chis must be equal-length vectors")
    if np.any(chis < 0):
        raise SensingError("chi values must be >= 0")
    if gamma < 0:
        raise SensingError("gamma must be >= 0", path="params.gamma")
    _require_forward_skin(ratios)

    kappa = np.log(ratios)
    K = float(kappa @ chis)
    prefactor = float(np.prod(1.0 / (chis + 1.0)))
    delta_e = prefactor * np.exp(K) * gamma
    return ShiftEstimate(delta_e=float(delta_e), gamma=float(gamma), method=CLOSED_FORM,
                         K=K, kappa=kappa, chi=chis, prefactor=prefactor, signed=complex(delta_e))


def shift_first_order(lattice: LatticeSpec, perturbations: Perturbations) -> ShiftEstimate:
    """<psi_L|H_gamma|psi_R> / <psi_L|psi_R> with the analytic sublattice-1 zero mode.

    For a corner-to-corner measurand the numerator carries (r^chi + r^-chi) with the
    sign (-1)^sum(chi); only the magnitude is reported in delta_e.
    """
    _require_forward_skin(lattice.ratios)
    perturbations = _as_list(perturbations)
    mode = analytic_zero_mode(lattice)
    overlap = mode.overlap

    signed = 0j
    for pert in perturbations:
        a, b = pert.indices(lattice)
        signed += pert.gamma * (mode.left[a] * mode.right[b] + mode.left[b] * mode.right[a]) / overlap

    leading = perturbations[0]
    chi = cell_chi(leading.site_b) - cell_chi(leading.site_a)
    kappa = np.log(lattice.ratios)
    gamma = float(sum(p.gamma for p in perturbations))
    return ShiftEstimate(
        delta_e=float(abs(signed)),
        gamma=gamma,
        method=FIRST_ORDER,
        K=float(kappa @ np.abs(chi)),
        kappa=kappa,
        chi=chi,
        prefactor=float(np.prod(1.0 / (np.abs(chi) + 1.0))),
        signed=complex(signed),
    )


def _smallest_pair_fallback(eigenvalues: np.ndarray) -> complex:
    order = np.argsort(np.abs(eigenvalues), kind='stable')[:2]
    candidates = eigenvalues[order]
    return complex(candidates[np.argmax(np.abs(candidates))])


def shift_exact(lattice: LatticeSpec, perturbations: Perturbations) -> ShiftEstimate:
    """Diagonalize H + H_gamma in the gauged frame and report |E'| of the eigenvalue
    carrying the analytic zero mode."""
    perturbations = _as_list(perturbations)
    hamiltonian = perturbed_hamiltonian(lattice, perturbations)
    spectrum = gauged_eigendecompose(hamiltonian, lattice)
    gamma = float(sum(p.gamma for p in perturbations))

    if not np.all(np.isfinite(spectrum.eigenvalues)):
        logger.warning(f"Exact shift unavailable for extent {lattice.extent}: {spectrum.diagnostics}")
        return ShiftEstimate(delta_e=float('nan'), gamma=gamma, method=EXACT, flag=UNRELIABLE)

    try:
        reference = analytic_zero_mode(lattice)
        eigenvalue = track_mode(spectrum, reference).eigenvalue
    except (LatticeError, SpectralError) as e:
        logger.info(f"Falling back to the smallest-pair rule: {e}")
        eigenvalue = _smallest_pair_fallback(spectrum.eigenvalues)

    return ShiftEstimate(delta_e=float(abs(eigenvalue)), gamma=gamma, method=EXACT,
                         signed=complex(eigenvalue), flag=spectrum.condition_flag)


def relative_deviation(first: float, exact: float) -> float:
    if first == 0:
        return 0.0 if exact == 0 else float('inf')
    return float(abs(exact - first) / first)


def _curve_point(lattice: LatticeSpec, size: int, gamma: float, deviation_cap: float) -> Dict:
    sized = lattice.with_extent((size,) * lattice.order)
    pert = PerturbationSpec(gamma=gamma, site_b=far_corner(sized))
    first = shift_first_order(sized, pert)
    exact = shift_exact(sized, pert)
    deviation = relative_deviation(first.delta_e, exact.delta_e)
    return {
        'L': size,
        'gamma': gamma,
        'chi_sum': float(np.sum(first.chi)),
        'delta_first': first.delta_e,
        'delta_exact': exact.delta_e,
        'deviation': deviation,
        'saturated': bool(deviation > deviation_cap),
        'flag': exact.flag,
    }


def sensitivity_curve(lattice: LatticeSpec, sizes: Sequence[int], gammas: Sequence[float],
                      deviation_cap: float = config.DEFAULT_DEVIATION_CAP,
                      threads: int = 1) -> pd.DataFrame:
    """First-order and exact corner-to-corner shifts over cubic sizes and strengths.
    Rows come back in input order (size-major) regardless of `threads`."""
    sizes = [int(size) for size in sizes]
    if not sizes:
        raise SensingError("sizes must not be empty", path="params.sizes")
    if any(size % 2 == 0 or size < 1 for size in sizes):
        raise SensingError(f"sizes must be odd and positive, got {sizes}", path="params.sizes")
    if sizes != sorted(set(sizes)):
        raise SensingError(f"sizes must be strictly ascending, got {sizes}", path="params.sizes")
    _require_forward_skin(lattice.ratios)

    points = [(size, float(gamma)) for size in sizes for gamma in gammas]
    logger.info(f"Sensitivity curve: {len(points)} points on {threads} worker(s)")
    rows = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_curve_point)(lattice, size, gamma, deviation_cap) for size, gamma in points
    )
    return pd.DataFrame(rows, columns=['L', 'gamma', 'chi_sum', 'delta_first', 'delta_exact',
                                       'deviation', 'saturated', 'flag'])


def saturation_onset(curve: pd.DataFrame, gamma: float,
                     deviation_cap: float = config.DEFAULT_DEVIATION_CAP) -> Optional[int]:
    """Smallest size whose deviation exceeds the cap at this gamma, None when unsaturated."""
    rows = curve[np.isclose(curve['gamma'], gamma, rtol=1e-12, atol=0)].sort_values('L')
    saturated = rows[rows['deviation'] > deviation_cap]
    if saturated.empty:
        return None
    return int(saturated['L'].iloc[0])


def _deviation_at(lattice: LatticeSpec, pert_site: Tuple[int, ...], gamma: float) -> float:
    pert = PerturbationSpec(gamma=gamma, site_b=pert_site)
    first = shift_first_order(lattice, pert)
    exact = shift_exact(lattice, pert)
    if not np.isfinite(exact.delta_e):
        raise NumericalError(f"exact shift failed at gamma={gamma:.3g}")
    return relative_deviation(first.delta_e, exact.delta_e)


def detection_limit(lattice: LatticeSpec, threshold: float = config.DETECTION_THRESHOLD) -> float:
    """Smallest corner-to-corner gamma whose first-order shift reaches the threshold: threshold / (C e^K)."""
    law = shift_closed_form(lattice.ratios, cell_chi(far_corner(lattice)), 1.0)
    return float(threshold / law.delta_e)


def measurement_range(lattice: LatticeSpec, threshold: float = config.DETECTION_THRESHOLD,
                      deviation_cap: float = config.DEFAULT_DEVIATION_CAP,
                      tolerance_dex: float = config.RANGE_BISECTION_TOL_DEX) -> MeasurementRange:
    """Lower limit from the closed form, upper limit by bisection over log10(gamma)."""
    _require_forward_skin(lattice.ratios)
    if not threshold > 0:
        raise SensingError("threshold must be > 0", path="params.threshold")
    if not deviation_cap > 0:
        raise SensingError("deviation_cap must be > 0", path="params.deviation_cap")

    corner = far_corner(lattice)
    gain = shift_closed_form(lattice.ratios, cell_chi(corner), 1.0).delta_e
    lower = detection_limit(lattice, threshold)

    # Step 1: bracket in units of the coupling scale
    scale = max(max(pair) for pair in lattice.couplings)
    low = np.log10(config.RANGE_BRACKET_LOW * scale / gain)
    high = np.log10(config.RANGE_BRACKET_HIGH * scale / gain)
    evaluations = 2
    if _deviation_at(lattice, corner, 10 ** low) > deviation_cap:
        logger.warning(f"Saturated at the bottom of the bracket (gamma={10 ** low:.3g})")
        return MeasurementRange(lower, float(10 ** low), threshold, deviation_cap, evaluations)
    if _deviation_at(lattice, corner, 10 ** high) <= deviation_cap:
        raise NumericalError(f"no saturation below gamma={10 ** high:.3g}; measurement range bracket is empty")

    # Step 2: bisection in log10(gamma)
    while high - low > tolerance_dex:
        middle = 0.5 * (low + high)
        evaluations += 1
        if _deviation_at(lattice, corner, 10 ** middle) > deviation_cap:
            high = middle
        else:
            low = middle

    result = MeasurementRange(lower, float(10 ** high), threshold, deviation_cap, evaluations)
    if result.empty:
        logger.warning(f"Empty measurement range: lower={lower:.3g} > upper={result.upper:.3g}")
    logger.info(f"Measurement range {lower:.3g} .. {result.upper:.3g} after {evaluations} solves")
    return result


def protection_contrast(lattice: LatticeSpec, gamma: float, finite_target: complex = 0.68,
                        target_tolerance: float = 0.1, site_b: Optional[Sequence[int]] = None) -> Dict:
    """Density change of the zero mode vs a finite-energy mode under one measurand.

    The zero-mode density comes from the spectral projector of the near-zero cluster
    applied to the analytic mode; the finite-energy density is the single tracked
    eigenvector, which any nonzero measurand re-mixes within its degenerate cluster.
    Changes are L1 distances between unit-sum densities.
    """
    site_b = far_corner(lattice) if site_b is None else tuple(site_b)
    pert = PerturbationSpec(gamma=gamma, site_b=site_b)
    clean = auto_eigendecompose(build_obc_hamiltonian(lattice), lattice)
    shifted = auto_eigendecompose(perturbed_hamiltonian(lattice, pert), lattice)
    if not (np.all(np.isfinite(clean.eigenvalues)) and np.all(np.isfinite(shifted.eigenvalues))):
        raise NumericalError("protection contrast needs finite spectra")
    if not (clean.reliable and shifted.reliable):
        logger.warning("Protection contrast computed from a flagged spectrum")

    # Step 1: zero mode via cluster projection
    reference = analytic_zero_mode(lattice)
    radius = max(config.ZERO_MODE_TOLERANCE, 10 * shift_first_order(lattice, pert).delta_e)
    zero_clean = density_of_states(cluster_projection(clean, reference, 0.0, radius), lattice)
    zero_shifted = density_of_states(cluster_projection(shifted, reference, 0.0, radius), lattice)

    # Step 2: finite-energy mode tracked across the perturbation
    finite_clean_mode = numeric_zero_mode(clean, finite_target, target_tolerance)
    finite_shifted_mode = track_mode(shifted, finite_clean_mode)
    finite_clean = density_of_states(finite_clean_mode, lattice)
    finite_shifted = density_of_states(finite_shifted_mode, lattice)

    result = {
        'zero_mode_change': float(np.abs(zero_shifted.weights - zero_clean.weights).sum()),
        'finite_mode_change': float(np.abs(finite_shifted.weights - finite_clean.weights).sum()),
        'finite_eigenvalue': finite_clean_mode.eigenvalue,
        'finite_eigenvalue_shifted': finite_shifted_mode.eigenvalue,
        'gamma': float(gamma),
    }
    logger.info(f"Protection contrast: zero {result['zero_mode_change']:.3g}, "
                f"finite {result['finite_mode_change']:.3g}")
    return result
