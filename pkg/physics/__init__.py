"""
Physics Package - lattice models, spectra and perturbative sensing
"""
from .lattice import (LatticeSpec, BlochHamiltonian, RealSpaceMatrix, ZeroMode,
                      build_bloch, build_obc_hamiltonian, analytic_zero_mode)
from .spectral import (Spectrum, SiteDensity, eigendecompose, gauged_eigendecompose,
                       auto_eigendecompose, numeric_zero_mode, zero_mode_pair, track_mode,
                       density_of_states)
from .sensing import (PerturbationSpec, ShiftEstimate, MeasurementRange, perturbation_matrix,
                      shift_first_order, shift_closed_form, shift_exact, sensitivity_curve,
                      saturation_onset, measurement_range, protection_contrast)

__all__ = [
    'LatticeSpec',
    'BlochHamiltonian',
    'RealSpaceMatrix',
    'ZeroMode',
    'build_bloch',
    'build_obc_hamiltonian',
    'analytic_zero_mode',
    'Spectrum',
    'SiteDensity',
    'eigendecompose',
    'gauged_eigendecompose',
    'auto_eigendecompose',
    'numeric_zero_mode',
    'zero_mode_pair',
    'track_mode',
    'density_of_states',
    'PerturbationSpec',
    'ShiftEstimate',
    'MeasurementRange',
    'perturbation_matrix',
    'shift_first_order',
    'shift_closed_form',
    'shift_exact',
    'sensitivity_curve',
    'saturation_onset',
    'measurement_range',
    'protection_contrast',
]
