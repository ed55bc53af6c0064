"""
Tests for node solves, sweeps, grid refinement, shift extraction and crosstalk trials.
"""
import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings, strategies as st

import config
from backend.circuit import (CAPACITOR, CAPACITOR_TO_GROUND, GROUND, INDUCTOR, INDUCTOR_TO_GROUND,
                             CircuitGraph, CircuitParams, Element, admittance, resonance_frequency,
                             synthesize_circuit)
from backend.measure import (IMPEDANCE, MIN_VOLTAGE, PEAK_IMPEDANCE, SPECTRAL, DriveSpec,
                             SweepResult, circuit_measurement_range, coarse_grid, crosstalk_injections,
                             crosstalk_trial, default_drive, eigenfrequency_shift, impedance_scan, noise_onset_estimate,
                             noise_onset_shift, profile_at, refine_grid, solve_currents, solve_node_voltages,
                             two_stage_grid, voltage_sweep)
from exceptions import MeasureError, NumericalError

RESIDUAL_BOUND = 1e-8
FINE_STEP = 1e3
COARSE_STEP = 1e6


def _chain(units, ratio, c1=5e-12):
    return synthesize_circuit(None, CircuitParams(c1=c1, c2=c1 / ratio, ground_l=1e-9, units=units))


def _synthetic_sweep(grid, trace, floor=-80.0):
    values = np.maximum(np.asarray(trace, dtype=float), floor)[:, None]
    return SweepResult(grid=np.asarray(grid, dtype=float), values=values, nodes=[0], mode="voltage",
                       noise_floor_db=floor, extracted_f=float(grid[0]), extraction_method=MIN_VOLTAGE, probe=0)


def _lorentzian_scan(peak):
    def scan(grid):
        values = (1.0 / (1.0 + ((grid - peak) / 1e4) ** 2))[:, None]
        return SweepResult(grid=grid, values=values, nodes=[0], mode=IMPEDANCE, noise_floor_db=None,
                           extracted_f=float(grid[np.argmax(values[:, 0])]),
                           extraction_method=PEAK_IMPEDANCE, probe=0)
    return scan


# =============================================================================
# HYPOTHESIS STRATEGIES
# =============================================================================


@st.composite
def three_node_networks(draw):
    capacitance = st.floats(min_value=1e-13, max_value=1e-11)
    inductance = st.floats(min_value=1e-10, max_value=1e-8)
    elements = (
        Element(CAPACITOR, 0, 1, draw(capacitance)),
        Element(INDUCTOR, 1, 2, draw(inductance)),
        Element(INDUCTOR_TO_GROUND, 0, GROUND, draw(inductance)),
        Element(CAPACITOR_TO_GROUND, 1, GROUND, draw(capacitance)),
        Element(CAPACITOR_TO_GROUND, 2, GROUND, draw(capacitance)),
        Element(INDUCTOR_TO_GROUND, 2, GROUND, draw(inductance)),
    )
    omega = draw(st.floats(min_value=1e8, max_value=1e11))
    return CircuitGraph(n_nodes=3, elements=elements), omega


# =============================================================================
# NODE SOLVES
# =============================================================================


def test_zero_drive_gives_zero_voltages():
    graph = _chain(1, 160.0)
    J = admittance(graph, 1e10)
    np.testing.assert_array_equal(solve_currents(J, np.zeros(graph.n_nodes)).voltages, 0)


@given(network=three_node_networks())
@settings(max_examples=50, deadline=None)
def test_three_node_solve_residual(network):
    graph, omega = network
    currents = np.array([1.0, -0.5j, 0.25])
    solution = solve_currents(admittance(graph, omega), currents)
    assert solution.residual < RESIDUAL_BOUND


def test_lc_node_resonates():
    capacitance, inductance = 2e-12, 1e-9
    graph = CircuitGraph(n_nodes=1, elements=(Element(CAPACITOR_TO_GROUND, 0, GROUND, capacitance),
                                             Element(INDUCTOR_TO_GROUND, 0, GROUND, inductance)))
    omega0 = 1 / np.sqrt(inductance * capacitance)
    drive = DriveSpec(node=0, amplitude=1.0, source="current")
    on = solve_node_voltages(admittance(graph, omega0), drive)
    off = solve_node_voltages(admittance(graph, 1.2 * omega0), drive)
    assert on.resonant or abs(on.voltages[0]) > 1e3 * abs(off.voltages[0])


def test_voltage_drive_pins_node():
    graph = _chain(1, 4.0)
    drive = DriveSpec(node=graph.boundary_nodes[-1], amplitude=0.1)
    solution = solve_node_voltages(admittance(graph, 2 * np.pi * 1.4e9), drive)
    assert solution.voltages[drive.node] == 0.1
    assert solution.residual < RESIDUAL_BOUND


def test_drive_validation():
    with pytest.raises(MeasureError, match="params.amplitude"):
        DriveSpec(node=0, amplitude=0.0)
    with pytest.raises(MeasureError, match="crosstalk_fraction"):
        DriveSpec(node=0, crosstalk_fraction=1.5)


# =============================================================================
# SWEEPS AND GRIDS
# =============================================================================


def test_empty_grid_rejected():
    graph = _chain(1, 160.0)
    with pytest.raises(MeasureError, match="non-empty"):
        voltage_sweep(graph, default_drive(graph), graph.boundary_nodes[0], [])


def test_descending_grid_rejected():
    graph = _chain(1, 160.0)
    with pytest.raises(MeasureError, match="ascending"):
        impedance_scan(graph, 0, [2e9, 1e9])


def test_lc_impedance_peak_is_exact():
    capacitance, inductance = 2e-12, 1e-9
    graph = CircuitGraph(n_nodes=1, elements=(Element(CAPACITOR_TO_GROUND, 0, GROUND, capacitance),
                                             Element(INDUCTOR_TO_GROUND, 0, GROUND, inductance)))
    f_res = 1 / (2 * np.pi * np.sqrt(inductance * capacitance))
    grid = f_res + COARSE_STEP * np.arange(-50, 51)
    assert impedance_scan(graph, 0, grid).extracted_f == grid[50]


def test_notch_minimum_voltage():
    capacitance, inductance = 1e-12, 1e-9
    elements = (
        Element(CAPACITOR, 0, 1, capacitance),
        Element(INDUCTOR, 0, 1, inductance),
        Element(CAPACITOR_TO_GROUND, 1, GROUND, 1e-12),
        Element(CAPACITOR_TO_GROUND, 0, GROUND, 1e-12),
    )
    graph = CircuitGraph(n_nodes=2, elements=elements)
    notch = 1 / (2 * np.pi * np.sqrt(inductance * capacitance))
    grid = np.arange(4.5e9, 5.5e9, COARSE_STEP) + 0.37 * COARSE_STEP
    sweep = voltage_sweep(graph, DriveSpec(node=0, amplitude=1.0), 1, grid, noise_floor_db=-400.0)
    assert sweep.extraction_method == MIN_VOLTAGE
    assert abs(sweep.extracted_f - notch) <= COARSE_STEP


def test_resonance_peak(single_unit_params):
    graph = synthesize_circuit(None, single_unit_params)
    f0 = resonance_frequency(single_unit_params)
    _, fine = two_stage_grid(lambda grid: impedance_scan(graph, graph.boundary_nodes[-1], grid), f0)
    np.testing.assert_allclose(fine.extracted_f, 1.59155e9, rtol=1e-3)
    assert abs(fine.extracted_f - f0) <= FINE_STEP


def test_coarse_grid_contains_center():
    grid = coarse_grid(1.5e9)
    assert grid.size == 11
    assert 1.5e9 in grid


def test_refine_grid_spans_one_coarse_step():
    fine = refine_grid(coarse_grid(1.5e9), 5)
    assert fine.size == 2001
    np.testing.assert_allclose([fine[0], fine[-1]], [1.5e9 - COARSE_STEP, 1.5e9 + COARSE_STEP])


def test_two_stage_grid_widens_to_find_peak():
    coarse, fine = two_stage_grid(_lorentzian_scan(1.5e9 + 8.2e6), 1.5e9)
    assert coarse.grid[-1] > 1.5e9 + 8.2e6
    assert abs(fine.extracted_f - (1.5e9 + 8.2e6)) <= FINE_STEP / 2


def test_two_stage_grid_gives_up_on_edge_extremum():
    with pytest.raises(NumericalError, match="grid edge"):
        two_stage_grid(_lorentzian_scan(3e9), 1.5e9)


def test_sweep_frame_columns():
    graph = _chain(2, 4.0)
    sweep = voltage_sweep(graph, default_drive(graph), graph.boundary_nodes[0], [1.4e9, 1.5e9])
    frame = sweep.to_frame()
    assert list(frame.columns) == ['freq_hz', 'node_1_db', 'node_2_db', 'node_3_db']
    assert sweep.metadata()['drive_node'] == graph.boundary_nodes[-1]


# =============================================================================
# SKIN PROFILE
# =============================================================================


@pytest.mark.parametrize("units", [1, 2, 3])
def test_profile_drops_one_ratio_per_unit(units):
    params = CircuitParams(c1=5e-12, c2=5e-12 / 4, ground_l=1e-9, units=units)
    graph = synthesize_circuit(None, params)
    profile = profile_at(graph, default_drive(graph), resonance_frequency(params) * (1 + 1e-9))
    assert profile['label'].tolist() == [f"Node {k}" for k in range(1, units + 2)]
    np.testing.assert_allclose(np.diff(profile['voltage_db']), 20 * np.log10(4.0), atol=0.05)


def test_twelve_unit_profile_decays_from_drive():
    params = CircuitParams(c1=5e-12, c2=5e-12 / 160, ground_l=1e-9, units=12)
    graph = synthesize_circuit(None, params)
    profile = profile_at(graph, default_drive(graph), resonance_frequency(params) * (1 + 1e-9), noise_floor_db=-80.0)
    from_drive = profile['voltage_db'].to_numpy()[::-1]
    floor_hit = int(np.argmax(from_drive <= -80.0))
    assert floor_hit > 0
    assert np.all(np.diff(from_drive[:floor_hit + 1]) <= 0)
    assert from_drive[0] - from_drive.min() >= 55.0


def test_off_resonance_profile_decays_slower_than_at_f0():
    params = CircuitParams(c1=5e-12, c2=5e-12 / 160, ground_l=1e-9, units=12)
    graph = synthesize_circuit(None, params)
    drive = default_drive(graph)
    at_f0 = profile_at(graph, drive, resonance_frequency(params) * (1 + 1e-9), noise_floor_db=-80.0)
    at_f1 = profile_at(graph, drive, config.DEFAULT_F1_HZ, noise_floor_db=-80.0)
    drop_f0 = np.ptp(at_f0['voltage_db'].to_numpy())
    drop_f1 = np.ptp(at_f1['voltage_db'].to_numpy())
    # directional decay survives off resonance at a few dB per unit
    assert drop_f1 < drop_f0
    assert 50.0 < drop_f1 < 75.0
    assert drop_f1 / params.units < 20 * np.log10(160) / 4


# =============================================================================
# NOISE-ONSET SURROGATES
# =============================================================================


def test_noise_onset_needs_clipped_region():
    grid = np.arange(1e6, 2e6, 1e3)
    with pytest.raises(MeasureError, match="direct-minimum"):
        noise_onset_estimate(_synthetic_sweep(grid, np.full(grid.size, -40.0)))


def test_noise_onset_is_first_clipped_frequency():
    grid = np.arange(1e6, 2e6, 1e3)
    trace = -100.0 + np.abs(grid - 1.5e6) * 1e-3
    np.testing.assert_allclose(noise_onset_estimate(_synthetic_sweep(grid, trace)), 1.48e6, atol=1e3)


def test_noise_onset_skips_region_clipped_from_grid_start():
    grid = np.arange(1e6, 2e6, 1e3)
    trace = np.where((grid >= 1.1e6) & (grid < 1.6e6), -40.0, -90.0)
    np.testing.assert_allclose(noise_onset_estimate(_synthetic_sweep(grid, trace)), 1.6e6)


def test_noise_onset_rejects_fully_clipped_trace():
    grid = np.arange(1e6, 2e6, 1e3)
    with pytest.raises(MeasureError, match="direct-minimum"):
        noise_onset_estimate(_synthetic_sweep(grid, np.full(grid.size, -120.0)))


def test_fully_clipped_node_one_sweep_agrees_with_impedance_peak():
    params = CircuitParams(c1=5e-12, c2=5e-12 / 160, ground_l=1e-9, units=12)
    graph = synthesize_circuit(None, params)
    drive = default_drive(graph)
    f0 = resonance_frequency(params)
    grid = coarse_grid(f0) + 0.37 * COARSE_STEP
    sweep = voltage_sweep(graph, drive, graph.boundary_nodes[0], grid)
    peak = impedance_scan(graph, drive.node, grid)
    assert sweep.clipped().all()
    assert sweep.extraction_method == MIN_VOLTAGE
    assert abs(sweep.extracted_f - peak.extracted_f) <= COARSE_STEP
    assert abs(sweep.extracted_f - f0) <= COARSE_STEP


def test_noise_onset_shift_error_below_one_percent():
    grid = np.arange(1e6, 1.2e6, 10.0)
    clean = _synthetic_sweep(grid, -100.0 + np.abs(grid - 1.1e6) * 1e-3)
    moved = _synthetic_sweep(grid, -100.0 + np.abs(grid - 1.105e6) * 1e-3)
    assert abs(noise_onset_shift(clean, moved) - 5e3) / 5e3 < 0.01


def test_noise_onset_shift_needs_shared_grid():
    clean = _synthetic_sweep(np.arange(1e6, 2e6, 1e3), np.full(1000, -90.0))
    moved = _synthetic_sweep(np.arange(1e6, 2e6, 2e3), np.full(500, -90.0))
    with pytest.raises(MeasureError, match="grid"):
        noise_onset_shift(clean, moved)


# =============================================================================
# EIGENFREQUENCY SHIFTS
# =============================================================================


def test_zero_measurand_gives_zero_shift(sensing_circuit):
    assert eigenfrequency_shift(sensing_circuit, 0.0).delta_f == 0.0
    assert eigenfrequency_shift(sensing_circuit, 0.0, method=SPECTRAL).delta_f == 0.0


def test_negative_measurand_rejected(sensing_circuit):
    with pytest.raises(MeasureError, match="c_gamma"):
        eigenfrequency_shift(sensing_circuit, -1e-18)


@pytest.mark.parametrize("c_gamma,expected", [(1e-17, 1.33e5), (1e-18, 1.33e4)])
def test_scan_shift_matches_spectral(sensing_circuit, c_gamma, expected):
    spectral = eigenfrequency_shift(sensing_circuit, c_gamma, method=SPECTRAL)
    scanned = eigenfrequency_shift(sensing_circuit, c_gamma)
    np.testing.assert_allclose(spectral.delta_f, expected, rtol=0.02)
    assert abs(scanned.delta_f - spectral.delta_f) <= 2 * FINE_STEP
    assert abs(scanned.f0 - resonance_frequency(sensing_circuit.params)) <= FINE_STEP


def test_spectral_shift_follows_first_order_law():
    params = CircuitParams(c1=5e-12, c2=5e-12 / 300, ground_l=1e-9, units=6)
    graph = synthesize_circuit(None, params)
    shift = eigenfrequency_shift(graph, 1e-35, method=SPECTRAL)
    # corner to corner on 13 x 3 cells: chi = (6, 1), overlap 7 * 2
    expected = resonance_frequency(params) * 1e-35 * 300.0 ** 7 / 14 / (2 * params.c_ground_total)
    np.testing.assert_allclose(shift.delta_f, expected, rtol=1e-2)


def test_longer_chain_amplifies_extreme_measurand():
    shifts = {}
    for units in (6, 12):
        params = CircuitParams(c1=5e-12, c2=5e-12 / 300, ground_l=1e-9, units=units)
        shifts[units] = eigenfrequency_shift(synthesize_circuit(None, params), 1e-35, method=SPECTRAL).delta_f
    assert shifts[6] > 0
    assert np.isfinite(shifts[12])
    assert shifts[12] / shifts[6] >= 10
    assert shifts[12] > 1e3


def _corner_first_order_shift(units, ratio, c_gamma):
    params = CircuitParams(c1=5e-12, c2=5e-12 / ratio, ground_l=1e-9, units=units)
    # corner (1, 1) to (2U + 1, 3): amplitudes 1 and ratio^(U + 1), overlap (U + 1) * 2
    growth = float(ratio) ** (units + 1)
    offset = c_gamma * (growth + 1.0 / growth - 2.0) / (2 * (units + 1))
    return params, resonance_frequency(params) * offset / (2 * params.c_ground_total)


@pytest.mark.parametrize("units", [1, 3])
def test_unresolvable_shift_keeps_first_order_value(units):
    params, expected = _corner_first_order_shift(units, 300, 1e-35)
    shift = eigenfrequency_shift(synthesize_circuit(None, params), 1e-35, method=SPECTRAL)
    assert shift.delta_f > 0
    np.testing.assert_allclose(shift.delta_f, expected, rtol=1e-6)


# =============================================================================
# CROSSTALK
# =============================================================================


def test_crosstalk_free_trials_do_not_deviate(sensing_circuit):
    drive = default_drive(sensing_circuit, crosstalk_fraction=0.0)
    report = crosstalk_trial(sensing_circuit, drive, trials=2, c_gamma=1e-17)
    assert report.max_deviation == 0.0


def test_half_crosstalk_keeps_shift_within_five_percent(sensing_circuit):
    drive = default_drive(sensing_circuit, crosstalk_fraction=0.5, crosstalk_seed=7)
    report = crosstalk_trial(sensing_circuit, drive, trials=20, c_gamma=1e-17, threads=2)
    assert len(report.trials) == 20
    assert report.max_deviation < 0.05
    assert report.clean_delta_f > 10 * FINE_STEP
    # the skin profile survives at f0 and is scrambled at f1
    assert report.trials['profile_corr_f0'].min() > 0.9
    assert report.trials['profile_corr_f1'].min() < 0.5


def test_band_stop_blocks_tones_at_f0_only(sensing_circuit):
    drive = default_drive(sensing_circuit, crosstalk_fraction=0.5, crosstalk_seed=7)
    tones = crosstalk_injections(sensing_circuit, drive, np.random.default_rng(0))
    f0 = resonance_frequency(sensing_circuit.params)
    assert tones.band_stop(np.array([f0]))[0] == 0.0
    assert not np.any(tones.band_stop(f0 + tones.offsets))
    assert not np.any(tones.currents(f0))
    assert tones.band_stop(np.array([1.27e9]))[0] > 0.999
    assert 0 < np.abs(tones.currents(1.27e9)).sum() <= 0.5


def test_tones_disturb_scan_but_not_its_peak(sensing_circuit):
    drive = default_drive(sensing_circuit, crosstalk_fraction=0.5, crosstalk_seed=7)
    tones = crosstalk_injections(sensing_circuit, drive, np.random.default_rng(1))
    grid = coarse_grid(resonance_frequency(sensing_circuit.params))
    clean = impedance_scan(sensing_circuit, drive.node, grid)
    noisy = impedance_scan(sensing_circuit, drive.node, grid, injections=tones)
    assert not np.allclose(noisy.values, clean.values, rtol=1e-9, atol=0)
    assert noisy.extracted_f == clean.extracted_f


def test_zero_crosstalk_draws_no_tones(sensing_circuit):
    tones = crosstalk_injections(sensing_circuit, default_drive(sensing_circuit), np.random.default_rng(0))
    assert tones.nodes.size == 0
    assert not np.any(tones.currents(1.27e9))


def test_crosstalk_report_is_worker_independent(sensing_circuit):
    drive = default_drive(sensing_circuit, crosstalk_fraction=0.5, crosstalk_seed=3)
    serial = crosstalk_trial(sensing_circuit, drive, trials=3, c_gamma=1e-17)
    threaded = crosstalk_trial(sensing_circuit, drive, trials=3, c_gamma=1e-17, threads=3)
    pd.testing.assert_frame_equal(serial.trials, threaded.trials)


# =============================================================================
# CIRCUIT MEASUREMENT RANGE
# =============================================================================


def test_circuit_measurement_range(single_unit_params):
    result = circuit_measurement_range(single_unit_params)
    threshold = 2 * single_unit_params.c_ground_total * 1e3 / resonance_frequency(single_unit_params)
    np.testing.assert_allclose(result.lower, threshold / (160.0 ** 2 / 4), rtol=1e-9)
    assert result.lower < result.upper
