"""
Measurement Module
Frequency-domain measurement engines on a synthesized circuit:
- node-voltage solves for voltage or current drives
- voltage sweeps (minimum-voltage method) and impedance scans (peak method)
- coarse-then-fine grids around an extremum, with widen-and-retry
- eigenfrequency shifts by scan, by noise-onset surrogate or from the spectrum
- seeded crosstalk trials and boundary-node profiles
"""
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy import linalg

import config
from backend.circuit import (AdmittanceMatrix, CircuitGraph, CircuitParams, admittance_from_stamps,
                             capacitance_matrix, circuit_lattice, default_measurand_nodes,
                             inverse_inductance_matrix, resonance_frequency, spectral_frequency_shift,
                             with_measurand)
from exceptions import MeasureError, NumericalError
from physics.sensing import MeasurementRange, measurement_range

logger = logging.getLogger(__name__)

VOLTAGE = "voltage"
IMPEDANCE = "impedance"

MIN_VOLTAGE = "min_voltage"
PEAK_IMPEDANCE = "peak_impedance"
NOISE_ONSET = "noise_onset"
SPECTRAL = "spectral"
SHIFT_METHODS = (PEAK_IMPEDANCE, MIN_VOLTAGE, NOISE_ONSET, SPECTRAL)


@dataclass(frozen=True)
class DriveSpec:
    """Drive at one node. A voltage drive pins the node; a current drive injects into it."""
    node: int
    amplitude: float = config.DEFAULT_DRIVE_AMPLITUDE
    crosstalk_fraction: float = 0.0
    crosstalk_seed: int = 0
    source: str = VOLTAGE

    def __post_init__(self):
        if not np.isfinite(self.amplitude) or self.amplitude <= 0:
            raise MeasureError(f"amplitude must be > 0, got {self.amplitude}", path="params.amplitude")
        if not 0 <= self.crosstalk_fraction <= 1:
            raise MeasureError(f"crosstalk_fraction must be in [0, 1], got {self.crosstalk_fraction}",
                               path="params.crosstalk_fraction")
        if self.source not in (VOLTAGE, "current"):
            raise MeasureError(f"source must be 'voltage' or 'current', got {self.source!r}")


@dataclass
class NodeSolution:
    voltages: np.ndarray
    resonant: bool = False
    residual: float = 0.0


@dataclass
class SweepResult:
    """Magnitude traces on a frequency grid: dB re. drive amplitude, or ohms for impedance."""
    grid: np.ndarray
    values: np.ndarray
    nodes: List[int]
    mode: str
    noise_floor_db: Optional[float]
    extracted_f: float
    extraction_method: str
    probe: int
    raw_values: Optional[np.ndarray] = None
    labels: List[str] = field(default_factory=list)
    meta: Dict = field(default_factory=dict)

    def trace(self, node: Optional[int] = None) -> np.ndarray:
        node = self.probe if node is None else node
        try:
            column = self.nodes.index(node)
        except ValueError:
            raise MeasureError(f"node {node} was not recorded in this sweep") from None
        return self.values[:, column]

    def clipped(self, node: Optional[int] = None) -> np.ndarray:
        if self.noise_floor_db is None:
            return np.zeros(len(self.grid), dtype=bool)
        return self.trace(node) <= self.noise_floor_db

    def to_frame(self) -> pd.DataFrame:
        unit = "db" if self.mode == VOLTAGE else "ohm"
        names = self.labels or [f"Node {node + 1}" for node in self.nodes]
        columns = {'freq_hz': self.grid}
        for column, name in enumerate(names):
            columns[f"node_{name.split()[-1]}_{unit}"] = self.values[:, column]
        return pd.DataFrame(columns)

    def metadata(self) -> Dict:
        return {
            **self.meta,
            'mode': self.mode,
            'probe': self.probe,
            'noise_floor_db': self.noise_floor_db,
            'extracted_f': self.extracted_f,
            'extraction_method': self.extraction_method,
        }


@dataclass
class ShiftResult:
    delta_f: float
    f0: float
    f0_shifted: float
    method: str
    c_gamma: float
    sweeps: Dict[str, SweepResult] = field(default_factory=dict)


@dataclass
class RobustnessReport:
    clean_f0: float
    clean_delta_f: float
    trials: pd.DataFrame
    max_deviation: float
    crosstalk_fraction: float
    seed: int

    def to_dict(self) -> Dict:
        return {
            'clean_f0': self.clean_f0,
            'clean_delta_f': self.clean_delta_f,
            'max_deviation': self.max_deviation,
            'crosstalk_fraction': self.crosstalk_fraction,
            'seed': self.seed,
            'trials': self.trials.to_dict(orient='records'),
        }


def _check_grid(grid: Sequence[float]) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise MeasureError("frequency grid must be a non-empty vector", path="params.grid")
    if np.any(grid <= 0) or not np.all(np.isfinite(grid)):
        raise MeasureError("frequencies must be finite and > 0", path="params.grid")
    if np.any(np.diff(grid) <= 0):
        raise MeasureError("frequency grid must be strictly ascending", path="params.grid")
    return grid


def _solve(matrix: np.ndarray, rhs: np.ndarray) -> Tuple[np.ndarray, bool]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", linalg.LinAlgWarning)
        try:
            solution = linalg.solve(matrix, rhs, check_finite=False)
            resonant = not np.all(np.isfinite(solution))
        except (linalg.LinAlgError, ValueError):
            solution = np.linalg.lstsq(matrix, rhs, rcond=None)[0]
            resonant = True
    return solution, resonant


def _matrix_of(J) -> np.ndarray:
    return J.entries if isinstance(J, AdmittanceMatrix) else np.asarray(J)


def solve_currents(J, currents: np.ndarray) -> NodeSolution:
    """Solve J V = I for injected node currents I."""
    matrix = _matrix_of(J)
    currents = np.asarray(currents, dtype=complex)
    if not np.any(currents):
        return NodeSolution(voltages=np.zeros(matrix.shape[0], dtype=complex))
    voltages, resonant = _solve(matrix, currents)
    residual = float(np.linalg.norm(matrix @ voltages - currents) / np.linalg.norm(currents))
    return NodeSolution(voltages=voltages, resonant=resonant, residual=residual)


def solve_node_voltages(J, drive: DriveSpec, injections: Optional[np.ndarray] = None) -> NodeSolution:
    """Node phasors under `drive`, plus optional extra injected currents.

    A voltage drive pins V_d = amplitude and solves J_rr v_r = -J_rd V_d + I_r on the
    remaining nodes. A singular system is reported as resonant, not raised.
    """
    matrix = _matrix_of(J)
    n_nodes = matrix.shape[0]
    if not 0 <= drive.node < n_nodes:
        raise MeasureError(f"drive node {drive.node} outside 0..{n_nodes - 1}", path="params.drive")
    extra = np.zeros(n_nodes, dtype=complex) if injections is None else np.asarray(injections, dtype=complex)

    if drive.source != VOLTAGE:
        currents = extra.copy()
        currents[drive.node] += drive.amplitude
        return solve_currents(matrix, currents)

    rest = np.delete(np.arange(n_nodes), drive.node)
    voltages = np.zeros(n_nodes, dtype=complex)
    voltages[drive.node] = drive.amplitude
    if rest.size == 0:
        return NodeSolution(voltages=voltages)
    reduced = matrix[np.ix_(rest, rest)]
    rhs = -matrix[rest, drive.node] * drive.amplitude + extra[rest]
    solution, resonant = _solve(reduced, rhs)
    voltages[rest] = solution
    scale = max(np.linalg.norm(rhs), np.finfo(float).tiny)
    residual = float(np.linalg.norm(reduced @ solution - rhs) / scale)
    return NodeSolution(voltages=voltages, resonant=resonant, residual=residual)


def _to_db(magnitudes: np.ndarray, amplitude: float) -> np.ndarray:
    with np.errstate(divide='ignore'):
        return 20.0 * np.log10(np.abs(magnitudes) / amplitude)


def _map_grid(func: Callable[[float], np.ndarray], grid: np.ndarray, threads: int) -> np.ndarray:
    if threads > 1:
        rows = Parallel(n_jobs=threads, prefer="threads")(delayed(func)(f) for f in grid)
    else:
        rows = [func(f) for f in grid]
    return np.vstack(rows)


def _recorded_nodes(graph: CircuitGraph, probe: int, nodes: Optional[Sequence[int]]) -> List[int]:
    if nodes is None:
        nodes = graph.boundary_nodes or list(range(graph.n_nodes))
    nodes = [int(node) for node in nodes]
    if probe not in nodes:
        nodes.append(probe)
    return nodes


def _reference_capacitance(graph: CircuitGraph, capacitance: np.ndarray) -> float:
    if graph.params is not None:
        return graph.params.c_ground_total
    return float(np.max(np.abs(np.diag(capacitance))))


def _labels_for(graph: CircuitGraph, nodes: Sequence[int]) -> List[str]:
    by_index = {index: label for label, index in graph.labels.items()}
    return [by_index.get(node, f"Node {node + 1}") for node in nodes]


@dataclass(frozen=True)
class CrosstalkTones:
    """Interfering tones, each with a node, phase, amplitude share and frequency offset.

    Tone k sits at f + offset_k for a detector tuned to f; offsets stay inside the
    detector bandwidth, anything further out is rejected and not modelled. Tones reach
    the circuit through the LC band-stop centred on `stop_center`, which blocks them
    completely within `stop_width` and passes 1 - (stop_width / detuning)^2 outside.
    """
    n_nodes: int
    fraction: float
    nodes: np.ndarray
    phases: np.ndarray
    shares: np.ndarray
    offsets: np.ndarray
    stop_center: float
    stop_width: float = config.CROSSTALK_STOP_WIDTH_HZ

    def band_stop(self, frequencies: np.ndarray) -> np.ndarray:
        detuning = np.abs(np.asarray(frequencies, dtype=float) - self.stop_center)
        return 1.0 - (self.stop_width / np.maximum(detuning, self.stop_width)) ** 2

    def currents(self, frequency: float, scale: float = 1.0) -> np.ndarray:
        """Unit-scaled node currents seen by a detector at `frequency`."""
        currents = np.zeros(self.n_nodes, dtype=complex)
        if self.fraction == 0 or self.nodes.size == 0:
            return currents
        weights = self.band_stop(frequency + self.offsets)
        np.add.at(currents, self.nodes, self.fraction * scale * self.shares * weights * np.exp(1j * self.phases))
        return currents


def crosstalk_injections(graph: CircuitGraph, drive: DriveSpec, rng: np.random.Generator,
                         stop_center: Optional[float] = None, tones: int = config.CROSSTALK_TONES) -> CrosstalkTones:
    """Random-phase, random-frequency tones at random nodes, total amplitude fraction of the drive."""
    stop_center = _scan_center(graph, stop_center)
    if drive.crosstalk_fraction == 0:
        empty = np.zeros(0)
        return CrosstalkTones(graph.n_nodes, 0.0, empty.astype(int), empty, empty, empty, stop_center)
    nodes = rng.integers(0, graph.n_nodes, size=tones)
    phases = rng.uniform(0.0, 2 * np.pi, size=tones)
    shares = rng.dirichlet(np.ones(tones))
    half_band = config.CROSSTALK_BANDWIDTH_HZ / 2
    offsets = rng.uniform(-half_band, half_band, size=tones)
    return CrosstalkTones(graph.n_nodes, drive.crosstalk_fraction, nodes, phases, shares, offsets, stop_center)


def _onset_index(clipped: np.ndarray) -> Optional[int]:
    """First clipped point entered from an unclipped one."""
    onsets = np.flatnonzero(clipped[1:] & ~clipped[:-1]) + 1
    return int(onsets[0]) if onsets.size else None


def voltage_sweep(graph: CircuitGraph, drive: DriveSpec, probe: int, grid: Sequence[float],
                  noise_floor_db: float = config.DEFAULT_NOISE_FLOOR_DB,
                  nodes: Optional[Sequence[int]] = None, injections: Optional[CrosstalkTones] = None,
                  threads: int = 1) -> SweepResult:
    """Node voltages over the grid in dB re. the drive amplitude, clipped at the noise floor.

    Crosstalk tones are unit-scaled currents; each frequency multiplies them by w C_tot V_drive.
    """
    grid = _check_grid(grid)
    if probe == drive.node:
        logger.warning("Probe coincides with the drive node; the trace is flat")
    recorded = _recorded_nodes(graph, probe, nodes)
    capacitance, inverse_inductance = capacitance_matrix(graph), inverse_inductance_matrix(graph)
    reference = _reference_capacitance(graph, capacitance)

    def point(frequency: float) -> np.ndarray:
        omega = 2 * np.pi * frequency
        J = admittance_from_stamps(capacitance, inverse_inductance, omega)
        extra = None if injections is None else injections.currents(frequency, omega * reference * drive.amplitude)
        return solve_node_voltages(J, drive, extra).voltages[recorded]

    raw = _to_db(_map_grid(point, grid, threads), drive.amplitude)
    values = np.maximum(raw, noise_floor_db)

    column = recorded.index(probe)
    clipped = values[:, column] <= noise_floor_db
    onset = _onset_index(clipped)
    if onset is not None:
        method = NOISE_ONSET
        extracted = float(grid[onset])
    else:
        method = MIN_VOLTAGE
        extracted = float(grid[np.argmin(raw[:, column])])
        if clipped.all():
            logger.warning(f"Probe trace below the {noise_floor_db} dB floor over the whole grid; "
                           f"minimum taken from unclipped levels")
    logger.info(f"Voltage sweep over {grid.size} points: f={extracted:.9g} Hz ({method})")
    return SweepResult(grid=grid, values=values, nodes=recorded, mode=VOLTAGE, noise_floor_db=noise_floor_db,
                       extracted_f=extracted, extraction_method=method, probe=probe, raw_values=raw,
                       labels=_labels_for(graph, recorded),
                       meta={'drive_node': drive.node, 'amplitude': drive.amplitude})


def impedance_scan(graph: CircuitGraph, node: int, grid: Sequence[float],
                   injections: Optional[CrosstalkTones] = None, threads: int = 1) -> SweepResult:
    """|V_node| for a unit current into `node`, capped at IMPEDANCE_CAP_OHM; peak = eigenfrequency."""
    grid = _check_grid(grid)
    if not 0 <= node < graph.n_nodes:
        raise MeasureError(f"node {node} outside 0..{graph.n_nodes - 1}", path="params.node")
    capacitance, inverse_inductance = capacitance_matrix(graph), inverse_inductance_matrix(graph)
    unit = np.zeros(graph.n_nodes, dtype=complex)
    unit[node] = 1.0

    def point(frequency: float) -> np.ndarray:
        J = admittance_from_stamps(capacitance, inverse_inductance, 2 * np.pi * frequency)
        currents = unit if injections is None else unit + injections.currents(frequency)
        solution = solve_currents(J, currents)
        magnitude = abs(solution.voltages[node])
        if solution.resonant or not np.isfinite(magnitude):
            magnitude = config.IMPEDANCE_CAP_OHM
        return np.array([min(magnitude, config.IMPEDANCE_CAP_OHM)])

    values = _map_grid(point, grid, threads)
    extracted = float(grid[np.argmax(values[:, 0])])
    logger.debug(f"Impedance scan at node {node}: peak {values[:, 0].max():.4g} ohm at {extracted:.9g} Hz")
    return SweepResult(grid=grid, values=values, nodes=[node], mode=IMPEDANCE, noise_floor_db=None,
                       extracted_f=extracted, extraction_method=PEAK_IMPEDANCE, probe=node,
                       labels=_labels_for(graph, [node]))


def coarse_grid(center: float, half_width: float = config.DEFAULT_SCAN_HALF_WIDTH_HZ,
                step: float = config.COARSE_STEP_HZ) -> np.ndarray:
    """Uniform grid containing `center`, spanning center +- half_width."""
    count = int(np.floor(half_width / step + 1e-9))
    grid = center + step * np.arange(-count, count + 1)
    return grid[grid > 0]


def refine_grid(grid: np.ndarray, index: int, fine_step: float = config.FINE_STEP_HZ) -> np.ndarray:
    """Fine grid spanning one coarse step either side of grid[index]."""
    step = grid[1] - grid[0] if grid.size > 1 else fine_step
    count = int(np.floor(step / fine_step + 1e-9))
    fine = grid[index] + fine_step * np.arange(-count, count + 1)
    return fine[fine > 0]


def two_stage_grid(scan: Callable[[np.ndarray], SweepResult], center: float,
                   half_width: float = config.DEFAULT_SCAN_HALF_WIDTH_HZ,
                   coarse_step: float = config.COARSE_STEP_HZ, fine_step: float = config.FINE_STEP_HZ,
                   retries: int = config.GRID_RETRIES) -> Tuple[SweepResult, SweepResult]:
    """Coarse scan, widened while the extremum sits on the grid edge, then a fine scan around it."""
    for attempt in range(retries + 1):
        grid = coarse_grid(center, half_width, coarse_step)
        coarse = scan(grid)
        index = int(np.searchsorted(grid, coarse.extracted_f))
        if 0 < index < grid.size - 1:
            break
        logger.warning(f"Extremum at the grid edge ({coarse.extracted_f:.6g} Hz), widening to "
                       f"+-{2 * half_width:.3g} Hz")
        half_width *= 2
    else:
        raise NumericalError(f"extremum stays on the grid edge after {retries} widenings around {center:.6g} Hz")

    fine = scan(refine_grid(grid, index, fine_step))
    return coarse, fine


def noise_onset_estimate(sweep: SweepResult, node: Optional[int] = None) -> float:
    """Lowest grid frequency at which the trace falls onto the noise floor."""
    onset = _onset_index(sweep.clipped(node))
    if onset is None:
        raise MeasureError("trace never falls onto the noise floor; use the direct-minimum method")
    return float(sweep.grid[onset])


def noise_onset_shift(sweep: SweepResult, sweep_shifted: SweepResult, node: Optional[int] = None) -> float:
    """|f0 - f0'| from noise-onset surrogates of two sweeps on a shared grid and floor."""
    if sweep.noise_floor_db != sweep_shifted.noise_floor_db:
        raise MeasureError("sweeps must share the noise floor")
    if sweep.grid.shape != sweep_shifted.grid.shape or not np.array_equal(sweep.grid, sweep_shifted.grid):
        raise MeasureError("sweeps must share the frequency grid")
    return abs(noise_onset_estimate(sweep_shifted, node) - noise_onset_estimate(sweep, node))


def default_drive(graph: CircuitGraph, amplitude: float = config.DEFAULT_DRIVE_AMPLITUDE,
                  **kwargs) -> DriveSpec:
    """Drive at the last boundary node, which is the far corner of the chain."""
    if not graph.boundary_nodes:
        raise MeasureError("graph has no boundary nodes to drive")
    return DriveSpec(node=graph.boundary_nodes[-1], amplitude=amplitude, **kwargs)


def _scan_center(graph: CircuitGraph, center: Optional[float]) -> float:
    if center is not None:
        return float(center)
    if graph.params is None:
        raise MeasureError("scan center is required for circuits without parameters", path="params.center")
    return resonance_frequency(graph.params)


def _locate(graph: CircuitGraph, method: str, center: float, half_width: float, node: int,
            drive: Optional[DriveSpec], injections: Optional[CrosstalkTones],
            threads: int) -> Tuple[float, SweepResult, SweepResult]:
    if method == PEAK_IMPEDANCE:
        def scan(grid):
            return impedance_scan(graph, node, grid, injections, threads)
    else:
        drive = drive or default_drive(graph)

        def scan(grid):
            return voltage_sweep(graph, drive, node, grid, injections=injections, threads=threads)
    coarse, fine = two_stage_grid(scan, center, half_width)
    return fine.extracted_f, coarse, fine


def eigenfrequency_shift(graph: CircuitGraph, c_gamma: float, position: Optional[Tuple[int, int]] = None,
                         method: str = PEAK_IMPEDANCE, node: Optional[int] = None,
                         drive: Optional[DriveSpec] = None, center: Optional[float] = None,
                         half_width: float = config.DEFAULT_SCAN_HALF_WIDTH_HZ,
                         injections: Optional[CrosstalkTones] = None, threads: int = 1) -> ShiftResult:
    """Delta f = |f0 - f0'| with and without a measurand c_gamma between `position` nodes.

    Scan methods use the same coarse grid for both runs; `spectral` tracks the
    capacitance-matrix eigenvalue and resolves shifts below the fine grid step.
    """
    if not np.isfinite(c_gamma) or c_gamma < 0:
        raise MeasureError(f"c_gamma must be finite and >= 0, got {c_gamma}", path="params.c_gamma")
    if method not in SHIFT_METHODS:
        raise MeasureError(f"unknown shift method {method!r}, expected one of {SHIFT_METHODS}", path="params.method")
    node_a, node_b = position if position is not None else default_measurand_nodes(graph)
    shifted = with_measurand(graph, c_gamma, node_a, node_b)

    if method == SPECTRAL:
        f0, f_shifted, delta_f = spectral_frequency_shift(graph, shifted)
        result = ShiftResult(delta_f, f0, f_shifted, method, float(c_gamma))
        logger.info(f"Spectral shift for c_gamma={c_gamma:.3g} F: {result.delta_f:.6g} Hz")
        return result

    center = _scan_center(graph, center)
    if node is None:
        if method == PEAK_IMPEDANCE:
            node = drive.node if drive is not None else default_drive(graph).node
        else:
            node = graph.boundary_nodes[0]
    scan_method = PEAK_IMPEDANCE if method == PEAK_IMPEDANCE else MIN_VOLTAGE
    f0, coarse, fine = _locate(graph, scan_method, center, half_width, node, drive, injections, threads)
    f_shifted, coarse_shifted, fine_shifted = _locate(shifted, scan_method, center, half_width, node, drive,
                                                      injections, threads)
    sweeps = {'clean_coarse': coarse, 'clean_fine': fine, 'shifted_coarse': coarse_shifted,
              'shifted_fine': fine_shifted}

    if method == NOISE_ONSET:
        # surrogates need a shared grid: scan both on the union of the coarse windows at the fine step
        low = min(coarse.grid[0], coarse_shifted.grid[0])
        high = max(coarse.grid[-1], coarse_shifted.grid[-1])
        shared = np.arange(low, high + 0.5 * config.FINE_STEP_HZ, config.FINE_STEP_HZ)
        drive = drive or default_drive(graph)
        clean = voltage_sweep(graph, drive, node, shared, injections=injections, threads=threads)
        moved = voltage_sweep(shifted, drive, node, shared, injections=injections, threads=threads)
        sweeps.update({'clean_shared': clean, 'shifted_shared': moved})
        f0, f_shifted = noise_onset_estimate(clean), noise_onset_estimate(moved)

    result = ShiftResult(abs(f_shifted - f0), f0, f_shifted, method, float(c_gamma), sweeps)
    logger.info(f"{method} shift for c_gamma={c_gamma:.3g} F: f0={f0:.9g} Hz, delta_f={result.delta_f:.6g} Hz")
    return result


def profile_at(graph: CircuitGraph, drive: DriveSpec, frequency: float,
               noise_floor_db: Optional[float] = None, injections: Optional[CrosstalkTones] = None) -> pd.DataFrame:
    """Boundary-node voltages in dB re. the drive amplitude, ordered Node 1 .. Node N+1."""
    nodes = graph.boundary_nodes
    if not nodes:
        raise MeasureError("graph has no boundary nodes")
    omega = 2 * np.pi * frequency
    capacitance = capacitance_matrix(graph)
    J = admittance_from_stamps(capacitance, inverse_inductance_matrix(graph), omega)
    extra = None
    if injections is not None:
        extra = injections.currents(frequency, omega * _reference_capacitance(graph, capacitance) * drive.amplitude)
    voltages = solve_node_voltages(J, drive, extra).voltages[nodes]
    levels = _to_db(voltages, drive.amplitude)
    if noise_floor_db is not None:
        levels = np.maximum(levels, noise_floor_db)
    return pd.DataFrame({'label': _labels_for(graph, nodes), 'node': nodes, 'voltage_db': levels})


def _profile_correlation(clean: pd.DataFrame, noisy: pd.DataFrame) -> float:
    a, b = clean['voltage_db'].to_numpy(), noisy['voltage_db'].to_numpy()
    if np.std(a) == 0 or np.std(b) == 0:
        return float('nan')
    return float(np.corrcoef(a, b)[0, 1])


def _trial(graph: CircuitGraph, drive: DriveSpec, trial: int, c_gamma: float, center: float,
           half_width: float, clean_delta: float, clean_profiles: Dict[str, pd.DataFrame],
           f1: float, node: int) -> Dict:
    rng = np.random.default_rng([drive.crosstalk_seed, trial])
    tones = crosstalk_injections(graph, drive, rng, stop_center=center)
    shift = eigenfrequency_shift(graph, c_gamma, method=PEAK_IMPEDANCE, node=node, center=center,
                                 half_width=half_width, injections=tones)
    if clean_delta == 0:
        deviation = 0.0 if shift.delta_f == 0 else float('inf')
    else:
        deviation = abs(shift.delta_f - clean_delta) / clean_delta
    row = {'trial': trial, 'f0': shift.f0, 'delta_f': shift.delta_f, 'deviation': deviation}
    for name, frequency in (('f0', clean_profiles['f0_frequency']), ('f1', f1)):
        noisy = profile_at(graph, drive, frequency, config.DEFAULT_NOISE_FLOOR_DB, tones)
        row[f'profile_corr_{name}'] = _profile_correlation(clean_profiles[name], noisy)
    return row


def crosstalk_trial(graph: CircuitGraph, drive: DriveSpec, trials: int, c_gamma: float,
                    center: Optional[float] = None, half_width: float = config.DEFAULT_SCAN_HALF_WIDTH_HZ,
                    f1: float = config.DEFAULT_F1_HZ, node: Optional[int] = None,
                    threads: int = 1) -> RobustnessReport:
    """Repeat the impedance-scan shift measurement under seeded disordered crosstalk.

    Each trial draws CROSSTALK_TONES tones at random nodes with random phases and
    in-band frequency offsets from default_rng([seed, trial]); their amplitudes sum to
    the crosstalk fraction of the drive before the LC band-stop around `center`.
    Results do not depend on the worker count.
    """
    if trials < 1:
        raise MeasureError(f"trials must be >= 1, got {trials}", path="params.trials")
    center = _scan_center(graph, center)
    node = drive.node if node is None else node

    # Step 1: clean reference
    clean = eigenfrequency_shift(graph, c_gamma, method=PEAK_IMPEDANCE, node=node, center=center,
                                 half_width=half_width)
    clean_profiles = {
        'f0_frequency': clean.f0,
        'f0': profile_at(graph, drive, clean.f0, config.DEFAULT_NOISE_FLOOR_DB),
        'f1': profile_at(graph, drive, f1, config.DEFAULT_NOISE_FLOOR_DB),
    }

    # Step 2: seeded trials
    logger.info(f"Running {trials} crosstalk trial(s) at {drive.crosstalk_fraction:.0%} on {threads} worker(s)")
    rows = Parallel(n_jobs=threads, prefer="threads")(
        delayed(_trial)(graph, drive, trial, c_gamma, center, half_width, clean.delta_f, clean_profiles, f1, node)
        for trial in range(trials)
    )
    frame = pd.DataFrame(rows, columns=['trial', 'f0', 'delta_f', 'deviation', 'profile_corr_f0', 'profile_corr_f1'])
    report = RobustnessReport(clean_f0=clean.f0, clean_delta_f=clean.delta_f, trials=frame,
                              max_deviation=float(frame['deviation'].max()),
                              crosstalk_fraction=drive.crosstalk_fraction, seed=drive.crosstalk_seed)
    logger.info(f"Crosstalk max deviation {report.max_deviation:.3%}")
    return report


def circuit_measurement_range(params: CircuitParams, resolution_hz: float = config.FINE_STEP_HZ,
                              deviation_cap: float = config.DEFAULT_DEVIATION_CAP) -> MeasurementRange:
    """Measurement range in farads of C_gamma for the circuit lattice.

    A shift dmu of the capacitance eigenvalue moves f0 by about f0 dmu / (2 C_tot), so the
    resolution floor maps to a capacitance threshold 2 C_tot resolution / f0.
    """
    if not resolution_hz > 0:
        raise MeasureError("resolution must be > 0", path="params.resolution_hz")
    threshold = 2.0 * params.c_ground_total * resolution_hz / resonance_frequency(params)
    return measurement_range(circuit_lattice(params), threshold=threshold, deviation_cap=deviation_cap)
