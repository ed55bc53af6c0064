"""
Experiment Runner Module
Dispatches a validated scenario to the simulator modules and persists the results:
- spectrum, sensitivity and range on lattices
- skin profiles, sweeps, shifts, crosstalk robustness and calibration on circuits
- CSV tables with a meta line, a JSON report and optional SVG plots
"""
import logging
import os
import platform
import sys
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import joblib
import numpy as np
import pandas as pd
import scipy
import sklearn

sys.path.append(os.path.dirname(os.path.dirname(__file__)))

import config
from backend.circuit import (calibrate_parasitic, circuit_lattice, resonance_frequency, synthesize_circuit,
                             tracked_eigenfrequency, with_calibration, with_parasitic)
from backend.measure import (IMPEDANCE, SPECTRAL, circuit_measurement_range, coarse_grid, crosstalk_trial,
                             default_drive, eigenfrequency_shift, impedance_scan, profile_at, two_stage_grid,
                             voltage_sweep)
from backend.repository import ArtifactRepository
from exceptions import NumericalError
from machine_learning.scaling_fit import fit_sensitivity_law
from physics.lattice import build_obc_hamiltonian, cell_chi, far_corner
from physics.sensing import PerturbationSpec, measurement_range, saturation_onset, sensitivity_curve, \
    shift_first_order
from physics.spectral import auto_eigendecompose
from scenario import Scenario, scenario_hash, serialize_scenario
from views import PLOT_CLASSES

logger = logging.getLogger(__name__)


@dataclass
class Table:
    """One CSV artifact and how to plot it."""
    name: str
    frame: pd.DataFrame
    plot: Optional[Dict] = None
    meta: Dict = field(default_factory=dict)


def _versions() -> Dict[str, str]:
    return {
        'nh_sense': config.APP_VERSION,
        'python': platform.python_version(),
        'numpy': np.__version__,
        'scipy': scipy.__version__,
        'pandas': pd.__version__,
        'scikit_learn': sklearn.__version__,
        'joblib': joblib.__version__,
    }


def _prefactor(chi: np.ndarray) -> float:
    return float(np.prod(1.0 / (np.abs(chi) + 1.0)))


class ExperimentRunner:
    """Runs one scenario and writes its artifacts"""

    def __init__(self, repository: ArtifactRepository, threads: int = config.THREADS):
        self.repo = repository
        self.threads = max(1, int(threads))

    def run(self, scenario: Scenario) -> Dict:
        """
        Run a scenario

        Returns dict with:
        - success: Boolean
        - message: Status message
        - artifacts: Paths written
        - summary: Experiment-specific scalars
        - error: The exception on failure
        """
        started = time.perf_counter()
        try:
            # Step 1: compute
            handler = getattr(self, f"_run_{scenario.experiment}")
            logger.info(f"Running {scenario.experiment} scenario {scenario.name!r} on {self.threads} thread(s)")
            tables, summary = handler(scenario)

            # Step 2: tables and plots
            meta = serialize_scenario(scenario)
            formats = scenario.output.formats
            for table in tables:
                if 'csv' in formats:
                    self.repo.write_csv(f"{table.name}.csv", table.frame, {**meta, **table.meta})
                if 'svg' in formats and table.plot is not None:
                    self.repo.write_svg(f"{table.name}.svg", self._render(table))

            # Step 3: report
            if 'json' in formats:
                self.repo.write_json(config.REPORT_FILE, {
                    'scenario': meta,
                    'input_hash': scenario_hash(scenario),
                    'versions': _versions(),
                    'wall_time_s': time.perf_counter() - started,
                    'threads': self.threads,
                    'summary': summary,
                    'tables': {t.name: len(t.frame) for t in tables},
                })

            return {
                'success': True,
                'message': f"{config.MSG_RUN_SUCCESS}: {scenario.experiment} wrote {len(self.repo.written)} artifact(s)",
                'artifacts': list(self.repo.written),
                'summary': summary,
            }

        except Exception as e:
            logger.error(f"{scenario.experiment} failed: {e}")
            return {
                'success': False,
                'message': str(e),
                'artifacts': list(self.repo.written),
                'summary': {},
                'error': e,
            }

    def _render(self, table: Table) -> str:
        spec = dict(table.plot)
        plot_class = PLOT_CLASSES[spec.pop('kind', 'line')]
        x = spec.pop('x')
        ys = spec.pop('y')
        group = spec.pop('group', None)
        plot = plot_class(**spec)
        frames = [(None, table.frame)] if group is None else list(table.frame.groupby(group, sort=True))
        for key, frame in frames:
            for column in ys:
                name = column if key is None else f"{column} {group}={key:g}"
                plot.add_series(name, frame[x], frame[column])
        return plot.render()

    # ------------------------------------------------------------------
    # Lattice experiments
    # ------------------------------------------------------------------

    def _run_spectrum(self, s: Scenario):
        H = build_obc_hamiltonian(s.lattice, boundary=s.params['boundary'])
        spectrum = auto_eigendecompose(H, s.lattice)
        if not spectrum.reliable:
            raise NumericalError(f"spectrum unreliable: {spectrum.diagnostics.get('reason', '')}")
        frame = spectrum.to_frame(s.params['tolerance'])
        summary = {
            'dim': spectrum.dim,
            'condition_flag': spectrum.condition_flag,
            'zero_modes': int(frame['zero_mode'].sum()),
        }
        plot = {'kind': 'scatter', 'x': 're', 'y': ['im'], 'title': 'Spectrum',
                'x_label': 'Re E', 'y_label': 'Im E'}
        return [Table('spectrum', frame, plot)], summary

    def _run_sensitivity(self, s: Scenario):
        if s.mode == 'circuit':
            return self._circuit_sensitivity(s)
        p = s.params
        curve = sensitivity_curve(s.lattice, p['sizes'], p['gammas'], p['deviation_cap'], threads=self.threads)
        curve['delta_normalized'] = [
            row.delta_exact / _prefactor(np.full(s.lattice.order, row.chi_sum / s.lattice.order))
            for row in curve.itertuples()
        ]
        ratios = s.lattice.ratios
        expected = float(np.log(ratios[0])) if np.allclose(ratios, ratios[0]) else None
        fit = fit_sensitivity_law(curve, feature='chi_sum', target='delta_normalized', strength='gamma',
                                  expected_slope=expected)
        summary = {
            'fit': fit,
            'saturation_onsets': {f"{g:g}": saturation_onset(curve, g, p['deviation_cap']) for g in p['gammas']},
        }
        plot = {'kind': 'line', 'x': 'L', 'y': ['delta_first', 'delta_exact'], 'group': 'gamma', 'log_y': True,
                'title': 'Zero-mode shift vs size', 'x_label': 'L', 'y_label': '|dE|'}
        return [Table('sensitivity', curve, plot)], summary

    def _circuit_point(self, params, c_gamma: float) -> Dict:
        graph = synthesize_circuit(None, params)
        lattice = circuit_lattice(params)
        corner = far_corner(lattice)
        first = shift_first_order(lattice, PerturbationSpec(gamma=c_gamma, site_b=corner))
        f0 = resonance_frequency(params)
        predicted = f0 * first.delta_e / (2.0 * params.c_ground_total)
        row = {'units': params.units, 'ratio': params.ratio, 'c_gamma': c_gamma, 'f0': f0,
               'delta_first': predicted, 'delta_f': float('nan'), 'flag': 'ok'}
        try:
            shift = eigenfrequency_shift(graph, c_gamma, method=SPECTRAL)
            row['delta_f'] = shift.delta_f
        except NumericalError as e:
            logger.warning(f"Shift failed at units={params.units}, c_gamma={c_gamma:.3g}: {e}")
            row['flag'] = 'failed'
        row['delta_normalized'] = row['delta_f'] / _prefactor(cell_chi(corner))
        return row

    def _circuit_sensitivity(self, s: Scenario):
        p = s.params
        ratios = p['ratios'] or [s.circuit.ratio]
        rows = []
        for ratio in ratios:
            for units in p['units']:
                params = replace(s.circuit, c2=s.circuit.c1 / ratio, units=units)
                for c_gamma in p['c_gammas']:
                    rows.append(self._circuit_point(params, c_gamma))
        frame = pd.DataFrame(rows, columns=['units', 'ratio', 'c_gamma', 'f0', 'delta_first', 'delta_f', 'flag',
                                            'delta_normalized'])
        deviation = (frame['delta_f'] - frame['delta_first']).abs() / frame['delta_first']
        frame['saturated'] = ~(deviation <= p['deviation_cap'])

        fits = {}
        for ratio in ratios:
            rows_at = frame[np.isclose(frame['ratio'], ratio)]
            fits[f"{ratio:g}"] = fit_sensitivity_law(rows_at, feature='units', target='delta_normalized',
                                                     strength='c_gamma', expected_slope=float(np.log(ratio)))
        plot = {'kind': 'line', 'x': 'units', 'y': ['delta_first', 'delta_f'], 'group': 'c_gamma', 'log_y': True,
                'title': 'Eigenfrequency shift vs units', 'x_label': 'units', 'y_label': 'delta f (Hz)'}
        return [Table('sensitivity', frame, plot)], {'fits': fits}

    def _run_range(self, s: Scenario):
        p = s.params
        if s.mode == 'circuit':
            result = circuit_measurement_range(s.circuit, p['resolution_hz'], p['deviation_cap'])
        else:
            result = measurement_range(s.lattice, p['threshold'], p['deviation_cap'])
        summary = result.to_dict()
        return [Table('range', pd.DataFrame([summary]))], summary

    # ------------------------------------------------------------------
    # Circuit experiments
    # ------------------------------------------------------------------

    def _run_skin(self, s: Scenario):
        p = s.params
        graph = synthesize_circuit(None, s.circuit)
        drive = default_drive(graph, amplitude=p['amplitude'])
        _, fine = two_stage_grid(
            lambda grid: impedance_scan(graph, drive.node, grid, threads=self.threads),
            resonance_frequency(s.circuit))
        f0 = fine.extracted_f
        at_f0 = profile_at(graph, drive, f0, p['noise_floor_db'])
        at_f1 = profile_at(graph, drive, p['f1_hz'], p['noise_floor_db'])
        frame = pd.DataFrame({
            'label': at_f0['label'],
            'node': at_f0['node'],
            'position': np.arange(1, len(at_f0) + 1),
            'voltage_db_f0': at_f0['voltage_db'],
            'voltage_db_f1': at_f1['voltage_db'],
        })
        summary = {
            'f0': f0,
            'f1': p['f1_hz'],
            'drop_f0_db': float(frame['voltage_db_f0'].max() - frame['voltage_db_f0'].min()),
            'drop_f1_db': float(frame['voltage_db_f1'].max() - frame['voltage_db_f1'].min()),
        }
        plot = {'kind': 'line', 'x': 'position', 'y': ['voltage_db_f0', 'voltage_db_f1'],
                'title': 'Boundary-node profile', 'x_label': 'Node', 'y_label': 'V (dB)'}
        return [Table('skin', frame, plot)], summary

    def _run_sweep(self, s: Scenario):
        p = s.params
        graph = synthesize_circuit(None, s.circuit)
        drive = default_drive(graph, amplitude=p['amplitude'])
        if p['node'] is not None:
            node = graph.node(p['node'])
        else:
            node = drive.node if p['method'] == IMPEDANCE else graph.boundary_nodes[0]
        center = p['center_hz'] if p['center_hz'] is not None else resonance_frequency(s.circuit)

        def scan(grid):
            if p['method'] == IMPEDANCE:
                return impedance_scan(graph, node, grid, threads=self.threads)
            return voltage_sweep(graph, drive, node, grid, p['noise_floor_db'], threads=self.threads)

        if p['refine']:
            sweeps = two_stage_grid(scan, center, p['half_width_hz'], p['step_hz'])
        else:
            sweeps = (scan(coarse_grid(center, p['half_width_hz'], p['step_hz'])),)
        unit = 'ohm' if p['method'] == IMPEDANCE else 'db'
        tables = []
        for name, sweep in zip(('sweep_coarse', 'sweep_fine'), sweeps):
            frame = sweep.to_frame()
            plot = {'kind': 'line', 'x': 'freq_hz', 'y': [c for c in frame.columns if c != 'freq_hz'],
                    'log_y': p['method'] == IMPEDANCE, 'title': name.replace('_', ' '),
                    'x_label': 'f (Hz)', 'y_label': unit}
            tables.append(Table(name, frame, plot, sweep.metadata()))
        final = sweeps[-1]
        summary = {'extracted_f': final.extracted_f, 'extraction_method': final.extraction_method, 'node': node}
        return tables, summary

    def _run_shift(self, s: Scenario):
        p = s.params
        graph = synthesize_circuit(None, s.circuit)
        rows = []
        for c_gamma in p['c_gammas']:
            shift = eigenfrequency_shift(graph, c_gamma, method=p['method'], half_width=p['half_width_hz'],
                                         threads=self.threads)
            rows.append({'c_gamma': c_gamma, 'f0': shift.f0, 'f0_shifted': shift.f0_shifted,
                         'delta_f': shift.delta_f, 'method': shift.method})
        frame = pd.DataFrame(rows, columns=['c_gamma', 'f0', 'f0_shifted', 'delta_f', 'method'])
        plot = {'kind': 'scatter', 'x': 'c_gamma', 'y': ['delta_f'], 'log_x': True, 'log_y': True,
                'title': 'Eigenfrequency shift', 'x_label': 'C_gamma (F)', 'y_label': 'delta f (Hz)'}
        return [Table('shift', frame, plot)], {'delta_f': frame['delta_f'].tolist()}

    def _run_robustness(self, s: Scenario):
        p = s.params
        graph = synthesize_circuit(None, s.circuit)
        drive = default_drive(graph, crosstalk_fraction=p['crosstalk_fraction'], crosstalk_seed=s.seed)
        report = crosstalk_trial(graph, drive, p['trials'], p['c_gamma'], half_width=p['half_width_hz'],
                                 f1=p['f1_hz'], threads=self.threads)
        summary = {k: v for k, v in report.to_dict().items() if k != 'trials'}
        summary['min_profile_corr_f1'] = float(report.trials['profile_corr_f1'].min())
        plot = {'kind': 'scatter', 'x': 'trial', 'y': ['deviation'],
                'title': 'Shift deviation under crosstalk', 'x_label': 'trial', 'y_label': 'relative deviation'}
        return [Table('robustness', report.trials, plot)], summary

    def _run_calibrate(self, s: Scenario):
        graph = synthesize_circuit(None, s.circuit)
        f0 = tracked_eigenfrequency(graph)
        rows: List[Dict] = []
        for c_para in s.params['c_paras']:
            loaded = with_parasitic(graph, c_para)
            c_cali = calibrate_parasitic(loaded, f0)
            rows.append({
                'c_para': c_para,
                'c_cali': c_cali,
                'f0': f0,
                'f_parasitic': tracked_eigenfrequency(loaded),
                'f_calibrated': tracked_eigenfrequency(with_calibration(loaded, c_cali)),
            })
        frame = pd.DataFrame(rows, columns=['c_para', 'c_cali', 'f0', 'f_parasitic', 'f_calibrated'])
        frame['residual_hz'] = (frame['f_calibrated'] - frame['f0']).abs()
        plot = {'kind': 'scatter', 'x': 'c_para', 'y': ['c_cali'], 'log_x': True, 'log_y': True,
                'title': 'Parasitic calibration', 'x_label': 'C_para (F)', 'y_label': 'C_cali (F)'}
        return [Table('calibrate', frame, plot)], {'max_residual_hz': float(frame['residual_hz'].max())}


def run_scenario(scenario: Scenario, directory: Optional[str] = None, threads: int = config.THREADS) -> Dict:
    """Run with artifacts under `directory` (default: the scenario's output directory)."""
    repository = ArtifactRepository(directory or scenario.output.directory)
    return ExperimentRunner(repository, threads).run(scenario)


__all__ = ['ExperimentRunner', 'Table', 'run_scenario']
