"""
Circuit Synthesis Module
Realizes a second-order lattice as a network of capacitors, inductors and
ideal non-reciprocal buffers:
- chains of 3x3 sensing units sharing one boundary column
- the admittance matrix J(w) under either grounding scheme
- measurand, parasitic and calibration elements as graph variants
- eigenfrequencies from the spectrum of the capacitance matrix, as offsets from C_tot
- netlist export

Nodes are lattice sites in lattice row order. Ground is GROUND (-1) in memory
and 0 in the netlist, where circuit nodes are numbered from 1.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq

import config
from exceptions import CircuitError, LatticeError, NumericalError, SpectralError
from physics.lattice import LatticeSpec, analytic_zero_mode, build_obc_hamiltonian
from physics.spectral import UNRELIABLE, gauge_log_factors, gauged_eigendecompose, track_mode

logger = logging.getLogger(__name__)

GROUND = -1

CAPACITOR = "capacitor"
BUFFER_CAPACITOR = "buffer_capacitor"
INDUCTOR = "inductor"
INDUCTOR_TO_GROUND = "inductor_to_ground"
CAPACITOR_TO_GROUND = "capacitor_to_ground"
NEGATIVE_CAPACITOR_TO_GROUND = "negative_capacitor_to_ground"

TWO_TERMINAL_KINDS = (CAPACITOR, BUFFER_CAPACITOR, INDUCTOR)
GROUNDED_KINDS = (INDUCTOR_TO_GROUND, CAPACITOR_TO_GROUND, NEGATIVE_CAPACITOR_TO_GROUND)
ELEMENT_KINDS = TWO_TERMINAL_KINDS + GROUNDED_KINDS

NETLIST_KINDS = {
    CAPACITOR: "C",
    BUFFER_CAPACITOR: "BUF",
    INDUCTOR: "L",
    INDUCTOR_TO_GROUND: "L",
    CAPACITOR_TO_GROUND: "C",
    NEGATIVE_CAPACITOR_TO_GROUND: "NC",
}


@dataclass(frozen=True)
class CircuitParams:
    """Component values in SI units. c2 is the reverse (buffer path) coupling."""
    c1: float = config.DEFAULT_C1
    c2: float = config.DEFAULT_C2
    c0: float = 0.0
    ground_l: float = config.DEFAULT_GROUND_L
    ground_scheme: str = config.DEFAULT_GROUND_SCHEME
    units: int = 1
    c_ground_total: Optional[float] = None

    def __post_init__(self):
        for name in ('c1', 'c2', 'ground_l'):
            value = float(getattr(self, name))
            if not np.isfinite(value) or value <= 0:
                raise CircuitError(f"must be finite and > 0, got {value}", path=f"circuit.{name}")
            object.__setattr__(self, name, value)
        object.__setattr__(self, 'c0', float(self.c0))
        if not np.isfinite(self.c0) or self.c0 < 0:
            raise CircuitError(f"must be finite and >= 0, got {self.c0}", path="circuit.c0")
        if not self.c2 < self.c1:
            raise CircuitError(f"c2 must be below c1 for sensing, got c1={self.c1:g} c2={self.c2:g}",
                               path="circuit.c2")
        if self.ground_scheme not in config.GROUND_SCHEMES:
            raise CircuitError(f"unknown grounding scheme {self.ground_scheme!r}, expected one of "
                               f"{config.GROUND_SCHEMES}", path="circuit.ground_scheme")
        if int(self.units) != self.units or not 1 <= self.units <= config.MAX_UNITS:
            raise CircuitError(f"units must be an integer in 1..{config.MAX_UNITS}, got {self.units}",
                               path="circuit.units")
        object.__setattr__(self, 'units', int(self.units))
        total = 2.0 * self.c1 if self.c_ground_total is None else float(self.c_ground_total)
        if not np.isfinite(total) or total <= 0:
            raise CircuitError(f"must be finite and > 0, got {total}", path="circuit.c_ground_total")
        object.__setattr__(self, 'c_ground_total', total)

    @property
    def ratio(self) -> float:
        return self.c1 / self.c2

    def with_units(self, units: int) -> "CircuitParams":
        return replace(self, units=units)


@dataclass(frozen=True)
class Element:
    kind: str
    a: int
    b: int
    value: float


@dataclass(frozen=True)
class CircuitGraph:
    """Immutable element list plus optional measurand, parasitic and calibration slots.

    measurand is (node_a, node_b, c_gamma); parasitic and calibration are (node, value)
    capacitors to ground, the calibration one through an ideal negative converter.
    """
    n_nodes: int
    elements: Tuple[Element, ...]
    labels: Dict[str, int] = field(default_factory=dict)
    lattice: Optional[LatticeSpec] = None
    params: Optional[CircuitParams] = None
    measurand: Optional[Tuple[int, int, float]] = None
    parasitic: Optional[Tuple[int, float]] = None
    calibration: Optional[Tuple[int, float]] = None

    def __post_init__(self):
        if self.n_nodes < 1:
            raise CircuitError(f"circuit needs at least one node, got {self.n_nodes}")
        object.__setattr__(self, 'elements', tuple(self.elements))
        for element in self.elements:
            self._check_element(element)
        if self.measurand is not None:
            a, b, value = self.measurand
            self._check_node(a)
            self._check_node(b)
            if a == b:
                raise CircuitError("measurand nodes must be distinct", path="params.measurand")
            if not np.isfinite(value) or value < 0:
                raise CircuitError(f"c_gamma must be finite and >= 0, got {value}", path="params.c_gamma")
        for slot, name in ((self.parasitic, 'c_para'), (self.calibration, 'c_cali')):
            if slot is not None:
                self._check_node(slot[0])
                if not np.isfinite(slot[1]) or slot[1] < 0:
                    raise CircuitError(f"{name} must be finite and >= 0, got {slot[1]}", path=f"params.{name}")

    def _check_node(self, node: int):
        if not 0 <= node < self.n_nodes:
            raise CircuitError(f"node {node} outside 0..{self.n_nodes - 1}")

    def _check_element(self, element: Element):
        if element.kind not in ELEMENT_KINDS:
            raise CircuitError(f"unknown element kind {element.kind!r}")
        if not np.isfinite(element.value) or element.value <= 0:
            raise CircuitError(f"{element.kind} value must be finite and > 0, got {element.value}")
        self._check_node(element.a)
        if element.kind in GROUNDED_KINDS:
            if element.b != GROUND:
                raise CircuitError(f"{element.kind} must connect to ground")
        else:
            self._check_node(element.b)
            if element.a == element.b:
                raise CircuitError(f"{element.kind} connects node {element.a} to itself")

    def node(self, label: str) -> int:
        try:
            return self.labels[label]
        except KeyError:
            raise CircuitError(f"unknown node label {label!r}") from None

    @property
    def boundary_nodes(self) -> List[int]:
        """Probe nodes in label order Node 1 .. Node N+1."""
        ordered = sorted(self.labels.items(), key=lambda item: int(item[0].split()[-1]))
        return [index for _, index in ordered]

    def count(self, kind: str) -> int:
        return sum(1 for element in self.elements if element.kind == kind)


@dataclass
class AdmittanceMatrix:
    omega: float
    entries: np.ndarray
    coupling: np.ndarray
    diagonal: np.ndarray

    @property
    def frequency(self) -> float:
        return self.omega / (2 * np.pi)


def circuit_lattice(params: CircuitParams) -> LatticeSpec:
    """Order-2 lattice of `units` 3x3 blocks chained along axis 1 (extent 2U+1 by 3)."""
    return LatticeSpec(
        order=2,
        extent=(2 * params.units + 1, config.UNIT_ROWS),
        couplings=((params.c1, params.c2), (params.c1, params.c2)),
        intra_cell=params.c0,
    )


def _boundary_labels(lattice: LatticeSpec, units: int) -> Dict[str, int]:
    rows = lattice.extent[1]
    return {f"Node {k}": lattice.site_index((2 * k - 1, rows), 1) for k in range(1, units + 2)}


def _coupling_elements(hopping: np.ndarray) -> List[Element]:
    """Capacitor of the smaller entry plus a buffer adding the difference on the larger side.

    The buffer into row i reads node j, so J_ij = -iw H_ij and J_ji = -iw H_ji.
    """
    elements = []
    rows, cols = np.nonzero(np.triu(hopping + hopping.T, k=1))
    for i, j in zip(rows.tolist(), cols.tolist()):
        forward, backward = hopping[i, j], hopping[j, i]
        small = min(forward, backward)
        if small > 0:
            elements.append(Element(CAPACITOR, i, j, small))
        if forward > backward:
            elements.append(Element(BUFFER_CAPACITOR, j, i, forward - small))
        elif backward > forward:
            elements.append(Element(BUFFER_CAPACITOR, i, j, backward - small))
    return elements


def _incident_capacitance(elements: Sequence[Element], n_nodes: int) -> np.ndarray:
    incident = np.zeros(n_nodes)
    for element in elements:
        if element.kind == CAPACITOR:
            incident[element.a] += element.value
            incident[element.b] += element.value
        elif element.kind == BUFFER_CAPACITOR:
            incident[element.b] += element.value
    return incident


def _ground_elements(incident: np.ndarray, params: CircuitParams) -> List[Element]:
    elements = []
    negative_nodes = 0
    for node, coupled in enumerate(incident):
        if params.ground_scheme == "negative_impedance":
            if coupled > 0:
                elements.append(Element(NEGATIVE_CAPACITOR_TO_GROUND, node, GROUND, float(coupled)))
            elements.append(Element(CAPACITOR_TO_GROUND, node, GROUND, params.c_ground_total))
        else:
            remainder = params.c_ground_total - coupled
            if remainder > 0:
                elements.append(Element(CAPACITOR_TO_GROUND, node, GROUND, float(remainder)))
            elif remainder < 0:
                negative_nodes += 1
                elements.append(Element(NEGATIVE_CAPACITOR_TO_GROUND, node, GROUND, float(-remainder)))
        elements.append(Element(INDUCTOR_TO_GROUND, node, GROUND, params.ground_l))
    if negative_nodes:
        logger.warning(f"{negative_nodes} node(s) carry more coupling capacitance than "
                       f"C_tot={params.c_ground_total:.4g} F; grounded through negative capacitors")
    return elements


def synthesize_circuit(lattice: Optional[LatticeSpec], params: CircuitParams) -> CircuitGraph:
    """Build the circuit graph of `params.units` chained sensing units.

    `lattice` may be None, in which case the chain lattice is derived from params;
    a given lattice must be that chain lattice.
    """
    chain = circuit_lattice(params)
    if lattice is not None:
        if lattice.order != 2:
            raise CircuitError(f"circuits realize order-2 lattices, got order {lattice.order}",
                               path="lattice.order")
        if tuple(lattice.extent) != chain.extent:
            raise CircuitError(f"{params.units} unit(s) realize extent {chain.extent}, got {lattice.extent}",
                               path="lattice.extent")

    # Step 1: couplings from the hopping matrix in farads
    hopping = build_obc_hamiltonian(chain).matrix
    if np.any(np.abs(hopping.imag) > 0):
        raise CircuitError("hopping matrix has complex entries; no capacitor realization")
    elements = _coupling_elements(hopping.real)

    # Step 2: grounding
    incident = _incident_capacitance(elements, chain.dim)
    elements.extend(_ground_elements(incident, params))

    graph = CircuitGraph(
        n_nodes=chain.dim,
        elements=tuple(elements),
        labels=_boundary_labels(chain, params.units),
        lattice=chain,
        params=params,
    )
    logger.info(f"Synthesized {params.units} unit(s): {graph.n_nodes} nodes, {len(graph.elements)} elements, "
                f"scheme={params.ground_scheme}")
    return graph


def default_measurand_nodes(graph: CircuitGraph) -> Tuple[int, int]:
    """First corner (1, 1) and the far corner, both on sublattice 1."""
    if graph.lattice is None:
        raise CircuitError("default measurand nodes need a synthesized circuit")
    lattice = graph.lattice
    return lattice.site_index((1,) * lattice.order), lattice.site_index(lattice.extent)


def with_measurand(graph: CircuitGraph, c_gamma: float, node_a: Optional[int] = None,
                   node_b: Optional[int] = None) -> CircuitGraph:
    if node_a is None or node_b is None:
        default_a, default_b = default_measurand_nodes(graph)
        node_a = default_a if node_a is None else node_a
        node_b = default_b if node_b is None else node_b
    return replace(graph, measurand=(int(node_a), int(node_b), float(c_gamma)))


def with_parasitic(graph: CircuitGraph, c_para: float, node: Optional[int] = None) -> CircuitGraph:
    node = default_measurand_nodes(graph)[0] if node is None else node
    return replace(graph, parasitic=(int(node), float(c_para)))


def with_calibration(graph: CircuitGraph, c_cali: float) -> CircuitGraph:
    if graph.parasitic is None:
        raise CircuitError("calibration needs a parasitic slot")
    return replace(graph, calibration=(graph.parasitic[0], float(c_cali)))


def without_extras(graph: CircuitGraph) -> CircuitGraph:
    return replace(graph, measurand=None, parasitic=None, calibration=None)


def _extra_stamps(graph: CircuitGraph) -> np.ndarray:
    """Measurand, parasitic and calibration capacitors on top of the synthesized elements."""
    stamp = np.zeros((graph.n_nodes, graph.n_nodes))
    if graph.measurand is not None:
        a, b, value = graph.measurand
        stamp[a, a] += value
        stamp[b, b] += value
        stamp[a, b] -= value
        stamp[b, a] -= value
    if graph.parasitic is not None:
        stamp[graph.parasitic[0], graph.parasitic[0]] += graph.parasitic[1]
    if graph.calibration is not None:
        stamp[graph.calibration[0], graph.calibration[0]] -= graph.calibration[1]
    return stamp


def capacitance_matrix(graph: CircuitGraph) -> np.ndarray:
    """Static capacitive stamp C, with J(w) = iw C + Gamma_L / (iw)."""
    stamp = np.zeros((graph.n_nodes, graph.n_nodes))
    for element in graph.elements:
        a, b, value = element.a, element.b, element.value
        if element.kind == CAPACITOR:
            stamp[a, a] += value
            stamp[b, b] += value
            stamp[a, b] -= value
            stamp[b, a] -= value
        elif element.kind == BUFFER_CAPACITOR:
            # input a draws no current; output b drives through the capacitor
            stamp[b, b] += value
            stamp[b, a] -= value
        elif element.kind == CAPACITOR_TO_GROUND:
            stamp[a, a] += value
        elif element.kind == NEGATIVE_CAPACITOR_TO_GROUND:
            stamp[a, a] -= value
    return stamp + _extra_stamps(graph)


def capacitance_offset_matrix(graph: CircuitGraph) -> np.ndarray:
    """C - C_tot I of a synthesized graph, assembled without the uniform diagonal.

    Synthesis equalizes every node to C_tot, so the offset is minus the lattice
    hopping plus the extra stamps; no entry carries C_tot rounding.
    """
    if graph.lattice is None or graph.params is None:
        raise CircuitError("capacitance offsets need a synthesized circuit")
    hopping = build_obc_hamiltonian(graph.lattice).matrix.real
    return _extra_stamps(graph) - hopping


def inverse_inductance_matrix(graph: CircuitGraph) -> np.ndarray:
    stamp = np.zeros((graph.n_nodes, graph.n_nodes))
    for element in graph.elements:
        if element.kind == INDUCTOR:
            a, b, value = element.a, element.b, 1.0 / element.value
            stamp[a, a] += value
            stamp[b, b] += value
            stamp[a, b] -= value
            stamp[b, a] -= value
        elif element.kind == INDUCTOR_TO_GROUND:
            stamp[element.a, element.a] += 1.0 / element.value
    return stamp


def admittance_from_stamps(capacitance: np.ndarray, inverse_inductance: np.ndarray, omega: float) -> np.ndarray:
    return 1j * omega * capacitance + inverse_inductance / (1j * omega)


def admittance(graph: CircuitGraph, omega: float) -> AdmittanceMatrix:
    if not np.isfinite(omega) or omega <= 0:
        raise CircuitError(f"omega must be finite and > 0, got {omega}", path="params.omega")
    entries = admittance_from_stamps(capacitance_matrix(graph), inverse_inductance_matrix(graph), omega)
    diagonal = np.diag(entries).copy()
    coupling = entries - np.diag(diagonal)
    return AdmittanceMatrix(omega=float(omega), entries=entries, coupling=coupling, diagonal=diagonal)


def resonance_frequency(params: CircuitParams) -> float:
    """f0 = 1 / (2 pi sqrt(L C_tot)); with C_tot = 2 C1 this is 1 / (2 pi sqrt(2 L C1))."""
    return float(1.0 / (2 * np.pi * np.sqrt(params.ground_l * params.c_ground_total)))


def _uniform_ground_inductance(graph: CircuitGraph) -> float:
    inductors = [e for e in graph.elements if e.kind in (INDUCTOR, INDUCTOR_TO_GROUND)]
    grounded = {e.a: e.value for e in inductors if e.kind == INDUCTOR_TO_GROUND}
    values = set(grounded.values())
    if len(grounded) != graph.n_nodes or len(grounded) != len(inductors) or len(values) != 1:
        raise CircuitError("spectral eigenfrequency needs one equal inductor to ground on every node")
    return values.pop()


def tracked_capacitance_offset(graph: CircuitGraph) -> complex:
    """mu - C_tot for the eigenvalue mu of C carrying the analytic zero mode.

    Offsets whose biorthogonal first-order estimate lies below the float
    resolution of the gauged offset matrix are returned as that estimate;
    the rest come from a gauged solve of the offset matrix.
    """
    if graph.lattice is None:
        raise CircuitError("spectral eigenfrequency needs a synthesized circuit")
    try:
        reference = analytic_zero_mode(graph.lattice)
    except LatticeError as e:
        raise CircuitError(f"no analytic zero mode to track: {e.detail}", path="circuit.c0") from e
    offset = capacitance_offset_matrix(graph)

    extras = _extra_stamps(graph)
    first_order = complex(reference.left @ extras @ reference.right / reference.overlap)
    gauge = np.exp(gauge_log_factors(graph.lattice))
    framed_norm = np.linalg.norm(gauge[:, None] * offset / gauge[None, :], np.inf)
    if abs(first_order) <= config.SHIFT_RESOLUTION_FACTOR * np.finfo(float).eps * framed_norm:
        logger.debug(f"Capacitance offset {first_order:.3g} F below solver resolution; first order kept")
        return first_order

    spectrum = gauged_eigendecompose(offset, graph.lattice)
    if spectrum.condition_flag == UNRELIABLE:
        raise NumericalError(f"capacitance spectrum unreliable: {spectrum.diagnostics.get('reason', '')}")
    try:
        mu_offset = track_mode(spectrum, reference).eigenvalue
    except SpectralError as e:
        raise NumericalError(f"eigenfrequency tracking failed: {e}") from e
    logger.debug(f"Tracked capacitance offset {mu_offset:.6g} F (first order {first_order:.6g} F)")
    return complex(mu_offset)


def _reference_frequency(graph: CircuitGraph) -> float:
    """1 / (2 pi sqrt(L C_tot)) with the graph's own ground inductor."""
    if graph.params is None:
        raise CircuitError("spectral eigenfrequency needs a synthesized circuit")
    inductance = _uniform_ground_inductance(graph)
    return float(1.0 / (2 * np.pi * np.sqrt(inductance * graph.params.c_ground_total)))


def _log_frequency_ratio(graph: CircuitGraph, mu_offset: complex) -> complex:
    """log(f / f_ref) = -log1p(offset / C_tot) / 2."""
    return -0.5 * np.log1p(complex(mu_offset) / graph.params.c_ground_total)


def tracked_eigenfrequency(graph: CircuitGraph) -> float:
    """Eigenfrequency of the mode carrying the analytic zero mode.

    With L on every node, J(w) is singular where C has eigenvalue mu = 1 / (w^2 L),
    so f = f_ref (1 + (mu - C_tot) / C_tot)^(-1/2).
    """
    f_ref = _reference_frequency(graph)
    frequency = f_ref * np.exp(_log_frequency_ratio(graph, tracked_capacitance_offset(graph)))
    return float(np.real(frequency))


def spectral_frequency_shift(graph: CircuitGraph, shifted: CircuitGraph) -> Tuple[float, float, float]:
    """(f0, f0', |f0 - f0'|) of the tracked mode, the difference taken through expm1 on offsets."""
    f_ref = _reference_frequency(graph)
    clean = _log_frequency_ratio(graph, tracked_capacitance_offset(graph))
    moved = _log_frequency_ratio(shifted, tracked_capacitance_offset(shifted))
    f0 = f_ref * np.exp(clean)
    delta = f0 * np.expm1(moved - clean)
    return float(np.real(f0)), float(np.real(f0 + delta)), float(abs(np.real(delta)))


def calibrate_parasitic(graph: CircuitGraph, f0: Optional[float] = None) -> float:
    """Calibration capacitance that returns the eigenfrequency to f0.

    Root of f(c_cali) - f0 on [0, 2 c_para]; the ideal converter makes the root c_para.
    """
    if graph.parasitic is None:
        raise CircuitError("graph has no parasitic element to calibrate", path="params.c_para")
    c_para = graph.parasitic[1]
    if c_para == 0:
        return 0.0
    if f0 is None:
        f0 = tracked_eigenfrequency(without_extras(graph))

    def offset(c_cali: float) -> float:
        return tracked_eigenfrequency(with_calibration(graph, c_cali)) - f0

    low, high = offset(0.0), offset(2.0 * c_para)
    if np.sign(low) == np.sign(high):
        raise NumericalError(f"calibration failure: no root for c_cali in [0, {2 * c_para:.3g}] F "
                             f"(offsets {low:.3g} Hz, {high:.3g} Hz)")
    c_cali = brentq(offset, 0.0, 2.0 * c_para, xtol=c_para * 1e-9, rtol=1e-12)
    logger.info(f"Calibrated c_para={c_para:.4g} F with c_cali={c_cali:.6g} F")
    return float(c_cali)


def export_netlist(graph: CircuitGraph) -> str:
    """One line per element, `KIND NODE_A NODE_B VALUE_SI`; nodes from 1, ground 0."""
    lines = [config.NETLIST_HEADER]

    def terminal(node: int) -> int:
        return 0 if node == GROUND else node + 1

    for element in graph.elements:
        lines.append(f"{NETLIST_KINDS[element.kind]} {terminal(element.a)} {terminal(element.b)} {element.value:.17g}")
    if graph.measurand is not None:
        a, b, value = graph.measurand
        lines.append(f"C {terminal(a)} {terminal(b)} {value:.17g}")
    if graph.parasitic is not None:
        lines.append(f"C {terminal(graph.parasitic[0])} 0 {graph.parasitic[1]:.17g}")
    if graph.calibration is not None:
        lines.append(f"NC {terminal(graph.calibration[0])} 0 {graph.calibration[1]:.17g}")
    return "\n".join(lines) + "\n"
