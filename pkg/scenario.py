"""
Scenario files: parsing, validation and canonical serialization.

A scenario is one JSON object naming an experiment, the lattice and/or circuit it
runs on, experiment parameters and the output block. Every field is validated and
defaults are applied before anything is computed; unknown keys are rejected with
their dotted path and the line they appear on.
"""
import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import config
from backend.circuit import CircuitParams
from exceptions import ScenarioError, ValidationError
from physics.lattice import BOUNDARIES, LatticeSpec

logger = logging.getLogger(__name__)

EXPERIMENTS = ("spectrum", "skin", "sensitivity", "range", "sweep", "shift", "robustness", "calibrate")
CIRCUIT_EXPERIMENTS = ("skin", "sweep", "shift", "robustness", "calibrate")
MODES = ("lattice", "circuit")

TOP_LEVEL_KEYS = ("name", "experiment", "lattice", "circuit", "params", "output", "seed")
LATTICE_KEYS = ("order", "extent", "couplings", "intra_cell")
CIRCUIT_KEYS = ("c1", "c2", "ratio", "c0", "ground_l", "ground_scheme", "units", "c_ground_total")
OUTPUT_KEYS = ("directory", "formats")

PARAM_DEFAULTS: Dict[str, Dict[str, Any]] = {
    "spectrum": {
        "boundary": "open",
        "tolerance": config.ZERO_MODE_TOLERANCE,
    },
    "skin": {
        "amplitude": config.DEFAULT_DRIVE_AMPLITUDE,
        "noise_floor_db": config.DEFAULT_NOISE_FLOOR_DB,
        "f1_hz": config.DEFAULT_F1_HZ,
    },
    "sensitivity": {
        "mode": "lattice",
        "sizes": [5, 7, 9, 11, 13],
        "gammas": [1e-10],
        "deviation_cap": config.DEFAULT_DEVIATION_CAP,
        "units": [1, 3, 6, 12],
        "ratios": [],
        "c_gammas": [1e-35],
    },
    "range": {
        "mode": "lattice",
        "threshold": config.DETECTION_THRESHOLD,
        "deviation_cap": config.DEFAULT_DEVIATION_CAP,
        "resolution_hz": config.FINE_STEP_HZ,
    },
    "sweep": {
        "method": "impedance",
        "node": None,
        "center_hz": None,
        "half_width_hz": config.DEFAULT_SCAN_HALF_WIDTH_HZ,
        "step_hz": config.COARSE_STEP_HZ,
        "refine": True,
        "amplitude": config.DEFAULT_DRIVE_AMPLITUDE,
        "noise_floor_db": config.DEFAULT_NOISE_FLOOR_DB,
    },
    "shift": {
        "c_gammas": [1e-17],
        "method": "peak_impedance",
        "half_width_hz": config.DEFAULT_SCAN_HALF_WIDTH_HZ,
    },
    "robustness": {
        "trials": 20,
        "crosstalk_fraction": 0.5,
        "c_gamma": 1e-17,
        "f1_hz": config.DEFAULT_F1_HZ,
        "half_width_hz": config.DEFAULT_SCAN_HALF_WIDTH_HZ,
    },
    "calibrate": {
        "c_paras": [1e-16, 1e-15, 5e-15],
    },
}

SHIFT_METHOD_CHOICES = ("peak_impedance", "min_voltage", "noise_onset", "spectral")
SWEEP_METHOD_CHOICES = ("impedance", "voltage")


@dataclass(frozen=True)
class OutputSpec:
    directory: str = config.DEFAULT_OUTPUT_DIR
    formats: Tuple[str, ...] = ("csv", "json")


@dataclass(frozen=True)
class Scenario:
    experiment: str
    name: str = ""
    lattice: Optional[LatticeSpec] = None
    circuit: Optional[CircuitParams] = None
    params: Dict[str, Any] = field(default_factory=dict)
    output: OutputSpec = field(default_factory=OutputSpec)
    seed: int = 0

    @property
    def mode(self) -> str:
        if self.experiment in CIRCUIT_EXPERIMENTS:
            return "circuit"
        return self.params.get("mode", "lattice")


def _line_of(text: Optional[str], path: Optional[str]) -> Optional[int]:
    """Line of the last key of a dotted path, searched key by key through the text."""
    if not text or not path:
        return None
    position = 0
    for key in path.replace("]", "").replace("[", ".").split("."):
        if not key or key.isdigit():
            continue
        found = text.find(f'"{key}"', position)
        if found < 0:
            break
        position = found
    return text.count("\n", 0, position) + 1 if position else None


class _Parser:
    """Walks the decoded JSON, raising ScenarioError with path and line."""

    def __init__(self, text: Optional[str] = None):
        self.text = text

    def fail(self, message: str, path: str):
        raise ScenarioError(message, path=path, line=_line_of(self.text, path))

    def obj(self, value, path: str, allowed: Tuple[str, ...]) -> Dict:
        if not isinstance(value, dict):
            self.fail(f"expected an object, got {type(value).__name__}", path)
        for key in value:
            if key not in allowed:
                self.fail(f"unknown key {key!r}; allowed: {', '.join(allowed)}",
                          f"{path}.{key}" if path else key)
        return value

    def number(self, value, path: str, positive: bool = False, non_negative: bool = False) -> float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.fail(f"expected a number, got {value!r}", path)
        value = float(value)
        if value != value or value in (float("inf"), float("-inf")):
            self.fail("must be finite", path)
        if positive and not value > 0:
            self.fail(f"must be > 0, got {value}", path)
        if non_negative and value < 0:
            self.fail(f"must be >= 0, got {value}", path)
        return value

    def integer(self, value, path: str, minimum: Optional[int] = None) -> int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                value = int(value)
            else:
                self.fail(f"expected an integer, got {value!r}", path)
        if minimum is not None and value < minimum:
            self.fail(f"must be >= {minimum}, got {value}", path)
        return int(value)

    def boolean(self, value, path: str) -> bool:
        if not isinstance(value, bool):
            self.fail(f"expected true or false, got {value!r}", path)
        return value

    def string(self, value, path: str, choices: Optional[Tuple[str, ...]] = None) -> str:
        if not isinstance(value, str):
            self.fail(f"expected a string, got {value!r}", path)
        if choices is not None and value not in choices:
            self.fail(f"must be one of {', '.join(choices)}, got {value!r}", path)
        return value

    def array(self, value, path: str, non_empty: bool = False) -> List:
        if not isinstance(value, list):
            self.fail(f"expected an array, got {type(value).__name__}", path)
        if non_empty and not value:
            self.fail("must not be empty", path)
        return value

    def numbers(self, value, path: str, **checks) -> List[float]:
        return [self.number(v, f"{path}[{i}]", **checks) for i, v in enumerate(self.array(value, path, True))]

    def integers(self, value, path: str, minimum: Optional[int] = None) -> List[int]:
        return [self.integer(v, f"{path}[{i}]", minimum) for i, v in enumerate(self.array(value, path, True))]

    # ---- blocks -------------------------------------------------------------

    def lattice(self, raw) -> LatticeSpec:
        block = self.obj(raw, "lattice", LATTICE_KEYS)
        for key in ("order", "extent", "couplings"):
            if key not in block:
                self.fail("required field is missing", f"lattice.{key}")
        order = self.integer(block["order"], "lattice.order", minimum=1)
        extent = self.integers(block["extent"], "lattice.extent", minimum=1)
        couplings = []
        for axis, pair in enumerate(self.array(block["couplings"], "lattice.couplings", True)):
            pair = self.array(pair, f"lattice.couplings[{axis}]")
            if len(pair) != 2:
                self.fail("expected [lambda, lambda']", f"lattice.couplings[{axis}]")
            couplings.append(tuple(self.number(v, f"lattice.couplings[{axis}]", positive=True) for v in pair))
        intra_cell = self.number(block.get("intra_cell", 0.0), "lattice.intra_cell", non_negative=True)
        return self.construct(LatticeSpec, order=order, extent=tuple(extent), couplings=tuple(couplings),
                              intra_cell=intra_cell)

    def circuit(self, raw) -> CircuitParams:
        block = self.obj(raw, "circuit", CIRCUIT_KEYS)
        values = {}
        for key in ("c1", "c2", "ground_l", "c_ground_total"):
            if key in block and block[key] is not None:
                values[key] = self.number(block[key], f"circuit.{key}", positive=True)
        if "c0" in block:
            values["c0"] = self.number(block["c0"], "circuit.c0", non_negative=True)
        if "ratio" in block:
            if "c2" in block:
                self.fail("give either c2 or ratio, not both", "circuit.ratio")
            ratio = self.number(block["ratio"], "circuit.ratio", positive=True)
            values["c2"] = values.get("c1", config.DEFAULT_C1) / ratio
        if "ground_scheme" in block:
            values["ground_scheme"] = self.string(block["ground_scheme"], "circuit.ground_scheme",
                                                  config.GROUND_SCHEMES)
        if "units" in block:
            values["units"] = self.integer(block["units"], "circuit.units", minimum=1)
        return self.construct(CircuitParams, **values)

    def construct(self, cls, **kwargs):
        try:
            return cls(**kwargs)
        except ValidationError as e:
            raise ScenarioError(e.detail, path=e.path, line=_line_of(self.text, e.path)) from e

    def output(self, raw) -> OutputSpec:
        if raw is None:
            return OutputSpec()
        block = self.obj(raw, "output", OUTPUT_KEYS)
        directory = self.string(block.get("directory", config.DEFAULT_OUTPUT_DIR), "output.directory")
        formats = block.get("formats", list(OutputSpec.formats))
        formats = [self.string(f, f"output.formats[{i}]", config.OUTPUT_FORMATS)
                   for i, f in enumerate(self.array(formats, "output.formats", True))]
        return OutputSpec(directory=directory, formats=tuple(dict.fromkeys(formats)))

    def params(self, experiment: str, raw) -> Dict[str, Any]:
        defaults = PARAM_DEFAULTS[experiment]
        block = self.obj({} if raw is None else raw, "params", tuple(defaults))
        merged = {**defaults, **block}
        check = getattr(self, f"_params_{experiment}")
        return check(merged)

    # ---- per-experiment parameters -----------------------------------------

    def _params_spectrum(self, p):
        return {
            "boundary": self.string(p["boundary"], "params.boundary", BOUNDARIES),
            "tolerance": self.number(p["tolerance"], "params.tolerance", positive=True),
        }

    def _params_skin(self, p):
        return {
            "amplitude": self.number(p["amplitude"], "params.amplitude", positive=True),
            "noise_floor_db": self.number(p["noise_floor_db"], "params.noise_floor_db"),
            "f1_hz": self.number(p["f1_hz"], "params.f1_hz", positive=True),
        }

    def _params_sensitivity(self, p):
        sizes = self.integers(p["sizes"], "params.sizes", minimum=1)
        if any(size % 2 == 0 for size in sizes) or sizes != sorted(set(sizes)):
            self.fail(f"sizes must be odd and strictly ascending, got {sizes}", "params.sizes")
        units = self.integers(p["units"], "params.units", minimum=1)
        if units != sorted(set(units)) or units[-1] > config.MAX_UNITS:
            self.fail(f"units must be strictly ascending within 1..{config.MAX_UNITS}, got {units}", "params.units")
        return {
            "mode": self.string(p["mode"], "params.mode", MODES),
            "sizes": sizes,
            "gammas": self.numbers(p["gammas"], "params.gammas", positive=True),
            "deviation_cap": self.number(p["deviation_cap"], "params.deviation_cap", positive=True),
            "units": units,
            "ratios": [self.number(v, f"params.ratios[{i}]", positive=True)
                       for i, v in enumerate(self.array(p["ratios"], "params.ratios"))],
            "c_gammas": self.numbers(p["c_gammas"], "params.c_gammas", positive=True),
        }

    def _params_range(self, p):
        return {
            "mode": self.string(p["mode"], "params.mode", MODES),
            "threshold": self.number(p["threshold"], "params.threshold", positive=True),
            "deviation_cap": self.number(p["deviation_cap"], "params.deviation_cap", positive=True),
            "resolution_hz": self.number(p["resolution_hz"], "params.resolution_hz", positive=True),
        }

    def _params_sweep(self, p):
        return {
            "method": self.string(p["method"], "params.method", SWEEP_METHOD_CHOICES),
            "node": None if p["node"] is None else self.string(p["node"], "params.node"),
            "center_hz": None if p["center_hz"] is None else self.number(p["center_hz"], "params.center_hz",
                                                                         positive=True),
            "half_width_hz": self.number(p["half_width_hz"], "params.half_width_hz", positive=True),
            "step_hz": self.number(p["step_hz"], "params.step_hz", positive=True),
            "refine": self.boolean(p["refine"], "params.refine"),
            "amplitude": self.number(p["amplitude"], "params.amplitude", positive=True),
            "noise_floor_db": self.number(p["noise_floor_db"], "params.noise_floor_db"),
        }

    def _params_shift(self, p):
        return {
            "c_gammas": self.numbers(p["c_gammas"], "params.c_gammas", non_negative=True),
            "method": self.string(p["method"], "params.method", SHIFT_METHOD_CHOICES),
            "half_width_hz": self.number(p["half_width_hz"], "params.half_width_hz", positive=True),
        }

    def _params_robustness(self, p):
        fraction = self.number(p["crosstalk_fraction"], "params.crosstalk_fraction", non_negative=True)
        if fraction > 1:
            self.fail(f"must be <= 1, got {fraction}", "params.crosstalk_fraction")
        return {
            "trials": self.integer(p["trials"], "params.trials", minimum=1),
            "crosstalk_fraction": fraction,
            "c_gamma": self.number(p["c_gamma"], "params.c_gamma", positive=True),
            "f1_hz": self.number(p["f1_hz"], "params.f1_hz", positive=True),
            "half_width_hz": self.number(p["half_width_hz"], "params.half_width_hz", positive=True),
        }

    def _params_calibrate(self, p):
        return {"c_paras": self.numbers(p["c_paras"], "params.c_paras", non_negative=True)}

    # ---- scenario -----------------------------------------------------------

    def scenario(self, raw) -> Scenario:
        block = self.obj(raw, "", TOP_LEVEL_KEYS)
        if "experiment" not in block:
            self.fail("required field is missing", "experiment")
        experiment = self.string(block["experiment"], "experiment", EXPERIMENTS)
        name = self.string(block.get("name", experiment), "name")
        seed = self.integer(block.get("seed", 0), "seed", minimum=0)
        params = self.params(experiment, block.get("params"))

        mode = "circuit" if experiment in CIRCUIT_EXPERIMENTS else params.get("mode", "lattice")
        lattice = self.lattice(block["lattice"]) if block.get("lattice") is not None else None
        circuit = self.circuit(block["circuit"]) if block.get("circuit") is not None else None
        if mode == "lattice" and lattice is None:
            self.fail(f"experiment {experiment!r} needs a lattice block", "lattice")
        if mode == "circuit" and circuit is None:
            self.fail(f"experiment {experiment!r} needs a circuit block", "circuit")

        return Scenario(experiment=experiment, name=name, lattice=lattice, circuit=circuit, params=params,
                        output=self.output(block.get("output")), seed=seed)


def parse_scenario_text(text: str) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(f"invalid JSON: {e.msg}", line=e.lineno) from e
    return _Parser(text).scenario(raw)


def parse_scenario_dict(raw: Dict) -> Scenario:
    return _Parser().scenario(raw)


def parse_scenario(path: str) -> Scenario:
    """Read and validate a scenario file."""
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ScenarioError(f"cannot read scenario: {e.strerror}", path=str(path)) from e
    scenario = parse_scenario_text(text)
    logger.info(f"Parsed scenario {scenario.name!r} ({scenario.experiment})")
    return scenario


def serialize_scenario(scenario: Scenario) -> Dict[str, Any]:
    """Canonical dict with every default made explicit; parse(serialize(s)) == s."""
    out: Dict[str, Any] = {
        "name": scenario.name,
        "experiment": scenario.experiment,
        "seed": scenario.seed,
        "params": {key: list(value) if isinstance(value, tuple) else value
                   for key, value in scenario.params.items()},
        "output": {"directory": scenario.output.directory, "formats": list(scenario.output.formats)},
    }
    if scenario.lattice is not None:
        lattice = scenario.lattice
        out["lattice"] = {
            "order": lattice.order,
            "extent": list(lattice.extent),
            "couplings": [list(pair) for pair in lattice.couplings],
            "intra_cell": lattice.intra_cell,
        }
    if scenario.circuit is not None:
        c = scenario.circuit
        out["circuit"] = {
            "c1": c.c1,
            "c2": c.c2,
            "c0": c.c0,
            "ground_l": c.ground_l,
            "ground_scheme": c.ground_scheme,
            "units": c.units,
            "c_ground_total": c.c_ground_total,
        }
    return out


def scenario_text(scenario: Scenario) -> str:
    return json.dumps(serialize_scenario(scenario), sort_keys=True, indent=2) + "\n"


def scenario_hash(scenario: Scenario) -> str:
    """sha256 of the compact canonical serialization."""
    blob = json.dumps(serialize_scenario(scenario), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
