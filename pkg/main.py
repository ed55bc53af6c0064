"""Command-line controller: run, validate and netlist subcommands."""

import argparse
import logging
import sys
from dataclasses import replace
from typing import List, Optional

import config
from backend.circuit import export_netlist, synthesize_circuit
from backend.experiments import ExperimentRunner
from backend.repository import ArtifactRepository
from exceptions import NhSenseError, ScenarioError, ValidationError
from scenario import parse_scenario

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


def _formats(value: str) -> tuple:
    formats = tuple(dict.fromkeys(f.strip() for f in value.split(",") if f.strip()))
    unknown = [f for f in formats if f not in config.OUTPUT_FORMATS]
    if not formats or unknown:
        raise argparse.ArgumentTypeError(f"formats must be a subset of {','.join(config.OUTPUT_FORMATS)}")
    return formats


def _integer_at_least(minimum: int):
    def parse(value: str) -> int:
        try:
            number = int(value)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {value!r}") from None
        if number < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}")
        return number
    return parse


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog=config.APP_TITLE,
                                     description="Non-Hermitian skin-effect sensor simulator")
    parser.add_argument("--log-level", default=config.LOG_LEVEL, help="logging level (default from NH_SENSE_LOG_LEVEL)")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run a scenario and write its artifacts")
    run.add_argument("scenario", help="scenario JSON file")
    run.add_argument("--out", help="output directory (overrides output.directory)")
    run.add_argument("--format", type=_formats, help="comma-separated subset of csv,json,svg")
    run.add_argument("--threads", type=_integer_at_least(1), default=None,
                     help="worker threads for scans (default NH_SENSE_THREADS or 1)")
    run.add_argument("--seed", type=_integer_at_least(0), default=None, help="override the scenario seed")

    validate = commands.add_parser("validate", help="parse and validate a scenario")
    validate.add_argument("scenario", help="scenario JSON file")

    netlist = commands.add_parser("netlist", help="export the circuit netlist of a scenario")
    netlist.add_argument("scenario", help="scenario JSON file")
    netlist.add_argument("--out", help="write the netlist into this directory instead of stdout")
    return parser


def _exit_code(error: BaseException) -> int:
    return EXIT_VALIDATION if isinstance(error, ValidationError) else EXIT_NUMERICAL


def _error_payload(error: BaseException) -> dict:
    if isinstance(error, NhSenseError) and hasattr(error, 'to_dict'):
        return error.to_dict()
    return {'type': 'numerical', 'message': f"{type(error).__name__}: {error}"}


def _report_failure(error: BaseException, directory: Optional[str]) -> int:
    code = _exit_code(error)
    label = config.MSG_VALIDATION_FAILED if code == EXIT_VALIDATION else config.MSG_NUMERICAL_FAILURE
    print(f"{label}: {error}", file=sys.stderr)
    if directory:
        try:
            ArtifactRepository(directory).write_error(_error_payload(error))
        except OSError as e:
            logger.error(f"Could not write {config.ERROR_FILE}: {e}")
    return code


def command_run(args) -> int:
    try:
        scenario = parse_scenario(args.scenario)
    except ValidationError as e:
        return _report_failure(e, args.out or config.DEFAULT_OUTPUT_DIR)

    output = scenario.output
    if args.out:
        output = replace(output, directory=args.out)
    if args.format:
        output = replace(output, formats=args.format)
    scenario = replace(scenario, output=output)
    if args.seed is not None:
        scenario = replace(scenario, seed=args.seed)
    threads = args.threads if args.threads is not None else config.THREADS

    runner = ExperimentRunner(ArtifactRepository(scenario.output.directory), threads)
    result = runner.run(scenario)
    if not result['success']:
        return _report_failure(result['error'], scenario.output.directory)

    print(result['message'])
    for path in result['artifacts']:
        print(f"  {path}")
    return EXIT_OK


def command_validate(args) -> int:
    try:
        scenario = parse_scenario(args.scenario)
    except ValidationError as e:
        return _report_failure(e, None)
    print(f"{config.MSG_SCENARIO_VALID}: {scenario.name} ({scenario.experiment})")
    return EXIT_OK


def command_netlist(args) -> int:
    try:
        scenario = parse_scenario(args.scenario)
        if scenario.circuit is None:
            raise ScenarioError("netlist export needs a circuit block", path="circuit")
        text = export_netlist(synthesize_circuit(None, scenario.circuit))
    except NhSenseError as e:
        return _report_failure(e, args.out)

    if args.out:
        path = ArtifactRepository(args.out).write_text(f"{scenario.name}.net", text)
        print(path)
    else:
        sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {
    "run": command_run,
    "validate": command_validate,
    "netlist": command_netlist,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
