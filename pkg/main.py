#!/usr/bin/env python3
"""
RisBeam - Main Entry Point
Joint hybrid beamforming and RIS design for mmWave multiuser downlink: solvers
and Monte-Carlo experiment sweeps.
"""

import asyncio
import os
import logging
import yaml
import argparse
import sys
from pathlib import Path
from typing import Dict, Any, List, Tuple

from dotenv import load_dotenv

from beamforming import BeamformingSolver, ALGORITHMS
from beamforming.mmf import FULL_JOINT, FIXED_PHASES
from beamforming.manifold import write_rcg_trace
from beamforming.penalty import write_trace
from beamforming.sequential import write_diagnostics
from channel import load_channel_params, sample_channels, dump_channels_csv
from experiment import ExperimentSpec, ExperimentRunner, SWEEP_AXES, format_summary
from scenario import load_scenario, RngSeed, ScenarioError

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2

COMPARED_METHODS = ("penalty-alt", "penalty-joint-rcg", "penalty-joint-sca")
BASELINES = ("sequential", "random-theta", "sdr-theta", "fully-digital")
DEFAULT_OUTPUTS = {"output": "results/qos.csv", "mmf_output": "results/mmf.csv"}


# Configure logging
def setup_logging(log_level: str = "INFO", log_file: str = "risbeam.log"):
    """Setup logging configuration"""
    log_format = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

    # Create logs directory if it doesn't exist
    logs_dir = Path("logs")
    logs_dir.mkdir(exist_ok=True)

    logging.basicConfig(
        level=getattr(logging, log_level.upper()),
        format=log_format,
        handlers=[
            logging.FileHandler(logs_dir / log_file),
            logging.StreamHandler(sys.stdout)
        ]
    )


def resolve_scenario_path(path: str = None) -> str:
    """--scenario, then RISBEAM_SCENARIO, then config.yaml"""
    return path or os.getenv("RISBEAM_SCENARIO") or "config.yaml"


def load_config(config_path: str) -> Tuple[str, Dict[str, Any]]:
    """Load the scenario document; returns its text and the parsed mapping"""
    try:
        text = Path(config_path).read_text()
        config = yaml.safe_load(text) or {}
        return text, config
    except FileNotFoundError:
        logging.error(f"Scenario file {config_path} not found")
        sys.exit(EXIT_ERROR)
    except yaml.YAMLError as e:
        logging.error(f"Error parsing scenario file: {e}")
        sys.exit(EXIT_ERROR)


def parse_values(raw: str) -> Tuple[str, ...]:
    return tuple(v.strip() for v in raw.split(",") if v.strip()) if raw else ()


def build_spec(args, text: str, config: Dict[str, Any], algorithms: List[str],
               output_key: str = "output") -> ExperimentSpec:
    """Merge CLI flags over the scenario's experiment section; output_key picks the default CSV path"""
    system, solver = load_scenario(text)
    params = load_channel_params(text)
    experiment = config.get('experiment', {}) or {}
    axis = getattr(args, 'axis', None) or "none"
    return ExperimentSpec(
        system=system,
        solver=solver,
        params=params,
        algorithms=tuple(algorithms),
        axis=axis,
        values=parse_values(getattr(args, 'values', None)) if axis != "none" else (),
        realizations=args.realizations or int(experiment.get('realizations', 20)),
        seed=args.seed if args.seed is not None else int(experiment.get('seed', 0)),
        output=args.out or experiment.get(output_key, DEFAULT_OUTPUTS.get(output_key)),
        workers=args.workers or int(experiment.get('workers', 1)),
        record_timing=args.record_timing or bool(experiment.get('record_timing', False)),
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", "-s", help="Scenario YAML (default: $RISBEAM_SCENARIO or config.yaml)")
    common.add_argument("--seed", type=int, help="Base seed of the channel streams")
    common.add_argument("--realizations", "-n", type=int, help="Number of channel realizations")
    common.add_argument("--out", "-o", help="Output CSV path")
    common.add_argument("--workers", "-j", type=int, help="Worker processes")
    common.add_argument("--record-timing", action="store_true", help="Add a wall_ms column to the CSV")
    common.add_argument("--log-level", default=None, choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="risbeam",
                                     description="RisBeam - RIS-aided hybrid beamforming solvers and experiments")
    commands = parser.add_subparsers(dest="command", required=True)

    qos = commands.add_parser("qos", parents=[common], help="Minimum-power design per realization")
    qos.add_argument("--algorithm", "-a", action="append", choices=ALGORITHMS)

    mmf = commands.add_parser("mmf", parents=[common], help="Max-min fairness at a power budget")
    mmf.add_argument("--budget", type=float, required=True, help="Power budget in dBm")
    mmf.add_argument("--mode", default=FULL_JOINT, choices=[FULL_JOINT, FIXED_PHASES])

    sweep = commands.add_parser("sweep", parents=[common], help="Sweep one scenario parameter")
    sweep.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep.add_argument("--values", help="Comma-separated sweep values")
    sweep.add_argument("--algorithm", "-a", action="append", choices=ALGORITHMS)

    compare = commands.add_parser("compare-methods", parents=[common], help="Phase-update methods side by side")
    compare.add_argument("--axis", default="none", choices=SWEEP_AXES)
    compare.add_argument("--values", help="Comma-separated sweep values")
    compare.add_argument("--baselines", action="store_true", help="Also run the sequential and fixed-RIS baselines")

    trace = commands.add_parser("trace", parents=[common], help="Convergence trace of one penalty run")
    trace.add_argument("--algorithm", "-a", default="penalty-joint-rcg", choices=list(COMPARED_METHODS) + ["sequential"])
    trace.add_argument("--realization", type=int, default=0)
    trace.add_argument("--dump-channels", help="Also write the channel realization to this CSV")
    trace.add_argument("--rcg-out", help="Also write the per-iteration trace of the first phase update to this CSV")
    return parser


async def run_trace(args, text: str, config: Dict[str, Any]) -> int:
    logger = logging.getLogger(__name__)
    system, solver = load_scenario(text)
    params = load_channel_params(text)
    seed = RngSeed(args.seed if args.seed is not None else int((config.get('experiment') or {}).get('seed', 0)),
                   args.realization)
    channels = sample_channels(system, params, seed)
    if args.dump_channels:
        dump_channels_csv(channels, args.dump_channels)
    out = args.out or f"trace_{args.algorithm}.csv"
    solution = BeamformingSolver(system, solver).solve(channels, args.algorithm, seed)
    if args.algorithm == "sequential":
        write_diagnostics(solution, out)
    else:
        write_trace(solution.trace, out)
    if args.rcg_out:
        if solution.phase_trace is None:
            logger.warning(f"{args.algorithm} records no phase-update trace; {args.rcg_out} not written")
        else:
            write_rcg_trace(solution.phase_trace, args.rcg_out)
    logger.info(f"{args.algorithm}: {solution.status}, power {solution.power_dbm:.2f} dBm, "
                f"{len(solution.trace)} trace rows")
    return EXIT_OK if solution.feasible else EXIT_INFEASIBLE


async def main() -> int:
    """Main entry point"""
    load_dotenv()
    args = build_parser().parse_args()

    scenario_path = resolve_scenario_path(args.scenario)
    text, config = load_config(scenario_path)

    # Setup logging
    logging_config = config.get('logging', {}) or {}
    setup_logging(
        args.log_level or logging_config.get('level', 'INFO'),
        logging_config.get('file', 'risbeam.log')
    )

    logger = logging.getLogger(__name__)
    logger.info(f"RisBeam {args.command} starting with scenario {scenario_path}")

    try:
        if args.command == "trace":
            return await run_trace(args, text, config)

        if args.command == "compare-methods":
            algorithms = list(COMPARED_METHODS) + (list(BASELINES) if args.baselines else [])
        else:
            algorithms = getattr(args, 'algorithm', None) or ["penalty-joint-rcg"]
        spec = build_spec(args, text, config, algorithms,
                          output_key="mmf_output" if args.command == "mmf" else "output")
        runner = ExperimentRunner(spec)

        if args.command == "mmf":
            rows = await runner.run_mmf(args.budget, args.mode)
            for row in rows:
                logger.info(f"realization {row.realization}: min SINR ratio {row.min_ratio_db:.2f} dB, "
                            f"power {row.power_dbm:.2f} dBm")
            return EXIT_INFEASIBLE if any(not row.feasible for row in rows) else EXIT_OK

        await runner.run()
        logger.info("=== SUMMARY (feasible realizations) ===\n" + format_summary(runner.summary()))
        if runner.any_infeasible:
            logger.warning("Some realizations were infeasible")
            return EXIT_INFEASIBLE
        return EXIT_OK
    except ScenarioError as e:
        logger.error(f"Invalid scenario: {str(e)}")
        return EXIT_ERROR
    except Exception as e:
        logger.error(f"Application failed: {str(e)}")
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(asyncio.run(main()))
