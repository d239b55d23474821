"""
Command line for the experiment harness.

    python -m app.cli run --config configs/two_agent.json --rho 1
    python -m app.cli sweep --config configs/ring_of_ten.json --out runs/ring_of_ten

Exit codes: 0 success, 2 validation error, 3 invariant violation,
4 enumeration guard exceeded, 5 round/iteration budget exhausted.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional

from app.core.errors import NKMeansError
from app.core.logging import setup_logging
from app.services.experiment_service import experiment_service

logger = logging.getLogger(__name__)

SUBCOMMANDS = ("generate", "run", "lloyd", "sweep", "oracle", "verify")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nkmeans",
        description="Distributed K-means experiments over simulated agent networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="experiment JSON document")
        p.add_argument("--out", default=None, help="output directory (overrides config and OUTPUT_DIR)")
        p.add_argument("--seed", type=int, default=None, help="overrides the dataset and init seeds")
        p.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING, ...")
        if name in ("run", "oracle", "verify"):
            p.add_argument("--rho", type=float, required=name != "verify")
        if name == "verify":
            p.add_argument("--state", required=True, help="state_rho=<rho>.json written by 'run'")
    return parser


def dispatch(args: argparse.Namespace):
    config = experiment_service.load_config(args.config, args.seed)
    if args.command == "generate":
        return {"dataset": experiment_service.cmd_generate(config, args.out)}
    if args.command == "run":
        return experiment_service.cmd_run(config, args.rho, args.out).model_dump()
    if args.command == "lloyd":
        return experiment_service.cmd_lloyd(config, args.out).model_dump()
    if args.command == "sweep":
        return [row.model_dump() for row in experiment_service.cmd_sweep(config, args.out)]
    if args.command == "oracle":
        return experiment_service.cmd_oracle(config, args.rho, args.out).model_dump()
    return experiment_service.cmd_verify(config, args.state, args.rho, args.out).model_dump()


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        result = dispatch(args)
    except NKMeansError as e:
        logger.error(f"{args.command} failed: {e}")
        return e.exit_code
    print(json.dumps(result, indent=2, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
