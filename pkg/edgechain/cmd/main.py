from argparse import ArgumentParser, RawDescriptionHelpFormatter
import json
import logging
import os
from pathlib import Path
import colorlog
from datetime import datetime

from edgechain.cmd.replay import do_replay
from edgechain.cmd.run import do_run
from edgechain.cmd.scenarios import do_list_scenarios
from edgechain.cmd.validate import do_validate
from edgechain.config import Config, edgechain_home
from edgechain.sim.scenario import SimConfig


def main(argv: list[str] | None = None) -> int:
    # Parse command line arguments
    description = """
Deterministic simulator of a permissioned blockchain serving edge servers and IoT devices.
    """.strip()
    parser = ArgumentParser(prog='edgechain', description=description)
    parser.add_argument('--log-level', type=str,
                        default=os.environ.get('LOG_LEVEL', 'WARNING'),
                        help="""
Configure the logging level (INFO, ERROR, etc).
Also controlled by environment variable LOG_LEVEL, but argument takes precedence.
                        """,)
    subparsers = parser.add_subparsers(dest='subcommand', required=True)

    # run
    run_parser = subparsers.add_parser(
        'run',
        formatter_class=RawDescriptionHelpFormatter,
        usage="""
edgechain run --scenario <file-or-name> [--seed N] [--out DIR] [--blocks N]

Run a scenario and write metrics.csv, chain.json and summary.json into DIR.
    """.strip(),
        epilog="Scenario defaults (every key is optional except nodes):\n"
               + json.dumps(SimConfig().to_dict(), indent=2)
               + "\n\nNode defaults:\n"
               + json.dumps(SimConfig.node_defaults(), indent=2),
    )
    run_parser.add_argument('-s', '--scenario', type=str, required=True, help="""
A scenario json file, a built-in scenario name (see list-scenarios), or the name
of a <name>.json file in one of the configured scenario_dirs.
    """)
    run_parser.add_argument('--seed', type=int, help="""
Simulation seed. Falls back to environment variable EDGECHAIN_SEED, then run.seed of the scenario.
    """)
    run_parser.add_argument('-o', '--out', type=Path, help="""
Output directory (default: out_dir of ~/.edgechain/config.json, "edgechain-out").
    """)
    run_parser.add_argument('--blocks', type=int, help="""
Stop once the observing edge server reaches this height (default: run.max_blocks).
    """)

    # validate
    validate_parser = subparsers.add_parser('validate', description="""
Check hash links, heights, tx roots, consensus proofs and transactions of a chain.json.
Exit 0 if valid, 2 if unreadable, 4 with the offending height otherwise.
    """)
    validate_parser.add_argument('--chain', type=Path, required=True)

    # replay
    replay_parser = subparsers.add_parser('replay', description="""
Re-execute a chain.json from genesis and compare the contract state digest with its footer.
Exit 0 on match, 2 if unreadable, 4 if the chain is invalid, 5 on digest mismatch.
    """)
    replay_parser.add_argument('--chain', type=Path, required=True)

    # list-scenarios
    subparsers.add_parser('list-scenarios', description="List the built-in scenarios.")

    args = parser.parse_args(argv)

    # Ensure dir ~/.edgechain exists
    root_cfg = edgechain_home()
    root_cfg.mkdir(parents=True, exist_ok=True)

    # Colorful console + file logging
    handler_console = colorlog.StreamHandler()
    handler_console.setFormatter(colorlog.ColoredFormatter(
        '%(log_color)s[%(levelname)s] %(name)s: %(message)s'))
    handler_console.setLevel(args.log_level.upper())
    logs_dir = root_cfg / 'logs'
    logs_dir.mkdir(exist_ok=True)
    log_file = logs_dir / datetime.today().strftime('%Y-%m-%d.log')
    handler_logfile = logging.FileHandler(log_file)
    handler_logfile.setLevel(logging.DEBUG)
    handler_logfile.setFormatter(logging.Formatter(
        '%(asctime)s - [%(levelname)s] %(name)s: %(message)s'))
    logging.basicConfig(handlers=[
        handler_console, handler_logfile
    ], level=logging.DEBUG)
    logging.debug("Start at %s with args %s", Path.cwd(), args)

    cfg = Config.from_file(root_cfg / 'config.json')

    match args.subcommand:
        case 'run':
            return do_run(cfg, args)
        case 'validate':
            return do_validate(args.chain)
        case 'replay':
            return do_replay(args.chain)
        case 'list-scenarios':
            return do_list_scenarios()
    return 0
