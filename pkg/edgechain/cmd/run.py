from argparse import Namespace
from dataclasses import dataclass
import os
from logging import getLogger

import psutil

from edgechain.chain.executor import InvariantViolation
from edgechain.chain.serialize import ChainFile, ChainFooter
from edgechain.config import Config
from edgechain.sim.metrics import collect
from edgechain.sim.netsim import init_sim, run_until
from edgechain.sim.scenario import InvalidScenario, SimConfig, load_scenario

logger = getLogger(__name__)


@dataclass
class ResourceUsage:
    cpu_time: float  # seconds, user + system
    rss: int  # bytes


class ResourceTracker:
    """ CPU time and resident memory of this process across one run. """

    def __init__(self):
        self.proc = psutil.Process()
        self._cpu_start = self._cpu()
        self.peak_rss = self.proc.memory_info().rss

    def _cpu(self) -> float:
        times = self.proc.cpu_times()
        return times.user + times.system

    def sample(self):
        try:  # rss may be unavailable in restricted containers
            self.peak_rss = max(self.peak_rss, self.proc.memory_info().rss)
        except psutil.Error as e:
            logger.info("Stats tracking error %s", e)

    def usage(self) -> ResourceUsage:
        self.sample()
        return ResourceUsage(cpu_time=self._cpu() - self._cpu_start, rss=self.peak_rss)


def resolve_seed(flag: int | None, config: SimConfig) -> int:
    """ --seed, then $EDGECHAIN_SEED, then run.seed of the scenario. """
    if flag is not None:
        return flag
    env = os.environ.get('EDGECHAIN_SEED')
    if env:
        try:
            return int(env)
        except ValueError:
            raise InvalidScenario(f"EDGECHAIN_SEED={env!r} is not an integer") from None
    return config.run.seed


def do_run(cfg: Config, args: Namespace) -> int:
    """ Run one scenario; exit 0 on success, 2 on a bad scenario, 3 on a broken invariant. """
    try:
        config = load_scenario(args.scenario, cfg.scenario_dirs)
        seed = resolve_seed(args.seed, config)
        if not 0 <= seed < 1 << 64:
            raise InvalidScenario(f"seed {seed} is not an unsigned 64-bit integer")
        if args.blocks is not None and args.blocks < 0:
            raise InvalidScenario(f"--blocks must be non-negative, got {args.blocks}")
    except InvalidScenario as e:
        logger.error("Invalid scenario: %s", e)
        print(f"Invalid scenario: {e}")
        return 2
    blocks = config.run.max_blocks if args.blocks is None else args.blocks
    out_dir = args.out or cfg.out_dir
    logger.info("Running %s with seed %d up to height %d", args.scenario, seed, blocks)

    tracker = ResourceTracker()
    try:
        sim = init_sim(config, seed)
        run_until(sim, height=blocks)
        tracker.sample()
        report = collect(sim)
    except InvariantViolation as e:
        logger.exception("Invariant violated")
        print(f"Invariant violation: {e}")
        return 3
    usage = tracker.usage()

    chain = sim.observer.chain
    footer = ChainFooter(
        height=chain.height,
        tip=chain.tip_digest,
        contract_digest=report.final_state.contract.digest(),
        state_digest=report.final_state.digest(),
    )
    report.summary['cpu_time'] = round(usage.cpu_time, 3)
    report.summary['rss_bytes'] = usage.rss

    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_csv(out_dir / 'metrics.csv')
    ChainFile(seed=seed, scenario=config.to_dict(), chain=chain, footer=footer).dump(out_dir / 'chain.json')
    report.write_summary(out_dir / 'summary.json')

    summary = report.summary
    print(f"Height {chain.height} at tick {sim.now}, tip {chain.tip_digest.hex()}")
    print(f"Penalties collected {summary['penalties_collected']}, "
          f"reimbursements paid {summary['reimbursements_paid']}, drops {summary['drop_count']}")
    print(f"CPU {usage.cpu_time:.2f}s, RSS {usage.rss / 2**20:.1f} MiB")
    print(f"Wrote metrics.csv, chain.json and summary.json to {out_dir}")
    return 0
