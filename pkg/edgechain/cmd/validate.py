from logging import getLogger
from pathlib import Path

from edgechain.chain.chain import ChainError, validate_chain
from edgechain.chain.serialize import ChainFile, ChainFormatError
from edgechain.chain.state import WorldState
from edgechain.sim.scenario import Deployment, InvalidScenario, SimConfig, deploy
from edgechain.utils import short_hex

logger = getLogger(__name__)


class FooterMismatch(ChainError):
    pass


def load_chain_file(path: Path) -> tuple[ChainFile, Deployment]:
    """ Parse chain.json and rebuild the keys and genesis of the run that wrote it.
    Raises ChainFormatError (including for an embedded scenario that no longer parses).
    """
    chain_file = ChainFile.load(path)
    try:
        config = SimConfig.from_dict(chain_file.scenario)
    except InvalidScenario as e:
        raise ChainFormatError(f"embedded scenario: {e}") from e
    if not isinstance(chain_file.seed, int) or chain_file.seed < 0:
        raise ChainFormatError(f"seed must be a non-negative integer, got {chain_file.seed!r}")
    return chain_file, deploy(config, chain_file.seed)


def check_chain(chain_file: ChainFile, deployment: Deployment) -> WorldState:
    """ Structural validation, re-execution of every transaction, and the footer's
    height and tip. Returns the final state; raises the first ChainError.
    """
    chain = chain_file.chain
    validate_chain(chain, deployment.engine, deployment.genesis_stakes)
    state = deployment.executor.replay(chain.blocks, deployment.genesis_state)
    footer = chain_file.footer
    if footer.height != chain.height:
        raise FooterMismatch(f"footer height {footer.height} != chain height", chain.height)
    if footer.tip != chain.tip_digest:
        raise FooterMismatch(f"footer tip {short_hex(footer.tip)} != {short_hex(chain.tip_digest)}", chain.height)
    return state


def do_validate(path: Path) -> int:
    try:
        chain_file, deployment = load_chain_file(path)
    except ChainFormatError as e:
        logger.error("Cannot parse %s: %s", path, e)
        print(f"Parse error: {e}")
        return 2
    try:
        check_chain(chain_file, deployment)
    except ChainError as e:
        logger.error("Validation failed: %s", e)
        print(f"Invalid chain at height {e.height}: {e}")
        return 4
    print(f"Chain valid: height {chain_file.chain.height}, tip {chain_file.chain.tip_digest.hex()}")
    return 0
