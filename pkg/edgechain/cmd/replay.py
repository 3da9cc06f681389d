from logging import getLogger
from pathlib import Path

from edgechain.chain.chain import ChainError
from edgechain.chain.serialize import ChainFormatError
from edgechain.cmd.validate import check_chain, load_chain_file

logger = getLogger(__name__)


def do_replay(path: Path) -> int:
    """ Re-execute the chain from genesis and compare the recomputed digests with the footer. """
    try:
        chain_file, deployment = load_chain_file(path)
    except ChainFormatError as e:
        logger.error("Cannot parse %s: %s", path, e)
        print(f"Parse error: {e}")
        return 2
    try:
        state = check_chain(chain_file, deployment)
    except ChainError as e:
        logger.error("Chain invalid: %s", e)
        print(f"Invalid chain at height {e.height}: {e}")
        return 4

    footer = chain_file.footer
    contract_digest = state.contract.digest()
    state_digest = state.digest()
    logger.info("Recomputed contract digest %s, state digest %s", contract_digest.hex(), state_digest.hex())
    if contract_digest != footer.contract_digest or state_digest != footer.state_digest:
        print(f"Digest mismatch: contract {contract_digest.hex()} (recorded {footer.contract_digest.hex()}), "
              f"state {state_digest.hex()} (recorded {footer.state_digest.hex()})")
        return 5
    print(f"Replay matches: contract digest {contract_digest.hex()}")
    return 0
