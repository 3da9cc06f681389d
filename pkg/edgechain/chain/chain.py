from logging import getLogger
from typing import Iterable

from edgechain.chain.consensus import ConsensusEngine, StakeSet, advance_stakes
from edgechain.chain.ledger import (
    ZERO_ADDRESS, ZERO_DIGEST, Block, BlockHeader, compute_tx_root,
)
from edgechain.utils import EdgechainError, short_hex

logger = getLogger(__name__)


class ChainError(EdgechainError):
    """ A block failed validation; `height` is the offending block's height. """

    def __init__(self, message: str, height: int):
        super().__init__(f"{message} (height {height})")
        self.height = height

class BrokenLink(ChainError):
    pass

class BadHeight(ChainError):
    pass

class BadTxRoot(ChainError):
    pass

class BadProof(ChainError):
    pass

class BadGenesis(ChainError):
    pass

class BadTransaction(ChainError):
    pass


GENESIS_HEADER = BlockHeader(
    height=0,
    prev_hash=ZERO_DIGEST,
    tx_root=ZERO_DIGEST,
    timestamp=0,
    producer=ZERO_ADDRESS,
    consensus_proof=0,
)

def genesis_block() -> Block:
    return Block(header=GENESIS_HEADER, transactions=())


class Chain:
    """ Immutable hash-linked sequence of blocks starting at genesis.
    Appending returns a new Chain and leaves this one untouched.
    """

    __slots__ = ('blocks', 'digests')

    def __init__(self, blocks: Iterable[Block] | None = None):
        self.blocks: tuple[Block, ...] = tuple(blocks) if blocks is not None else (genesis_block(),)
        self.digests: tuple[bytes, ...] = tuple(b.digest for b in self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __repr__(self) -> str:
        return f"Chain(height={self.height}, tip={short_hex(self.tip_digest)})"

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def tip_digest(self) -> bytes:
        return self.digests[-1]

    @property
    def height(self) -> int:
        return self.tip.height

    def contains(self, digest: bytes, height: int) -> bool:
        return 0 <= height < len(self.digests) and self.digests[height] == digest

    def common_prefix(self, other: 'Chain') -> int:
        """ Number of leading blocks both chains share. """
        n = 0
        for a, b in zip(self.digests, other.digests):
            if a != b:
                break
            n += 1
        return n

    def extended(self, block: Block) -> 'Chain':
        """ Unchecked append, see `append_block` for the validating one. """
        new = Chain.__new__(Chain)
        new.blocks = self.blocks + (block,)
        new.digests = self.digests + (block.digest,)
        return new


def append_block(chain: Chain, block: Block, engine: ConsensusEngine, stakes: StakeSet) -> Chain:
    """ Validate `block` against the tip of `chain` and return the extended chain.
    `stakes` is the stake set in force after the tip (used by PoS).
    """
    header = block.header
    if header.prev_hash != chain.tip_digest:
        raise BrokenLink(
            f"prev_hash {short_hex(header.prev_hash)} != tip {short_hex(chain.tip_digest)}",
            header.height,
        )
    if header.height != chain.height + 1:
        raise BadHeight(f"expected height {chain.height + 1}", header.height)
    if compute_tx_root(block.transactions) != header.tx_root:
        raise BadTxRoot("tx_root does not match the transactions", header.height)
    if not engine.proof_valid(header, stakes):
        raise BadProof(f"invalid {engine.mode.value} proof", header.height)
    return chain.extended(block)


def validate_chain(chain: Chain, engine: ConsensusEngine, genesis_stakes: StakeSet):
    """ Replay every append_block check from genesis; raise the first ChainError. """
    first = chain.blocks[0]
    if first.header != GENESIS_HEADER or first.transactions:
        raise BadGenesis("first block is not the canonical genesis", first.height)
    rebuilt = Chain()
    stakes = genesis_stakes
    for block in chain.blocks[1:]:
        rebuilt = append_block(rebuilt, block, engine, stakes)
        stakes = advance_stakes(stakes, block.header.producer, engine.mode)
    logger.info("Validated %d blocks, tip %s", len(chain), short_hex(chain.tip_digest))
