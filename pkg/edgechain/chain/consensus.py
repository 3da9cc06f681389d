"""
Block-production legitimacy: PoW mining and verification, stake- and
age-weighted PoS selection, the >2/3 finality predicate and fork choice.
Everything here is a pure function of its inputs.
"""
from dataclasses import dataclass, replace
from enum import Enum
from fractions import Fraction
import hashlib
from logging import getLogger
from typing import TYPE_CHECKING, Sequence

from edgechain.chain.crypto import Keypair, KeyRegistry, sign
from edgechain.chain.ledger import BlockHeader, canonical_encode, pow_prefix
from edgechain.utils import (
    EdgechainError, FrozenModel, Positive64, Uint128, check_uint, sha256, short_hex, uint_be,
)

if TYPE_CHECKING:
    from edgechain.chain.chain import Chain

logger = getLogger(__name__)


class ConsensusError(EdgechainError):
    pass

class DifficultyZero(ConsensusError):
    pass

class NoSolution(ConsensusError):
    pass

class EmptyStakeSet(ConsensusError):
    pass

class VotesExceedNodes(ConsensusError):
    pass

class EmptyQuorum(ConsensusError):
    pass

class NoCandidates(ConsensusError):
    pass

class NotSelected(ConsensusError):
    pass


class ConsensusMode(str, Enum):
    POW = 'pow'
    POS = 'pos'


class ConsensusConfig(FrozenModel):
    mode: ConsensusMode = ConsensusMode.POW
    difficulty: Positive64 = 16
    block_reward: Uint128 = 50
    target_block_interval: Positive64 = 4  # ticks


@dataclass(frozen=True)
class StakeEntry:
    address: bytes
    stake: int
    age: int

    @property
    def weight(self) -> int:
        return self.stake * (1 + self.age)


@dataclass(frozen=True)
class StakeSet:
    entries: tuple[StakeEntry, ...] = ()

    def __post_init__(self):
        addresses = [e.address for e in self.entries]
        if len(set(addresses)) != len(addresses):
            raise ValueError("stake set addresses must be unique")

    @property
    def total_weight(self) -> int:
        return sum(e.weight for e in self.entries)


def advance_stakes(stakes: StakeSet, producer: bytes, mode: ConsensusMode) -> StakeSet:
    """ Age every stake by one block; under PoS the producer's age restarts at 0. """
    return StakeSet(tuple(
        replace(e, age=0 if mode is ConsensusMode.POS and e.address == producer else e.age + 1)
        for e in stakes.entries
    ))


def pow_target(difficulty: int) -> int:
    """ floor(2^256 / difficulty); a digest is valid iff it's below this. """
    if difficulty == 0:
        raise DifficultyZero("difficulty must be at least 1")
    return (1 << 256) // difficulty

def pow_mine(template: BlockHeader, difficulty: int, max_iterations: int) -> tuple[int, bytes]:
    """ Smallest nonce in [0, max_iterations) whose sealed digest is below the target. """
    target = pow_target(difficulty)
    prefix = hashlib.sha256(pow_prefix(template))
    for nonce in range(max_iterations):
        h = prefix.copy()
        h.update(uint_be(nonce, 8))
        digest = h.digest()
        if int.from_bytes(digest, 'big') < target:
            logger.debug("Mined height %d with nonce %d (%s)", template.height, nonce, short_hex(digest))
            return nonce, digest
    raise NoSolution(f"no nonce below {max_iterations} meets difficulty {difficulty}")

def pow_verify(header: BlockHeader, difficulty: int) -> bool:
    if isinstance(header.consensus_proof, bytes):
        return False
    digest = sha256(canonical_encode(header))
    return int.from_bytes(digest, 'big') < pow_target(difficulty)


def pos_select(stakes: StakeSet, seed: int, epoch: int) -> bytes:
    """ Weighted draw: weight = stake * (1 + age),
    r = SHA-256(seed || epoch) mod total weight, first cumulative weight above r wins.
    """
    check_uint('seed', seed, 64)
    check_uint('epoch', epoch, 64)
    total = stakes.total_weight
    if total == 0:
        raise EmptyStakeSet("total stake weight is zero")
    r = int.from_bytes(sha256(uint_be(seed, 8) + uint_be(epoch, 8)), 'big') % total
    cumulative = 0
    for entry in stakes.entries:
        cumulative += entry.weight
        if cumulative > r:
            return entry.address
    raise AssertionError("unreachable: r < total weight")


class Finality(Enum):
    FINAL = 'final'
    NOT_FINAL = 'not_final'

def finality_check(votes: int, n: int) -> Finality:
    """ Final iff votes > 2n/3, strictly, in exact rational arithmetic. """
    if n < 1 or votes < 0:
        raise EmptyQuorum(f"need n >= 1 and votes >= 0, got votes={votes} n={n}")
    if votes > n:
        raise VotesExceedNodes(f"{votes} votes from {n} nodes")
    return Finality.FINAL if Fraction(votes) > Fraction(2 * n, 3) else Finality.NOT_FINAL


def fork_choice(candidates: Sequence['Chain']) -> 'Chain':
    """ Longest chain wins, ties go to the lexicographically smaller tip digest. """
    if not candidates:
        raise NoCandidates("fork choice needs at least one chain")
    return min(candidates, key=lambda c: (-len(c), c.tip_digest))


class ConsensusEngine:
    """ Seals and checks consensus proofs for one configured mode. """

    def __init__(self, config: ConsensusConfig, seed: int, registry: KeyRegistry,
                 max_iterations: int = 1_000_000):
        self.config = config
        self.seed = seed
        self.registry = registry
        self.max_iterations = max_iterations

    @property
    def mode(self) -> ConsensusMode:
        return self.config.mode

    def proof_valid(self, header: BlockHeader, stakes: StakeSet) -> bool:
        match self.mode:
            case ConsensusMode.POW:
                return pow_verify(header, self.config.difficulty)
            case ConsensusMode.POS:
                if not isinstance(header.consensus_proof, bytes):
                    return False
                try:
                    expected = pos_select(stakes, self.seed, header.height)
                except EmptyStakeSet:
                    return False
                if expected != header.producer:
                    logger.debug("Height %d sealed by %s, validator is %s",
                                 header.height, short_hex(header.producer), short_hex(expected))
                    return False
                return self.registry.verify(
                    header.producer, canonical_encode(header, signing=True), header.consensus_proof,
                )

    def seal(self, template: BlockHeader, keypair: Keypair, stakes: StakeSet) -> BlockHeader:
        """ Fill in the consensus proof. Raises NoSolution (PoW) or NotSelected (PoS). """
        match self.mode:
            case ConsensusMode.POW:
                nonce, _ = pow_mine(template, self.config.difficulty, self.max_iterations)
                return replace(template, consensus_proof=nonce)
            case ConsensusMode.POS:
                selected = pos_select(stakes, self.seed, template.height)
                if selected != keypair.address:
                    raise NotSelected(f"height {template.height} belongs to {selected.hex()}")
                signature = sign(keypair, canonical_encode(template, signing=True))
                return replace(template, consensus_proof=signature)
