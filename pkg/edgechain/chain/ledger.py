"""
Ledger value types, canonical encoding and hashing.

Encoding rules: fields in declaration order, integers big-endian fixed width,
byte strings prefixed with a 4-byte big-endian length, transaction kinds tagged
by one byte. A transaction's signature is excluded from its signing pre-image
and included when hashing the sealed transaction; a header's consensus proof
is likewise excluded from the header signing pre-image.
"""
from dataclasses import dataclass, field, replace
from functools import cached_property

from edgechain.chain.crypto import ADDRESS_LEN, DIGEST_LEN, KeyRegistry
from edgechain.chain.gas import GasSchedule
from edgechain.utils import EdgechainError, check_bytes, check_uint, length_prefixed, sha256, uint_be

ZERO_ADDRESS = bytes(ADDRESS_LEN)
ZERO_DIGEST = bytes(DIGEST_LEN)

TAG_TRANSFER = 0
TAG_CONTRACT_CALL = 1
TAG_MIGRATE = 2
TAG_PERMISSION_UPDATE = 3

PROOF_POW = 0
PROOF_POS = 1


class LedgerError(EdgechainError):
    pass

class BadSignature(LedgerError):
    pass

class BadNonce(LedgerError):
    pass

class InsufficientFunds(LedgerError):
    pass

class GasLimitTooLow(LedgerError):
    pass

class DuplicateTransaction(LedgerError):
    pass

class NotAllowlisted(LedgerError):
    pass


@dataclass(frozen=True)
class Transfer:
    to: bytes
    amount: int

    def __post_init__(self):
        check_bytes('to', self.to, ADDRESS_LEN)
        check_uint('amount', self.amount, 128)

    def encode(self) -> bytes:
        return bytes([TAG_TRANSFER]) + self.to + uint_be(self.amount, 16)


@dataclass(frozen=True)
class ContractCall:
    method_id: int
    args: bytes = b''

    def __post_init__(self):
        object.__setattr__(self, 'method_id', int(check_uint('method_id', self.method_id, 8)))
        check_bytes('args', self.args)

    def encode(self) -> bytes:
        return bytes([TAG_CONTRACT_CALL, self.method_id]) + length_prefixed(self.args)


@dataclass(frozen=True)
class Migrate:
    params: bytes

    def __post_init__(self):
        check_bytes('params', self.params)

    def encode(self) -> bytes:
        return bytes([TAG_MIGRATE]) + length_prefixed(self.params)


@dataclass(frozen=True)
class PermissionUpdate:
    target: bytes
    allow: bool

    def __post_init__(self):
        check_bytes('target', self.target, ADDRESS_LEN)

    def encode(self) -> bytes:
        return bytes([TAG_PERMISSION_UPDATE]) + self.target + bytes([1 if self.allow else 0])


TxKind = Transfer | ContractCall | Migrate | PermissionUpdate


@dataclass(frozen=True)
class Transaction:
    sender: bytes
    nonce: int
    kind: TxKind
    payload: bytes
    gas_limit: int
    gas_price: int
    signature: bytes = b''

    def __post_init__(self):
        check_bytes('sender', self.sender, ADDRESS_LEN)
        check_uint('nonce', self.nonce, 64)
        check_bytes('payload', self.payload)
        check_uint('gas_limit', self.gas_limit, 64)
        check_uint('gas_price', self.gas_price, 64)
        check_bytes('signature', self.signature)

    @cached_property
    def digest(self) -> bytes:
        """ SHA-256 of the sealed encoding (the tx hash). """
        return sha256(canonical_encode(self))

    @property
    def escrow(self) -> int:
        return self.gas_limit * self.gas_price

    def with_signature(self, signature: bytes) -> 'Transaction':
        return replace(self, signature=signature)


@dataclass(frozen=True)
class BlockHeader:
    height: int
    prev_hash: bytes
    tx_root: bytes
    timestamp: int
    producer: bytes
    consensus_proof: int | bytes = 0  # PoW nonce or PoS signature

    def __post_init__(self):
        check_uint('height', self.height, 64)
        check_bytes('prev_hash', self.prev_hash, DIGEST_LEN)
        check_bytes('tx_root', self.tx_root, DIGEST_LEN)
        check_uint('timestamp', self.timestamp, 64)
        check_bytes('producer', self.producer, ADDRESS_LEN)
        if not isinstance(self.consensus_proof, bytes):
            check_uint('consensus_proof', self.consensus_proof, 64)


@dataclass(frozen=True)
class Block:
    header: BlockHeader
    transactions: tuple[Transaction, ...] = field(default_factory=tuple)

    @cached_property
    def digest(self) -> bytes:
        return hash_block(self.header)

    @property
    def height(self) -> int:
        return self.header.height


@dataclass(frozen=True)
class Account:
    address: bytes
    balance: int = 0
    nonce: int = 0
    stake: int = 0
    stake_age: int = 0


def _encode_proof(proof: int | bytes) -> bytes:
    if isinstance(proof, bytes):
        return bytes([PROOF_POS]) + length_prefixed(proof)
    return bytes([PROOF_POW]) + uint_be(proof, 8)

def canonical_encode(item: Transaction | BlockHeader, signing: bool = False) -> bytes:
    """ Injective, deterministic encoding.
    With signing=True the signature (tx) or consensus proof (header) is left out,
    giving the pre-image that gets signed or mined.
    """
    match item:
        case Transaction():
            out = (
                item.sender
                + uint_be(item.nonce, 8)
                + item.kind.encode()
                + length_prefixed(item.payload)
                + uint_be(item.gas_limit, 8)
                + uint_be(item.gas_price, 8)
            )
            if not signing:
                out += length_prefixed(item.signature)
            return out
        case BlockHeader():
            out = (
                uint_be(item.height, 8)
                + item.prev_hash
                + item.tx_root
                + uint_be(item.timestamp, 8)
                + item.producer
            )
            if not signing:
                out += _encode_proof(item.consensus_proof)
            return out
    raise TypeError(f"cannot encode {type(item).__name__}")

def hash_bytes(data: bytes) -> bytes:
    return sha256(data)

def hash_block(header: BlockHeader) -> bytes:
    return sha256(canonical_encode(header))

def compute_tx_root(transactions: tuple[Transaction, ...] | list[Transaction]) -> bytes:
    """ Flat root: SHA-256 over the concatenated transaction digests, in order. """
    return sha256(b''.join(tx.digest for tx in transactions))

def pow_prefix(header: BlockHeader) -> bytes:
    """ Everything of the sealed PoW encoding except the 8 nonce bytes. """
    return canonical_encode(header, signing=True) + bytes([PROOF_POW])


def verify_transaction(
    tx: Transaction,
    account: Account,
    schedule: GasSchedule,
    registry: KeyRegistry,
):
    """ Raise the LedgerError of the first failed check, in the order
    signature, nonce, funds, gas limit.
    """
    if not registry.verify(tx.sender, canonical_encode(tx, signing=True), tx.signature):
        raise BadSignature(f"signature of {tx.sender.hex()} does not verify")
    if tx.nonce != account.nonce:
        raise BadNonce(f"nonce {tx.nonce}, expected {account.nonce}")
    needed = tx.escrow
    if isinstance(tx.kind, Transfer):
        needed += tx.kind.amount
    if account.balance < needed:
        raise InsufficientFunds(f"balance {account.balance} < {needed}")
    if tx.gas_limit < schedule.base_tx:
        raise GasLimitTooLow(f"gas limit {tx.gas_limit} < base cost {schedule.base_tx}")
