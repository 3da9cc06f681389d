from dataclasses import replace
import hashlib

import pytest

from conftest import ADMIN, DEVICE_1, DEVICE_2, PRODUCER, sign_tx
from edgechain.chain.chain import (
    GENESIS_HEADER, BadGenesis, BadHeight, BadProof, BadTxRoot, BrokenLink, Chain, ChainError,
    append_block, genesis_block, validate_chain,
)
from edgechain.chain.consensus import ConsensusConfig, ConsensusEngine, StakeSet
from edgechain.chain.crypto import KeyRegistry, UnknownScheme, address_of, derive_keypair
from edgechain.chain.gas import GasSchedule
from edgechain.chain.ledger import (
    ZERO_ADDRESS, ZERO_DIGEST, Account, BadNonce, BadSignature, Block, BlockHeader, ContractCall,
    GasLimitTooLow, InsufficientFunds, PermissionUpdate, Transaction, Transfer, canonical_encode,
    compute_tx_root, hash_block, verify_transaction,
)

REGISTRY = KeyRegistry([ADMIN, DEVICE_1, DEVICE_2, PRODUCER])
ENGINE = ConsensusEngine(ConsensusConfig(difficulty=16), seed=0, registry=REGISTRY)
NO_STAKES = StakeSet()


def zero_transfer(**kwargs) -> Transaction:
    fields = dict(sender=ZERO_ADDRESS, nonce=0, kind=Transfer(ZERO_ADDRESS, 0), payload=b'',
                  gas_limit=0, gas_price=0)
    fields.update(kwargs)
    return Transaction(**fields)


def test_zero_transfer_encoding_length():
    # sender 20 + nonce 8 + (tag 1 + to 20 + amount 16) + payload length 4 + gas_limit 8 + gas_price 8
    assert len(canonical_encode(zero_transfer(), signing=True)) == 85
    # sealed form adds the 4-byte signature length
    assert len(canonical_encode(zero_transfer())) == 89


def test_encoding_is_deterministic_and_injective():
    a, b = zero_transfer(nonce=1), zero_transfer(nonce=2)
    assert canonical_encode(a) == canonical_encode(a)
    assert canonical_encode(a) != canonical_encode(b)
    # same bytes split differently between payload and signature must not collide
    c = zero_transfer(payload=b'\x01', signature=b'')
    d = zero_transfer(payload=b'', signature=b'\x01')
    assert canonical_encode(c) != canonical_encode(d)


def test_kind_tags():
    assert PermissionUpdate(ZERO_ADDRESS, True).encode()[0] == 3
    assert ContractCall(2).encode()[:2] == b'\x01\x02'
    signing = canonical_encode(zero_transfer(), signing=True)
    assert signing[28] == 0  # Transfer tag right after sender and nonce


def test_genesis_header_hash():
    encoded = canonical_encode(GENESIS_HEADER)
    assert encoded == bytes(109)
    assert hash_block(GENESIS_HEADER) == hashlib.sha256(bytes(109)).digest()
    assert hash_block(GENESIS_HEADER) == hash_block(replace(GENESIS_HEADER))


def test_one_bit_of_prev_hash_changes_the_digest():
    flipped = replace(GENESIS_HEADER, prev_hash=b'\x01' + bytes(31))
    assert hash_block(flipped) != hash_block(GENESIS_HEADER)


def test_tx_root_is_flat_digest_concatenation():
    txs = [sign_tx(DEVICE_1, Transfer(DEVICE_2.address, 1), nonce=n) for n in range(3)]
    expected = hashlib.sha256(b''.join(hashlib.sha256(canonical_encode(t)).digest() for t in txs)).digest()
    assert compute_tx_root(txs) == expected
    assert compute_tx_root([]) == hashlib.sha256(b'').digest()


def test_mock_address_derivation():
    keypair = derive_keypair(b'a')
    public_key = hashlib.sha256(b'a').digest()
    assert keypair.public_key == public_key
    assert keypair.address == hashlib.sha256(public_key).digest()[:20]
    assert address_of(public_key) == keypair.address


class TestVerifyTransaction:

    def account(self, **kwargs) -> Account:
        return Account(address=DEVICE_1.address, **{'balance': 1_000, **kwargs})

    def test_ok_with_recomputed_mock_signature(self):
        tx = sign_tx(DEVICE_1, ContractCall(2), nonce=0, gas_limit=100)
        pre_image = canonical_encode(tx, signing=True)
        assert tx.signature == hashlib.sha256(b'device-1' + pre_image).digest()
        verify_transaction(tx, self.account(), GasSchedule(), REGISTRY)

    def test_bad_nonce(self):
        tx = sign_tx(DEVICE_1, ContractCall(2), nonce=5)
        with pytest.raises(BadNonce):
            verify_transaction(tx, self.account(nonce=4), GasSchedule(), REGISTRY)

    def test_insufficient_funds(self):
        tx = sign_tx(DEVICE_1, ContractCall(2), gas_limit=100, gas_price=1)
        with pytest.raises(InsufficientFunds):
            verify_transaction(tx, self.account(balance=10), GasSchedule(), REGISTRY)

    def test_transfer_amount_counts_towards_funds(self):
        tx = sign_tx(DEVICE_1, Transfer(DEVICE_2.address, 950), gas_limit=100)
        with pytest.raises(InsufficientFunds):
            verify_transaction(tx, self.account(), GasSchedule(), REGISTRY)

    def test_gas_limit_below_base_cost(self):
        tx = sign_tx(DEVICE_1, ContractCall(2), gas_limit=20)
        with pytest.raises(GasLimitTooLow):
            verify_transaction(tx, self.account(), GasSchedule(), REGISTRY)

    def test_tampered_signature(self):
        tx = sign_tx(DEVICE_1, ContractCall(2))
        forged = replace(tx, nonce=1)
        with pytest.raises(BadSignature):
            verify_transaction(forged, self.account(nonce=1), GasSchedule(), REGISTRY)

    def test_signature_checked_first(self):
        tx = replace(sign_tx(DEVICE_1, ContractCall(2), nonce=9, gas_limit=1), signature=b'junk')
        with pytest.raises(BadSignature):
            verify_transaction(tx, self.account(balance=0), GasSchedule(), REGISTRY)

    def test_unknown_sender(self):
        stranger = derive_keypair(b'stranger')
        tx = sign_tx(stranger, ContractCall(2))
        with pytest.raises(BadSignature):
            verify_transaction(tx, Account(address=stranger.address, balance=10_000), GasSchedule(), REGISTRY)


def next_block(chain: Chain, transactions=(), producer=PRODUCER.address) -> Block:
    template = BlockHeader(
        height=chain.height + 1,
        prev_hash=chain.tip_digest,
        tx_root=compute_tx_root(transactions),
        timestamp=4 * (chain.height + 1),
        producer=producer,
    )
    return Block(ENGINE.seal(template, PRODUCER, NO_STAKES), tuple(transactions))


def build_chain(length: int) -> Chain:
    chain = Chain()
    for n in range(length):
        tx = sign_tx(DEVICE_1, Transfer(DEVICE_2.address, 1), nonce=n)
        chain = append_block(chain, next_block(chain, [tx]), ENGINE, NO_STAKES)
    return chain


def test_append_linked_block():
    chain = append_block(Chain(), next_block(Chain()), ENGINE, NO_STAKES)
    assert len(chain) == 2
    assert chain.height == 1
    assert chain.blocks[0] == genesis_block()


def test_append_rejects_zero_prev_hash():
    block = next_block(Chain())
    bad = Block(ENGINE.seal(replace(block.header, prev_hash=ZERO_DIGEST), PRODUCER, NO_STAKES))
    with pytest.raises(BrokenLink) as e:
        append_block(Chain(), bad, ENGINE, NO_STAKES)
    assert e.value.height == 1


def test_append_rejects_duplicate_height():
    chain = build_chain(1)
    block = next_block(chain)
    dup = Block(ENGINE.seal(replace(block.header, height=1), PRODUCER, NO_STAKES))
    with pytest.raises(BadHeight):
        append_block(chain, dup, ENGINE, NO_STAKES)


def test_append_rejects_unmined_header():
    block = next_block(Chain())
    nonce = block.header.consensus_proof
    # pick a nonce that misses the target
    for candidate in range(nonce + 1, nonce + 1000):
        header = replace(block.header, consensus_proof=candidate)
        if not ENGINE.proof_valid(header, NO_STAKES):
            break
    with pytest.raises(BadProof):
        append_block(Chain(), Block(header), ENGINE, NO_STAKES)


def test_validate_fresh_chain():
    validate_chain(build_chain(10), ENGINE, NO_STAKES)
    validate_chain(Chain(), ENGINE, NO_STAKES)


def test_validate_reports_mutated_transactions():
    chain = build_chain(10)
    blocks = list(chain.blocks)
    other = sign_tx(DEVICE_1, Transfer(DEVICE_2.address, 2), nonce=4)
    blocks[5] = Block(blocks[5].header, (other,))
    with pytest.raises(BadTxRoot) as e:
        validate_chain(Chain(blocks), ENGINE, NO_STAKES)
    assert e.value.height == 5


def flip_first_byte(data: bytes) -> bytes:
    return bytes([data[0] ^ 1]) + data[1:]


@pytest.mark.parametrize('mutate', [
    lambda h: replace(h, height=h.height + 1),
    lambda h: replace(h, prev_hash=flip_first_byte(h.prev_hash)),
    lambda h: replace(h, tx_root=flip_first_byte(h.tx_root)),
    lambda h: replace(h, timestamp=h.timestamp + 1),
    lambda h: replace(h, producer=flip_first_byte(h.producer)),
    lambda h: replace(h, consensus_proof=h.consensus_proof + 1),
], ids=['height', 'prev_hash', 'tx_root', 'timestamp', 'producer', 'consensus_proof'])
def test_validate_catches_any_header_change(mutate):
    blocks = list(build_chain(10).blocks)
    blocks[5] = Block(mutate(blocks[5].header), blocks[5].transactions)
    with pytest.raises(ChainError) as e:
        validate_chain(Chain(blocks), ENGINE, NO_STAKES)
    # either the block itself fails or its successor no longer links to it
    assert e.value.height in (5, 6)


def test_validate_catches_signature_change():
    blocks = list(build_chain(10).blocks)
    tx = blocks[5].transactions[0]
    blocks[5] = Block(blocks[5].header, (replace(tx, signature=flip_first_byte(tx.signature)),))
    with pytest.raises(BadTxRoot) as e:
        validate_chain(Chain(blocks), ENGINE, NO_STAKES)
    assert e.value.height == 5


def test_validate_rejects_foreign_genesis():
    fake = Block(replace(GENESIS_HEADER, timestamp=1))
    with pytest.raises(BadGenesis):
        validate_chain(Chain([fake]), ENGINE, NO_STAKES)


def test_ed25519_scheme():
    keypair = derive_keypair(b'edge-1', 'ed25519')
    assert len(keypair.public_key) == 32
    registry = KeyRegistry([keypair])
    tx = sign_tx(keypair, Transfer(DEVICE_2.address, 1))
    assert len(tx.signature) == 64
    # deterministic signatures keep runs replayable
    assert sign_tx(keypair, Transfer(DEVICE_2.address, 1)).signature == tx.signature
    verify_transaction(tx, Account(address=keypair.address, balance=10_000), GasSchedule(), registry)
    with pytest.raises(BadSignature):
        verify_transaction(replace(tx, nonce=1), Account(address=keypair.address, balance=10_000, nonce=1),
                           GasSchedule(), registry)


def test_unknown_scheme():
    with pytest.raises(UnknownScheme):
        derive_keypair(b'a', 'rsa')
