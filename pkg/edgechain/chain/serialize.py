"""
JSON forms of ledger objects. Byte strings are lowercase hex without prefix,
integers stay JSON numbers; a PoS consensus proof (a signature) is hex, a PoW
proof (a nonce) is a number.
"""
from dataclasses import dataclass
import json
from pathlib import Path
from typing import Any

from edgechain.chain.chain import Chain
from edgechain.chain.contract import Granted, PenaltyApplied, Receipt, Reimbursed, UpdateRequired
from edgechain.chain.crypto import ADDRESS_LEN, DIGEST_LEN
from edgechain.chain.ledger import (
    Block, BlockHeader, ContractCall, Migrate, PermissionUpdate, Transaction, Transfer,
)
from edgechain.utils import EdgechainError, from_hex


class ChainFormatError(EdgechainError):
    pass


def kind_to_dict(kind) -> dict:
    match kind:
        case Transfer():
            return {'type': 'transfer', 'to': kind.to.hex(), 'amount': kind.amount}
        case ContractCall():
            return {'type': 'contract_call', 'method_id': kind.method_id, 'args': kind.args.hex()}
        case Migrate():
            return {'type': 'migrate', 'params': kind.params.hex()}
        case PermissionUpdate():
            return {'type': 'permission_update', 'target': kind.target.hex(), 'allow': kind.allow}
    raise TypeError(f"unknown transaction kind {type(kind).__name__}")

def kind_from_dict(d: dict):
    match d['type']:
        case 'transfer':
            return Transfer(to=from_hex(d['to'], ADDRESS_LEN), amount=d['amount'])
        case 'contract_call':
            return ContractCall(method_id=d['method_id'], args=from_hex(d['args']))
        case 'migrate':
            return Migrate(params=from_hex(d['params']))
        case 'permission_update':
            if not isinstance(d['allow'], bool):
                raise ValueError("allow must be a boolean")
            return PermissionUpdate(target=from_hex(d['target'], ADDRESS_LEN), allow=d['allow'])
    raise ValueError(f"unknown transaction kind {d['type']!r}")


def tx_to_dict(tx: Transaction) -> dict:
    return {
        'sender': tx.sender.hex(),
        'nonce': tx.nonce,
        'kind': kind_to_dict(tx.kind),
        'payload': tx.payload.hex(),
        'gas_limit': tx.gas_limit,
        'gas_price': tx.gas_price,
        'signature': tx.signature.hex(),
    }

def tx_from_dict(d: dict) -> Transaction:
    return Transaction(
        sender=from_hex(d['sender'], ADDRESS_LEN),
        nonce=d['nonce'],
        kind=kind_from_dict(d['kind']),
        payload=from_hex(d['payload']),
        gas_limit=d['gas_limit'],
        gas_price=d['gas_price'],
        signature=from_hex(d['signature']),
    )


def block_to_dict(block: Block) -> dict:
    h = block.header
    proof = h.consensus_proof
    return {
        'height': h.height,
        'prev_hash': h.prev_hash.hex(),
        'tx_root': h.tx_root.hex(),
        'timestamp': h.timestamp,
        'producer': h.producer.hex(),
        'consensus_proof': proof.hex() if isinstance(proof, bytes) else proof,
        'transactions': [tx_to_dict(tx) for tx in block.transactions],
    }

def block_from_dict(d: dict) -> Block:
    proof = d['consensus_proof']
    header = BlockHeader(
        height=d['height'],
        prev_hash=from_hex(d['prev_hash'], DIGEST_LEN),
        tx_root=from_hex(d['tx_root'], DIGEST_LEN),
        timestamp=d['timestamp'],
        producer=from_hex(d['producer'], ADDRESS_LEN),
        consensus_proof=from_hex(proof) if isinstance(proof, str) else proof,
    )
    return Block(header=header, transactions=tuple(tx_from_dict(t) for t in d['transactions']))


def event_to_dict(event) -> dict:
    match event:
        case UpdateRequired(url=url):
            return {'type': 'UpdateRequired', 'url': url}
        case PenaltyApplied():
            return {
                'type': 'PenaltyApplied',
                'offender': event.offender.hex(),
                'amount': event.amount,
                'reporter': event.reporter.hex(),
                'reporter_share': event.reporter_share,
            }
        case Reimbursed(to=to, amount=amount):
            return {'type': 'Reimbursed', 'to': to.hex(), 'amount': amount}
        case Granted(to=to, amount=amount):
            return {'type': 'Granted', 'to': to.hex(), 'amount': amount}
    raise TypeError(f"unknown event {type(event).__name__}")

def receipt_to_dict(receipt: Receipt) -> dict:
    return {
        'tx_hash': receipt.tx_hash.hex(),
        'status': receipt.status.value,
        'reason': receipt.reason.value if receipt.reason else None,
        'gas_used': receipt.gas_used,
        'fee': receipt.fee,
        'events': [event_to_dict(e) for e in receipt.events],
    }


@dataclass(frozen=True)
class ChainFooter:
    height: int
    tip: bytes
    contract_digest: bytes
    state_digest: bytes

    def to_dict(self) -> dict:
        return {
            'height': self.height,
            'tip': self.tip.hex(),
            'contract_digest': self.contract_digest.hex(),
            'state_digest': self.state_digest.hex(),
        }


@dataclass(frozen=True)
class ChainFile:
    """ Contents of chain.json: enough to rebuild the run's keys and re-execute it. """
    seed: int
    scenario: dict[str, Any]
    chain: Chain
    footer: ChainFooter

    def to_dict(self) -> dict:
        return {
            'seed': self.seed,
            'scenario': self.scenario,
            'blocks': [block_to_dict(b) for b in self.chain.blocks],
            'footer': self.footer.to_dict(),
        }

    def dump(self, path: Path):
        path.write_text(json.dumps(self.to_dict(), indent=1) + '\n')

    @classmethod
    def from_dict(cls, d: dict) -> 'ChainFile':
        try:
            footer = d['footer']
            blocks = d['blocks']
            if not isinstance(blocks, list) or not blocks:
                raise ValueError("blocks must be a non-empty list")
            return cls(
                seed=d['seed'],
                scenario=d['scenario'],
                chain=Chain(block_from_dict(b) for b in blocks),
                footer=ChainFooter(
                    height=footer['height'],
                    tip=from_hex(footer['tip'], DIGEST_LEN),
                    contract_digest=from_hex(footer['contract_digest'], DIGEST_LEN),
                    state_digest=from_hex(footer['state_digest'], DIGEST_LEN),
                ),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise ChainFormatError(f"malformed chain file: {type(e).__name__}: {e}") from e

    @classmethod
    def load(cls, path: Path) -> 'ChainFile':
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ChainFormatError(f"cannot read {path}: {e}") from e
        if not isinstance(data, dict):
            raise ChainFormatError(f"{path} does not hold a JSON object")
        return cls.from_dict(data)
