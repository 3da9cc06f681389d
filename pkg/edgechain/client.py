"""
In-process client facade: accounts, signed submissions with client-side nonce
management, receipts and read-only queries against one bound edge server.
"""
from dataclasses import dataclass
from enum import Enum
from logging import getLogger
from typing import TYPE_CHECKING

from edgechain.chain.contract import Method, MigrateParams, Receipt, get_activity
from edgechain.chain.crypto import Keypair, derive_keypair, sign
from edgechain.chain.ledger import (
    BadNonce, ContractCall, Migrate, NotAllowlisted, PermissionUpdate, Transaction, Transfer,
    TxKind, canonical_encode,
)
from edgechain.chain.state import ActivityEntry, DeviceRecord
from edgechain.utils import EdgechainError, short_hex, uint_be

if TYPE_CHECKING:
    from edgechain.sim.nodes import ServerNode

logger = getLogger(__name__)


class EmptySeed(EdgechainError):
    pass

class UnknownAddress(EdgechainError):
    pass


class ReceiptStatus(Enum):
    PENDING = 'Pending'
    UNKNOWN = 'Unknown'


@dataclass(frozen=True)
class Balance:
    address: bytes

@dataclass(frozen=True)
class Device:
    address: bytes

@dataclass(frozen=True)
class Activity:
    address: bytes

@dataclass(frozen=True)
class ContractMeta:
    pass

Query = Balance | Device | Activity | ContractMeta


def create_account(seed: bytes, scheme: str = 'mock') -> tuple[Keypair, bytes]:
    if not seed:
        raise EmptySeed("account seed must not be empty")
    keypair = derive_keypair(seed, scheme)
    return keypair, keypair.address


class ClientHandle:
    """ One account bound to one edge server. Not meant to be shared. """

    def __init__(self, node: 'ServerNode', keypair: Keypair, gas_limit: int = 1000, gas_price: int = 1):
        self.node = node
        self.keypair = keypair
        self.gas_limit = gas_limit
        self.gas_price = gas_price
        self.nonce = 0

    @property
    def address(self) -> bytes:
        return self.keypair.address

    def __repr__(self) -> str:
        return f"ClientHandle({short_hex(self.address)} @ {self.node.name}, nonce={self.nonce})"

    def _sign(self, kind: TxKind, payload: bytes, gas_limit: int, gas_price: int) -> Transaction:
        tx = Transaction(
            sender=self.address, nonce=self.nonce, kind=kind, payload=payload,
            gas_limit=gas_limit, gas_price=gas_price,
        )
        return tx.with_signature(sign(self.keypair, canonical_encode(tx, signing=True)))

    def submit(self, kind: TxKind, payload: bytes = b'',
               gas_limit: int | None = None, gas_price: int | None = None) -> bytes:
        """ Sign with the cached nonce and hand the transaction to the bound node.
        Returns the tx hash. A sender outside the allowlist is dropped silently
        (hash still returned); other admission failures raise the LedgerError.
        """
        gas_limit = self.gas_limit if gas_limit is None else gas_limit
        gas_price = self.gas_price if gas_price is None else gas_price
        self.nonce = max(self.nonce, self.node.best_state.account(self.address).nonce)
        for retry in (False, True):
            tx = self._sign(kind, payload, gas_limit, gas_price)
            try:
                self.node.submit_local(tx)
            except NotAllowlisted:
                logger.info("%s is not admitted, tx %s dropped", short_hex(self.address), short_hex(tx.digest))
                return tx.digest
            except BadNonce:
                if retry:
                    raise
                repaired = self.node.pending_nonce(self.address)
                logger.info("Nonce cache of %s repaired: %d -> %d", short_hex(self.address), self.nonce, repaired)
                self.nonce = repaired
                continue
            self.nonce += 1
            return tx.digest

    def register(self, firmware_version: int) -> bytes:
        return self.submit(ContractCall(Method.REGISTER, uint_be(firmware_version, 4)))

    def submit_data(self, data: bytes) -> bytes:
        return self.submit(ContractCall(Method.SUBMIT_DATA), payload=data)

    def apply_update(self) -> bytes:
        return self.submit(ContractCall(Method.APPLY_UPDATE))

    def report(self, offender: bytes) -> bytes:
        return self.submit(ContractCall(Method.REPORT_MALICIOUS, offender))

    def distribute(self) -> bytes:
        return self.submit(ContractCall(Method.DISTRIBUTE))

    def migrate(self, version: int, update_url: str, block_interval: int) -> bytes:
        return self.submit(Migrate(MigrateParams(version, update_url, block_interval).encode()))

    def set_permission(self, target: bytes, allow: bool) -> bytes:
        return self.submit(PermissionUpdate(target, allow))

    def transfer(self, to: bytes, amount: int) -> bytes:
        return self.submit(Transfer(to, amount))

    def get_receipt(self, tx_hash: bytes) -> Receipt | ReceiptStatus:
        receipt = self.node.lookup_receipt(tx_hash)
        if receipt is not None:
            return receipt
        if self.node.in_mempool(tx_hash):
            return ReceiptStatus.PENDING
        return ReceiptStatus.UNKNOWN

    def query(self, what: Query) -> int | DeviceRecord | list[ActivityEntry] | dict:
        """ Read-only view of the bound node's best state. """
        state = self.node.best_state
        match what:
            case Balance(address=address):
                return state.account(address).balance
            case Device(address=address):
                record = state.contract.devices.get(address)
                if record is None:
                    raise UnknownAddress(f"{address.hex()} is not a registered device")
                return record
            case Activity(address=address):
                return get_activity(state.contract, address)
            case ContractMeta():
                contract = state.contract
                return {
                    'version': contract.current_version,
                    'update_url': contract.update_url,
                    'block_interval': contract.block_interval,
                    'initialized': contract.initialized,
                }
        raise TypeError(f"unknown query {what!r}")
