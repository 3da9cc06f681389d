"""
World state: accounts, the on-chain allowlist and the contract's storage.

States are mutable working objects; block and transaction execution always
work on a `copy()` so committed states can be shared between chain views.
"""
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Annotated

from pydantic import Field, StrictInt

from edgechain.chain.consensus import StakeEntry, StakeSet
from edgechain.chain.ledger import Account, InsufficientFunds
from edgechain.utils import FrozenModel, Positive64, Uint32, Uint128, canonical_json, sha256


class Action(str, Enum):
    REGISTER = 'Register'
    SUBMIT_DATA = 'SubmitData'
    APPLY_UPDATE = 'ApplyUpdate'
    REPORT = 'Report'
    DISTRIBUTE = 'Distribute'
    MIGRATE = 'Migrate'
    REJECTED = 'Rejected'


class QuotaConfig(FrozenModel):
    """
    Vars:
        window_blocks: W, the quota window is the last W blocks
        max_share_percent: Q, largest share of window transactions one device may take
        min_active_senders: below this many active devices nobody is over quota
        penalty_rate: currency per excess transaction, None means 2 * base_tx
        reporter_share_percent: R, share of a collected penalty owed to the reporter
    """

    window_blocks: Positive64 = 10
    max_share_percent: Annotated[StrictInt, Field(gt=0, le=100)] = 40
    min_active_senders: Uint32 = 2
    penalty_rate: Uint128 | None = None
    reporter_share_percent: Annotated[StrictInt, Field(ge=0, le=100)] = 50

    def resolved_penalty_rate(self, base_tx: int) -> int:
        return 2 * base_tx if self.penalty_rate is None else self.penalty_rate


@dataclass(frozen=True)
class DeviceRecord:
    address: bytes
    firmware_version: int
    registered_at: int
    window_tx_count: int = 0
    total_gas_spent: int = 0  # gas units
    flagged: bool = False

    def to_dict(self) -> dict:
        return {
            'address': self.address.hex(),
            'firmware_version': self.firmware_version,
            'registered_at': self.registered_at,
            'window_tx_count': self.window_tx_count,
            'total_gas_spent': self.total_gas_spent,
            'flagged': self.flagged,
        }


@dataclass(frozen=True)
class ActivityEntry:
    height: int
    device: bytes
    action: Action
    gas_used: int

    def to_dict(self) -> dict:
        return {
            'height': self.height,
            'device': self.device.hex(),
            'action': self.action.value,
            'gas_used': self.gas_used,
        }


@dataclass
class ContractState:
    admin: bytes
    quota: QuotaConfig = field(default_factory=QuotaConfig)
    epoch_length: int = 20
    epoch_mint: int = 0
    current_version: int = 0
    update_url: str = ''
    block_interval: int = 0
    initialized: bool = False
    devices: dict[bytes, DeviceRecord] = field(default_factory=dict)
    activity_log: list[ActivityEntry] = field(default_factory=list)
    pending_reimbursements: dict[bytes, int] = field(default_factory=dict)
    penalty_pool: int = 0
    penalty_debt: dict[bytes, int] = field(default_factory=dict)
    last_distribution_height: int = 0
    epochs_distributed: int = 0

    def copy(self) -> 'ContractState':
        return replace(
            self,
            devices=dict(self.devices),
            activity_log=list(self.activity_log),
            pending_reimbursements=dict(self.pending_reimbursements),
            penalty_debt=dict(self.penalty_debt),
        )

    def window_counts(self, height: int) -> dict[bytes, int]:
        """ SubmitData entries per device over blocks (height - W, height]. """
        floor = height - self.quota.window_blocks
        counts: dict[bytes, int] = {}
        for entry in reversed(self.activity_log):
            if entry.height <= floor:
                break
            if entry.action is Action.SUBMIT_DATA and entry.height <= height:
                counts[entry.device] = counts.get(entry.device, 0) + 1
        return counts

    def append_activity(self, entry: ActivityEntry):
        """ Append to the log and fold the entry into the device's counters. """
        self.activity_log.append(entry)
        record = self.devices.get(entry.device)
        if record is None:
            return
        record = replace(record, total_gas_spent=record.total_gas_spent + entry.gas_used)
        if entry.action is Action.SUBMIT_DATA:
            record = replace(
                record,
                window_tx_count=self.window_counts(entry.height).get(entry.device, 0),
            )
        self.devices[entry.device] = record

    def to_dict(self) -> dict:
        return {
            'admin': self.admin.hex(),
            'quota': {
                'window_blocks': self.quota.window_blocks,
                'max_share_percent': self.quota.max_share_percent,
                'min_active_senders': self.quota.min_active_senders,
                'penalty_rate': self.quota.penalty_rate,
                'reporter_share_percent': self.quota.reporter_share_percent,
            },
            'epoch_length': self.epoch_length,
            'epoch_mint': self.epoch_mint,
            'current_version': self.current_version,
            'update_url': self.update_url,
            'block_interval': self.block_interval,
            'initialized': self.initialized,
            'devices': [d.to_dict() for d in self.devices.values()],
            'activity_log': [e.to_dict() for e in self.activity_log],
            'pending_reimbursements': {a.hex(): v for a, v in self.pending_reimbursements.items()},
            'penalty_pool': self.penalty_pool,
            'penalty_debt': {a.hex(): v for a, v in self.penalty_debt.items()},
            'last_distribution_height': self.last_distribution_height,
            'epochs_distributed': self.epochs_distributed,
        }

    def digest(self) -> bytes:
        return sha256(canonical_json(self.to_dict()))


@dataclass
class WorldState:
    accounts: dict[bytes, Account]
    contract: ContractState
    allow_all: bool = True
    allowed: frozenset[bytes] = frozenset()
    denied: frozenset[bytes] = frozenset()

    def copy(self) -> 'WorldState':
        return replace(self, accounts=dict(self.accounts), contract=self.contract.copy())

    def account(self, address: bytes) -> Account:
        return self.accounts.get(address) or Account(address=address)

    def credit(self, address: bytes, amount: int):
        if amount:
            acct = self.account(address)
            self.accounts[address] = replace(acct, balance=acct.balance + amount)

    def debit(self, address: bytes, amount: int):
        acct = self.account(address)
        if acct.balance < amount:
            raise InsufficientFunds(f"{address.hex()} holds {acct.balance}, needs {amount}")
        if amount:
            self.accounts[address] = replace(acct, balance=acct.balance - amount)

    def bump_nonce(self, address: bytes):
        acct = self.account(address)
        self.accounts[address] = replace(acct, nonce=acct.nonce + 1)

    def is_allowed(self, address: bytes) -> bool:
        if address in self.denied:
            return False
        return self.allow_all or address in self.allowed

    def set_permission(self, target: bytes, allow: bool):
        if allow:
            self.allowed = self.allowed | {target}
            self.denied = self.denied - {target}
        else:
            self.allowed = self.allowed - {target}
            self.denied = self.denied | {target}

    def stake_set(self) -> StakeSet:
        return StakeSet(tuple(
            StakeEntry(address=a.address, stake=a.stake, age=a.stake_age)
            for a in self.accounts.values() if a.stake > 0
        ))

    def apply_stake_ages(self, stakes: StakeSet):
        for entry in stakes.entries:
            self.accounts[entry.address] = replace(self.account(entry.address), stake_age=entry.age)

    def total_supply(self) -> int:
        """ Balances plus everything the contract holds on behalf of accounts. """
        return (
            sum(a.balance for a in self.accounts.values())
            + self.contract.penalty_pool
            + sum(self.contract.pending_reimbursements.values())
        )

    def to_dict(self) -> dict:
        return {
            'accounts': [
                {
                    'address': a.address.hex(),
                    'balance': a.balance,
                    'nonce': a.nonce,
                    'stake': a.stake,
                    'stake_age': a.stake_age,
                }
                for a in sorted(self.accounts.values(), key=lambda a: a.address)
            ],
            'allow_all': self.allow_all,
            'allowed': sorted(a.hex() for a in self.allowed),
            'denied': sorted(a.hex() for a in self.denied),
            'contract': self.contract.to_dict(),
        }

    def digest(self) -> bytes:
        return sha256(canonical_json(self.to_dict()))
