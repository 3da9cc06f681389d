"""
The edge-computing contract: device registration, firmware version gating,
activity logging, quota penalties and reimbursements paid out at
distribution epochs.

Operations run inside a `CallFrame` on a working copy of the world state.
They charge their own gas through the frame's meter and abort with
`ContractRevert`; the executor decides what survives a revert.
"""
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from logging import getLogger

from edgechain.chain.crypto import ADDRESS_LEN
from edgechain.chain.gas import GasMeter, GasSchedule
from edgechain.chain.ledger import ContractCall
from edgechain.chain.state import Action, ContractState, DeviceRecord, WorldState
from edgechain.utils import ceil_div, length_prefixed, read_length_prefixed, short_hex, uint_be

logger = getLogger(__name__)


class Method(IntEnum):
    """ ContractCall method ids. """
    REGISTER = 1
    SUBMIT_DATA = 2
    APPLY_UPDATE = 3
    REPORT_MALICIOUS = 4
    DISTRIBUTE = 5


class RevertReason(str, Enum):
    OUT_OF_GAS = 'OutOfGas'
    UNAUTHORIZED = 'Unauthorized'
    VERSION_REGRESSION = 'VersionRegression'
    ALREADY_REGISTERED = 'AlreadyRegistered'
    NOT_REGISTERED = 'NotRegistered'
    OUTDATED_VERSION = 'OutdatedVersion'
    NO_VIOLATION = 'NoViolation'
    SELF_REPORT = 'SelfReport'
    NOT_EPOCH_BOUNDARY = 'NotEpochBoundary'
    ALREADY_DISTRIBUTED = 'AlreadyDistributed'
    NOT_INITIALIZED = 'NotInitialized'
    UNKNOWN_METHOD = 'UnknownMethod'
    BAD_ARGUMENTS = 'BadArguments'


class Status(str, Enum):
    SUCCESS = 'Success'
    REVERTED = 'Reverted'


@dataclass(frozen=True)
class UpdateRequired:
    url: str

@dataclass(frozen=True)
class PenaltyApplied:
    offender: bytes
    amount: int
    reporter: bytes
    reporter_share: int

@dataclass(frozen=True)
class Reimbursed:
    to: bytes
    amount: int

@dataclass(frozen=True)
class Granted:
    to: bytes
    amount: int

Event = UpdateRequired | PenaltyApplied | Reimbursed | Granted


@dataclass(frozen=True)
class Receipt:
    tx_hash: bytes
    status: Status
    gas_used: int
    fee: int
    events: tuple[Event, ...] = ()
    reason: RevertReason | None = None

    @property
    def success(self) -> bool:
        return self.status is Status.SUCCESS

    def __str__(self) -> str:
        if self.success:
            return f"Success gas={self.gas_used} fee={self.fee}"
        return f"Reverted({self.reason.value}) gas={self.gas_used} fee={self.fee}"


class ContractRevert(Exception):
    """ Abort the running operation. `logged` is an activity that survives the revert. """

    def __init__(self, reason: RevertReason, events: tuple[Event, ...] = (), logged: Action | None = None):
        super().__init__(reason.value)
        self.reason = reason
        self.events = events
        self.logged = logged


@dataclass
class CallFrame:
    state: WorldState
    sender: bytes
    height: int
    producer: bytes
    meter: GasMeter
    schedule: GasSchedule
    events: list[Event] = field(default_factory=list)
    actions: list[Action] = field(default_factory=list)

    @property
    def contract(self) -> ContractState:
        return self.state.contract


@dataclass(frozen=True)
class QuotaStatus:
    excess: int = 0

    @property
    def exceeded(self) -> bool:
        return self.excess > 0


@dataclass(frozen=True)
class MigrateParams:
    version: int
    update_url: str
    block_interval: int

    def encode(self) -> bytes:
        return uint_be(self.version, 4) + uint_be(self.block_interval, 8) + length_prefixed(self.update_url.encode())

    @classmethod
    def decode(cls, data: bytes) -> 'MigrateParams':
        if len(data) < 12:
            raise ValueError("migrate params too short")
        url, end = read_length_prefixed(data, 12)
        if end != len(data):
            raise ValueError("trailing bytes after migrate params")
        return cls(
            version=int.from_bytes(data[:4], 'big'),
            block_interval=int.from_bytes(data[4:12], 'big'),
            update_url=url.decode(),
        )


def _require_device(contract: ContractState, address: bytes):
    if address not in contract.devices:
        raise ContractRevert(RevertReason.NOT_REGISTERED)


def migrate(frame: CallFrame, params: bytes):
    """ Admin-only deployment/upgrade. The first successful call initializes
    the contract and pays init_surcharge on top of the migrate cost.
    """
    frame.meter.consume(frame.schedule.migrate)
    contract = frame.contract
    if frame.sender != contract.admin:
        raise ContractRevert(RevertReason.UNAUTHORIZED)
    try:
        decoded = MigrateParams.decode(params)
    except (ValueError, UnicodeDecodeError):
        raise ContractRevert(RevertReason.BAD_ARGUMENTS) from None
    if decoded.block_interval < 1:
        raise ContractRevert(RevertReason.BAD_ARGUMENTS)
    if contract.initialized and decoded.version < contract.current_version:
        raise ContractRevert(RevertReason.VERSION_REGRESSION)
    if not contract.initialized:
        frame.meter.consume(frame.schedule.init_surcharge)
        contract.initialized = True
        logger.info("Contract initialized at height %d", frame.height)
    contract.current_version = decoded.version
    contract.update_url = decoded.update_url
    contract.block_interval = decoded.block_interval
    frame.actions.append(Action.MIGRATE)


def register_device(frame: CallFrame, firmware_version: int):
    frame.meter.consume(frame.schedule.register_device)
    contract = frame.contract
    if frame.sender in contract.devices:
        raise ContractRevert(RevertReason.ALREADY_REGISTERED)
    if firmware_version > contract.current_version:
        raise ContractRevert(RevertReason.BAD_ARGUMENTS)
    contract.devices[frame.sender] = DeviceRecord(
        address=frame.sender,
        firmware_version=firmware_version,
        registered_at=frame.height,
    )
    frame.actions.append(Action.REGISTER)


def submit_data(frame: CallFrame, payload: bytes):
    """ Version-gated data submission; outdated devices get the update URL back. """
    frame.meter.consume(frame.schedule.submit_data)
    contract = frame.contract
    _require_device(contract, frame.sender)
    record = contract.devices[frame.sender]
    if record.firmware_version < contract.current_version:
        raise ContractRevert(
            RevertReason.OUTDATED_VERSION,
            events=(UpdateRequired(url=contract.update_url),),
            logged=Action.REJECTED,
        )
    logger.debug("Stored %d bytes from %s", len(payload), short_hex(frame.sender))
    frame.actions.append(Action.SUBMIT_DATA)


def apply_update(frame: CallFrame):
    frame.meter.consume(frame.schedule.apply_update)
    contract = frame.contract
    _require_device(contract, frame.sender)
    record = contract.devices[frame.sender]
    if record.firmware_version != contract.current_version:
        contract.devices[frame.sender] = replace(record, firmware_version=contract.current_version)
    frame.actions.append(Action.APPLY_UPDATE)


def check_quota(contract: ContractState, device: bytes, height: int) -> QuotaStatus:
    """ Over blocks (height - W, height]: with fewer than min_active_senders
    active devices nobody exceeds; otherwise a device may send at most
    ceil(Q% of the window's transactions).
    """
    _require_device(contract, device)
    counts = contract.window_counts(height)
    quota = contract.quota
    if len(counts) < quota.min_active_senders:
        return QuotaStatus()
    allowed = ceil_div(quota.max_share_percent * sum(counts.values()), 100)
    count = counts.get(device, 0)
    return QuotaStatus(excess=count - allowed if count > allowed else 0)


def report_malicious(frame: CallFrame, offender: bytes):
    """ Penalize an over-quota device. The reporter's share waits in
    pending_reimbursements until the next distribution.
    """
    frame.meter.consume(frame.schedule.report_malicious)
    contract = frame.contract
    reporter = frame.sender
    if reporter == offender:
        raise ContractRevert(RevertReason.SELF_REPORT)
    _require_device(contract, reporter)
    _require_device(contract, offender)
    status = check_quota(contract, offender, frame.height)
    if not status.exceeded:
        raise ContractRevert(RevertReason.NO_VIOLATION)

    penalty = status.excess * contract.quota.resolved_penalty_rate(frame.schedule.base_tx)
    collected = min(penalty, frame.state.account(offender).balance)
    frame.state.debit(offender, collected)
    if penalty > collected:
        contract.penalty_debt[offender] = contract.penalty_debt.get(offender, 0) + penalty - collected
    share = collected * contract.quota.reporter_share_percent // 100
    contract.penalty_pool += collected - share
    if share:
        contract.pending_reimbursements[reporter] = contract.pending_reimbursements.get(reporter, 0) + share
    contract.devices[offender] = replace(contract.devices[offender], flagged=True)
    logger.info("Penalized %s: excess %d, collected %d of %d, reporter share %d",
                short_hex(offender), status.excess, collected, penalty, share)
    frame.events.append(PenaltyApplied(offender=offender, amount=collected, reporter=reporter, reporter_share=share))
    frame.actions.append(Action.REPORT)


def distribute_resources(frame: CallFrame):
    """ Pay pending reimbursements, then split pool + epoch mint evenly among
    unflagged devices. Integer division dust stays in the pool; a device's
    penalty debt is withheld from its grant.
    """
    frame.meter.consume(frame.schedule.distribute)
    contract = frame.contract
    height = frame.height
    if height == 0 or height % contract.epoch_length:
        raise ContractRevert(RevertReason.NOT_EPOCH_BOUNDARY)
    if contract.last_distribution_height == height:
        raise ContractRevert(RevertReason.ALREADY_DISTRIBUTED)

    for address in sorted(contract.pending_reimbursements):
        amount = contract.pending_reimbursements[address]
        frame.state.credit(address, amount)
        frame.events.append(Reimbursed(to=address, amount=amount))
    contract.pending_reimbursements = {}

    pot = contract.penalty_pool + contract.epoch_mint
    recipients = [d.address for d in contract.devices.values() if not d.flagged]
    if recipients:
        grant = pot // len(recipients)
        remainder = pot - grant * len(recipients)
        for address in recipients:
            withheld = min(grant, contract.penalty_debt.get(address, 0))
            if withheld:
                contract.penalty_debt[address] -= withheld
                if not contract.penalty_debt[address]:
                    del contract.penalty_debt[address]
                remainder += withheld
            if grant - withheld:
                frame.state.credit(address, grant - withheld)
                frame.events.append(Granted(to=address, amount=grant - withheld))
    else:
        remainder = pot
    contract.penalty_pool = remainder
    for address, record in contract.devices.items():
        if record.flagged:
            contract.devices[address] = replace(record, flagged=False)
    contract.epochs_distributed += 1
    contract.last_distribution_height = height
    logger.info("Distribution at height %d: %d recipients, pool now %d", height, len(recipients), remainder)
    frame.actions.append(Action.DISTRIBUTE)


def get_activity(contract: ContractState, device: bytes) -> list:
    """ Read-only: the device's entries in log order. """
    return [e for e in contract.activity_log if e.device == device]


def call_method(frame: CallFrame, call: ContractCall, payload: bytes):
    if not frame.contract.initialized:
        raise ContractRevert(RevertReason.NOT_INITIALIZED)
    match call.method_id:
        case Method.REGISTER:
            if len(call.args) != 4:
                raise ContractRevert(RevertReason.BAD_ARGUMENTS)
            register_device(frame, int.from_bytes(call.args, 'big'))
        case Method.SUBMIT_DATA:
            submit_data(frame, payload)
        case Method.APPLY_UPDATE:
            apply_update(frame)
        case Method.REPORT_MALICIOUS:
            if len(call.args) != ADDRESS_LEN:
                raise ContractRevert(RevertReason.BAD_ARGUMENTS)
            report_malicious(frame, call.args)
        case Method.DISTRIBUTE:
            distribute_resources(frame)
        case _:
            raise ContractRevert(RevertReason.UNKNOWN_METHOD)
