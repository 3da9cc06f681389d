"""
State transitions: one transaction (`execute`) and one block (`Executor.execute_block`).

Settlement of a transaction: the escrow gas_limit * gas_price is debited and
the nonce bumped before any work; afterwards the unused gas is refunded to the
sender and gas_used * gas_price goes to the block producer. A revert keeps only
that settlement (plus a Rejected activity entry for outdated firmware).
"""
from dataclasses import dataclass
from logging import getLogger
from typing import Protocol, Sequence

from edgechain.chain.chain import BadTransaction
from edgechain.chain.consensus import ConsensusConfig, advance_stakes
from edgechain.chain.contract import (
    CallFrame, ContractRevert, Receipt, RevertReason, Status, call_method, migrate,
)
from edgechain.chain.crypto import KeyRegistry
from edgechain.chain.gas import GasMeter, GasSchedule, OutOfGas
from edgechain.chain.ledger import (
    Block, ContractCall, LedgerError, Migrate, NotAllowlisted, PermissionUpdate,
    Transaction, Transfer, verify_transaction,
)
from edgechain.chain.state import ActivityEntry, WorldState
from edgechain.utils import EdgechainError, short_hex

logger = getLogger(__name__)


class InvariantViolation(EdgechainError):
    pass


@dataclass(frozen=True)
class ExecContext:
    height: int
    producer: bytes


class BlockObserver(Protocol):
    """ Receives every intermediate state of a block's execution. """

    def on_receipt(self, block: Block, tx: Transaction, receipt: Receipt, state: WorldState): ...

    def on_block_reward(self, block: Block, reward: int, state: WorldState): ...


def _dispatch(frame: CallFrame, tx: Transaction):
    match tx.kind:
        case Transfer(to=to, amount=amount):
            frame.state.debit(tx.sender, amount)
            frame.state.credit(to, amount)
        case ContractCall():
            call_method(frame, tx.kind, tx.payload)
        case Migrate(params=params):
            migrate(frame, params)
        case PermissionUpdate(target=target, allow=allow):
            frame.meter.consume(frame.schedule.permission_update)
            if frame.sender != frame.contract.admin:
                raise ContractRevert(RevertReason.UNAUTHORIZED)
            frame.state.set_permission(target, allow)
            logger.info("%s %s by admin", 'Admitted' if allow else 'Denied', short_hex(target))


def execute(tx: Transaction, state: WorldState, schedule: GasSchedule, ctx: ExecContext) -> tuple[WorldState, Receipt]:
    """ Apply `tx` to a copy of `state`. The caller is expected to have run
    verify_transaction; `state` itself is never mutated.
    """
    settled = state.copy()
    settled.debit(tx.sender, tx.escrow)
    settled.bump_nonce(tx.sender)

    working = settled.copy()
    meter = GasMeter(tx.gas_limit)
    frame = CallFrame(
        state=working, sender=tx.sender, height=ctx.height, producer=ctx.producer,
        meter=meter, schedule=schedule,
    )
    try:
        meter.consume(schedule.intrinsic(tx.payload))
        _dispatch(frame, tx)
    except OutOfGas as e:
        logger.debug("tx %s ran out of gas: %s", short_hex(tx.digest), e)
        result, gas_used = settled, tx.gas_limit
        reason, events = RevertReason.OUT_OF_GAS, ()
    except ContractRevert as e:
        logger.debug("tx %s reverted: %s", short_hex(tx.digest), e.reason.value)
        result, gas_used = settled, meter.used
        reason, events = e.reason, e.events
        if e.logged is not None:
            result.contract.append_activity(ActivityEntry(ctx.height, tx.sender, e.logged, gas_used))
    else:
        result, gas_used = working, meter.used
        reason, events = None, tuple(frame.events)
        for action in frame.actions:
            result.contract.append_activity(ActivityEntry(ctx.height, tx.sender, action, gas_used))

    fee = gas_used * tx.gas_price
    result.credit(tx.sender, tx.escrow - fee)
    result.credit(ctx.producer, fee)
    receipt = Receipt(
        tx_hash=tx.digest,
        status=Status.SUCCESS if reason is None else Status.REVERTED,
        gas_used=gas_used,
        fee=fee,
        events=events,
        reason=reason,
    )
    return result, receipt


def check_conservation(state: WorldState, genesis_supply: int, block_reward: int, height: int):
    """ Balances + penalty pool + pending reimbursements must equal everything
    ever issued: genesis allocations, block rewards and epoch mints.
    """
    expected = genesis_supply + block_reward * height + state.contract.epoch_mint * state.contract.epochs_distributed
    actual = state.total_supply()
    if actual != expected:
        logger.error("Conservation broken at height %d: supply %d, expected %d", height, actual, expected)
        raise InvariantViolation(f"supply {actual} != expected {expected} at height {height}")


class Executor:
    """ Everything needed to turn a parent state and a block into the child state. """

    def __init__(self, schedule: GasSchedule, registry: KeyRegistry, consensus: ConsensusConfig):
        self.schedule = schedule
        self.registry = registry
        self.consensus = consensus

    def admit(self, tx: Transaction, state: WorldState):
        """ Raise the LedgerError that keeps `tx` out of a block built on `state`. """
        if not state.is_allowed(tx.sender):
            raise NotAllowlisted(f"{tx.sender.hex()} is not admitted")
        verify_transaction(tx, state.account(tx.sender), self.schedule, self.registry)

    def execute(self, tx: Transaction, state: WorldState, ctx: ExecContext) -> tuple[WorldState, Receipt]:
        return execute(tx, state, self.schedule, ctx)

    def finalize(self, state: WorldState, producer: bytes):
        """ Block reward and stake ages, applied in place after the last transaction. """
        state.credit(producer, self.consensus.block_reward)
        state.apply_stake_ages(advance_stakes(state.stake_set(), producer, self.consensus.mode))

    def execute_block(self, parent: WorldState, block: Block,
                      observer: BlockObserver | None = None) -> tuple[WorldState, list[Receipt]]:
        header = block.header
        ctx = ExecContext(height=header.height, producer=header.producer)
        state = parent
        receipts = []
        for index, tx in enumerate(block.transactions):
            try:
                self.admit(tx, state)
            except LedgerError as e:
                raise BadTransaction(f"transaction {index}: {type(e).__name__}: {e}", header.height) from e
            state, receipt = self.execute(tx, state, ctx)
            receipts.append(receipt)
            if observer is not None:
                observer.on_receipt(block, tx, receipt, state)
        if state is parent:
            state = parent.copy()
        self.finalize(state, header.producer)
        if observer is not None:
            observer.on_block_reward(block, self.consensus.block_reward, state)
        return state, receipts

    def replay(self, blocks: Sequence[Block], genesis: WorldState,
               observer: BlockObserver | None = None) -> WorldState:
        """ Re-execute every block after genesis; raises BadTransaction like execute_block. """
        state = genesis
        for block in blocks[1:]:
            state, _ = self.execute_block(state, block, observer)
        return state
