"""
Run metrics: one CSV row per gas-affecting event plus network events, and the
summary.json totals.

Chain rows are produced by replaying the observer's final best chain, so only
blocks that ended up canonical are counted; network rows (drops, downloads,
reorgs, epoch ticks) come from the live run and sort before chain rows of the
same tick.
"""
from collections import Counter, defaultdict
import csv
from dataclasses import astuple, dataclass, fields
import heapq
import json
from logging import getLogger
from pathlib import Path
from typing import TYPE_CHECKING

from edgechain.chain.contract import (
    Granted, Method, PenaltyApplied, Receipt, Reimbursed, RevertReason, UpdateRequired,
)
from edgechain.chain.ledger import Block, ContractCall, Migrate, PermissionUpdate, Transaction, Transfer
from edgechain.chain.state import WorldState

if TYPE_CHECKING:
    from edgechain.sim.netsim import Sim

logger = getLogger(__name__)

CSV_HEADER = ('tick', 'height', 'node', 'event', 'tx_hash', 'gas_used', 'fee', 'balance_after', 'detail')

METHOD_EVENTS = {
    Method.REGISTER: 'Register',
    Method.SUBMIT_DATA: 'SubmitData',
    Method.APPLY_UPDATE: 'ApplyUpdate',
    Method.REPORT_MALICIOUS: 'Report',
    Method.DISTRIBUTE: 'Distribute',
}


@dataclass(frozen=True)
class MetricRow:
    tick: int
    height: int
    node: str
    event: str
    tx_hash: str = ''
    gas_used: int | str = ''
    fee: int | str = ''
    balance_after: int | str = ''
    detail: str = ''

assert tuple(f.name for f in fields(MetricRow)) == CSV_HEADER


def tx_event(tx: Transaction) -> str:
    match tx.kind:
        case Transfer():
            return 'Transfer'
        case ContractCall(method_id=method_id):
            return METHOD_EVENTS.get(method_id, f"Method{method_id}")
        case Migrate():
            return 'Migrate'
        case PermissionUpdate():
            return 'PermissionUpdate'
    return type(tx.kind).__name__


@dataclass
class NodeTotals:
    fees_paid: int = 0
    penalties: int = 0
    reimbursed: int = 0
    granted: int = 0
    block_rewards: int = 0


class ChainRecorder:
    """ BlockObserver turning receipts into metric rows and per-node totals. """

    def __init__(self, names: dict[bytes, str]):
        self.names = names
        self.rows: list[MetricRow] = []
        self.totals: dict[str, NodeTotals] = defaultdict(NodeTotals)
        self.penalties_collected = 0
        self.reimbursements_scheduled = 0
        self.reimbursements_paid = 0
        self.grants_paid = 0
        self.reimbursement_heights: list[int] = []

    def name(self, address: bytes) -> str:
        return self.names.get(address, address.hex())

    def _row(self, block: Block, node: str, event: str, state: WorldState, address: bytes, **kwargs):
        self.rows.append(MetricRow(
            tick=block.header.timestamp,
            height=block.height,
            node=node,
            event=event,
            balance_after=state.account(address).balance,
            **kwargs,
        ))

    def on_receipt(self, block: Block, tx: Transaction, receipt: Receipt, state: WorldState):
        sender = self.name(tx.sender)
        self.totals[sender].fees_paid += receipt.fee
        match receipt.reason:
            case None:
                event, detail = tx_event(tx), ''
            case RevertReason.OUTDATED_VERSION:
                event = 'Rejected'
                detail = ' '.join(e.url for e in receipt.events if isinstance(e, UpdateRequired))
            case RevertReason.OUT_OF_GAS:
                event, detail = 'OutOfGas', tx_event(tx)
            case reason:
                event, detail = 'Reverted', f"{tx_event(tx)}:{reason.value}"
        self._row(block, sender, event, state, tx.sender,
                  tx_hash=receipt.tx_hash.hex(), gas_used=receipt.gas_used, fee=receipt.fee, detail=detail)

        for e in receipt.events:
            match e:
                case PenaltyApplied():
                    offender = self.name(e.offender)
                    self.totals[offender].penalties += e.amount
                    self.penalties_collected += e.amount
                    self.reimbursements_scheduled += e.reporter_share
                    self._row(block, offender, 'Penalty', state, e.offender, tx_hash=receipt.tx_hash.hex(),
                              detail=f"amount={e.amount} reporter={self.name(e.reporter)} share={e.reporter_share}")
                case Reimbursed():
                    to = self.name(e.to)
                    self.totals[to].reimbursed += e.amount
                    self.reimbursements_paid += e.amount
                    self.reimbursement_heights.append(block.height)
                    self._row(block, to, 'Reimbursed', state, e.to, tx_hash=receipt.tx_hash.hex(),
                              detail=f"amount={e.amount}")
                case Granted():
                    to = self.name(e.to)
                    self.totals[to].granted += e.amount
                    self.grants_paid += e.amount
                    self._row(block, to, 'Distribute', state, e.to, tx_hash=receipt.tx_hash.hex(),
                              detail=f"grant={e.amount}")

    def on_block_reward(self, block: Block, reward: int, state: WorldState):
        producer = self.name(block.header.producer)
        self.totals[producer].block_rewards += reward
        self._row(block, producer, 'BlockReward', state, block.header.producer, detail=f"reward={reward}")


@dataclass
class RunReport:
    rows: list[MetricRow]
    summary: dict
    final_state: WorldState

    def write_csv(self, path: Path):
        with Path(path).open('w', newline='') as fp:
            writer = csv.writer(fp)
            writer.writerow(CSV_HEADER)
            writer.writerows(astuple(row) for row in self.rows)

    def write_summary(self, path: Path):
        Path(path).write_text(json.dumps(self.summary, indent=2) + '\n')


def collect(sim: 'Sim') -> RunReport:
    """ Replay the observer's best chain through a ChainRecorder and merge in the network rows. """
    d = sim.deployment
    chain = sim.observer.chain
    recorder = ChainRecorder(d.names())
    state = d.executor.replay(chain.blocks, d.genesis_state, recorder)
    rows = list(heapq.merge(
        ((row.tick, 0, i, row) for i, row in enumerate(sim.network_rows)),
        ((row.tick, 1, i, row) for i, row in enumerate(recorder.rows)),
    ))
    contract = state.contract
    nodes = {}
    for spec in sim.config.nodes:
        address = d.keys[spec.name].address
        totals = recorder.totals[spec.name]
        nodes[spec.name] = {
            'address': address.hex(),
            'kind': spec.kind.value,
            'balance': state.account(address).balance,
            'fees_paid': totals.fees_paid,
            'penalties': totals.penalties,
            'reimbursed': totals.reimbursed,
            'pending_reimbursement': contract.pending_reimbursements.get(address, 0),
            'granted': totals.granted,
            'block_rewards': totals.block_rewards,
            'blocks_produced': sum(1 for b in chain.blocks[1:] if b.header.producer == address),
        }
    summary = {
        'seed': d.seed,
        'height': chain.height,
        'tip': chain.tip_digest.hex(),
        'finalized_height': sim.finalized_height(),
        'ticks': sim.now,
        'contract_digest': contract.digest().hex(),
        'state_digest': state.digest().hex(),
        'contract_version': contract.current_version,
        'epochs_distributed': contract.epochs_distributed,
        'penalties_collected': recorder.penalties_collected,
        'penalty_pool': contract.penalty_pool,
        'reimbursements_scheduled': recorder.reimbursements_scheduled,
        'reimbursements_paid': recorder.reimbursements_paid,
        'reimbursement_heights': recorder.reimbursement_heights,
        'grants_paid': recorder.grants_paid,
        'drops': dict(sorted(Counter(sim.drops).items())),
        'drop_count': sum(sim.drops.values()),
        'nodes': nodes,
    }
    logger.info("Collected %d metric rows over %d blocks", len(rows), chain.height)
    return RunReport(rows=[r[-1] for r in rows], summary=summary, final_state=state)
