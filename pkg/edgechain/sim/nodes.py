"""
Behaviour of the simulated participants.

- `ServerNode`: edge server. Keeps every valid block it has seen, follows the
  fork-choice winner, runs a FIFO mempool and (if mining) produces blocks.
- `CustomerNode`: IoT device. Registers, submits data periodically, downloads
  and applies firmware updates after a version rejection, optionally reports
  a peer.
- `AdminNode`: runs the admin's scripted migrations and permission changes.
- `RepositoryNode`: far-end update repository serving downloads.
"""
from collections import OrderedDict
from dataclasses import dataclass, replace
from logging import getLogger
from typing import TYPE_CHECKING

from edgechain.chain.chain import Chain, ChainError, append_block, genesis_block
from edgechain.chain.consensus import (
    ConsensusMode, EmptyStakeSet, NoSolution, NotSelected, fork_choice, pos_select,
)
from edgechain.chain.contract import Method, Receipt, RevertReason, UpdateRequired
from edgechain.chain.crypto import sign
from edgechain.chain.executor import ExecContext, check_conservation
from edgechain.chain.ledger import (
    BadNonce, Block, BlockHeader, ContractCall, DuplicateTransaction, LedgerError, NotAllowlisted,
    Transaction, canonical_encode, compute_tx_root, verify_transaction,
)
from edgechain.chain.state import WorldState
from edgechain.client import ClientHandle, ReceiptStatus
from edgechain.sim.events import Event, EventKind
from edgechain.sim.scenario import MigrateAction, NodeSpec, PermissionAction
from edgechain.utils import short_hex

if TYPE_CHECKING:
    from edgechain.sim.netsim import Sim

logger = getLogger(__name__)


@dataclass
class BlockEntry:
    block: Block
    chain: Chain
    state: WorldState
    receipts: dict[bytes, Receipt]

    @property
    def digest(self) -> bytes:
        return self.block.digest

    @property
    def height(self) -> int:
        return self.block.height


def _is_distribute(tx: Transaction) -> bool:
    return isinstance(tx.kind, ContractCall) and tx.kind.method_id == Method.DISTRIBUTE


class Node:

    def __init__(self, sim: 'Sim', spec: NodeSpec):
        self.sim = sim
        self.spec = spec
        self.name = spec.name
        self.keypair = sim.deployment.keys[spec.name]
        self._client: ClientHandle | None = None

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name})"

    @property
    def address(self) -> bytes:
        return self.keypair.address

    @property
    def client(self) -> ClientHandle:
        """ Handle bound to this node's gateway edge server. """
        if self._client is None:
            gateway = self.sim.servers[self.sim.config.gateway_of(self.spec)]
            self._client = ClientHandle(gateway, self.keypair, self.spec.gas_limit, self.spec.gas_price)
        return self._client

    def on_event(self, event: Event):
        logger.warning("%s ignores %s", self.name, event.kind.value)


class ServerNode(Node):

    def __init__(self, sim: 'Sim', spec: NodeSpec):
        super().__init__(sim, spec)
        genesis = BlockEntry(genesis_block(), Chain(), sim.deployment.genesis_state, {})
        self.blocks: dict[bytes, BlockEntry] = {genesis.digest: genesis}
        self.best = genesis
        self.mempool: OrderedDict[bytes, Transaction] = OrderedDict()
        self._slots: dict[tuple[bytes, int], bytes] = {}
        self._included: dict[bytes, list[bytes]] = {}
        self._orphans: dict[bytes, list[Block]] = {}
        self._requested: set[bytes] = set()
        self.produced = 0

    @property
    def best_state(self) -> WorldState:
        return self.best.state

    @property
    def chain(self) -> Chain:
        return self.best.chain

    def block_interval(self) -> int:
        """ Ticks between production attempts, as regulated by the contract. """
        return self.best_state.contract.block_interval or self.sim.config.consensus.target_block_interval

    # --- mempool ---

    def in_mempool(self, tx_hash: bytes) -> bool:
        return tx_hash in self.mempool

    def lookup_receipt(self, tx_hash: bytes) -> Receipt | None:
        for digest in self._included.get(tx_hash, ()):
            entry = self.blocks[digest]
            if self.chain.contains(digest, entry.height):
                return entry.receipts[tx_hash]
        return None

    def pending_nonce(self, address: bytes) -> int:
        nonce = self.best_state.account(address).nonce
        while (address, nonce) in self._slots:
            nonce += 1
        return nonce

    def _check(self, tx: Transaction):
        state = self.best_state
        if not state.is_allowed(tx.sender):
            raise NotAllowlisted(f"{tx.sender.hex()} is not admitted")
        if tx.digest in self.mempool or (tx.sender, tx.nonce) in self._slots:
            raise DuplicateTransaction(f"nonce {tx.nonce} of {tx.sender.hex()} is already pending")
        account = replace(state.account(tx.sender), nonce=self.pending_nonce(tx.sender))
        d = self.sim.deployment
        verify_transaction(tx, account, d.config.gas_schedule, d.registry)

    def _add(self, tx: Transaction):
        self.mempool[tx.digest] = tx
        self._slots[(tx.sender, tx.nonce)] = tx.digest

    def _remove(self, tx_hash: bytes):
        tx = self.mempool.pop(tx_hash, None)
        if tx is not None:
            self._slots.pop((tx.sender, tx.nonce), None)

    def _evict(self, tx: Transaction):
        """ Drop `tx` and the sender's later nonces, which can no longer execute. """
        for digest, other in list(self.mempool.items()):
            if other.sender == tx.sender and other.nonce >= tx.nonce:
                self._remove(digest)

    def submit_local(self, tx: Transaction):
        """ Admission of a client submission; raises the LedgerError behind a drop. """
        try:
            self._check(tx)
        except LedgerError as e:
            self.sim.record_drop(tx, e)
            raise
        self._add(tx)
        logger.debug("%s admitted %s (nonce %d)", self.name, short_hex(tx.digest), tx.nonce)
        self.sim.gossip_tx(self, tx)

    def admit_to_mempool(self, tx: Transaction) -> bool:
        try:
            self._check(tx)
        except LedgerError as e:
            logger.debug("%s ignores relayed %s: %s", self.name, short_hex(tx.digest), e)
            return False
        self._add(tx)
        return True

    # --- production ---

    def _distribute_tx(self, state: WorldState, height: int) -> Transaction | None:
        contract = state.contract
        if not contract.initialized or height % contract.epoch_length or contract.last_distribution_height == height:
            return None
        schedule = self.sim.config.gas_schedule
        tx = Transaction(
            sender=self.address,
            nonce=state.account(self.address).nonce,
            kind=ContractCall(Method.DISTRIBUTE),
            payload=b'',
            gas_limit=schedule.base_tx + schedule.distribute,
            gas_price=self.spec.gas_price,
        )
        return tx.with_signature(sign(self.keypair, canonical_encode(tx, signing=True)))

    def produce_block(self) -> Block | None:
        parent = self.best
        height = parent.height + 1
        if self.sim.height_limit is not None and parent.height >= self.sim.height_limit:
            return None
        d = self.sim.deployment
        stakes = parent.state.stake_set()
        if d.engine.mode is ConsensusMode.POS:
            try:
                selected = pos_select(stakes, d.seed, height)
            except EmptyStakeSet:
                logger.warning("%s cannot produce height %d: no stake", self.name, height)
                return None
            if selected != self.address:
                return None

        ctx = ExecContext(height=height, producer=self.address)
        state = parent.state
        included: list[Transaction] = []
        distribute = self._distribute_tx(state, height)
        candidates = ([distribute] if distribute is not None else []) + list(self.mempool.values())
        for tx in candidates:
            if len(included) >= self.sim.config.run.max_block_txs:
                break
            try:
                d.executor.admit(tx, state)
            except BadNonce:
                if tx.nonce < state.account(tx.sender).nonce:
                    self._remove(tx.digest)
                continue
            except LedgerError as e:
                logger.info("%s drops %s from the mempool: %s", self.name, short_hex(tx.digest), e)
                self._evict(tx)
                continue
            state, _ = d.executor.execute(tx, state, ctx)
            included.append(tx)

        template = BlockHeader(
            height=height,
            prev_hash=parent.digest,
            tx_root=compute_tx_root(included),
            timestamp=self.sim.now,
            producer=self.address,
        )
        try:
            header = d.engine.seal(template, self.keypair, stakes)
        except (NoSolution, NotSelected) as e:
            logger.warning("%s failed to seal height %d: %s", self.name, height, e)
            return None
        block = Block(header=header, transactions=tuple(included))
        self.produced += 1
        logger.info("%s produced block %d (%s) with %d txs at tick %d",
                    self.name, height, short_hex(block.digest), len(included), self.sim.now)
        self.receive_blocks((block,), self.name)
        self.sim.broadcast_block(self, block)
        return block

    # --- block import ---

    def receive_blocks(self, blocks: tuple[Block, ...], sender: str):
        for block in blocks:
            if block.digest in self.blocks:
                continue
            parent = self.blocks.get(block.header.prev_hash)
            if parent is None:
                waiting = self._orphans.setdefault(block.header.prev_hash, [])
                if all(b.digest != block.digest for b in waiting):
                    waiting.append(block)
                if block.digest not in self._requested and sender != self.name:
                    self._requested.add(block.digest)
                    self.sim.request_branch(self, sender, block)
                continue
            self._import(parent, block)

    def _import(self, parent: BlockEntry, block: Block):
        pending = [(parent, block)]
        while pending:
            parent, block = pending.pop()
            entry = self._connect(parent, block)
            if entry is not None:
                pending.extend((entry, child) for child in self._orphans.pop(entry.digest, []))

    def _connect(self, parent: BlockEntry, block: Block) -> BlockEntry | None:
        if block.digest in self.blocks:
            return None
        d = self.sim.deployment
        try:
            chain = append_block(parent.chain, block, d.engine, parent.state.stake_set())
            state, receipts = d.executor.execute_block(parent.state, block)
        except ChainError as e:
            logger.warning("%s rejected block from %s: %s", self.name, short_hex(block.header.producer), e)
            return None
        check_conservation(state, d.genesis_supply, d.config.consensus.block_reward, block.height)
        entry = BlockEntry(block, chain, state, {tx.digest: r for tx, r in zip(block.transactions, receipts)})
        self.blocks[entry.digest] = entry
        for tx in block.transactions:
            self._included.setdefault(tx.digest, []).append(entry.digest)
        if fork_choice([self.chain, chain]) is chain:
            self._adopt(entry)
        return entry

    def _adopt(self, entry: BlockEntry):
        old = self.best
        self.best = entry
        prefix = old.chain.common_prefix(entry.chain)
        if prefix < len(old.chain):
            depth = len(old.chain) - prefix
            logger.info("%s reorg at height %d, depth %d, new tip %s",
                        self.name, entry.height, depth, short_hex(entry.digest))
            self.sim.record_reorg(self, depth)

        confirmed = {tx.digest for b in entry.chain.blocks[prefix:] for tx in b.transactions}
        for digest in confirmed:
            self._remove(digest)
        for block in old.chain.blocks[prefix:]:
            for tx in block.transactions:
                if tx.digest in confirmed or _is_distribute(tx):
                    continue
                if tx.digest not in self.mempool and (tx.sender, tx.nonce) not in self._slots:
                    self._add(tx)
        state = entry.state
        for digest, tx in list(self.mempool.items()):
            if tx.nonce < state.account(tx.sender).nonce:
                self._remove(digest)

        epoch_length = state.contract.epoch_length
        if entry.height and entry.height % epoch_length == 0:
            self.sim.epoch_reached(entry.height)


class CustomerNode(Node):

    def __init__(self, sim: 'Sim', spec: NodeSpec):
        super().__init__(sim, spec)
        self.submits = 0
        self.registered = False
        self.downloading = False
        self.updated_at_nonce = -1
        self.pending: dict[bytes, tuple[str, int]] = {}

    def start(self):
        self.sim.schedule(0, EventKind.SUBMIT_TX, self.name, 'register')
        if self.spec.submit_period is not None:
            self.sim.schedule(self.sim.offset(self.name, self.spec.submit_period), EventKind.SUBMIT_TX, self.name, 'submit')
        if self.spec.report_target is not None:
            self.sim.schedule(self.spec.report_period, EventKind.SUBMIT_TX, self.name, 'report')

    def on_event(self, event: Event):
        match event.kind:
            case EventKind.SUBMIT_TX:
                self.poll()
                match event.data:
                    case 'register':
                        self._register()
                    case 'submit':
                        self._submit()
                    case 'report':
                        self.sim.schedule(self.sim.now + self.spec.report_period, EventKind.SUBMIT_TX, self.name, 'report')
                        self.report(self.sim.deployment.keys[self.spec.report_target].address)
            case EventKind.FINISH_DOWNLOAD:
                self.sim.record_network('FinishDownload', self.name, detail=event.data)
                logger.info("%s finished downloading %s", self.name, event.data)
                self.downloading = False
                if self._send('apply_update', self.client.apply_update):
                    self.updated_at_nonce = self.client.nonce - 1
            case _:
                super().on_event(event)

    def _send(self, label: str, fn, *args) -> bytes | None:
        try:
            tx_hash = fn(*args)
        except LedgerError as e:
            logger.info("%s: %s dropped at admission (%s)", self.name, label, type(e).__name__)
            return None
        self.pending[tx_hash] = (label, self.client.nonce - 1)
        return tx_hash

    def _register(self):
        version = self.spec.firmware_version
        if version is None:
            version = self.sim.config.contract.version
        self._send('register', self.client.register, version)

    def _submit(self):
        spec = self.spec
        if spec.max_submits is not None and self.submits >= spec.max_submits:
            return
        self.sim.schedule(self.sim.now + spec.submit_period, EventKind.SUBMIT_TX, self.name, 'submit')
        if self.downloading:
            return
        self.submits += 1
        payload = (self.submits % (1 << (8 * spec.data_size))).to_bytes(spec.data_size, 'big')
        self._send('submit', self.client.submit_data, payload)

    def report(self, offender: bytes):
        if not self.registered:
            return
        self._send('report', self.client.report, offender)

    def poll(self):
        """ Check receipts of this device's pending transactions. """
        for tx_hash, (label, nonce) in list(self.pending.items()):
            receipt = self.client.get_receipt(tx_hash)
            if receipt is ReceiptStatus.PENDING:
                continue
            del self.pending[tx_hash]
            if receipt is ReceiptStatus.UNKNOWN:
                logger.debug("%s lost track of %s %s", self.name, label, short_hex(tx_hash))
                if label == 'register' and not self.registered:
                    self._register()
                continue
            self._on_receipt(label, nonce, receipt)

    def _on_receipt(self, label: str, nonce: int, receipt: Receipt):
        if label == 'register':
            if receipt.success or receipt.reason is RevertReason.ALREADY_REGISTERED:
                self.registered = True
            else:
                logger.info("%s registration reverted (%s), retrying", self.name, receipt.reason.value)
                self._register()
        elif receipt.reason is RevertReason.OUTDATED_VERSION and nonce > self.updated_at_nonce and not self.downloading:
            urls = [e.url for e in receipt.events if isinstance(e, UpdateRequired)]
            self._begin_download(urls[0] if urls else self.client.node.best_state.contract.update_url)

    def _begin_download(self, url: str):
        repository = self.sim.repository
        if repository is None:
            logger.warning("%s needs %s but no update repository is deployed", self.name, url)
            return
        self.downloading = True
        logger.info("%s requests %s from %s", self.name, url, repository.name)
        self.sim.schedule(
            self.sim.now + self.sim.latency(self.name, repository.name),
            EventKind.BEGIN_DOWNLOAD, repository.name, (self.name, url),
        )


class RepositoryNode(Node):

    def on_event(self, event: Event):
        if event.kind is not EventKind.BEGIN_DOWNLOAD:
            return super().on_event(event)
        customer, url = event.data
        self.sim.record_network('BeginDownload', customer, detail=url)
        self.sim.schedule(
            self.sim.now + self.spec.download_ticks + self.sim.latency(self.name, customer),
            EventKind.FINISH_DOWNLOAD, customer, url,
        )


class AdminNode(Node):

    def migrate(self, action: MigrateAction):
        interval = action.block_interval
        if interval is None:
            interval = self.client.node.best_state.contract.block_interval or self.sim.config.contract.block_interval
        try:
            self.client.migrate(action.version, action.update_url, interval)
        except LedgerError as e:
            logger.error("Migrate to version %d dropped: %s", action.version, e)

    def set_permission(self, action: PermissionAction):
        target = self.sim.deployment.address(action.target)
        try:
            self.client.set_permission(target, action.allow)
        except LedgerError as e:
            logger.error("Permission update for %s dropped: %s", action.target, e)
