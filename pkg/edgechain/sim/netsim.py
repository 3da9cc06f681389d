"""
Deterministic discrete-event simulation of the three-tier network.

Time is integer ticks. Events fire in (fire_at, sequence) order, so a run is a
pure function of (scenario, seed). Partitions cut server-to-server traffic
(blocks, relayed transactions, branch sync); clients talk to their gateway
in-process and downloads from the core cloud are not affected.
"""
from collections import Counter
from logging import getLogger

from edgechain.chain.consensus import Finality, finality_check
from edgechain.chain.executor import check_conservation
from edgechain.chain.ledger import Block, LedgerError, Transaction
from edgechain.sim.events import Event, EventKind, EventQueue
from edgechain.sim.metrics import MetricRow
from edgechain.sim.nodes import AdminNode, CustomerNode, Node, RepositoryNode, ServerNode
from edgechain.sim.scenario import (
    Deployment, HealAction, MigrateAction, NodeKind, PartitionAction, PermissionAction,
    ReportAction, SimConfig, TransferAction, deploy,
)
from edgechain.utils import sha256, short_hex, uint_be

logger = getLogger(__name__)

NODE_CLASSES: dict[NodeKind, type[Node]] = {
    NodeKind.EDGE_SERVER: ServerNode,
    NodeKind.CUSTOMER: CustomerNode,
    NodeKind.ADMIN: AdminNode,
    NodeKind.UPDATE_REPOSITORY: RepositoryNode,
}


class Sim:
    """ Simulation state. Build one with `init_sim`, advance it with `run_until`. """

    def __init__(self, deployment: Deployment):
        self.deployment = deployment
        self.config = deployment.config
        self.queue = EventQueue()
        self.now = 0
        self.nodes: dict[str, Node] = {}
        self.servers: dict[str, ServerNode] = {}
        self.groups: dict[str, int] | None = None
        self.height_limit: int | None = None
        self.network_rows: list[MetricRow] = []
        self.drops: Counter[str] = Counter()
        self._epochs_seen: set[int] = set()
        self._names = deployment.names()

    @property
    def observer(self) -> ServerNode:
        """ The first edge server; its best chain is the run's output. """
        return next(iter(self.servers.values()))

    @property
    def repository(self) -> Node | None:
        return next((n for n in self.nodes.values() if isinstance(n, RepositoryNode)), None)

    def name_of(self, address: bytes) -> str:
        return self._names.get(address, address.hex())

    def schedule(self, at: int, kind: EventKind, target: str, data=None) -> Event:
        return self.queue.push(at, kind, target, data)

    def latency(self, a: str, b: str) -> int:
        return self.config.latency.delay(a, b)

    def reachable(self, a: str, b: str) -> bool:
        if self.groups is None:
            return True
        return self.groups.get(a, -1) == self.groups.get(b, -2)

    def offset(self, name: str, period: int) -> int:
        """ Seed-dependent phase of a periodic activity, in [0, period). """
        digest = sha256(uint_be(self.deployment.seed, 8) + name.encode())
        return int.from_bytes(digest[:8], 'big') % period

    # --- messaging ---

    def broadcast_block(self, origin: ServerNode, block: Block):
        for server in self.servers.values():
            if server is not origin and self.reachable(origin.name, server.name):
                self.schedule(self.now + self.latency(origin.name, server.name),
                              EventKind.DELIVER_BLOCK, server.name, ((block,), origin.name))

    def gossip_tx(self, origin: ServerNode, tx: Transaction):
        for server in self.servers.values():
            if server is not origin and self.reachable(origin.name, server.name):
                self.schedule(self.now + self.latency(origin.name, server.name),
                              EventKind.DELIVER_TX, server.name, tx)

    def request_branch(self, requester: ServerNode, sender: str, block: Block):
        """ Ask `sender` for the branch ending in `block`; the reply takes a round trip. """
        peer = self.servers.get(sender)
        if peer is None or not self.reachable(requester.name, sender):
            return
        entry = peer.blocks.get(block.digest)
        if entry is None:
            return
        segment = tuple(b for b in entry.chain.blocks if b.digest not in requester.blocks)
        logger.info("%s syncs %d blocks from %s", requester.name, len(segment), sender)
        self.schedule(self.now + 2 * self.latency(requester.name, sender),
                      EventKind.DELIVER_BLOCK, requester.name, (segment, sender))

    # --- metrics ---

    def record_network(self, event: str, node: str, detail: str = '', tx_hash: bytes = b''):
        self.network_rows.append(MetricRow(
            tick=self.now,
            height=self.observer.best.height,
            node=node,
            event=event,
            tx_hash=tx_hash.hex(),
            detail=detail,
        ))

    def record_drop(self, tx: Transaction, error: LedgerError):
        reason = type(error).__name__
        self.drops[reason] += 1
        logger.info("Dropped %s from %s: %s", short_hex(tx.digest), self.name_of(tx.sender), reason)
        self.record_network('Dropped', self.name_of(tx.sender), detail=reason, tx_hash=tx.digest)

    def record_reorg(self, server: ServerNode, depth: int):
        self.record_network('Reorg', server.name, detail=f"depth={depth}")

    def epoch_reached(self, height: int):
        if height not in self._epochs_seen:
            self._epochs_seen.add(height)
            self.schedule(self.now, EventKind.EPOCH_TICK, self.observer.name, height)

    # --- event handling ---

    def _sweep(self, height: int):
        """ Conservation over every server's tip. """
        d = self.deployment
        for server in self.servers.values():
            check_conservation(server.best_state, d.genesis_supply, self.config.consensus.block_reward, server.best.height)
        self.record_network('EpochTick', '', detail=f"epoch_height={height}")

    def _run_script(self, event: Event):
        action = event.data
        match action:
            case MigrateAction():
                self.nodes[event.target].migrate(action)
            case PermissionAction():
                self.nodes[event.target].set_permission(action)
            case ReportAction(offender=offender):
                self.nodes[event.target].report(self.deployment.address(offender))
            case TransferAction(to=to, amount=amount):
                try:
                    self.nodes[event.target].client.transfer(self.deployment.address(to), amount)
                except LedgerError as e:
                    logger.info("Scripted transfer from %s dropped: %s", event.target, e)
            case PartitionAction(groups=groups):
                self.groups = {name: i for i, group in enumerate(groups) for name in group}
                logger.info("Partitioned into %s", [list(g) for g in groups])
            case HealAction():
                self.groups = None
                logger.info("Partition healed")

    def dispatch(self, event: Event):
        logger.debug("tick %d: %s -> %s", event.fire_at, event.kind.value, event.target)
        match event.kind:
            case EventKind.PRODUCE_BLOCK:
                server = self.servers[event.target]
                server.produce_block()
                self.schedule(self.now + server.block_interval(), EventKind.PRODUCE_BLOCK, server.name)
            case EventKind.DELIVER_BLOCK:
                blocks, sender = event.data
                self.servers[event.target].receive_blocks(blocks, sender)
            case EventKind.DELIVER_TX:
                self.servers[event.target].admit_to_mempool(event.data)
            case EventKind.EPOCH_TICK:
                self._sweep(event.data)
            case EventKind.SCRIPT:
                self._run_script(event)
            case _:
                self.nodes[event.target].on_event(event)

    def finalized_height(self) -> int:
        """ Highest observer height whose block is on a >2/3 quorum of servers' best chains. """
        servers = list(self.servers.values())
        chain = self.observer.chain
        for height in range(chain.height, 0, -1):
            digest = chain.digests[height]
            votes = sum(1 for s in servers if s.chain.contains(digest, height))
            if finality_check(votes, len(servers)) is Finality.FINAL:
                return height
        return 0


def init_sim(config: SimConfig, seed: int) -> Sim:
    """ Build the network, queue the admin's initial migrate at tick 0 and
    every periodic activity. Raises InvalidScenario via `deploy`'s config.
    """
    sim = Sim(deploy(config, seed))
    for spec in sorted(config.nodes, key=lambda n: n.kind is not NodeKind.EDGE_SERVER):
        node = NODE_CLASSES[spec.kind](sim, spec)
        sim.nodes[spec.name] = node
        if isinstance(node, ServerNode):
            sim.servers[spec.name] = node
    sim.nodes = {spec.name: sim.nodes[spec.name] for spec in config.nodes}

    admin = config.admin.name
    contract = config.contract
    sim.schedule(0, EventKind.SCRIPT, admin, MigrateAction(
        at=0, version=contract.version, update_url=contract.update_url, block_interval=contract.block_interval,
    ))
    for action in config.script:
        match action:
            case MigrateAction() | PermissionAction():
                target = admin
            case ReportAction(reporter=reporter):
                target = reporter
            case TransferAction(sender=sender):
                target = sender
            case _:
                target = ''
        sim.schedule(action.at, EventKind.SCRIPT, target, action)
    for node in sim.nodes.values():
        if isinstance(node, CustomerNode):
            node.start()
    for server in sim.servers.values():
        if server.spec.mining:
            first = config.consensus.target_block_interval
            sim.schedule(first + sim.offset(server.name, first), EventKind.PRODUCE_BLOCK, server.name)
    logger.info("Simulation ready: %d nodes, %d edge servers, seed %d", len(sim.nodes), len(sim.servers), seed)
    return sim


def _tick_ceiling(config: SimConfig, height: int) -> int:
    """ Stop a height-bounded run that stalls (e.g. no stake, no PoW solution). """
    intervals = [config.consensus.target_block_interval, config.contract.block_interval]
    intervals += [a.block_interval for a in config.script if isinstance(a, MigrateAction) and a.block_interval]
    return (height + 1) * max(intervals) * 10 + 100


def run_until(sim: Sim, tick: int | None = None, height: int | None = None) -> Sim:
    """ Process events until the observer reaches `height`, the next event is
    past `tick` (or run.max_ticks), or the queue is empty.
    """
    limits = [t for t in (tick, sim.config.run.max_ticks) if t is not None]
    if height is not None:
        sim.height_limit = height
        if not limits:
            limits.append(_tick_ceiling(sim.config, height))
    tick_limit = min(limits) if limits else None
    while True:
        if height is not None and sim.observer.best.height >= height:
            break
        event = sim.queue.peek()
        if event is None:
            logger.info("Event queue drained at tick %d", sim.now)
            break
        if tick_limit is not None and event.fire_at > tick_limit:
            break
        sim.queue.pop()
        sim.now = event.fire_at
        sim.dispatch(event)
    logger.info("Stopped at tick %d, observer height %d, tip %s",
                sim.now, sim.observer.best.height, short_hex(sim.observer.best.digest))
    return sim
