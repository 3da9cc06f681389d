"""
Scenario files: the strict `SimConfig` parser, built-in scenarios and
`deploy`, which turns a config and a seed into keys and a genesis state.
"""
from dataclasses import dataclass
from enum import Enum
import json
from logging import getLogger
from pathlib import Path
from typing import Annotated, Any, Literal

from pydantic import Field, StrictBool, StrictStr, ValidationError, field_validator

from edgechain.chain.consensus import ConsensusConfig, ConsensusEngine, StakeSet
from edgechain.chain.crypto import ADDRESS_LEN, Keypair, KeyRegistry, derive_keypair, SCHEMES
from edgechain.chain.executor import Executor
from edgechain.chain.gas import GasSchedule
from edgechain.chain.ledger import Account
from edgechain.chain.state import ContractState, QuotaConfig, WorldState
from edgechain.utils import (
    EdgechainError, FrozenModel, Positive64, Uint32, Uint64, Uint128, from_hex, json_path,
)

logger = getLogger(__name__)

Tick = Uint64


class InvalidScenario(EdgechainError):

    @classmethod
    def from_validation_error(cls, e: ValidationError, prefix: tuple = ()) -> 'InvalidScenario':
        """ Report the first error as `$.path: message`. """
        error = e.errors()[0]
        message = 'unknown key' if error['type'] == 'extra_forbidden' else error['msg']
        return cls(f"{json_path(prefix + tuple(error['loc']))}: {message}")


class NodeKind(str, Enum):
    CUSTOMER = 'customer'
    EDGE_SERVER = 'edge_server'
    UPDATE_REPOSITORY = 'update_repository'
    ADMIN = 'admin'


class ContractConfig(FrozenModel):
    """ Parameters of the admin's initial migrate, plus epoch and quota settings. """
    version: Uint32 = 1
    update_url: StrictStr = 'repo://firmware/v1'
    block_interval: Positive64 = 4
    epoch_length: Positive64 = 20
    epoch_mint: Uint128 = 0
    quota: QuotaConfig = Field(default_factory=QuotaConfig)


class NodeSpec(FrozenModel):
    """
    Vars:
        seed: key seed, defaults to the node name
        mining: edge servers only, whether the server produces blocks
        gateway: edge server this node submits through, defaults to the first one
        submit_period: customers only, ticks between data submissions (None: never)
        max_submits: stop after this many submissions (None: unlimited)
        firmware_version: version the customer registers with, defaults to contract.version
        data_size: payload bytes per submission
        report_target: customer name to report every report_period ticks
        download_ticks: update repositories only, time to serve one download
    """
    name: Annotated[StrictStr, Field(min_length=1)]
    kind: NodeKind
    seed: StrictStr | None = None
    balance: Uint128 = 0
    stake: Uint64 = 0
    mining: StrictBool = True
    gateway: StrictStr | None = None
    submit_period: Positive64 | None = None
    max_submits: Uint64 | None = None
    firmware_version: Uint32 | None = None
    data_size: Uint32 = 4
    gas_limit: Uint64 = 1000
    gas_price: Uint64 = 1
    report_target: StrictStr | None = None
    report_period: Positive64 | None = None
    download_ticks: Uint64 = 2

    @property
    def key_seed(self) -> bytes:
        return (self.seed if self.seed is not None else self.name).encode()


class LinkSpec(FrozenModel):
    a: StrictStr
    b: StrictStr
    delay: Tick


class LatencyConfig(FrozenModel):
    default: Tick = 1
    links: tuple[LinkSpec, ...] = ()

    def delay(self, a: str, b: str) -> int:
        for link in self.links:
            if {link.a, link.b} == {a, b}:
                return link.delay
        return self.default


class RunConfig(FrozenModel):
    max_blocks: Uint64 = 100
    seed: Uint64 = 0
    max_ticks: Tick | None = None
    max_block_txs: Positive64 = 100
    pow_max_iterations: Positive64 = 1_000_000
    signature_scheme: StrictStr = 'mock'

    @field_validator('signature_scheme')
    @classmethod
    def _known_scheme(cls, value: str) -> str:
        if value not in SCHEMES:
            raise ValueError(f"must be one of {', '.join(SCHEMES)}")
        return value


class MigrateAction(FrozenModel):
    at: Tick
    version: Uint32
    update_url: StrictStr
    block_interval: Positive64 | None = None

class PermissionAction(FrozenModel):
    at: Tick
    target: StrictStr
    allow: StrictBool

class ReportAction(FrozenModel):
    at: Tick
    reporter: StrictStr
    offender: StrictStr

class TransferAction(FrozenModel):
    at: Tick
    sender: StrictStr
    to: StrictStr
    amount: Uint128

class PartitionAction(FrozenModel):
    at: Tick
    groups: tuple[tuple[StrictStr, ...], ...]

class HealAction(FrozenModel):
    at: Tick

ScriptAction = MigrateAction | PermissionAction | ReportAction | TransferAction | PartitionAction | HealAction

SCRIPT_ACTIONS: dict[str, type[FrozenModel]] = {
    'migrate': MigrateAction,
    'permission': PermissionAction,
    'report': ReportAction,
    'transfer': TransferAction,
    'partition': PartitionAction,
    'heal': HealAction,
}
ACTION_NAMES = {cls: name for name, cls in SCRIPT_ACTIONS.items()}


def _parse_script(data: Any) -> tuple[ScriptAction, ...]:
    if not isinstance(data, list):
        raise InvalidScenario("$.script: expected a list")
    actions = []
    for i, entry in enumerate(data):
        if not isinstance(entry, dict) or 'action' not in entry:
            raise InvalidScenario(f"$.script[{i}]: expected an object with an 'action' key")
        entry = dict(entry)
        name = entry.pop('action')
        cls = SCRIPT_ACTIONS.get(name) if isinstance(name, str) else None
        if cls is None:
            raise InvalidScenario(f"$.script[{i}].action: unknown action {name!r}, choices are: {', '.join(SCRIPT_ACTIONS)}")
        try:
            actions.append(cls.model_validate(entry))
        except ValidationError as e:
            raise InvalidScenario.from_validation_error(e, ('script', i)) from None
    return tuple(actions)


class SimConfig(FrozenModel):
    consensus: ConsensusConfig = Field(default_factory=ConsensusConfig)
    contract: ContractConfig = Field(default_factory=ContractConfig)
    gas_schedule: GasSchedule = Field(default_factory=GasSchedule)
    nodes: tuple[NodeSpec, ...] = ()
    allowlist: Literal['all'] | tuple[StrictStr, ...] = 'all'
    latency: LatencyConfig = Field(default_factory=LatencyConfig)
    run: RunConfig = Field(default_factory=RunConfig)
    script: tuple[ScriptAction, ...] = ()

    @classmethod
    def from_dict(cls, data: Any) -> 'SimConfig':
        """ Strict parse; raises InvalidScenario naming the first offending JSON path. """
        if not isinstance(data, dict):
            raise InvalidScenario(f"$: expected an object, got {type(data).__name__}")
        data = dict(data)
        script = _parse_script(data.pop('script')) if 'script' in data else ()
        try:
            config = cls.model_validate({**data, 'script': script})
        except ValidationError as e:
            raise InvalidScenario.from_validation_error(e) from None
        config.check_references()
        return config

    @classmethod
    def from_file(cls, path: Path) -> 'SimConfig':
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, UnicodeDecodeError) as e:
            raise InvalidScenario(f"cannot read {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise InvalidScenario(f"{path}: invalid JSON: {e}") from None
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        """ Fully defaulted plain form; from_dict(to_dict()) gives back an equal config. """
        d = self.model_dump(mode='json', by_alias=True, exclude={'script'})
        d['script'] = [{'action': ACTION_NAMES[type(a)], **a.model_dump(mode='json')} for a in self.script]
        return d

    @staticmethod
    def node_defaults() -> dict:
        return {name: f.default for name, f in NodeSpec.model_fields.items() if not f.is_required()}

    def nodes_of(self, kind: NodeKind) -> list[NodeSpec]:
        return [n for n in self.nodes if n.kind is kind]

    def node(self, name: str) -> NodeSpec:
        for n in self.nodes:
            if n.name == name:
                return n
        raise KeyError(name)

    @property
    def admin(self) -> NodeSpec:
        return self.nodes_of(NodeKind.ADMIN)[0]

    def gateway_of(self, spec: NodeSpec) -> str:
        if spec.kind is NodeKind.EDGE_SERVER:
            return spec.name
        return spec.gateway or self.nodes_of(NodeKind.EDGE_SERVER)[0].name

    def check_references(self):
        """ Cross-field rules the per-field parser can't see. """
        names = [n.name for n in self.nodes]
        for i, name in enumerate(names):
            if name in names[:i]:
                raise InvalidScenario(f"$.nodes[{i}].name: duplicate node name {name!r}")
        seeds = [n.key_seed for n in self.nodes]
        for i, seed in enumerate(seeds):
            if seed in seeds[:i]:
                raise InvalidScenario(f"$.nodes[{i}]: duplicate address (key seed {seed.decode()!r} reused)")
        if len(self.nodes_of(NodeKind.ADMIN)) != 1:
            raise InvalidScenario("$.nodes: exactly one admin node is required")
        servers = self.nodes_of(NodeKind.EDGE_SERVER)
        if not servers:
            raise InvalidScenario("$.nodes: at least one edge_server node is required")
        submitting = [n for n in self.nodes_of(NodeKind.CUSTOMER) if n.submit_period is not None]
        if submitting and not any(s.mining for s in servers):
            raise InvalidScenario(f"$.nodes: customer {submitting[0].name!r} submits but no edge server mines")
        server_names = {s.name for s in servers}
        customers = {c.name for c in self.nodes_of(NodeKind.CUSTOMER)}
        known = set(names)
        for i, n in enumerate(self.nodes):
            if n.firmware_version is not None and n.firmware_version > self.contract.version:
                raise InvalidScenario(f"$.nodes[{i}].firmware_version: newer than contract.version "
                                      f"{self.contract.version}")
            if n.gateway is not None and n.gateway not in server_names:
                raise InvalidScenario(f"$.nodes[{i}].gateway: {n.gateway!r} is not an edge server")
            if n.report_target is not None:
                if n.report_target not in customers or n.report_target == n.name:
                    raise InvalidScenario(f"$.nodes[{i}].report_target: {n.report_target!r} is not another customer")
                if n.report_period is None:
                    raise InvalidScenario(f"$.nodes[{i}].report_period: required with report_target")
        for i, link in enumerate(self.latency.links):
            for end in (link.a, link.b):
                if end not in known:
                    raise InvalidScenario(f"$.latency.links[{i}]: unknown node {end!r}")
        if self.allowlist != 'all':
            for i, entry in enumerate(self.allowlist):
                if entry not in known and not _is_address(entry):
                    raise InvalidScenario(f"$.allowlist[{i}]: {entry!r} is neither a node name nor an address")
        has_repo = bool(self.nodes_of(NodeKind.UPDATE_REPOSITORY))
        if not has_repo:
            for i, n in enumerate(self.nodes):
                if n.firmware_version is not None and n.firmware_version < self.contract.version:
                    raise InvalidScenario(f"$.nodes[{i}].firmware_version: {n.name!r} starts outdated "
                                          "but there is no update_repository node")
        for i, action in enumerate(self.script):
            path = f"$.script[{i}]"
            match action:
                case MigrateAction():
                    if not has_repo:
                        raise InvalidScenario(f"{path}: migrate needs an update_repository node")
                case PermissionAction(target=target):
                    if target not in known and not _is_address(target):
                        raise InvalidScenario(f"{path}.target: unknown node {target!r}")
                case ReportAction(reporter=reporter, offender=offender):
                    for key, value in (('reporter', reporter), ('offender', offender)):
                        if value not in customers:
                            raise InvalidScenario(f"{path}.{key}: {value!r} is not a customer")
                case TransferAction(sender=sender, to=to):
                    if sender not in known:
                        raise InvalidScenario(f"{path}.sender: unknown node {sender!r}")
                    if to not in known and not _is_address(to):
                        raise InvalidScenario(f"{path}.to: unknown node {to!r}")
                case PartitionAction(groups=groups):
                    seen: set[str] = set()
                    for group in groups:
                        for name in group:
                            if name not in known or name in seen:
                                raise InvalidScenario(f"{path}.groups: {name!r} is unknown or listed twice")
                            seen.add(name)


def _is_address(text: str) -> bool:
    try:
        from_hex(text, ADDRESS_LEN)
    except ValueError:
        return False
    return True


@dataclass
class Deployment:
    """ Keys and genesis derived from a scenario; shared by the simulator, validate and replay. """
    config: SimConfig
    seed: int
    keys: dict[str, Keypair]
    registry: KeyRegistry
    genesis_state: WorldState
    executor: Executor
    engine: ConsensusEngine
    genesis_supply: int

    @property
    def genesis_stakes(self) -> StakeSet:
        return self.genesis_state.stake_set()

    def address(self, name_or_hex: str) -> bytes:
        keypair = self.keys.get(name_or_hex)
        return keypair.address if keypair is not None else from_hex(name_or_hex, ADDRESS_LEN)

    def names(self) -> dict[bytes, str]:
        return {kp.address: name for name, kp in self.keys.items()}


def deploy(config: SimConfig, seed: int) -> Deployment:
    scheme = config.run.signature_scheme
    keys = {n.name: derive_keypair(n.key_seed, scheme) for n in config.nodes}
    registry = KeyRegistry(list(keys.values()))
    accounts = {}
    for n in config.nodes:
        address = keys[n.name].address
        accounts[address] = Account(address=address, balance=n.balance, stake=n.stake)
    contract = ContractState(
        admin=keys[config.admin.name].address,
        quota=config.contract.quota,
        epoch_length=config.contract.epoch_length,
        epoch_mint=config.contract.epoch_mint,
    )
    always = {keys[config.admin.name].address} | {keys[s.name].address for s in config.nodes_of(NodeKind.EDGE_SERVER)}
    if isinstance(config.allowlist, str):
        state = WorldState(accounts=accounts, contract=contract, allow_all=True)
    else:
        listed = {keys[e].address if e in keys else from_hex(e, ADDRESS_LEN) for e in config.allowlist}
        state = WorldState(accounts=accounts, contract=contract, allow_all=False, allowed=frozenset(listed | always))
    supply = state.total_supply()
    logger.info("Deployed %d nodes, genesis supply %d, %s consensus",
                len(config.nodes), supply, config.consensus.mode.value)
    return Deployment(
        config=config,
        seed=seed,
        keys=keys,
        registry=registry,
        genesis_state=state,
        executor=Executor(config.gas_schedule, registry, config.consensus),
        engine=ConsensusEngine(config.consensus, seed, registry, config.run.pow_max_iterations),
        genesis_supply=supply,
    )


def _customer(name: str, **kwargs) -> dict:
    return {'name': name, 'kind': 'customer', **kwargs}

BUILTIN_SCENARIOS: dict[str, dict] = {
    'fig3': {
        'contract': {'epoch_length': 20, 'epoch_mint': 200},
        'nodes': [
            {'name': 'admin', 'kind': 'admin', 'balance': 10_000},
            {'name': 'edge-1', 'kind': 'edge_server', 'balance': 1_000},
            {'name': 'repository', 'kind': 'update_repository'},
            _customer('device-1', balance=5_000, submit_period=4, max_submits=50),
        ],
        'run': {'max_blocks': 60},
    },
    'fig4': {
        'contract': {'epoch_length': 20},
        'nodes': [
            {'name': 'admin', 'kind': 'admin', 'balance': 10_000},
            {'name': 'edge-1', 'kind': 'edge_server', 'balance': 1_000},
            {'name': 'repository', 'kind': 'update_repository'},
            _customer('offender', balance=100_000, submit_period=1),
            _customer('reporter', balance=20_000, submit_period=4, report_target='offender', report_period=20),
        ],
        'run': {'max_blocks': 60},
    },
    'version-gating': {
        'nodes': [
            {'name': 'admin', 'kind': 'admin', 'balance': 10_000},
            {'name': 'edge-1', 'kind': 'edge_server', 'balance': 1_000},
            {'name': 'repository', 'kind': 'update_repository', 'download_ticks': 3},
            _customer('device-1', balance=10_000, submit_period=4),
            _customer('device-2', balance=10_000, submit_period=6),
        ],
        'script': [
            {'action': 'migrate', 'at': 40, 'version': 2, 'update_url': 'repo://firmware/v2'},
        ],
        'run': {'max_blocks': 40},
    },
    'partition': {
        'nodes': [
            {'name': 'admin', 'kind': 'admin', 'balance': 10_000},
            {'name': 'edge-1', 'kind': 'edge_server', 'balance': 1_000},
            {'name': 'edge-2', 'kind': 'edge_server', 'balance': 1_000},
            {'name': 'repository', 'kind': 'update_repository'},
            _customer('device-1', balance=10_000, submit_period=4),
        ],
        'script': [
            {'action': 'partition', 'at': 20, 'groups': [['admin', 'edge-1', 'repository', 'device-1'], ['edge-2']]},
            {'action': 'heal', 'at': 60},
        ],
        'run': {'max_blocks': 1_000, 'max_ticks': 100},
    },
    'pos': {
        'consensus': {'mode': 'pos'},
        'contract': {'epoch_mint': 90},
        'nodes': [
            {'name': 'admin', 'kind': 'admin', 'balance': 10_000},
            {'name': 'edge-1', 'kind': 'edge_server', 'balance': 1_000, 'stake': 10},
            {'name': 'edge-2', 'kind': 'edge_server', 'balance': 1_000, 'stake': 20},
            {'name': 'edge-3', 'kind': 'edge_server', 'balance': 1_000, 'stake': 30},
            {'name': 'repository', 'kind': 'update_repository'},
            _customer('device-1', balance=10_000, submit_period=3),
            _customer('device-2', balance=10_000, submit_period=5, gateway='edge-2'),
        ],
        'run': {'max_blocks': 60},
    },
}


def load_scenario(name_or_path: str | Path, scenario_dirs: list[Path] = ()) -> SimConfig:
    """ A file path, a built-in name, or `<name>.json` in one of scenario_dirs. """
    path = Path(name_or_path)
    if path.is_file():
        return SimConfig.from_file(path)
    name = str(name_or_path)
    if name in BUILTIN_SCENARIOS:
        logger.info("Using built-in scenario %s", name)
        return SimConfig.from_dict(BUILTIN_SCENARIOS[name])
    for directory in scenario_dirs:
        candidate = Path(directory) / f"{name}.json"
        if candidate.is_file():
            return SimConfig.from_file(candidate)
    raise InvalidScenario(f"{name}: no such file or built-in scenario")
