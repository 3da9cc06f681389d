from dataclasses import dataclass

import pytest

from edgechain.chain.consensus import ConsensusConfig
from edgechain.chain.contract import Method, MigrateParams, Receipt
from edgechain.chain.crypto import Keypair, KeyRegistry, derive_keypair, sign
from edgechain.chain.executor import ExecContext, Executor
from edgechain.chain.gas import GasSchedule
from edgechain.chain.ledger import Account, ContractCall, Migrate, Transaction, TxKind, canonical_encode
from edgechain.chain.state import ContractState, QuotaConfig, WorldState
from edgechain.utils import uint_be

ADMIN = derive_keypair(b'admin')
DEVICE_1 = derive_keypair(b'device-1')
DEVICE_2 = derive_keypair(b'device-2')
DEVICE_3 = derive_keypair(b'device-3')
PRODUCER = derive_keypair(b'producer')
KEYPAIRS = (ADMIN, DEVICE_1, DEVICE_2, DEVICE_3, PRODUCER)


def sign_tx(keypair: Keypair, kind: TxKind, nonce: int = 0, payload: bytes = b'',
            gas_limit: int = 1000, gas_price: int = 1) -> Transaction:
    tx = Transaction(sender=keypair.address, nonce=nonce, kind=kind, payload=payload,
                     gas_limit=gas_limit, gas_price=gas_price)
    return tx.with_signature(sign(keypair, canonical_encode(tx, signing=True)))


@dataclass
class Protocol:
    """ A contract deployment driven one transaction at a time, without blocks. """
    executor: Executor
    state: WorldState
    height: int = 1

    @property
    def contract(self) -> ContractState:
        return self.state.contract

    def balance(self, keypair: Keypair) -> int:
        return self.state.account(keypair.address).balance

    def send(self, keypair: Keypair, kind: TxKind, payload: bytes = b'',
             gas_limit: int = 1000, gas_price: int = 1, height: int | None = None) -> Receipt:
        tx = sign_tx(keypair, kind, self.state.account(keypair.address).nonce, payload, gas_limit, gas_price)
        self.executor.admit(tx, self.state)
        ctx = ExecContext(height=self.height if height is None else height, producer=PRODUCER.address)
        self.state, receipt = self.executor.execute(tx, self.state, ctx)
        return receipt

    def migrate(self, version: int = 1, url: str = 'repo://firmware/v1', interval: int = 4,
                sender: Keypair = ADMIN, **kwargs) -> Receipt:
        return self.send(sender, Migrate(MigrateParams(version, url, interval).encode()), **kwargs)

    def call(self, keypair: Keypair, method: Method, args: bytes = b'', **kwargs) -> Receipt:
        return self.send(keypair, ContractCall(method, args), **kwargs)

    def register(self, keypair: Keypair, version: int = 1, **kwargs) -> Receipt:
        return self.call(keypair, Method.REGISTER, uint_be(version, 4), **kwargs)

    def submit(self, keypair: Keypair, data: bytes = b'\x00\x00\x00\x01', **kwargs) -> Receipt:
        return self.call(keypair, Method.SUBMIT_DATA, payload=data, **kwargs)


def make_protocol(balance: int = 10_000, epoch_mint: int = 0, quota: QuotaConfig | None = None,
                  schedule: GasSchedule | None = None) -> Protocol:
    accounts = {kp.address: Account(address=kp.address, balance=balance) for kp in KEYPAIRS}
    contract = ContractState(admin=ADMIN.address, quota=quota or QuotaConfig(), epoch_mint=epoch_mint)
    executor = Executor(schedule or GasSchedule(), KeyRegistry(list(KEYPAIRS)), ConsensusConfig())
    return Protocol(executor=executor, state=WorldState(accounts=accounts, contract=contract))


@pytest.fixture
def protocol() -> Protocol:
    """ Funded accounts, contract not yet migrated. """
    return make_protocol()


@pytest.fixture
def ready(protocol: Protocol) -> Protocol:
    """ Contract migrated to version 1, two devices registered. """
    assert protocol.migrate().success
    assert protocol.register(DEVICE_1).success
    assert protocol.register(DEVICE_2).success
    return protocol


def minimal_scenario(**overrides) -> dict:
    """ 1 admin, 1 miner, 1 repository, 1 customer. """
    scenario = {
        'nodes': [
            {'name': 'admin', 'kind': 'admin', 'balance': 10_000},
            {'name': 'edge-1', 'kind': 'edge_server', 'balance': 1_000},
            {'name': 'repository', 'kind': 'update_repository'},
            {'name': 'device-1', 'kind': 'customer', 'balance': 5_000, 'submit_period': 4},
        ],
    }
    scenario.update(overrides)
    return scenario


@pytest.fixture
def edgechain_home(tmp_path, monkeypatch):
    home = tmp_path / 'home'
    monkeypatch.setenv('EDGECHAIN_HOME', str(home))
    monkeypatch.delenv('EDGECHAIN_SEED', raising=False)
    return home
