import pytest

from conftest import ADMIN, DEVICE_1, DEVICE_2, DEVICE_3, PRODUCER, make_protocol
from edgechain.chain.contract import (
    ContractRevert, Granted, Method, PenaltyApplied, Reimbursed, RevertReason, UpdateRequired, check_quota, get_activity,
)
from edgechain.chain.ledger import NotAllowlisted, PermissionUpdate, Transfer
from edgechain.chain.state import Action, ActivityEntry, ContractState, DeviceRecord


class TestSettlement:

    def test_submit_refunds_unused_gas(self, ready):
        before, producer_before = ready.balance(DEVICE_1), ready.balance(PRODUCER)
        receipt = ready.submit(DEVICE_1, gas_limit=100)
        assert receipt.success
        # 21 base + 4 payload bytes + 10 submit_data
        assert receipt.gas_used == 35
        assert receipt.fee == 35
        assert ready.balance(DEVICE_1) == before - 35
        assert ready.balance(PRODUCER) == producer_before + 35

    def test_exact_gas_limit_succeeds(self, ready):
        receipt = ready.submit(DEVICE_1, gas_limit=35)
        assert receipt.success
        assert receipt.gas_used == 35

    def test_out_of_gas_burns_the_limit(self, ready):
        before, producer_before = ready.balance(DEVICE_1), ready.balance(PRODUCER)
        digest = ready.contract.digest()
        log_length = len(ready.contract.activity_log)
        receipt = ready.submit(DEVICE_1, gas_limit=30)
        assert not receipt.success
        assert receipt.reason is RevertReason.OUT_OF_GAS
        assert receipt.gas_used == 30
        assert ready.balance(DEVICE_1) == before - 30
        assert len(ready.contract.activity_log) == log_length
        assert ready.contract.digest() == digest
        assert ready.balance(PRODUCER) == producer_before + 30
        assert ready.state.account(DEVICE_1.address).nonce == 2

    def test_revert_keeps_only_the_fee(self, ready):
        digest = ready.contract.digest()
        before = ready.balance(DEVICE_3)
        receipt = ready.submit(DEVICE_3)
        assert receipt.reason is RevertReason.NOT_REGISTERED
        assert receipt.gas_used == 35
        assert ready.balance(DEVICE_3) == before - 35
        assert ready.contract.digest() == digest

    def test_execute_leaves_input_state_alone(self, ready):
        old = ready.state
        digest = old.digest()
        ready.submit(DEVICE_1)
        assert old.digest() == digest
        assert ready.state is not old

    def test_gas_price_scales_the_fee(self, ready):
        before = ready.balance(DEVICE_1)
        receipt = ready.submit(DEVICE_1, gas_price=3)
        assert receipt.fee == 105
        assert ready.balance(DEVICE_1) == before - 105

    def test_transfer(self, protocol):
        before = protocol.balance(DEVICE_2)
        receipt = protocol.send(DEVICE_1, Transfer(DEVICE_2.address, 250))
        assert receipt.success
        assert receipt.gas_used == 21
        assert protocol.balance(DEVICE_2) == before + 250
        assert protocol.balance(DEVICE_1) == 10_000 - 250 - 21


class TestMigrate:

    def test_first_migrate_pays_init_surcharge(self, protocol):
        first = protocol.migrate()
        assert first.success
        assert first.gas_used == 721
        second = protocol.migrate(version=2, url='repo://firmware/v2')
        assert second.gas_used == 521
        assert second.gas_used + 200 == first.gas_used
        contract = protocol.contract
        assert contract.initialized
        assert (contract.current_version, contract.update_url, contract.block_interval) == (2, 'repo://firmware/v2', 4)
        assert [e.action for e in contract.activity_log] == [Action.MIGRATE, Action.MIGRATE]

    def test_only_admin(self, protocol):
        receipt = protocol.migrate(sender=DEVICE_1)
        assert receipt.reason is RevertReason.UNAUTHORIZED
        assert not protocol.contract.initialized

    def test_version_regression(self, protocol):
        protocol.migrate(version=3)
        receipt = protocol.migrate(version=2)
        assert receipt.reason is RevertReason.VERSION_REGRESSION
        assert protocol.contract.current_version == 3
        # same version is allowed, e.g. to move the update URL
        assert protocol.migrate(version=3, url='repo://mirror/v3').success

    def test_zero_interval_rejected(self, protocol):
        receipt = protocol.migrate(interval=0)
        assert receipt.reason is RevertReason.BAD_ARGUMENTS
        assert not protocol.contract.initialized

    def test_calls_before_migrate(self, protocol):
        receipt = protocol.register(DEVICE_1)
        assert receipt.reason is RevertReason.NOT_INITIALIZED
        assert receipt.gas_used == 21
        assert not protocol.contract.devices


class TestDevices:

    def test_register(self, protocol):
        protocol.migrate()
        receipt = protocol.register(DEVICE_1, height=7)
        assert receipt.success
        assert receipt.gas_used == 71
        record = protocol.contract.devices[DEVICE_1.address]
        assert record == DeviceRecord(address=DEVICE_1.address, firmware_version=1, registered_at=7,
                                      total_gas_spent=71)

    def test_register_twice(self, ready):
        receipt = ready.register(DEVICE_1)
        assert receipt.reason is RevertReason.ALREADY_REGISTERED

    def test_register_needs_a_version(self, ready):
        receipt = ready.call(DEVICE_3, Method.REGISTER, b'\x01')
        assert receipt.reason is RevertReason.BAD_ARGUMENTS

    def test_register_ahead_of_contract_version(self, ready):
        receipt = ready.register(DEVICE_3, version=99)
        assert receipt.reason is RevertReason.BAD_ARGUMENTS
        assert DEVICE_3.address not in ready.contract.devices
        assert ready.submit(DEVICE_3).reason is RevertReason.NOT_REGISTERED

    def test_unknown_method(self, ready):
        assert ready.call(DEVICE_1, 9).reason is RevertReason.UNKNOWN_METHOD

    def test_outdated_firmware_is_rejected_with_url(self, ready):
        ready.migrate(version=2, url='repo://firmware/v2')
        log_length = len(ready.contract.activity_log)
        receipt = ready.submit(DEVICE_1)
        assert receipt.reason is RevertReason.OUTDATED_VERSION
        assert receipt.events == (UpdateRequired(url='repo://firmware/v2'),)
        assert len(ready.contract.activity_log) == log_length + 1
        entry = ready.contract.activity_log[-1]
        assert (entry.device, entry.action, entry.gas_used) == (DEVICE_1.address, Action.REJECTED, 35)
        assert ready.contract.devices[DEVICE_1.address].firmware_version == 1
        assert ready.contract.window_counts(ready.height) == {}

    def test_apply_update_is_idempotent(self, ready):
        ready.migrate(version=2, url='repo://firmware/v2')
        first = ready.call(DEVICE_1, Method.APPLY_UPDATE)
        second = ready.call(DEVICE_1, Method.APPLY_UPDATE)
        assert first.success and second.success
        assert first.gas_used == second.gas_used == 31
        assert ready.contract.devices[DEVICE_1.address].firmware_version == 2
        assert ready.submit(DEVICE_1).success

    def test_submit_from_unregistered(self, ready):
        assert ready.submit(DEVICE_3).reason is RevertReason.NOT_REGISTERED

    def test_get_activity_in_log_order(self, ready):
        ready.submit(DEVICE_1, height=2)
        ready.submit(DEVICE_2, height=2)
        ready.submit(DEVICE_1, height=3)
        entries = get_activity(ready.contract, DEVICE_1.address)
        assert [(e.height, e.action) for e in entries] == [
            (1, Action.REGISTER), (2, Action.SUBMIT_DATA), (3, Action.SUBMIT_DATA),
        ]
        # device counters are a fold over its log entries
        record = ready.contract.devices[DEVICE_1.address]
        assert record.total_gas_spent == sum(e.gas_used for e in entries) == 71 + 35 + 35
        submits = [e.height for e in entries if e.action is Action.SUBMIT_DATA]
        floor = submits[-1] - ready.contract.quota.window_blocks
        assert record.window_tx_count == sum(1 for h in submits if floor < h <= submits[-1]) == 2
        assert get_activity(ready.contract, DEVICE_3.address) == []


def window(counts: dict[bytes, int], height: int = 10) -> ContractState:
    contract = ContractState(admin=ADMIN.address)
    for address in counts:
        contract.devices[address] = DeviceRecord(address=address, firmware_version=1, registered_at=0)
    for address, count in counts.items():
        for _ in range(count):
            contract.append_activity(ActivityEntry(height, address, Action.SUBMIT_DATA, 35))
    return contract


class TestQuota:

    def test_heavy_sender_exceeds(self):
        contract = window({DEVICE_1.address: 8, DEVICE_2.address: 2})
        assert check_quota(contract, DEVICE_1.address, 10).excess == 4
        assert not check_quota(contract, DEVICE_2.address, 10).exceeded

    def test_balanced_senders(self):
        contract = window({DEVICE_1.address: 4, DEVICE_2.address: 6})
        assert not check_quota(contract, DEVICE_1.address, 10).exceeded
        assert check_quota(contract, DEVICE_2.address, 10).excess == 2

    def test_sole_sender_is_within_quota(self):
        contract = window({DEVICE_1.address: 9})
        assert not check_quota(contract, DEVICE_1.address, 10).exceeded

    def test_window_slides(self):
        contract = window({DEVICE_1.address: 8, DEVICE_2.address: 2})
        # every entry sits at height 10, outside (10, 20]
        assert not check_quota(contract, DEVICE_1.address, 20).exceeded
        assert contract.window_counts(20) == {}

    def test_unknown_device(self):
        with pytest.raises(ContractRevert) as e:
            check_quota(window({}), DEVICE_1.address, 10)
        assert e.value.reason is RevertReason.NOT_REGISTERED


def flood(protocol, heavy: int = 8, light: int = 2):
    for _ in range(heavy):
        assert protocol.submit(DEVICE_1).success
    for _ in range(light):
        assert protocol.submit(DEVICE_2).success


def report(protocol, reporter, offender, **kwargs):
    return protocol.call(reporter, Method.REPORT_MALICIOUS, offender.address, **kwargs)


class TestReport:

    def test_penalty_and_reporter_share(self, ready):
        flood(ready)
        offender_before = ready.balance(DEVICE_1)
        receipt = report(ready, DEVICE_2, DEVICE_1)
        assert receipt.success
        assert receipt.gas_used == 51
        # excess 4 at 2 * base_tx each
        assert receipt.events == (PenaltyApplied(offender=DEVICE_1.address, amount=168,
                                                 reporter=DEVICE_2.address, reporter_share=84),)
        assert ready.balance(DEVICE_1) == offender_before - 168
        contract = ready.contract
        assert contract.penalty_pool == 84
        assert contract.pending_reimbursements == {DEVICE_2.address: 84}
        assert contract.devices[DEVICE_1.address].flagged
        assert contract.activity_log[-1].action is Action.REPORT

    def test_penalty_capped_by_balance(self, ready):
        flood(ready)
        # leave the offender with 100 of the 168 owed
        ready.send(DEVICE_1, Transfer(DEVICE_3.address, ready.balance(DEVICE_1) - 121), gas_limit=21)
        assert ready.balance(DEVICE_1) == 100
        receipt = report(ready, DEVICE_2, DEVICE_1)
        assert receipt.events[0].amount == 100
        assert ready.balance(DEVICE_1) == 0
        assert ready.contract.penalty_debt == {DEVICE_1.address: 68}
        assert ready.contract.pending_reimbursements == {DEVICE_2.address: 50}
        assert ready.contract.penalty_pool == 50

    def test_no_violation(self, ready):
        ready.submit(DEVICE_1)
        ready.submit(DEVICE_2)
        receipt = report(ready, DEVICE_2, DEVICE_1)
        assert receipt.reason is RevertReason.NO_VIOLATION
        assert ready.contract.penalty_pool == 0

    def test_self_report(self, ready):
        flood(ready)
        assert report(ready, DEVICE_1, DEVICE_1).reason is RevertReason.SELF_REPORT

    def test_reporter_must_be_registered(self, ready):
        flood(ready)
        assert report(ready, DEVICE_3, DEVICE_1).reason is RevertReason.NOT_REGISTERED


class TestDistribute:

    def test_reimburses_then_grants(self, ready):
        flood(ready)
        report(ready, DEVICE_2, DEVICE_1)
        before = ready.balance(DEVICE_2)
        receipt = ready.call(DEVICE_2, Method.DISTRIBUTE, height=20)
        assert receipt.success
        assert receipt.gas_used == 121
        # the flagged offender is left out of the grant
        assert receipt.events == (Reimbursed(to=DEVICE_2.address, amount=84), Granted(to=DEVICE_2.address, amount=84))
        assert ready.balance(DEVICE_2) == before - 121 + 168
        contract = ready.contract
        assert contract.pending_reimbursements == {}
        assert contract.penalty_pool == 0
        assert not contract.devices[DEVICE_1.address].flagged
        assert (contract.epochs_distributed, contract.last_distribution_height) == (1, 20)

    def test_even_split_keeps_dust(self):
        protocol = make_protocol(epoch_mint=100)
        protocol.migrate()
        for device in (DEVICE_1, DEVICE_2, DEVICE_3):
            protocol.register(device)
        receipt = protocol.call(ADMIN, Method.DISTRIBUTE, height=20)
        assert [e.amount for e in receipt.events] == [33, 33, 33]
        assert protocol.contract.penalty_pool == 1

    def test_penalty_debt_withheld_from_grant(self):
        protocol = make_protocol(epoch_mint=100)
        protocol.migrate()
        protocol.register(DEVICE_1)
        protocol.register(DEVICE_2)
        protocol.state.contract.penalty_debt[DEVICE_1.address] = 30
        receipt = protocol.call(ADMIN, Method.DISTRIBUTE, height=20)
        assert receipt.events == (Granted(to=DEVICE_1.address, amount=20), Granted(to=DEVICE_2.address, amount=50))
        assert protocol.contract.penalty_debt == {}
        assert protocol.contract.penalty_pool == 30

    def test_not_epoch_boundary(self, ready):
        assert ready.call(DEVICE_1, Method.DISTRIBUTE, height=19).reason is RevertReason.NOT_EPOCH_BOUNDARY
        assert ready.call(DEVICE_1, Method.DISTRIBUTE, height=0).reason is RevertReason.NOT_EPOCH_BOUNDARY

    def test_once_per_epoch(self, ready):
        assert ready.call(DEVICE_1, Method.DISTRIBUTE, height=20).success
        again = ready.call(DEVICE_2, Method.DISTRIBUTE, height=20)
        assert again.reason is RevertReason.ALREADY_DISTRIBUTED
        assert ready.contract.epochs_distributed == 1
        assert ready.call(DEVICE_2, Method.DISTRIBUTE, height=40).success


class TestPermissions:

    def test_admin_denies_device(self, ready):
        receipt = ready.send(ADMIN, PermissionUpdate(DEVICE_3.address, False))
        assert receipt.success
        assert receipt.gas_used == 36
        assert not ready.state.is_allowed(DEVICE_3.address)
        with pytest.raises(NotAllowlisted):
            ready.submit(DEVICE_3)
        assert ready.send(ADMIN, PermissionUpdate(DEVICE_3.address, True)).success
        assert ready.state.is_allowed(DEVICE_3.address)

    def test_only_admin_updates_permissions(self, ready):
        receipt = ready.send(DEVICE_1, PermissionUpdate(DEVICE_2.address, False))
        assert receipt.reason is RevertReason.UNAUTHORIZED
        assert ready.state.is_allowed(DEVICE_2.address)
