from pydantic import Field

from edgechain.utils import EdgechainError, FrozenModel, Positive64, Uint64


class OutOfGas(EdgechainError):
    pass


class GasSchedule(FrozenModel):
    """ Gas cost table, all entries in gas units. """

    base_tx: Positive64 = 21
    per_payload_byte: Uint64 = 1
    register_device: Uint64 = Field(50, alias='register')
    submit_data: Uint64 = 10
    apply_update: Uint64 = 10
    report_malicious: Uint64 = 30
    distribute: Uint64 = 100
    migrate: Uint64 = 500
    init_surcharge: Uint64 = 200
    permission_update: Uint64 = 15

    def intrinsic(self, payload: bytes) -> int:
        """ Gas charged to every transaction before dispatch. """
        return self.base_tx + self.per_payload_byte * len(payload)


class GasMeter:
    """ Charges gas before each operation; raises OutOfGas instead of exceeding the limit. """

    __slots__ = ('_limit', '_used')

    def __init__(self, limit: int):
        self._limit = limit
        self._used = 0

    @property
    def limit(self) -> int:
        return self._limit

    @property
    def used(self) -> int:
        return self._used

    @property
    def remaining(self) -> int:
        return self._limit - self._used

    def consume(self, amount: int):
        if self._used + amount > self._limit:
            # meter left untouched, the caller burns the whole limit
            raise OutOfGas(f"need {amount} (used {self._used}, limit {self._limit})")
        self._used += amount

    def __repr__(self) -> str:
        return f"GasMeter(limit={self._limit}, used={self._used})"
