from dataclasses import dataclass, field
from enum import Enum
import heapq
from itertools import count
from typing import Any


class EventKind(Enum):
    SUBMIT_TX = 'SubmitTx'
    PRODUCE_BLOCK = 'ProduceBlock'
    DELIVER_BLOCK = 'DeliverBlock'
    DELIVER_TX = 'DeliverTx'
    BEGIN_DOWNLOAD = 'BeginDownload'
    FINISH_DOWNLOAD = 'FinishDownload'
    EPOCH_TICK = 'EpochTick'
    SCRIPT = 'Script'


@dataclass(frozen=True, order=True)
class Event:
    """ Events fire in (fire_at, sequence) order; sequence is the insertion counter. """
    fire_at: int
    sequence: int
    kind: EventKind = field(compare=False)
    target: str = field(compare=False)
    data: Any = field(default=None, compare=False)


class EventQueue:

    def __init__(self):
        self._heap: list[Event] = []
        self._seq = count()

    def __len__(self) -> int:
        return len(self._heap)

    def push(self, fire_at: int, kind: EventKind, target: str, data: Any = None) -> Event:
        if fire_at < 0:
            raise ValueError(f"fire_at must be non-negative, got {fire_at}")
        event = Event(fire_at, next(self._seq), kind, target, data)
        heapq.heappush(self._heap, event)
        return event

    def peek(self) -> Event | None:
        return self._heap[0] if self._heap else None

    def pop(self) -> Event:
        return heapq.heappop(self._heap)
