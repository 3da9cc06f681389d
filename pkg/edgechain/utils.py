
import hashlib
import json
from typing import Annotated, Any

from pydantic import BaseModel, ConfigDict, Field, StrictInt


class EdgechainError(Exception):
    """ Base class of every domain error raised by edgechain. """


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()

def check_uint(name: str, value: Any, bits: int) -> int:
    """ Validate an unsigned integer of the given width, return it.
    Raises ValueError (bool is rejected even though it's an int).
    """
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValueError(f"{name} must be an integer, got {type(value).__name__}")
    if not 0 <= value < (1 << bits):
        raise ValueError(f"{name} must be within [0, 2^{bits}), got {value}")
    return value

def check_bytes(name: str, value: Any, length: int | None = None) -> bytes:
    if not isinstance(value, bytes):
        raise ValueError(f"{name} must be bytes, got {type(value).__name__}")
    if length is not None and len(value) != length:
        raise ValueError(f"{name} must be exactly {length} bytes, got {len(value)}")
    return value

def uint_be(value: int, width: int) -> bytes:
    """ Big-endian fixed-width encoding, width in bytes. """
    return value.to_bytes(width, 'big')

def length_prefixed(data: bytes) -> bytes:
    """ 4-byte big-endian length followed by the bytes. """
    return len(data).to_bytes(4, 'big') + data

def read_length_prefixed(buf: bytes, offset: int) -> tuple[bytes, int]:
    """ Inverse of `length_prefixed`, returns (data, new offset). """
    if offset + 4 > len(buf):
        raise ValueError("truncated length prefix")
    n = int.from_bytes(buf[offset:offset+4], 'big')
    end = offset + 4 + n
    if end > len(buf):
        raise ValueError("truncated length-prefixed field")
    return buf[offset+4:end], end

def from_hex(text: str, length: int | None = None) -> bytes:
    """ Decode lowercase hex without prefix. """
    if not isinstance(text, str):
        raise ValueError(f"expected a hex string, got {type(text).__name__}")
    data = bytes.fromhex(text)
    if length is not None and len(data) != length:
        raise ValueError(f"expected {length} bytes of hex, got {len(data)}")
    return data

def ceil_div(a: int, b: int) -> int:
    return -(-a // b)

def canonical_json(obj: Any) -> bytes:
    """ Deterministic JSON bytes (sorted keys, no whitespace) for digests. """
    return json.dumps(obj, sort_keys=True, separators=(',', ':')).encode()

def short_hex(data: bytes, n: int = 8) -> str:
    """ Abbreviated hex for log lines. """
    return data.hex()[:n]


Uint8 = Annotated[StrictInt, Field(ge=0, lt=1 << 8)]
Uint32 = Annotated[StrictInt, Field(ge=0, lt=1 << 32)]
Uint64 = Annotated[StrictInt, Field(ge=0, lt=1 << 64)]
Uint128 = Annotated[StrictInt, Field(ge=0, lt=1 << 128)]
Positive64 = Annotated[StrictInt, Field(ge=1, lt=1 << 64)]


class FrozenModel(BaseModel):
    """
    Immutable config model built from JSON. Unknown keys are errors; scalar
    fields use the Strict* types so `true` is never an integer and `"4"` never
    a number. Enums accept their values and lists become tuples.
    """
    model_config = ConfigDict(extra='forbid', frozen=True, populate_by_name=True)


def json_path(loc: tuple) -> str:
    """ Pydantic error location as `$.a[0].b`. Union branch tags are left out. """
    path = '$'
    for part in loc:
        if isinstance(part, int):
            path += f'[{part}]'
        elif part.isidentifier():
            path += f'.{part}'
    return path
