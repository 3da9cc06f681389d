"""
Signature schemes and key bookkeeping.

Two schemes implement the same sign/verify/derive-public-key contract:

- ``mock``: public_key = SHA-256(secret), signature = SHA-256(secret || message).
  Verification re-derives the signature, so the verifier-side registry has to
  hold the secret. It is the normative scheme for tests; security is not a goal.
- ``ed25519``: keys derived from SHA-256(secret) through ``cryptography``.
  Signatures are deterministic, so simulations stay replayable.
"""
from dataclasses import dataclass
from logging import getLogger
from typing import Protocol

from edgechain.utils import EdgechainError, sha256

logger = getLogger(__name__)

ADDRESS_LEN = 20
DIGEST_LEN = 32


class UnknownScheme(EdgechainError):
    pass


def address_of(public_key: bytes) -> bytes:
    """ First 20 bytes of SHA-256 of the public key. """
    return sha256(public_key)[:ADDRESS_LEN]


@dataclass(frozen=True)
class Keypair:
    scheme: str
    secret: bytes
    public_key: bytes

    @property
    def address(self) -> bytes:
        return address_of(self.public_key)


class SignatureScheme(Protocol):
    name: str

    def derive_public_key(self, secret: bytes) -> bytes: ...

    def sign(self, secret: bytes, message: bytes) -> bytes: ...

    def verify(self, keypair: Keypair, message: bytes, signature: bytes) -> bool: ...


class MockScheme:
    name = 'mock'

    def derive_public_key(self, secret: bytes) -> bytes:
        return sha256(secret)

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return sha256(secret + message)

    def verify(self, keypair: Keypair, message: bytes, signature: bytes) -> bool:
        if self.derive_public_key(keypair.secret) != keypair.public_key:
            return False
        return self.sign(keypair.secret, message) == signature


class Ed25519Scheme:
    name = 'ed25519'

    @staticmethod
    def _private_key(secret: bytes):
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PrivateKey
        return Ed25519PrivateKey.from_private_bytes(sha256(secret))

    def derive_public_key(self, secret: bytes) -> bytes:
        from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat
        return self._private_key(secret).public_key().public_bytes(
            encoding=Encoding.Raw, format=PublicFormat.Raw,
        )

    def sign(self, secret: bytes, message: bytes) -> bytes:
        return self._private_key(secret).sign(message)

    def verify(self, keypair: Keypair, message: bytes, signature: bytes) -> bool:
        from cryptography.exceptions import InvalidSignature
        from cryptography.hazmat.primitives.asymmetric.ed25519 import Ed25519PublicKey
        try:
            Ed25519PublicKey.from_public_bytes(keypair.public_key).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False


SCHEMES: dict[str, SignatureScheme] = {
    MockScheme.name: MockScheme(),
    Ed25519Scheme.name: Ed25519Scheme(),
}

def get_scheme(name: str) -> SignatureScheme:
    try:
        return SCHEMES[name]
    except KeyError:
        raise UnknownScheme(f"unknown signature scheme {name!r}, choices are: {' '.join(SCHEMES)}") from None

def derive_keypair(secret: bytes, scheme: str = MockScheme.name) -> Keypair:
    return Keypair(
        scheme=scheme,
        secret=secret,
        public_key=get_scheme(scheme).derive_public_key(secret),
    )

def sign(keypair: Keypair, message: bytes) -> bytes:
    return get_scheme(keypair.scheme).sign(keypair.secret, message)


class KeyRegistry:
    """ Verifier-side mapping address -> keypair. """

    def __init__(self, keypairs: list[Keypair] | None = None):
        self._keys: dict[bytes, Keypair] = {}
        for keypair in keypairs or []:
            self.add(keypair)

    def add(self, keypair: Keypair):
        existing = self._keys.get(keypair.address)
        if existing is not None and existing != keypair:
            logger.warning("Address %s re-registered with a different key", keypair.address.hex())
        self._keys[keypair.address] = keypair

    def get(self, address: bytes) -> Keypair | None:
        return self._keys.get(address)

    def __contains__(self, address: bytes) -> bool:
        return address in self._keys

    def verify(self, address: bytes, message: bytes, signature: bytes) -> bool:
        keypair = self._keys.get(address)
        if keypair is None:
            logger.debug("No key registered for %s", address.hex())
            return False
        return get_scheme(keypair.scheme).verify(keypair, message, signature)
