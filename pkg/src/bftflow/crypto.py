"""Signature schemes and per-node key management.

One scheme is fixed per deployment in the cluster configuration. Ed25519 is
the default for live deployments. The HMAC scheme is a shared-key scheme for
the deterministic test harness: verification keys equal signing keys, so any
holder of the ring can forge, which is acceptable only in-process.
"""

from __future__ import annotations

import hashlib
import hmac

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from . import codec


class CryptoError(Exception):
    pass


class Ed25519Scheme:
    name = "ed25519"

    @staticmethod
    def generate() -> tuple[bytes, bytes]:
        key = Ed25519PrivateKey.generate()
        return (
            key.private_bytes_raw(),
            key.public_key().public_bytes_raw(),
        )

    @staticmethod
    def derive(seed: bytes) -> tuple[bytes, bytes]:
        private = hashlib.sha256(b"ed25519-seed|" + seed).digest()
        key = Ed25519PrivateKey.from_private_bytes(private)
        return private, key.public_key().public_bytes_raw()

    @staticmethod
    def sign(private: bytes, message: bytes) -> bytes:
        return Ed25519PrivateKey.from_private_bytes(private).sign(message)

    @staticmethod
    def verify(public: bytes, message: bytes, signature: bytes) -> bool:
        try:
            Ed25519PublicKey.from_public_bytes(public).verify(signature, message)
            return True
        except (InvalidSignature, ValueError):
            return False


class HmacScheme:
    name = "hmac-sha256"

    @staticmethod
    def generate() -> tuple[bytes, bytes]:
        import os

        secret = os.urandom(32)
        return secret, secret

    @staticmethod
    def derive(seed: bytes) -> tuple[bytes, bytes]:
        secret = hashlib.sha256(b"hmac-seed|" + seed).digest()
        return secret, secret

    @staticmethod
    def sign(private: bytes, message: bytes) -> bytes:
        return hmac.new(private, message, hashlib.sha256).digest()

    @staticmethod
    def verify(public: bytes, message: bytes, signature: bytes) -> bool:
        expected = hmac.new(public, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)


SCHEMES = {
    Ed25519Scheme.name: Ed25519Scheme,
    HmacScheme.name: HmacScheme,
}


def get_scheme(name: str):
    try:
        return SCHEMES[name]
    except KeyError:
        raise CryptoError(f"unknown signature scheme: {name}") from None


class KeyRing:
    """A node's private key plus the registered public keys of all peers."""

    def __init__(self, scheme_name: str, node_id: str, private: bytes,
                 public_keys: dict[str, bytes]):
        self.scheme = get_scheme(scheme_name)
        self.scheme_name = scheme_name
        self.node_id = node_id
        self._private = private
        self.public_keys = dict(public_keys)

    def sign(self, message: bytes) -> bytes:
        return self.scheme.sign(self._private, message)

    def verify(self, sender: str, message: bytes, signature: bytes) -> bool:
        public = self.public_keys.get(sender)
        if public is None:
            return False
        return self.scheme.verify(public, message, signature)

    def knows(self, node_id: str) -> bool:
        return node_id in self.public_keys

    def register(self, node_id: str, public: bytes) -> None:
        self.public_keys[node_id] = public


def build_rings(scheme_name: str, node_ids: list[str], seed: bytes | None = None
                ) -> dict[str, KeyRing]:
    """Generate one keyring per node, all sharing the same public directory.

    With a seed the key material is reproducible, which the simulator relies on.
    """
    scheme = get_scheme(scheme_name)
    pairs = {}
    for node_id in node_ids:
        if seed is None:
            pairs[node_id] = scheme.generate()
        else:
            pairs[node_id] = scheme.derive(seed + b"|" + node_id.encode())
    directory = {nid: pub for nid, (_, pub) in pairs.items()}
    return {
        nid: KeyRing(scheme_name, nid, priv, directory)
        for nid, (priv, _) in pairs.items()
    }


def request_digest(payload: bytes) -> bytes:
    return codec.digest_bytes(payload)
