"""Cryptographic building blocks: HMAC-SHA-256, one-time-pad XOR,
modular exponentiation over named Diffie-Hellman groups, randomness.

Nothing here is hardened against timing side channels.
"""

from __future__ import annotations

import hashlib
import hmac as _hmac
import os
from dataclasses import dataclass, field
from typing import Callable

from .errors import AcricError, InitFailure, ParameterError

KEY_BYTES = 32
TAG_BYTES = 32

RandomSource = Callable[[int], bytes]


@dataclass(frozen=True)
class _Secret:
    data: bytes = field(repr=False)

    def __post_init__(self):
        if not isinstance(self.data, (bytes, bytearray)) or len(self.data) != KEY_BYTES:
            raise ParameterError(f"{type(self).__name__} must be exactly {KEY_BYTES} bytes")
        object.__setattr__(self, "data", bytes(self.data))

    def __bytes__(self):
        return self.data

    def __repr__(self):
        return f"{type(self).__name__}(<redacted>)"

    def hex(self) -> str:
        return self.data.hex()

    @classmethod
    def fromhex(cls, text: str):
        try:
            return cls(bytes.fromhex(text.strip()))
        except ValueError as exc:
            raise ParameterError(f"invalid {cls.__name__} hex: {exc}") from None


class MasterKey(_Secret):
    """Long-term key pre-provisioned to every secured device."""


class SessionKey(_Secret):
    """Per-pair or per-group key established at initialization."""


@dataclass(frozen=True)
class DhGroup:
    name: str
    prime_p: int
    generator_g: int

    def __post_init__(self):
        if not 1 < self.generator_g < self.prime_p:
            raise ParameterError("generator must satisfy 1 < g < p")

    @property
    def element_bytes(self) -> int:
        return (self.prime_p.bit_length() + 7) // 8


@dataclass(frozen=True)
class DhKeyPair:
    private_exponent: int = field(repr=False)
    public_value: int


# RFC 3526 group 14.
MODP2048 = DhGroup(
    "modp2048",
    int(
        "FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74"
        "020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437"
        "4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED"
        "EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05"
        "98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB"
        "9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B"
        "E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718"
        "3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF",
        16,
    ),
    2,
)

# Largest 64-bit safe prime with p = 7 (mod 8); 2 generates the order-q
# subgroup.  Fast, and trivially breakable: tests only.
TOY64_INSECURE = DhGroup("toy64", 0xFFFFFFFFFFFFDED7, 2)

DH_GROUPS = {"modp2048": MODP2048, "toy64": TOY64_INSECURE}


def dh_group(name: str) -> DhGroup:
    try:
        return DH_GROUPS[name]
    except KeyError:
        raise ParameterError(f"unknown DH group {name!r}; choose one of {sorted(DH_GROUPS)}") from None


def hmac(key, data: bytes) -> bytes:
    """HMAC-SHA-256 tag (32 bytes)."""
    key = bytes(key)
    if not key:
        raise ParameterError("HMAC key must be non-empty")
    return _hmac.digest(key, bytes(data), "sha256")


def tags_equal(a: bytes, b: bytes) -> bool:
    return _hmac.compare_digest(a, b)


def otp_xor(data: bytes, key: bytes) -> bytes:
    data, key = bytes(data), bytes(key)
    if len(data) != len(key):
        raise ParameterError(f"OTP length mismatch: data {len(data)} vs key {len(key)}")
    return (int.from_bytes(data, "big") ^ int.from_bytes(key, "big")).to_bytes(len(data), "big")


def mod_exp(base: int, exponent: int, modulus: int) -> int:
    if modulus <= 1:
        raise ParameterError("modulus must be > 1")
    if exponent < 0:
        raise ParameterError("exponent must be non-negative")
    return pow(base, exponent, modulus)


def int_to_min_bytes(value: int) -> bytes:
    return value.to_bytes(max(1, (value.bit_length() + 7) // 8), "big")


def derive_session_key(shared_secret: int, group: DhGroup | None = None) -> SessionKey:
    """K_s = SHA-256 of the minimal big-endian encoding of the DH value."""
    if shared_secret <= 1 or (group is not None and shared_secret >= group.prime_p - 1):
        raise InitFailure("degenerate Diffie-Hellman shared secret")
    return SessionKey(hashlib.sha256(int_to_min_bytes(shared_secret)).digest())


def random_bytes(count: int, source: RandomSource = os.urandom) -> bytes:
    if count <= 0:
        raise ParameterError("count must be positive")
    try:
        out = source(count)
    except Exception as exc:  # entropy failure is fatal for key generation
        raise AcricError(f"entropy source failed: {exc}") from exc
    if len(out) != count:
        raise AcricError("entropy source returned a short read")
    return out


def random_scalar(group: DhGroup, source: RandomSource = os.urandom) -> int:
    """Uniform integer in [2, p - 2] by rejection sampling."""
    span = group.prime_p - 3
    nbytes = (span.bit_length() + 7) // 8
    excess = nbytes * 8 - span.bit_length()
    while True:
        candidate = int.from_bytes(random_bytes(nbytes, source), "big") >> excess
        if candidate < span:
            return candidate + 2


def dh_keypair(group: DhGroup, source: RandomSource = os.urandom) -> DhKeyPair:
    a = random_scalar(group, source)
    return DhKeyPair(a, mod_exp(group.generator_g, a, group.prime_p))
