"""SecCRC: the CRC under a secret IV, XOR-masked with a one-time pad.

Session traffic takes its pads from a hash chain; broadcast traffic takes
them from HMAC(key, counter) with a 64-bit monotonic counter.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import islice

from .chain import DEFAULT_LOOKAHEAD, ChainStrategy, HashChain, DEFAULT_N_HASH, truncate_tag
from .crc import CrcIv, CrcParams, crc_compute
from .errors import ChainExhausted, ParameterError, ReinitRequired
from .handshake import InitResult, disclosed_chain_values
from .primitives import KEY_BYTES, hmac

COUNTER_LIMIT = 1 << 64


def derive_iv(key, width_bits: int) -> CrcIv:
    """Secret IV: the leading ``width_bits`` bits of ``key`` (big-endian)."""
    key = bytes(key)
    if not 1 <= width_bits <= len(key) * 8 or width_bits > 256:
        raise ParameterError(f"cannot derive a {width_bits}-bit IV from a {len(key)}-byte key")
    return CrcIv(truncate_tag(key, width_bits), width_bits)


@dataclass(frozen=True)
class SecCrcValue:
    value: int
    chain_index: int


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    consumed: int = 0
    offset: int | None = None
    index: int | None = None

    def __bool__(self):
        return self.accepted


REJECT = Verdict(False)


class SessionContext:
    """One direction of a secured pair: a sender or a receiver endpoint."""

    def __init__(self, session_key, chain: HashChain, crc_params: CrcParams, role: str,
                 lookahead: int = DEFAULT_LOOKAHEAD):
        if role not in ("sender", "receiver"):
            raise ParameterError(f"role must be 'sender' or 'receiver', got {role!r}")
        if lookahead < 1:
            raise ParameterError("lookahead must be >= 1")
        self.session_key = session_key
        self.chain = chain
        self.crc_params = crc_params
        self.role = role
        self.lookahead = lookahead
        self.iv = derive_iv(session_key, crc_params.width_bits)

    @classmethod
    def from_init(cls, result: InitResult, crc_params: CrcParams, role: str, *,
                  strategy: ChainStrategy = ChainStrategy(), n_hash: int = DEFAULT_N_HASH,
                  lookahead: int = DEFAULT_LOOKAHEAD) -> "SessionContext":
        chain = HashChain(result.session_key, result.seed, strategy, n_hash)
        chain.advance(disclosed_chain_values(result))
        return cls(result.session_key, chain, crc_params, role, lookahead)

    def __repr__(self):
        return f"SessionContext({self.role}, {self.crc_params.name or self.crc_params.width_bits}, {self.chain!r})"

    def sign(self, message: bytes) -> SecCrcValue:
        if self.role != "sender":
            raise ParameterError("only a sender context signs")
        crc = crc_compute(self.crc_params, self.iv, message)
        try:
            pad, index = self.chain.next_otp_key(self.crc_params.width_bits)
        except ChainExhausted:
            raise ReinitRequired("hash chain exhausted; reinitialize the session") from None
        return SecCrcValue(crc ^ pad, index)

    def verify(self, message: bytes, received: int) -> Verdict:
        if self.role != "receiver":
            raise ParameterError("only a receiver context verifies")
        width = self.crc_params.width_bits
        wanted = received ^ crc_compute(self.crc_params, self.iv, message)
        for offset, value in enumerate(islice(self.chain.upcoming(), self.lookahead)):
            if truncate_tag(value.full_tag, width) == wanted:
                self.chain.advance(offset + 1)
                return Verdict(True, offset + 1, offset, value.index)
        return REJECT


def seccrc_sign(ctx: SessionContext, message: bytes) -> SecCrcValue:
    return ctx.sign(message)


def seccrc_verify(ctx: SessionContext, message: bytes, received: int) -> Verdict:
    return ctx.verify(message, received)


class BroadcastContext:
    """Broadcast authentication keyed by the master key or a dedicated K_b.

    The pad for counter value c is the leading n bits of HMAC(key, c) with c
    encoded as 8 big-endian bytes; the IV is derived from the same key.
    """

    def __init__(self, key, crc_params: CrcParams, mode: str = "master", counter: int = 0,
                 lookahead: int = DEFAULT_LOOKAHEAD):
        if mode not in ("master", "dedicated"):
            raise ParameterError(f"broadcast mode must be 'master' or 'dedicated', got {mode!r}")
        if len(bytes(key)) != KEY_BYTES:
            raise ParameterError("broadcast key must be 32 bytes")
        if not 0 <= counter < COUNTER_LIMIT:
            raise ParameterError("counter must fit 64 bits")
        self.key = key
        self.mode = mode
        self.crc_params = crc_params
        self.counter = counter
        self.lookahead = lookahead
        self.iv = derive_iv(key, crc_params.width_bits)

    def __repr__(self):
        return f"BroadcastContext({self.mode}, counter={self.counter})"

    def pad(self, counter: int) -> int:
        return truncate_tag(hmac(self.key, counter.to_bytes(8, "big")), self.crc_params.width_bits)

    def sign(self, message: bytes) -> SecCrcValue:
        if self.counter >= COUNTER_LIMIT:
            raise ReinitRequired("broadcast counter exhausted")
        c = self.counter
        value = crc_compute(self.crc_params, self.iv, message) ^ self.pad(c)
        self.counter += 1
        return SecCrcValue(value, c)

    def verify(self, message: bytes, received: int) -> Verdict:
        wanted = received ^ crc_compute(self.crc_params, self.iv, message)
        last = min(self.counter + self.lookahead, COUNTER_LIMIT)
        for c in range(self.counter, last):
            if self.pad(c) == wanted:
                offset = c - self.counter
                self.counter = c + 1
                return Verdict(True, offset + 1, offset, c)
        return REJECT


def broadcast_sign(ctx: BroadcastContext, message: bytes) -> SecCrcValue:
    return ctx.sign(message)


def broadcast_verify(ctx: BroadcastContext, message: bytes, received: int) -> Verdict:
    return ctx.verify(message, received)
