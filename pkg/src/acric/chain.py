"""Hash-chain key streams: generation, consumption, storage accounting.

A chain is grown from a session key ``K_s`` and a seed ``l``::

    h_0 = HMAC(K_s, l)
    h_i = HMAC(K_s, h_{i-1})

Forward consumption emits h_0, h_1, ...; backward consumption emits the
precomputed tail first.  The one-time pad for an n-bit CRC is the first n
bits (big-endian) of the emitted value.
"""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, fields
from itertools import islice
from typing import Iterable, Iterator

from .errors import ChainExhausted, InvalidStrategy, ParameterError
from .primitives import TAG_BYTES, SessionKey, hmac

VALUE_BITS = TAG_BYTES * 8
DEFAULT_N_HASH = 4096
DEFAULT_LOOKAHEAD = 8


class Consumption(enum.Enum):
    FORWARD = "forward"
    BACKWARD = "backward"


class Computation(enum.Enum):
    RUNTIME = "runtime"
    OFFLINE = "offline"
    HYBRID = "hybrid"


class StorageApproach(enum.Enum):
    ENTITY = "entity"
    PAIR = "pair"
    GROUP = "group"


@dataclass(frozen=True)
class ChainStrategy:
    consumption: Consumption = Consumption.FORWARD
    computation: Computation = Computation.RUNTIME
    prefetch: int = 0  # precomputed values kept ahead under HYBRID


@dataclass(frozen=True)
class ChainValue:
    full_tag: bytes
    index: int


def truncate_tag(tag: bytes, width_bits: int) -> int:
    """First ``width_bits`` bits of ``tag`` as a big-endian integer."""
    total = len(tag) * 8
    if not 1 <= width_bits <= total:
        raise ParameterError(f"cannot take {width_bits} bits from a {total}-bit value")
    return int.from_bytes(tag, "big") >> (total - width_bits)


class HashChain:
    """One OTP key stream, owned by a single session endpoint."""

    def __init__(self, session_key, seed: bytes, strategy: ChainStrategy = ChainStrategy(),
                 n_hash: int = DEFAULT_N_HASH):
        if n_hash < 1:
            raise ParameterError("n_hash must be positive")
        if len(seed) != 32:
            raise ParameterError("chain seed must be 32 bytes")
        self._key = bytes(session_key)
        self.strategy = strategy
        self.n_hash = n_hash
        self.consumed = 0

        backward = strategy.consumption is Consumption.BACKWARD
        comp = strategy.computation
        if comp is Computation.HYBRID and strategy.prefetch < 1:
            raise InvalidStrategy("hybrid computation needs prefetch >= 1")
        if backward and comp is Computation.RUNTIME:
            raise InvalidStrategy("backward consumption needs the chain precomputed; runtime computation is incompatible")
        if backward and comp is Computation.HYBRID and strategy.prefetch < n_hash:
            raise InvalidStrategy("backward consumption with hybrid computation needs full prefetch")

        h0 = hmac(self._key, seed)
        self._stored: list[bytes] | None = None
        self._buffer: deque[bytes] = deque()
        self._anchor: bytes | None = None  # last computed value on the lazy paths

        if backward or comp is Computation.OFFLINE:
            self._stored = self._grow(h0, n_hash)
        elif comp is Computation.RUNTIME:
            self._anchor = h0
        else:
            self._buffer.append(h0)
            self._anchor = h0
            self.refill()

    def _grow(self, first: bytes, count: int) -> list[bytes]:
        out = [first]
        for _ in range(count - 1):
            out.append(hmac(self._key, out[-1]))
        return out

    @property
    def remaining(self) -> int:
        return self.n_hash - self.consumed

    @property
    def next_index(self) -> int | None:
        if not self.remaining:
            return None
        if self.strategy.consumption is Consumption.BACKWARD:
            return self.n_hash - 1 - self.consumed
        return self.consumed

    def refill(self) -> None:
        """Top the hybrid prefetch buffer back up to ``prefetch`` values."""
        if self.strategy.computation is not Computation.HYBRID or self._stored is not None:
            return
        # values that exist in the buffer plus those to come cannot exceed the chain
        limit = min(self.strategy.prefetch, self.remaining)
        while len(self._buffer) < limit:
            self._anchor = hmac(self._key, self._anchor)
            self._buffer.append(self._anchor)

    def upcoming(self) -> Iterator[ChainValue]:
        """Lazily yield unconsumed values in consumption order, without consuming."""
        index = self.consumed
        if self._stored is not None:
            if self.strategy.consumption is Consumption.BACKWARD:
                for i in range(self.n_hash - 1 - index, -1, -1):
                    yield ChainValue(self._stored[i], i)
            else:
                for i in range(index, self.n_hash):
                    yield ChainValue(self._stored[i], i)
            return
        last = None
        if self.strategy.computation is Computation.HYBRID:
            for tag in self._buffer:
                yield ChainValue(tag, index)
                last = tag
                index += 1
        else:
            if index < self.n_hash:
                last = self._anchor
                yield ChainValue(last, index)
                index += 1
        if last is None:
            last = self._anchor
        while index < self.n_hash:
            last = hmac(self._key, last)
            yield ChainValue(last, index)
            index += 1

    def advance(self, count: int = 1) -> None:
        if count < 0:
            raise ParameterError("count must be non-negative")
        if count > self.remaining:
            raise ChainExhausted(f"cannot consume {count} values, {self.remaining} remain")
        if self._stored is None:
            if self.strategy.computation is Computation.HYBRID:
                for _ in range(count):
                    if self._buffer:
                        self._buffer.popleft()
                    else:
                        self._anchor = hmac(self._key, self._anchor)
            else:
                for k in range(count):
                    # the value after the final one is never needed
                    if self.consumed + k + 1 < self.n_hash:
                        self._anchor = hmac(self._key, self._anchor)
        self.consumed += count

    def next_value(self) -> ChainValue:
        if not self.remaining:
            raise ChainExhausted("hash chain exhausted")
        value = next(self.upcoming())
        self.advance(1)
        return value

    def next_otp_key(self, crc_width: int) -> tuple[int, int]:
        value = self.next_value()
        return truncate_tag(value.full_tag, crc_width), value.index

    def peek_window(self, window: int, crc_width: int) -> list[tuple[int, int]]:
        if window < 0:
            raise ParameterError("window must be non-negative")
        return [(v.index, truncate_tag(v.full_tag, crc_width))
                for v in islice(self.upcoming(), window)]

    def retained_values(self) -> int:
        if self._stored is not None:
            return len(self._stored)
        if self.strategy.computation is Computation.HYBRID:
            return max(len(self._buffer), 1)
        return 1

    def retained_bits(self) -> int:
        return self.retained_values() * VALUE_BITS

    def __repr__(self):
        s = self.strategy
        return (f"HashChain({s.consumption.value}/{s.computation.value}, "
                f"n_hash={self.n_hash}, consumed={self.consumed})")


class PeerValue:
    """Receiver-side record of the most recent value of a peer's chain."""

    def __init__(self, value: bytes = bytes(TAG_BYTES)):
        self.value = value

    def retained_bits(self) -> int:
        return VALUE_BITS


@dataclass(frozen=True)
class StorageModel:
    x: int
    n_hash: int
    nodes: int
    approach: StorageApproach
    consumption: Consumption

    def __post_init__(self):
        if min(self.x, self.n_hash, self.nodes) < 1:
            raise ParameterError("storage model fields must be positive")


def storage_bits(model: StorageModel) -> int:
    """Per-node storage overhead in bits for one strategy combination."""
    x, n, N = model.x, model.n_hash, model.nodes
    backward = model.consumption is Consumption.BACKWARD
    if model.approach is StorageApproach.ENTITY:
        return x * (n + N - 1) if backward else N * x
    chains = N - 1 if model.approach is StorageApproach.PAIR else N
    return chains * n * x if backward else chains * x


def live_storage_audit(items: Iterable) -> int:
    """Bits actually retained by a node's chains and peer records."""
    return sum(item.retained_bits() for item in items)


def node_storage(approach: StorageApproach, consumption: Consumption, nodes: int,
                 n_hash: int, master: bytes = b"\x01" * 32, node_id: int = 0) -> list:
    """Build the chain state one node holds in a ``nodes``-node network.

    For GROUP, ``nodes`` is the number of groups the node belongs to.
    """
    if consumption is Consumption.BACKWARD:
        strategy = ChainStrategy(Consumption.BACKWARD, Computation.OFFLINE)
    else:
        strategy = ChainStrategy(Consumption.FORWARD, Computation.RUNTIME)

    def chain(label: str) -> HashChain:
        key = SessionKey(hmac(master, f"key:{label}".encode()))
        return HashChain(key, hmac(master, f"seed:{label}".encode()), strategy, n_hash)

    peers = [j for j in range(nodes) if j != node_id]
    if approach is StorageApproach.ENTITY:
        held: list = [chain(f"entity:{node_id}")]
        for j in peers:
            if consumption is Consumption.FORWARD:
                tracker = HashChain(SessionKey(hmac(master, f"key:entity:{j}".encode())),
                                    hmac(master, f"seed:entity:{j}".encode()),
                                    ChainStrategy(), n_hash)
                held.append(tracker)
            else:
                held.append(PeerValue())
        return held
    if approach is StorageApproach.PAIR:
        return [chain(f"pair:{min(node_id, j)}:{max(node_id, j)}") for j in peers]
    return [chain(f"group:{g}") for g in range(nodes)]


@dataclass(frozen=True)
class ChainConfig:
    consumption: str = "forward"
    storage: str = "pair"
    computation: str = "runtime"
    n_hash: int = DEFAULT_N_HASH
    lookahead: int = DEFAULT_LOOKAHEAD
    prefetch: int = 0

    @classmethod
    def from_dict(cls, data: dict) -> "ChainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ParameterError(f"unknown chain config fields: {sorted(unknown)}")
        cfg = cls(**data)
        cfg.strategy  # validates enum names
        StorageApproach(cfg.storage)
        if cfg.n_hash < 1 or cfg.lookahead < 1:
            raise ParameterError("n_hash and lookahead must be positive")
        return cfg

    @property
    def strategy(self) -> ChainStrategy:
        try:
            return ChainStrategy(Consumption(self.consumption), Computation(self.computation),
                                 self.prefetch)
        except ValueError as exc:
            raise ParameterError(str(exc)) from None
