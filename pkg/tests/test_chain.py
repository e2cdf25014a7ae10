import hashlib
import hmac as std_hmac
import os

import pytest
from hypothesis import given, settings, strategies as st

from acric.chain import (
    ChainConfig,
    ChainStrategy,
    Computation,
    Consumption,
    HashChain,
    StorageApproach,
    StorageModel,
    live_storage_audit,
    node_storage,
    storage_bits,
    truncate_tag,
)
from acric.errors import ChainExhausted, InvalidStrategy, ParameterError
from acric.primitives import SessionKey

KEY = SessionKey(bytes(range(32)))
SEED = bytes(range(100, 132))

FWD_RUNTIME = ChainStrategy()
FWD_OFFLINE = ChainStrategy(Consumption.FORWARD, Computation.OFFLINE)
BWD_OFFLINE = ChainStrategy(Consumption.BACKWARD, Computation.OFFLINE)


def H(key, data):
    return std_hmac.new(bytes(key), data, hashlib.sha256).digest()


def manual_chain(n):
    out = [H(KEY, SEED)]
    while len(out) < n:
        out.append(H(KEY, out[-1]))
    return out


@pytest.mark.parametrize("strategy", [
    FWD_RUNTIME, FWD_OFFLINE, ChainStrategy(Consumption.FORWARD, Computation.HYBRID, 3)])
def test_forward_values_match_definition(strategy):
    chain = HashChain(KEY, SEED, strategy, n_hash=10)
    first = chain.next_value()
    assert first.full_tag == H(KEY, SEED) and first.index == 0
    chain.next_value()
    third = chain.next_value()
    assert third.index == 2
    assert third.full_tag == H(KEY, H(KEY, H(KEY, SEED)))
    rest = [chain.next_value().full_tag for _ in range(7)]
    assert rest == manual_chain(10)[3:]


def test_backward_runtime_rejected():
    with pytest.raises(InvalidStrategy):
        HashChain(KEY, SEED, ChainStrategy(Consumption.BACKWARD, Computation.RUNTIME), 8)
    with pytest.raises(InvalidStrategy):
        HashChain(KEY, SEED, ChainStrategy(Consumption.BACKWARD, Computation.HYBRID, 4), 8)
    # full prefetch is accepted
    HashChain(KEY, SEED, ChainStrategy(Consumption.BACKWARD, Computation.HYBRID, 8), 8)


def test_backward_starts_at_tail():
    chain = HashChain(KEY, SEED, BWD_OFFLINE, n_hash=6)
    v = chain.next_value()
    assert v.index == 5 and v.full_tag == manual_chain(6)[5]


def test_backward_and_forward_are_reverses():
    fwd = HashChain(KEY, SEED, FWD_RUNTIME, 32)
    bwd = HashChain(KEY, SEED, BWD_OFFLINE, 32)
    f = [fwd.next_value() for _ in range(32)]
    b = [bwd.next_value() for _ in range(32)]
    assert f == b[::-1]
    assert [v.index for v in b] == list(range(31, -1, -1))


def test_next_otp_key_truncation_and_exhaustion():
    chain = HashChain(KEY, SEED, FWD_RUNTIME, n_hash=3)
    k0, i0 = chain.next_otp_key(16)
    k1, i1 = chain.next_otp_key(16)
    assert i0 != i1
    assert k0 == int.from_bytes(H(KEY, SEED)[:2], "big")
    chain.next_otp_key(16)
    with pytest.raises(ChainExhausted):
        chain.next_otp_key(16)


def test_truncate_tag():
    tag = bytes([0xAB, 0xCD]) + bytes(30)
    assert truncate_tag(tag, 16) == 0xABCD
    assert truncate_tag(tag, 12) == 0xABC
    assert truncate_tag(tag, 8) == 0xAB
    with pytest.raises(ParameterError):
        truncate_tag(tag, 257)


@pytest.mark.parametrize("strategy", [FWD_RUNTIME, FWD_OFFLINE, BWD_OFFLINE,
                                      ChainStrategy(Consumption.FORWARD, Computation.HYBRID, 2)])
def test_peek_window(strategy):
    chain = HashChain(KEY, SEED, strategy, n_hash=6)
    assert chain.peek_window(0, 16) == []
    peeked = chain.peek_window(4, 16)
    assert chain.peek_window(1, 16) == peeked[:1]
    assert chain.next_otp_key(16) == (peeked[0][1], peeked[0][0])
    assert chain.peek_window(100, 16) == chain.peek_window(5, 16)
    assert len(chain.peek_window(100, 16)) == 5


def test_advance_skips_values():
    chain = HashChain(KEY, SEED, FWD_RUNTIME, n_hash=10)
    peeked = chain.peek_window(5, 32)
    chain.advance(3)
    assert chain.next_otp_key(32) == (peeked[3][1], 3)
    with pytest.raises(ChainExhausted):
        chain.advance(7)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 6), st.lists(st.integers(0, 3), max_size=30))
def test_hybrid_prefetch_bound(prefetch, ops):
    n = 20
    chain = HashChain(KEY, SEED, ChainStrategy(Consumption.FORWARD, Computation.HYBRID, prefetch), n)
    expected = manual_chain(n)
    for op in ops:
        if op == 0 and chain.remaining:
            v = chain.next_value()
            assert v.full_tag == expected[v.index]
        elif op == 1:
            chain.refill()
        elif op == 2 and chain.remaining:
            chain.advance(1)
        assert chain.retained_values() <= prefetch
    seen = [v.full_tag for v in chain.upcoming()]
    assert seen == expected[chain.consumed:]


def test_no_index_revisited():
    chain = HashChain(KEY, SEED, ChainStrategy(Consumption.FORWARD, Computation.HYBRID, 4), 50)
    seen = set()
    while chain.remaining:
        idx = chain.next_value().index
        assert idx not in seen
        seen.add(idx)
    assert seen == set(range(50))


def test_forward_secrecy_needs_key():
    chain = manual_chain(5)
    for i in range(4):
        h_i, h_next = chain[i], chain[i + 1]
        assert H(h_i, h_i) != h_next
        assert hashlib.sha256(h_i).digest() != h_next


def test_storage_formulas_from_table():
    def bits(approach, consumption, x=256, n=1024, N=5):
        return storage_bits(StorageModel(x, n, N, approach, consumption))

    assert bits(StorageApproach.ENTITY, Consumption.BACKWARD) == 263_168
    assert bits(StorageApproach.PAIR, Consumption.FORWARD) == 1024
    assert bits(StorageApproach.PAIR, Consumption.FORWARD, N=1) == 0
    assert bits(StorageApproach.ENTITY, Consumption.FORWARD) == 5 * 256
    assert bits(StorageApproach.PAIR, Consumption.BACKWARD) == 4 * 1024 * 256
    assert bits(StorageApproach.GROUP, Consumption.BACKWARD) == 5 * 1024 * 256
    assert bits(StorageApproach.GROUP, Consumption.FORWARD) == 5 * 256
    with pytest.raises(ParameterError):
        StorageModel(0, 1, 1, StorageApproach.PAIR, Consumption.FORWARD)


def test_live_audit_examples():
    assert live_storage_audit([HashChain(KEY, SEED, FWD_RUNTIME, 64)]) == 256
    assert live_storage_audit([HashChain(KEY, SEED, FWD_OFFLINE, 8)]) == 8 * 256
    assert live_storage_audit([]) == 0


@pytest.mark.parametrize("approach", list(StorageApproach))
@pytest.mark.parametrize("consumption", list(Consumption))
def test_live_audit_matches_formula_small(approach, consumption):
    held = node_storage(approach, consumption, nodes=5, n_hash=16)
    model = StorageModel(256, 16, 5, approach, consumption)
    assert live_storage_audit(held) == storage_bits(model)


def test_chain_config():
    cfg = ChainConfig.from_dict({"consumption": "forward", "storage": "pair",
                                 "computation": "runtime", "n_hash": 4096, "lookahead": 8})
    assert cfg.strategy == ChainStrategy()
    with pytest.raises(ParameterError):
        ChainConfig.from_dict({"bogus": 1})
    with pytest.raises(ParameterError):
        ChainConfig.from_dict({"consumption": "sideways"})


def test_seed_length_checked():
    with pytest.raises(ParameterError):
        HashChain(KEY, os.urandom(16))
