"""Network adversary and Monte-Carlo forgery experiments.

The adversary sits on the bus as a tap.  It sees, and can alter, only wire
frames: a claimed source address plus raw bytes.  Nothing in this module
receives a device, a context or a chain.

The forgery lab reproduces brute-force attempts against a victim receiver.
Per the attempt model used here, every guess is checked against the pad the
receiver would use for its next frame, and a rejected guess consumes
nothing, so each attempt succeeds with probability exactly 2^-n.
"""

from __future__ import annotations

import csv
import hashlib
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .chain import ChainStrategy, HashChain
from .crc import CrcParams, crc_batch, crc_compute, params_for_width
from .errors import AdversaryActionError, ParameterError
from .primitives import SessionKey
from .seccrc import SessionContext
from .transport import WireFrame


@dataclass(frozen=True)
class Eavesdrop:
    pass


@dataclass(frozen=True)
class Drop:
    pass


@dataclass(frozen=True)
class Tamper:
    byte_index: int
    xor_mask: int

    def __post_init__(self):
        if not 1 <= self.xor_mask <= 0xFF:
            raise AdversaryActionError("xor mask must be a nonzero byte")


@dataclass(frozen=True)
class Inject:
    frame: WireFrame


@dataclass(frozen=True)
class Replay:
    recorded_index: int


Action = Eavesdrop | Drop | Tamper | Inject | Replay


def adversary_apply(action: Action, frame: WireFrame, recorded: Sequence[WireFrame] = ()) -> list[WireFrame]:
    """Frames that continue on the wire after ``action`` is applied to ``frame``."""
    if isinstance(action, Eavesdrop):
        return [frame]
    if isinstance(action, Drop):
        return []
    if isinstance(action, Tamper):
        if not 0 <= action.byte_index < len(frame.data):
            raise AdversaryActionError(
                f"byte index {action.byte_index} outside a {len(frame.data)}-byte frame")
        buf = bytearray(frame.data)
        buf[action.byte_index] ^= action.xor_mask
        return [WireFrame(frame.source, bytes(buf))]
    if isinstance(action, Inject):
        return [frame, action.frame]
    if isinstance(action, Replay):
        if not 0 <= action.recorded_index < len(recorded):
            raise AdversaryActionError(f"no recorded frame #{action.recorded_index}")
        return [frame, recorded[action.recorded_index]]
    raise AdversaryActionError(f"unknown action {action!r}")


Policy = Callable[[int, WireFrame], Sequence[Action]]


class Adversary:
    """Bus tap that records every frame and applies a policy's actions.

    The policy sees the frame's position in the recording and the frame itself.
    Actions are applied in order; a Drop removes the original frame but
    injections and replays still go out.
    """

    def __init__(self, policy: Policy | None = None):
        self.policy = policy
        self.recorded: list[WireFrame] = []

    def __call__(self, frame: WireFrame) -> list[WireFrame]:
        position = len(self.recorded)
        self.recorded.append(frame)
        actions = self.policy(position, frame) if self.policy else [Eavesdrop()]
        current: WireFrame | None = frame
        extra: list[WireFrame] = []
        for action in actions:
            if isinstance(action, (Inject, Replay)):
                extra.extend(adversary_apply(action, frame, self.recorded)[1:])
            elif current is not None:
                out = adversary_apply(action, current, self.recorded)
                current = out[0] if out else None
        return ([current] if current is not None else []) + extra


# Monte-Carlo forgery experiments

MODES = ("random", "informed")


@dataclass(frozen=True)
class ForgeryExperiment:
    crc_width: int = 16
    mode: str = "random"
    trials: int = 1000
    rng_seed: int = 0
    replacement: bool = True
    message_bytes: int = 8

    def __post_init__(self):
        if self.crc_width not in (8, 16):
            raise ParameterError("crc_width must be 8 or 16")
        if self.mode not in MODES:
            raise ParameterError(f"mode must be one of {MODES}")
        if self.trials < 1:
            raise ParameterError("trials must be >= 1")
        if self.message_bytes < 1:
            raise ParameterError("message_bytes must be >= 1")


@dataclass
class AttemptRecord:
    experiment: ForgeryExperiment
    attempts: np.ndarray
    recovered_ivs: list[int] = field(default_factory=list)

    def __len__(self):
        return len(self.attempts)


def trial_rng(seed: int, trial: int, mode: str = "random") -> np.random.Generator:
    """Independent stream per (seed, trial, mode); trial order never matters."""
    return np.random.default_rng([seed, trial, MODES.index(mode)])


def _victim(rng: np.random.Generator, params: CrcParams):
    """Sender, receiver, and a harness-only copy of the chain (for leaking pads)."""
    key = SessionKey(rng.bytes(32))
    seed = rng.bytes(32)

    def chain():
        return HashChain(key, seed, ChainStrategy(), n_hash=4)

    # the experiment freezes the receiver window at offset 0
    rx = SessionContext(key, chain(), params, "receiver", 1)
    tx = SessionContext(key, chain(), params, "sender", 1)
    return tx, rx, chain()


def _first_hit(rng: np.random.Generator, target: int, space: int, replacement: bool) -> int:
    """1-based index of the first uniform guess equal to ``target``."""
    if not replacement:
        order = rng.permutation(space)
        return int(np.flatnonzero(order == target)[0]) + 1
    done, batch = 0, space
    while True:
        guesses = rng.integers(0, space, size=batch, dtype=np.int64)
        hits = np.flatnonzero(guesses == target)
        if hits.size:
            return done + int(hits[0]) + 1
        done += batch
        batch *= 2


def recover_iv(params: CrcParams, message: bytes, secrcc: int, pad: int) -> list[int]:
    """All IVs consistent with a leaked (message, SecCRC, pad) triple."""
    space = 1 << params.width_bits
    ivs = np.arange(space, dtype=np.uint64)
    rows = np.broadcast_to(np.frombuffer(message, dtype=np.uint8), (space, len(message)))
    crcs = crc_batch(params, ivs, rows)
    return [int(v) for v in ivs[(crcs ^ np.uint64(pad)) == np.uint64(secrcc)]]


def run_trial(exp: ForgeryExperiment, trial: int) -> tuple[int, int | None]:
    """One forgery trial; returns (attempts until Accept, recovered IV or None)."""
    rng = trial_rng(exp.rng_seed, trial, exp.mode)
    params = params_for_width(exp.crc_width)
    space = 1 << exp.crc_width
    tx, rx, harness_chain = _victim(rng, params)
    recovered = None
    if exp.mode == "informed":
        # one honest frame is accepted, then its (message, SecCRC, pad) leaks
        leaked_msg = rng.bytes(exp.message_bytes)
        leaked = tx.sign(leaked_msg)
        if not rx.verify(leaked_msg, leaked.value):
            raise AssertionError("victim rejected an honest frame")
        pad, _ = harness_chain.next_otp_key(exp.crc_width)
        recovered = recover_iv(params, leaked_msg, leaked.value, pad)[0]
    forged = rng.bytes(exp.message_bytes)
    expected_pad = rx.chain.peek_window(1, exp.crc_width)[0][1]
    target = crc_compute(params, rx.iv, forged) ^ expected_pad
    if exp.mode == "informed":
        # the attacker knows the CRC part and only guesses the fresh pad
        crc_part = crc_compute(params, recovered, forged)
        winning_pad = target ^ crc_part
        attempts = _first_hit(rng, winning_pad, space, exp.replacement)
        submitted = crc_part ^ winning_pad
    else:
        attempts = _first_hit(rng, target, space, exp.replacement)
        submitted = target
    if rx.verify(forged, submitted ^ 1):
        raise AssertionError("victim accepted a wrong guess")
    if not rx.verify(forged, submitted):
        raise AssertionError("victim rejected the winning guess")
    return attempts, recovered


def run_forgery(exp: ForgeryExperiment) -> AttemptRecord:
    record = AttemptRecord(exp, np.empty(exp.trials, dtype=np.int64))
    for trial in range(exp.trials):
        attempts, iv = run_trial(exp, trial)
        record.attempts[trial] = attempts
        if iv is not None:
            record.recovered_ivs.append(iv)
    return record


def run_random_forgery(exp: ForgeryExperiment) -> AttemptRecord:
    return run_forgery(replace(exp, mode="random"))


def run_informed_forgery(exp: ForgeryExperiment) -> AttemptRecord:
    return run_forgery(replace(exp, mode="informed"))


# Collision cases for a receiver holding (IV, pad) against a sender using (IV', pad')

@dataclass(frozen=True)
class CollisionResult:
    case: int
    accepted: int
    trials: int

    @property
    def rate(self) -> float:
        return self.accepted / self.trials


def _random_function(ivs: np.ndarray, messages: np.ndarray, width: int) -> np.ndarray:
    """Idealised stand-in for the CRC: SHA-256 of (IV, message), truncated."""
    nbytes = (width + 7) // 8
    out = np.empty(len(ivs), dtype=np.uint64)
    for i, (iv, msg) in enumerate(zip(ivs.tolist(), messages)):
        digest = hashlib.sha256(int(iv).to_bytes(8, "big") + msg.tobytes()).digest()
        out[i] = int.from_bytes(digest[:nbytes], "big") >> (nbytes * 8 - width)
    return out


def _other_than(rng: np.random.Generator, correct: np.ndarray, space: int) -> np.ndarray:
    """Uniform values different from ``correct`` (elementwise)."""
    return (correct + rng.integers(1, space, size=len(correct), dtype=np.uint64)) % np.uint64(space)


def collision_rate(case: int, width: int = 8, trials: int = 100_000, seed: int = 0,
                   model: str = "crc", message_bytes: int = 8) -> CollisionResult:
    """Empirical SecCRC acceptance for a mismatched (IV, pad) pair.

    Case 1: correct IV, wrong pad (exhaustive over all 2^n - 1 wrong pads).
    Case 2: wrong IV, correct pad.  Case 3: wrong IV and wrong pad.
    ``model="random-function"`` swaps the CRC for an idealised random function.
    """
    if case not in (1, 2, 3):
        raise ParameterError("case must be 1, 2 or 3")
    if model not in ("crc", "random-function"):
        raise ParameterError("model must be 'crc' or 'random-function'")
    params = params_for_width(width)
    space = 1 << width
    rng = np.random.default_rng([seed, case])

    def checksum(ivs, msgs):
        if model == "crc":
            return crc_batch(params, ivs, msgs)
        return _random_function(ivs, msgs, width)

    if case == 1:
        msg = rng.integers(0, 256, size=(1, message_bytes), dtype=np.uint8)
        iv = rng.integers(0, space, dtype=np.uint64)
        pad = int(rng.integers(0, space))
        sent = int(checksum(np.array([iv]), msg)[0]) ^ pad
        wrong = np.array([p for p in range(space) if p != pad], dtype=np.uint64)
        local = checksum(np.full(len(wrong), iv, dtype=np.uint64), np.repeat(msg, len(wrong), axis=0))
        accepted = int(np.count_nonzero((local ^ wrong) == np.uint64(sent)))
        return CollisionResult(1, accepted, len(wrong))

    msgs = rng.integers(0, 256, size=(trials, message_bytes), dtype=np.uint8)
    iv = rng.integers(0, space, size=trials, dtype=np.uint64)
    pad = rng.integers(0, space, size=trials, dtype=np.uint64)
    wrong_iv = _other_than(rng, iv, space)
    sender_pad = pad if case == 2 else _other_than(rng, pad, space)
    sent = checksum(wrong_iv, msgs) ^ sender_pad
    local = checksum(iv, msgs) ^ pad
    return CollisionResult(case, int(np.count_nonzero(sent == local)), trials)


# Statistics and CDF tables

def geometric_cdf(k, width: int):
    k = np.asarray(k, dtype=np.float64)
    return -np.expm1(k * np.log1p(-(2.0 ** -width)))


def ks_geometric(attempts, width: int) -> float:
    """Exact one-sample KS distance to the geometric law on {1, 2, ...}.

    Both CDFs are step functions on the integers, so the supremum is reached
    either at a sample value or just before the next one.
    """
    x = np.sort(np.asarray(attempts, dtype=np.int64))
    if x.size == 0:
        raise ParameterError("empty sample")
    values, counts = np.unique(x, return_counts=True)
    fn = np.cumsum(counts) / x.size
    at = np.abs(fn - geometric_cdf(values, width))
    before_vals = values - 1
    before_fn = np.concatenate(([0.0], fn[:-1]))
    before = np.abs(before_fn - geometric_cdf(before_vals, width))
    return float(max(at.max(), before.max()))


def ks_two_sample(a, b) -> float:
    from scipy.stats import ks_2samp
    return float(ks_2samp(a, b).statistic)


def pooled_success_rate(attempts) -> tuple[float, float]:
    """Per-attempt success frequency over all attempts, and its count."""
    total = float(np.sum(attempts))
    return len(attempts) / total, total


@dataclass(frozen=True)
class CdfTable:
    points: tuple[tuple[int, float], ...]


def cdf_build(record) -> CdfTable:
    attempts = record.attempts if isinstance(record, AttemptRecord) else record
    attempts = np.asarray(attempts, dtype=np.int64)
    if attempts.size == 0:
        raise ParameterError("cannot build a CDF from an empty record")
    values, counts = np.unique(attempts, return_counts=True)
    cum = np.cumsum(counts)
    probs = [c / attempts.size for c in cum.tolist()]
    probs[-1] = 1.0
    return CdfTable(tuple(zip(values.tolist(), probs)))


def cdf_export(table: CdfTable, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["attempts", "cumulative_probability"])
        for attempts, prob in table.points:
            writer.writerow([attempts, repr(prob)])
