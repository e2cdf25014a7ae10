"""Wall-clock micro-benchmarks for per-frame overhead and loopback initialization."""

from __future__ import annotations

import os
import socket
import statistics
import threading
import time

from .chain import ChainStrategy, HashChain
from .handshake import dial_initiator, serve_responder
from .primitives import DhGroup, MasterKey, SessionKey
from .seccrc import SessionContext
from .transport import DEFAULT_CRC, MAX_FRAME, frame_crc_entry, plain_crc


def summarize(samples_ns: list[int]) -> dict:
    ordered = sorted(samples_ns)
    p99 = ordered[min(len(ordered) - 1, int(0.99 * len(ordered)))]
    return {"median_ns": int(statistics.median(ordered)), "p99_ns": int(p99), "samples": len(ordered)}


def frame_overhead(frames: int = 2000, frame_bytes: int = MAX_FRAME, crc: str = DEFAULT_CRC) -> dict:
    """Per-frame cost of SecCRC sign+verify against plain CRC compute+check."""
    entry = frame_crc_entry(crc)
    params, iv = entry.params, entry.default_iv
    body = os.urandom(frame_bytes - 2)
    key = SessionKey(os.urandom(32))
    seed = os.urandom(32)
    tx = SessionContext(key, HashChain(key, seed, ChainStrategy(), frames), params, "sender")
    rx = SessionContext(key, HashChain(key, seed, ChainStrategy(), frames), params, "receiver")
    clock = time.perf_counter_ns
    secured, plain = [], []
    for _ in range(frames):
        t0 = clock()
        ok = rx.verify(body, tx.sign(body).value)
        t1 = clock()
        ok2 = plain_crc(body, params, iv) == plain_crc(body, params, iv)
        t2 = clock()
        if not (ok and ok2):
            raise RuntimeError("benchmark frame failed verification")
        secured.append(t1 - t0)
        plain.append(t2 - t1)
    s, p = summarize(secured), summarize(plain)
    return {"frame_bytes": frame_bytes, "crc": params.name, "plain_iv": iv,
            "secured": s, "plain": p, "delta_median_ns": s["median_ns"] - p["median_ns"]}


def loopback_init(master: MasterKey, group: DhGroup, runs: int = 5, timeout: float = 5.0) -> dict:
    """Full initialization between two endpoints over 127.0.0.1 TCP."""
    samples = []
    for _ in range(runs):
        listener = socket.create_server(("127.0.0.1", 0))
        box: dict = {}

        def serve():
            try:
                box["result"] = serve_responder(listener, master, group, timeout=timeout)
            except Exception as exc:  # reported by the caller below
                box["error"] = exc

        thread = threading.Thread(target=serve)
        thread.start()
        t0 = time.perf_counter_ns()
        result = dial_initiator(listener.getsockname(), master, group, timeout=timeout)
        samples.append(time.perf_counter_ns() - t0)
        thread.join()
        listener.close()
        if "error" in box:
            raise box["error"]
        if box["result"] != result:
            raise RuntimeError("loopback initialization disagreed")
    return {"group": group.name, **summarize(samples)}
