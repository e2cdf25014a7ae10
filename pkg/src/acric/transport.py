"""Modbus-RTU-style frames and a deterministic simulated bus.

Frame layout: address (1) | function (1) | payload (0..252) | CRC field (2,
little-endian).  The CRC field holds either the plain CRC (CRC-16/MODBUS
unless another 16-bit catalog entry is configured) or a SecCRC; both have the same size and position, so the two are
indistinguishable by format.

Which peers are secured is static configuration: a secured device consults a
session context only for peers it has one for, and treats everybody else as a
plain device.
"""

from __future__ import annotations

import json
import random
import socket
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Iterable

from .crc import CATALOG, CrcParams, catalog_entry, crc_compute
from .errors import FrameError, ParameterError
from .seccrc import BroadcastContext, SessionContext
from .wire import recv_packet, send_packet

BROADCAST = 0x00
MAX_PAYLOAD = 252
MAX_FRAME = 256
MIN_FRAME = 4
CRC_FIELD_BITS = 16
DEFAULT_CRC = "CRC-16/MODBUS"
FRAME_CRC = CATALOG[DEFAULT_CRC].params
PLAIN_IV = CATALOG[DEFAULT_CRC].default_iv


def frame_crc_entry(name: str = DEFAULT_CRC):
    """Catalog entry for the frame's CRC field; it must be 16 bits wide."""
    entry = catalog_entry(name)
    if entry.params.width_bits != CRC_FIELD_BITS:
        raise ParameterError(f"{name} is not a 16-bit CRC; the frame CRC field holds 16 bits")
    return entry


def plain_crc(body: bytes, params: CrcParams = FRAME_CRC, iv: int = PLAIN_IV) -> int:
    return crc_compute(params, iv, body)


@dataclass(frozen=True)
class Frame:
    address: int
    function: int
    payload: bytes
    crc_field: int

    @property
    def body(self) -> bytes:
        return bytes((self.address, self.function)) + self.payload

    def encode(self) -> bytes:
        return self.body + self.crc_field.to_bytes(2, "little")

    @classmethod
    def decode(cls, raw: bytes) -> "Frame":
        if not MIN_FRAME <= len(raw) <= MAX_FRAME:
            raise FrameError(f"frame length {len(raw)} outside {MIN_FRAME}..{MAX_FRAME}")
        return cls(raw[0], raw[1], bytes(raw[2:-2]), int.from_bytes(raw[-2:], "little"))


@dataclass(frozen=True)
class Delivered:
    source: int
    function: int
    payload: bytes
    chain_index: int | None = None
    verdict = "delivered"


@dataclass(frozen=True)
class Rejected:
    source: int
    reason: str
    verdict = "rejected"


@dataclass(frozen=True)
class NotForMe:
    verdict = "not_for_me"


NOT_FOR_ME = NotForMe()


class Device:
    """A bus participant.  Plain devices hold no secret material at all."""

    def __init__(self, address: int, secured: bool = False, crc: str = DEFAULT_CRC):
        if not 1 <= address <= 247:
            raise ParameterError(f"device address must be 1..247, got {address}")
        self.address = address
        self.secured = secured
        entry = frame_crc_entry(crc)
        self.crc_params, self.plain_iv = entry.params, entry.default_iv
        self.tx: dict[int, SessionContext] = {}
        self.rx: dict[int, SessionContext] = {}
        self.broadcast_tx: BroadcastContext | None = None
        self.broadcast_rx: dict[int, BroadcastContext] = {}
        self.inbox: list[Delivered] = []
        self.stats: Counter = Counter()

    def __repr__(self):
        return f"Device(0x{self.address:02x}, {self.mode})"

    @property
    def mode(self) -> str:
        return "secured" if self.secured else "plain"

    def _require_secured(self):
        if not self.secured:
            raise ParameterError(f"device 0x{self.address:02x} is plain and holds no contexts")

    def add_peer(self, peer: int, tx: SessionContext, rx: SessionContext) -> None:
        self._require_secured()
        self.tx[peer], self.rx[peer] = tx, rx

    def set_broadcast(self, tx: BroadcastContext | None, rx: dict[int, BroadcastContext]) -> None:
        self._require_secured()
        self.broadcast_tx = tx
        self.broadcast_rx = dict(rx)

    def encode(self, destination: int, function: int, payload: bytes = b"") -> tuple[bytes, int | None]:
        """Build a frame; returns (raw bytes, chain index or counter used)."""
        if len(payload) > MAX_PAYLOAD:
            raise ParameterError(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
        if not (0 <= destination <= 255 and 0 <= function <= 255):
            raise ParameterError("destination and function must be single bytes")
        body = bytes((destination, function)) + payload
        ctx = None
        if self.secured:
            ctx = self.broadcast_tx if destination == BROADCAST else self.tx.get(destination)
        if ctx is None:
            value, index = plain_crc(body, self.crc_params, self.plain_iv), None
        else:
            signed = ctx.sign(body)
            value, index = signed.value, signed.chain_index
        return Frame(destination, function, payload, value).encode(), index

    def receive(self, raw: bytes, source: int):
        """Address filter, then plain or SecCRC verification."""
        frame = Frame.decode(raw)
        if frame.address not in (self.address, BROADCAST):
            return NOT_FOR_ME
        ctx = None
        if self.secured:
            ctx = self.broadcast_rx.get(source) if frame.address == BROADCAST else self.rx.get(source)
        if ctx is None:
            ok, index = plain_crc(frame.body, self.crc_params, self.plain_iv) == frame.crc_field, None
            reason = "crc mismatch"
        else:
            verdict = ctx.verify(frame.body, frame.crc_field)
            ok, index = verdict.accepted, verdict.index
            reason = "authentication failed"
        if not ok:
            self.stats["rejected"] += 1
            return Rejected(source, reason)
        self.stats["delivered"] += 1
        delivered = Delivered(source, frame.function, frame.payload, index)
        self.inbox.append(delivered)
        return delivered


def frame_encode(device: Device, destination: int, function: int, payload: bytes = b"") -> bytes:
    return device.encode(destination, function, payload)[0]


def frame_decode_and_verify(device: Device, raw: bytes, source: int):
    return device.receive(raw, source)


@dataclass(frozen=True)
class Send:
    time: float
    source: int
    destination: int
    function: int = 0x03
    payload: bytes = b""


@dataclass(frozen=True)
class WireFrame:
    """A frame as seen on the medium: the claimed source plus the raw bytes."""
    source: int
    data: bytes


Tap = Callable[[WireFrame], list[WireFrame]]


@dataclass
class TraceLog:
    events: list[dict] = field(default_factory=list)

    def add(self, **event) -> None:
        self.events.append(event)

    def dumps(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.events)

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(self.dumps())

    def select(self, **match) -> list[dict]:
        return [e for e in self.events if all(e.get(k) == v for k, v in match.items())]

    def __eq__(self, other):
        return isinstance(other, TraceLog) and self.events == other.events


class Bus:
    """Shared medium with optional Bernoulli drops and an adversary tap.

    Drop decisions come from one RNG stream per sender, seeded from
    (seed, sender address), so adding or removing other senders never
    changes which of a given sender's frames are lost.
    """

    def __init__(self, devices: Iterable[Device] = (), drop_probability: float = 0.0,
                 seed: int = 0, tap: Tap | None = None):
        if not 0.0 <= drop_probability < 1.0:
            raise ParameterError("drop probability must be in [0, 1)")
        self.devices: dict[int, Device] = {}
        self.drop_probability = drop_probability
        self.seed = seed
        self.tap = tap
        self._drop_rngs: dict[int, random.Random] = {}
        for d in devices:
            self.attach(d)

    def attach(self, device: Device) -> None:
        if device.address in self.devices:
            raise ParameterError(f"address 0x{device.address:02x} already attached")
        self.devices[device.address] = device

    def _dropped(self, source: int) -> bool:
        if self.drop_probability == 0.0:
            return False
        rng = self._drop_rngs.get(source)
        if rng is None:
            rng = self._drop_rngs[source] = random.Random(f"{self.seed}:{source}")
        return rng.random() < self.drop_probability

    def deliver(self, wire: WireFrame, time: float, trace: TraceLog) -> None:
        """Hand one on-wire frame to every attached device except its claimed source."""
        for addr, device in self.devices.items():
            if addr == wire.source:
                continue
            try:
                verdict = device.receive(wire.data, wire.source)
            except FrameError as exc:
                trace.add(t=time, event="recv", src=wire.source, dev=addr, verdict="malformed", reason=str(exc))
                continue
            if verdict is NOT_FOR_ME:
                continue
            entry = dict(t=time, event="recv", src=wire.source, dev=addr, verdict=verdict.verdict)
            if isinstance(verdict, Delivered):
                entry["chain_index"] = verdict.chain_index
            else:
                entry["reason"] = verdict.reason
            trace.add(**entry)

    def run(self, schedule: Iterable[Send], duration: float | None = None) -> TraceLog:
        trace = TraceLog()
        ordered = sorted(enumerate(schedule), key=lambda p: (p[1].time, p[0]))
        for _, send in ordered:
            if duration is not None and send.time > duration:
                break
            sender = self.devices[send.source]
            raw, index = sender.encode(send.destination, send.function, send.payload)
            trace.add(t=send.time, event="send", src=send.source, dst=send.destination,
                      func=send.function, len=len(raw), chain_index=index, raw=raw.hex())
            if self._dropped(send.source):
                trace.add(t=send.time, event="drop", src=send.source, dst=send.destination)
                continue
            wires = [WireFrame(send.source, raw)]
            if self.tap is not None:
                wires = self.tap(wires[0])
            for wire in wires:
                self.deliver(wire, send.time, trace)
        return trace


def bus_run(bus: Bus, schedule: Iterable[Send], duration: float | None = None) -> TraceLog:
    return bus.run(schedule, duration)


# TCP transport: each packet is [claimed source byte | frame bytes] inside the
# 2-byte length prefix used by the initialization wire format.

def tcp_send_frames(address: tuple[str, int], frames: Iterable[WireFrame], timeout: float = 5.0) -> None:
    with socket.create_connection(address, timeout=timeout) as sock:
        for wire in frames:
            send_packet(sock, bytes((wire.source,)) + wire.data)


def tcp_receive_frames(listener: socket.socket, device: Device, count: int,
                       timeout: float = 5.0) -> list:
    listener.settimeout(timeout)
    conn, _ = listener.accept()
    verdicts = []
    with conn:
        conn.settimeout(timeout)
        for _ in range(count):
            packet = recv_packet(conn)
            if len(packet) < 1 + MIN_FRAME:
                raise FrameError("short packet")
            verdicts.append(device.receive(packet[1:], packet[0]))
    return verdicts
