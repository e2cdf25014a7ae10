"""JSON bus scenarios: which devices exist, who is secured, and who talks to whom.

Every secured pair runs the initialization protocol once per direction, so
each direction owns its own hash chain.  All randomness is derived from the
run seed, which makes a scenario plus a seed fully reproducible.
"""

from __future__ import annotations

import hashlib
import random
from dataclasses import asdict, dataclass, field, fields

from .chain import ChainConfig
from .errors import InitFailure, ParameterError
from .handshake import run_p2p
from .primitives import DH_GROUPS, MasterKey, dh_group
from .seccrc import BroadcastContext, SessionContext
from .transport import DEFAULT_CRC, Bus, Device, Send, frame_crc_entry


def _strict(cls, data: dict, what: str):
    if not isinstance(data, dict):
        raise ParameterError(f"{what} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ParameterError(f"unknown {what} fields: {sorted(unknown)}")
    try:
        return cls(**data)
    except TypeError as exc:
        raise ParameterError(f"{what}: {exc}") from None


@dataclass(frozen=True)
class DeviceSpec:
    address: int
    mode: str = "plain"

    def __post_init__(self):
        if self.mode not in ("plain", "secured"):
            raise ParameterError(f"device mode must be plain or secured, got {self.mode!r}")


@dataclass(frozen=True)
class TrafficSpec:
    source: int
    destination: int
    count: int
    payload_bytes: int = 16
    function: int = 0x03
    start: float = 0.0
    interval: float = 0.001


@dataclass(frozen=True)
class Scenario:
    devices: tuple[DeviceSpec, ...]
    traffic: tuple[TrafficSpec, ...] = ()
    drop_probability: float = 0.0
    dh_group: str = "toy64"
    broadcast: str = "master"
    crc: str = DEFAULT_CRC
    chain: ChainConfig = field(default_factory=ChainConfig)

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        data = dict(_strict(_Raw, data, "scenario").__dict__)
        devices = tuple(_strict(DeviceSpec, d, "device") for d in data["devices"])
        traffic = tuple(_strict(TrafficSpec, t, "traffic") for t in data["traffic"])
        chain = ChainConfig.from_dict(data["chain"])
        scenario = cls(devices, traffic, float(data["drop_probability"]), data["dh_group"],
                       data["broadcast"], data["crc"], chain)
        scenario.validate()
        return scenario

    def validate(self) -> None:
        addresses = [d.address for d in self.devices]
        if len(set(addresses)) != len(addresses):
            raise ParameterError("duplicate device address")
        if self.dh_group not in DH_GROUPS:
            raise ParameterError(f"unknown dh_group {self.dh_group!r}")
        frame_crc_entry(self.crc)
        if self.broadcast not in ("master", "none"):
            raise ParameterError("broadcast must be 'master' or 'none'")
        for t in self.traffic:
            if t.source not in addresses:
                raise ParameterError(f"traffic source {t.source} is not a device")
            if t.destination != 0 and t.destination not in addresses:
                raise ParameterError(f"traffic destination {t.destination} is not a device")
            if t.count < 0 or t.interval <= 0:
                raise ParameterError("traffic count must be >= 0 and interval > 0")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class _Raw:
    devices: list
    traffic: list = field(default_factory=list)
    drop_probability: float = 0.0
    dh_group: str = "toy64"
    broadcast: str = "master"
    crc: str = DEFAULT_CRC
    chain: dict = field(default_factory=dict)


def seeded_master_key(seed: int) -> MasterKey:
    return MasterKey(hashlib.sha256(f"acric-demo-master:{seed}".encode()).digest())


def _direction(master: MasterKey, scenario: Scenario, seed: int, src: int, dst: int):
    """Sender and receiver contexts for traffic src -> dst, from one init run."""
    rand = random.Random(f"{seed}:init:{src}:{dst}").randbytes
    run = run_p2p(master, dh_group(scenario.dh_group), rand=rand)
    if run.error is not None:
        raise InitFailure(f"initialization {src}->{dst} failed: {run.error}")
    cfg = scenario.chain
    params = frame_crc_entry(scenario.crc).params
    opts = dict(strategy=cfg.strategy, n_hash=cfg.n_hash, lookahead=cfg.lookahead)
    return (SessionContext.from_init(run.initiator.result, params, "sender", **opts),
            SessionContext.from_init(run.responder.result, params, "receiver", **opts))


def broadcast_counter_base(address: int) -> int:
    """Senders sharing K_m draw counters from disjoint ranges keyed by address."""
    return address << 56


def build(scenario: Scenario, seed: int, master: MasterKey | None = None) -> tuple[Bus, list[Send]]:
    master = master or seeded_master_key(seed)
    devices = {d.address: Device(d.address, d.mode == "secured", scenario.crc) for d in scenario.devices}
    secured = sorted(a for a, d in devices.items() if d.secured)
    for a in secured:
        for b in secured:
            if a != b:
                # direction a -> b: both ends come from the same init run
                devices[a].tx[b], devices[b].rx[a] = _direction(master, scenario, seed, a, b)
    if scenario.broadcast == "master":
        window = scenario.chain.lookahead

        def ctx(sender):
            return BroadcastContext(master, frame_crc_entry(scenario.crc).params,
                                    counter=broadcast_counter_base(sender),
                                    lookahead=window)

        for a in secured:
            devices[a].set_broadcast(ctx(a), {b: ctx(b) for b in secured if b != a})
    schedule = []
    for t in scenario.traffic:
        rng = random.Random(f"{seed}:payload:{t.source}:{t.destination}")
        for k in range(t.count):
            schedule.append(Send(t.start + k * t.interval, t.source, t.destination, t.function,
                                 rng.randbytes(t.payload_bytes)))
    return Bus(devices.values(), scenario.drop_probability, seed), schedule
