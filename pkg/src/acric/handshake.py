"""System initialization: static derivation, authenticated Diffie-Hellman,
and coordinator-based group key distribution.

Wire format of an initialization message::

    kind (1 byte) | body length (2 bytes, big-endian) | body | tag (32 bytes)
"""

from __future__ import annotations

import enum
import os
import socket
import time
from dataclasses import dataclass, field
from typing import Callable

from .errors import (
    AuthenticationFailed,
    InitFailure,
    InvalidPublicValue,
    MalformedMessage,
    ParameterError,
    ProtocolViolation,
)
from .primitives import (
    KEY_BYTES,
    TAG_BYTES,
    DhGroup,
    MasterKey,
    RandomSource,
    SessionKey,
    derive_session_key,
    dh_keypair,
    hmac,
    mod_exp,
    otp_xor,
    random_bytes,
    tags_equal,
)
from .wire import recv_packet, send_packet

DEFAULT_TIMEOUT = 5.0
HEADER_BYTES = 3


class Kind(enum.IntEnum):
    DH_MSG1 = 1
    DH_MSG2 = 2
    HC_MSG1 = 3
    HC_MSG2 = 4
    INIT_ERROR = 5
    GROUP_KEY = 6
    GROUP_SEED = 7


@dataclass(frozen=True)
class InitMessage:
    kind: Kind
    body: bytes = b""
    tag: bytes = bytes(TAG_BYTES)

    def encode(self) -> bytes:
        return bytes([self.kind]) + len(self.body).to_bytes(2, "big") + self.body + self.tag

    @classmethod
    def decode(cls, raw: bytes) -> "InitMessage":
        if len(raw) < HEADER_BYTES + TAG_BYTES:
            raise MalformedMessage(f"init message too short ({len(raw)} bytes)")
        try:
            kind = Kind(raw[0])
        except ValueError:
            raise MalformedMessage(f"unknown init message kind {raw[0]}") from None
        length = int.from_bytes(raw[1:3], "big")
        if len(raw) != HEADER_BYTES + length + TAG_BYTES:
            raise MalformedMessage("init message length field does not match its size")
        return cls(kind, raw[3:3 + length], raw[3 + length:])


@dataclass(frozen=True)
class InitResult:
    session_key: SessionKey
    seed: bytes = field(repr=False)


def init_error() -> InitMessage:
    # Unauthenticated by design: it is only a retry hint.
    return InitMessage(Kind.INIT_ERROR)


def l_increment(seed: bytes) -> bytes:
    """``seed`` as a 256-bit big-endian integer, plus one, modulo 2**256."""
    if len(seed) != 32:
        raise ParameterError("chain seed must be 32 bytes")
    return ((int.from_bytes(seed, "big") + 1) % (1 << 256)).to_bytes(32, "big")


def disclosed_chain_values(result: "InitResult") -> int:
    """Number of leading chain values exposed during initialization.

    The HC_MSG1 tag HMAC(K_s, l) is exactly h_0, so h_0 travels in the clear
    and must never serve as a one-time pad.
    """
    return 1


def pairwise_pad(result: "InitResult") -> bytes:
    # h_1 of the pairwise chain; h_0 is public (it is the HC_MSG1 tag)
    return hmac(result.session_key, hmac(result.session_key, result.seed))


def static_session_key(master: MasterKey, pair_secret: bytes) -> SessionKey:
    """K_s = HMAC(K_m, C); no messages exchanged."""
    return SessionKey(hmac(master, pair_secret))


def _encode_element(value: int, group: DhGroup) -> bytes:
    return value.to_bytes(group.element_bytes, "big")


def _check_public(value: int, group: DhGroup) -> None:
    if value <= 1 or value >= group.prime_p - 1:
        raise InvalidPublicValue("degenerate Diffie-Hellman public value")


class Phase(enum.Enum):
    START = "start"
    AWAIT_DH1 = "await_dh1"
    AWAIT_DH2 = "await_dh2"
    AWAIT_HC1 = "await_hc1"
    AWAIT_HC2 = "await_hc2"
    DONE = "done"
    FAILED = "failed"


class _Party:
    def __init__(self, master_key: MasterKey, group: DhGroup, rand: RandomSource,
                 timeout: float | None, clock: Callable[[], float]):
        self.master_key = master_key
        self.group = group
        self.rand = rand
        self.timeout = timeout
        self.clock = clock
        self.deadline: float | None = None
        self.keypair = None
        self.result: InitResult | None = None
        self._ks: SessionKey | None = None
        self._seed: bytes | None = None

    @property
    def completed(self) -> bool:
        return self.phase is Phase.DONE

    def _arm(self):
        if self.timeout is not None and self.deadline is None:
            self.deadline = self.clock() + self.timeout

    def _fail(self, exc_type, text):
        self.phase = Phase.FAILED
        self.result = None
        raise exc_type(text, reply=init_error())

    def _expect(self, msg: InitMessage, kind: Kind):
        if self.phase in (Phase.DONE, Phase.FAILED) and msg.kind is not Kind.INIT_ERROR:
            raise ProtocolViolation(f"{msg.kind.name} received in terminal phase {self.phase.value}")
        if self.deadline is not None and self.clock() > self.deadline:
            self.phase = Phase.FAILED
            raise InitFailure("initialization timed out")
        if msg.kind is Kind.INIT_ERROR:
            self.phase = Phase.FAILED
            self.result = None
            raise InitFailure("peer reported an initialization error")
        if msg.kind is not kind:
            self._fail(ProtocolViolation, f"expected {kind.name}, got {msg.kind.name}")

    def _verify(self, key, data: bytes, tag: bytes, what: str):
        if not tags_equal(hmac(key, data), tag):
            self._fail(AuthenticationFailed, f"{what} tag verification failed")

    def _decode(self, incoming) -> InitMessage:
        if isinstance(incoming, InitMessage):
            return incoming
        try:
            return InitMessage.decode(incoming)
        except MalformedMessage as exc:
            self._fail(MalformedMessage, str(exc))

    def _derive(self, shared: int) -> SessionKey:
        try:
            return derive_session_key(shared, self.group)
        except InitFailure:
            self.phase = Phase.FAILED
            raise

    def _public_from(self, msg: InitMessage, what: str) -> int:
        self._verify(self.master_key, msg.body, msg.tag, what)
        value = int.from_bytes(msg.body, "big")
        try:
            _check_public(value, self.group)
        except InvalidPublicValue:
            self.phase = Phase.FAILED
            raise
        return value


class Initiator(_Party):
    """Tx side: sends DH_MSG1 and HC_MSG1, verifies DH_MSG2 and HC_MSG2."""

    def __init__(self, master_key: MasterKey, group: DhGroup, rand: RandomSource = os.urandom,
                 timeout: float | None = DEFAULT_TIMEOUT, clock=time.monotonic):
        super().__init__(master_key, group, rand, timeout, clock)
        self.phase = Phase.START

    def start(self) -> InitMessage:
        if self.phase is not Phase.START:
            raise ProtocolViolation("initiator already started")
        self._arm()
        self.keypair = dh_keypair(self.group, self.rand)
        body = _encode_element(self.keypair.public_value, self.group)
        self.phase = Phase.AWAIT_DH2
        return InitMessage(Kind.DH_MSG1, body, hmac(self.master_key, body))

    def step(self, incoming: InitMessage | bytes | None = None):
        """Advance on ``incoming``; returns ``(outgoing, result)``."""
        if incoming is None:
            return self.start(), None
        incoming = self._decode(incoming)
        if self.phase is Phase.AWAIT_DH2:
            self._expect(incoming, Kind.DH_MSG2)
            b_pub = self._public_from(incoming, "DH_MSG2")
            shared = mod_exp(b_pub, self.keypair.private_exponent, self.group.prime_p)
            self._ks = self._derive(shared)
            self._seed = random_bytes(32, self.rand)
            body = otp_xor(self._seed, self._ks.data)
            self.phase = Phase.AWAIT_HC2
            return InitMessage(Kind.HC_MSG1, body, hmac(self._ks, self._seed)), None
        if self.phase is Phase.AWAIT_HC2:
            self._expect(incoming, Kind.HC_MSG2)
            if incoming.body:
                self._fail(AuthenticationFailed, "HC_MSG2 must have an empty body")
            self._verify(self._ks, l_increment(self._seed), incoming.tag, "HC_MSG2")
            self.phase = Phase.DONE
            self.result = InitResult(self._ks, self._seed)
            return None, self.result
        if self.phase is Phase.START:
            raise ProtocolViolation("initiator must be started before receiving messages")
        self._expect(incoming, Kind.INIT_ERROR)
        raise ProtocolViolation("unexpected message")


class Responder(_Party):
    """Rx side: verifies DH_MSG1 and HC_MSG1, answers with DH_MSG2 and HC_MSG2."""

    def __init__(self, master_key: MasterKey, group: DhGroup, rand: RandomSource = os.urandom,
                 timeout: float | None = DEFAULT_TIMEOUT, clock=time.monotonic):
        super().__init__(master_key, group, rand, timeout, clock)
        self.phase = Phase.AWAIT_DH1

    def step(self, incoming: InitMessage | bytes):
        self._arm()
        incoming = self._decode(incoming)
        if self.phase is Phase.AWAIT_DH1:
            self._expect(incoming, Kind.DH_MSG1)
            a_pub = self._public_from(incoming, "DH_MSG1")
            self.keypair = dh_keypair(self.group, self.rand)
            shared = mod_exp(a_pub, self.keypair.private_exponent, self.group.prime_p)
            self._ks = self._derive(shared)
            body = _encode_element(self.keypair.public_value, self.group)
            self.phase = Phase.AWAIT_HC1
            return InitMessage(Kind.DH_MSG2, body, hmac(self.master_key, body)), None
        if self.phase is Phase.AWAIT_HC1:
            self._expect(incoming, Kind.HC_MSG1)
            if len(incoming.body) != KEY_BYTES:
                self._fail(AuthenticationFailed, "HC_MSG1 body has the wrong length")
            seed = otp_xor(incoming.body, self._ks.data)
            self._verify(self._ks, seed, incoming.tag, "HC_MSG1")
            self._seed = seed
            self.phase = Phase.DONE
            self.result = InitResult(self._ks, seed)
            return InitMessage(Kind.HC_MSG2, b"", hmac(self._ks, l_increment(seed))), self.result
        # DONE accepts a late INIT_ERROR (initiator rejected HC_MSG2); anything else is a violation
        self._expect(incoming, Kind.INIT_ERROR)
        raise ProtocolViolation("unexpected message")


@dataclass
class InitRun:
    initiator: Initiator
    responder: Responder
    transcript: list[bytes]
    error: Exception | None = None

    @property
    def completed(self) -> bool:
        return self.initiator.completed and self.responder.completed


def run_p2p(master_key: MasterKey, group: DhGroup, *, rand: RandomSource = os.urandom,
            tamper: Callable[[Kind, bytes], bytes] | None = None,
            responder_key: MasterKey | None = None) -> InitRun:
    """Drive an in-memory initiator/responder exchange.

    ``tamper`` sees every encoded message in flight and may rewrite it.
    Failures are captured in ``InitRun.error``; INIT_ERROR replies are
    delivered to the other party.
    """
    init = Initiator(master_key, group, rand, timeout=None)
    resp = Responder(responder_key or master_key, group, rand, timeout=None)
    transcript: list[bytes] = []

    def wire(msg: InitMessage) -> bytes:
        raw = msg.encode()
        if tamper is not None:
            raw = tamper(msg.kind, raw)
        transcript.append(raw)
        return raw

    parties = (init, resp)
    outgoing, _ = init.step(None)
    turn = 1  # index of the receiving party
    error = None
    while outgoing is not None:
        receiver = parties[turn]
        try:
            outgoing, _ = receiver.step(wire(outgoing))
        except AuthenticationFailed as exc:
            error = exc
            other = parties[1 - turn]
            if exc.reply is not None and other.phase is not Phase.FAILED:
                try:
                    other.step(exc.reply)
                except InitFailure:
                    pass
            receiver.phase = Phase.FAILED
            break
        except InitFailure as exc:
            error = exc
            break
        turn = 1 - turn
    return InitRun(init, resp, transcript, error)


class GroupCoordinator:
    """Designated member: pairwise-initializes every member, then distributes
    a group key ``K_g`` and chain seed ``l``."""

    def __init__(self, member_ids, master_key: MasterKey, group: DhGroup,
                 rand: RandomSource = os.urandom, timeout: float | None = DEFAULT_TIMEOUT):
        self.member_ids = list(member_ids)
        self.rand = rand
        self.pairwise = {m: Initiator(master_key, group, rand, timeout) for m in self.member_ids}
        self.pairwise_sessions: dict[int, SessionKey] = {}
        self.group_key = SessionKey(random_bytes(KEY_BYTES, rand))
        self.seed = random_bytes(32, rand)
        self.delivered: set[int] = set()
        self.failed = False
        self.result: InitResult | None = None
        if not self.member_ids:
            self.result = InitResult(self.group_key, self.seed)

    @property
    def completed(self) -> bool:
        return self.result is not None

    def start(self) -> list[tuple[int, InitMessage]]:
        return [(m, p.start()) for m, p in self.pairwise.items()]

    def _abort(self, exc_type, text):
        self.failed = True
        self.result = None
        raise exc_type(text, reply=[(m, init_error()) for m in self.member_ids])

    def receive(self, member_id: int, msg: InitMessage) -> list[tuple[int, InitMessage]]:
        if self.failed:
            raise ProtocolViolation("group initialization already aborted")
        if msg.kind is Kind.INIT_ERROR:
            self._abort(AuthenticationFailed, f"member {member_id} reported an initialization error")
        try:
            out, result = self.pairwise[member_id].step(msg)
        except KeyError:
            raise ProtocolViolation(f"unknown member {member_id}") from None
        except InitFailure as exc:
            self._abort(AuthenticationFailed, f"pairwise init with member {member_id} failed: {exc}")
        if result is None:
            return [(member_id, out)]
        self.pairwise_sessions[member_id] = result.session_key
        pad = pairwise_pad(result)
        key_msg = InitMessage(Kind.GROUP_KEY, otp_xor(self.group_key.data, pad),
                              hmac(result.session_key, self.group_key.data))
        seed_msg = InitMessage(Kind.GROUP_SEED, otp_xor(self.seed, self.group_key.data),
                               hmac(self.group_key, self.seed))
        self.delivered.add(member_id)
        if self.delivered == set(self.member_ids):
            self.result = InitResult(self.group_key, self.seed)
        return [(member_id, key_msg), (member_id, seed_msg)]


class GroupMember:
    """Non-coordinator member: responder for the pairwise run, then
    receiver of the group key and seed."""

    def __init__(self, member_id: int, master_key: MasterKey, group: DhGroup,
                 rand: RandomSource = os.urandom, timeout: float | None = DEFAULT_TIMEOUT):
        self.member_id = member_id
        self.responder = Responder(master_key, group, rand, timeout)
        self.pairwise_session: SessionKey | None = None
        self._pad: bytes | None = None
        self.group_key: SessionKey | None = None
        self.failed = False
        self.result: InitResult | None = None

    @property
    def completed(self) -> bool:
        return self.result is not None

    def _fail(self, text):
        self.failed = True
        self.result = None
        raise AuthenticationFailed(text, reply=[init_error()])

    def receive(self, msg: InitMessage | bytes) -> list[InitMessage]:
        if self.failed:
            raise ProtocolViolation("member already failed")
        if not isinstance(msg, InitMessage):
            try:
                msg = InitMessage.decode(msg)
            except MalformedMessage as exc:
                self._fail(str(exc))
        if msg.kind is Kind.INIT_ERROR:
            self.failed = True
            self.result = None
            raise InitFailure("coordinator aborted group initialization")
        if self.pairwise_session is None:
            try:
                out, result = self.responder.step(msg)
            except AuthenticationFailed as exc:
                self.failed = True
                raise AuthenticationFailed(str(exc), reply=[init_error()]) from exc
            except InitFailure:
                self.failed = True
                raise
            if result is not None:
                self.pairwise_session = result.session_key
                self._pad = pairwise_pad(result)
            return [out]
        if msg.kind is Kind.GROUP_KEY and self.group_key is None:
            if len(msg.body) != KEY_BYTES:
                self._fail("GROUP_KEY body has the wrong length")
            candidate = otp_xor(msg.body, self._pad)
            if not tags_equal(hmac(self.pairwise_session, candidate), msg.tag):
                self._fail("GROUP_KEY tag verification failed")
            self.group_key = SessionKey(candidate)
            return []
        if msg.kind is Kind.GROUP_SEED and self.group_key is not None and self.result is None:
            if len(msg.body) != 32:
                self._fail("GROUP_SEED body has the wrong length")
            seed = otp_xor(msg.body, self.group_key.data)
            if not tags_equal(hmac(self.group_key, seed), msg.tag):
                self._fail("GROUP_SEED tag verification failed")
            self.result = InitResult(self.group_key, seed)
            return []
        self.failed = True
        raise ProtocolViolation(f"unexpected {msg.kind.name} for member {self.member_id}",
                                reply=[init_error()])


@dataclass
class GroupRun:
    coordinator: GroupCoordinator
    members: dict[int, GroupMember]
    errors: list[Exception]

    @property
    def completed(self) -> bool:
        return self.coordinator.completed and all(m.completed for m in self.members.values())


def run_group(n_members: int, master_key: MasterKey, group: DhGroup, *,
              rand: RandomSource = os.urandom,
              tamper: Callable[[int, Kind, bytes], bytes] | None = None) -> GroupRun:
    """In-memory group initialization with ``n_members`` total (coordinator included).

    ``tamper(member_id, kind, raw)`` may rewrite coordinator-to-member traffic.
    """
    ids = list(range(1, n_members))
    coord = GroupCoordinator(ids, master_key, group, rand, timeout=None)
    members = {m: GroupMember(m, master_key, group, rand, timeout=None) for m in ids}
    errors: list[Exception] = []
    queue = [("to_member", m, msg) for m, msg in coord.start()]
    while queue:
        direction, m, msg = queue.pop(0)
        if direction == "to_member":
            raw = msg.encode()
            if tamper is not None:
                raw = tamper(m, msg.kind, raw)
            member = members[m]
            if member.failed:
                continue
            try:
                replies = member.receive(raw)
            except AuthenticationFailed as exc:
                errors.append(exc)
                replies = exc.reply or []
            except InitFailure as exc:
                errors.append(exc)
                replies = []
            queue.extend(("to_coord", m, r) for r in replies)
        else:
            if coord.failed:
                continue
            try:
                out = coord.receive(m, msg)
            except AuthenticationFailed as exc:
                errors.append(exc)
                out = exc.reply or []
            queue.extend(("to_member", dst, o) for dst, o in out)
    return GroupRun(coord, members, errors)


# -- TCP drivers -----------------------------------------------------------

def _tcp_exchange(sock: socket.socket, msg: InitMessage | None) -> InitMessage:
    if msg is not None:
        send_packet(sock, msg.encode())
    return InitMessage.decode(recv_packet(sock))


def _run_party_over(sock: socket.socket, party, first: InitMessage | None) -> InitResult:
    outgoing = first
    try:
        while True:
            incoming = _tcp_exchange(sock, outgoing)
            outgoing, result = party.step(incoming)
            if result is not None:
                if outgoing is not None:
                    send_packet(sock, outgoing.encode())
                return result
    except AuthenticationFailed as exc:
        if exc.reply is not None:
            try:
                send_packet(sock, exc.reply.encode())
            except OSError:
                pass
        raise
    except socket.timeout:
        party.phase = Phase.FAILED
        raise InitFailure("initialization timed out") from None
    except ConnectionError as exc:
        party.phase = Phase.FAILED
        raise InitFailure(f"connection lost: {exc}") from None


def dial_initiator(address: tuple[str, int], master_key: MasterKey, group: DhGroup, *,
                   timeout: float = DEFAULT_TIMEOUT, rand: RandomSource = os.urandom) -> InitResult:
    party = Initiator(master_key, group, rand, timeout)
    with socket.create_connection(address, timeout=timeout) as sock:
        sock.settimeout(timeout)
        return _run_party_over(sock, party, party.start())


def serve_responder(listener: socket.socket, master_key: MasterKey, group: DhGroup, *,
                    timeout: float = DEFAULT_TIMEOUT, rand: RandomSource = os.urandom) -> InitResult:
    """Accept one connection on ``listener`` and run the responder side."""
    listener.settimeout(timeout)
    try:
        conn, _ = listener.accept()
    except socket.timeout:
        raise InitFailure("no initiator connected before the timeout") from None
    with conn:
        conn.settimeout(timeout)
        party = Responder(master_key, group, rand, timeout)
        result = _run_party_over(conn, party, None)
        # wait briefly for a late INIT_ERROR; a clean close means success
        try:
            conn.settimeout(min(timeout, 1.0))
            late = InitMessage.decode(recv_packet(conn))
            party.step(late)
        except (ConnectionError, socket.timeout, OSError):
            pass
        return result


def serve_group_coordinator(listener: socket.socket, n_members: int, master_key: MasterKey,
                            group: DhGroup, *, timeout: float = DEFAULT_TIMEOUT,
                            rand: RandomSource = os.urandom) -> InitResult:
    """Accept ``n_members`` member connections, then run the group distribution.

    Members are numbered 1..n in connection order.  Any failure sends
    INIT_ERROR to every connected member and raises.
    """
    listener.settimeout(timeout)
    conns: dict[int, socket.socket] = {}
    try:
        for member_id in range(1, n_members + 1):
            try:
                conns[member_id], _ = listener.accept()
            except socket.timeout:
                raise InitFailure(f"only {len(conns)} of {n_members} members connected") from None
            conns[member_id].settimeout(timeout)
        coord = GroupCoordinator(list(conns), master_key, group, rand, timeout)
        pending = coord.start()
        try:
            for member_id, conn in conns.items():
                outgoing = [msg for m, msg in pending if m == member_id]
                while member_id not in coord.delivered:
                    for msg in outgoing:
                        send_packet(conn, msg.encode())
                    incoming = InitMessage.decode(recv_packet(conn))
                    outgoing = [msg for _, msg in coord.receive(member_id, incoming)]
                for msg in outgoing:
                    send_packet(conn, msg.encode())
        except (MalformedMessage, socket.timeout, ConnectionError) as exc:
            coord.failed = True
            for conn in conns.values():
                try:
                    send_packet(conn, init_error().encode())
                except OSError:
                    pass
            raise InitFailure(f"group initialization failed: {exc}") from None
        except AuthenticationFailed as exc:
            for member_id, msg in exc.reply or []:
                try:
                    send_packet(conns[member_id], msg.encode())
                except OSError:
                    pass
            raise
        return coord.result
    finally:
        for conn in conns.values():
            conn.close()


def dial_group_member(address: tuple[str, int], master_key: MasterKey, group: DhGroup, *,
                      member_id: int = 1, timeout: float = DEFAULT_TIMEOUT,
                      rand: RandomSource = os.urandom) -> InitResult:
    member = GroupMember(member_id, master_key, group, rand, timeout)
    with socket.create_connection(address, timeout=timeout) as sock:
        sock.settimeout(timeout)
        try:
            while not member.completed:
                for reply in member.receive(recv_packet(sock)):
                    send_packet(sock, reply.encode())
        except AuthenticationFailed as exc:
            for reply in exc.reply or []:
                try:
                    send_packet(sock, reply.encode())
                except OSError:
                    pass
            raise
        except (socket.timeout, ConnectionError) as exc:
            member.failed = True
            raise InitFailure(f"group initialization failed: {exc}") from None
    return member.result
