import hashlib
import hmac as std_hmac
import os
import random
import socket
import threading

import pytest

from acric.errors import (
    AuthenticationFailed,
    InitFailure,
    InvalidPublicValue,
    MalformedMessage,
    ProtocolViolation,
)
from acric.handshake import (
    InitMessage,
    Initiator,
    Kind,
    Phase,
    Responder,
    dial_initiator,
    disclosed_chain_values,
    l_increment,
    run_group,
    run_p2p,
    serve_responder,
    static_session_key,
)
from acric.primitives import MODP2048, TOY64_INSECURE, MasterKey, hmac

KM = MasterKey(bytes(range(32)))


def H(key, data):
    return std_hmac.new(bytes(key), data, hashlib.sha256).digest()


def test_wire_layout_bit_exact():
    msg = InitMessage(Kind.DH_MSG1, b"\x01\x02\x03", b"\xaa" * 32)
    raw = msg.encode()
    assert raw == b"\x01\x00\x03\x01\x02\x03" + b"\xaa" * 32
    assert InitMessage.decode(raw) == msg
    with pytest.raises(MalformedMessage):
        InitMessage.decode(raw[:-1])
    with pytest.raises(MalformedMessage):
        InitMessage.decode(b"\x09" + raw[1:])
    with pytest.raises(MalformedMessage):
        InitMessage.decode(b"\x01")


def test_l_increment():
    assert l_increment(bytes(32)) == bytes(31) + b"\x01"
    assert l_increment(b"\xff" * 32) == bytes(32)
    assert l_increment(bytes(31) + b"\xff") == bytes(30) + b"\x01\x00"


def test_static_session_key():
    c = os.urandom(32)
    assert static_session_key(KM, c) == static_session_key(KM, c)
    assert static_session_key(KM, c).data == H(KM, c)
    keys = {static_session_key(KM, i.to_bytes(4, "big")).data for i in range(10_000)}
    assert len(keys) == 10_000


def test_honest_run_agrees():
    run = run_p2p(KM, TOY64_INSECURE)
    assert run.error is None and run.completed
    a, b = run.initiator.result, run.responder.result
    assert a.session_key == b.session_key and a.seed == b.seed
    assert hmac(a.session_key, a.seed) == hmac(b.session_key, b.seed)
    assert [InitMessage.decode(r).kind for r in run.transcript] == [
        Kind.DH_MSG1, Kind.DH_MSG2, Kind.HC_MSG1, Kind.HC_MSG2]


def test_message_contents_follow_definitions():
    run = run_p2p(KM, TOY64_INSECURE)
    dh1, dh2, hc1, hc2 = (InitMessage.decode(r) for r in run.transcript)
    ks, seed = run.initiator.result.session_key, run.initiator.result.seed
    assert dh1.tag == H(KM, dh1.body)
    assert dh2.tag == H(KM, dh2.body)
    assert hc1.body == bytes(x ^ y for x, y in zip(seed, ks.data))
    assert hc1.tag == H(ks, seed)
    incremented = (int.from_bytes(seed, "big") + 1).to_bytes(33, "big")[-32:]
    assert hc2.body == b"" and hc2.tag == H(ks, incremented)
    # K_s is the hashed DH value
    shared = pow(int.from_bytes(dh2.body, "big"), run.initiator.keypair.private_exponent,
                 TOY64_INSECURE.prime_p)
    assert ks.data == hashlib.sha256(shared.to_bytes((shared.bit_length() + 7) // 8, "big")).digest()


def test_agreement_many_runs():
    for _ in range(100):
        run = run_p2p(KM, TOY64_INSECURE)
        assert run.completed
        assert run.initiator.result == run.responder.result


def test_flipped_bit_in_dh1_rejected():
    init = Initiator(KM, TOY64_INSECURE)
    resp = Responder(KM, TOY64_INSECURE)
    raw = bytearray(init.start().encode())
    raw[4] ^= 0x01
    with pytest.raises(AuthenticationFailed) as info:
        resp.step(bytes(raw))
    assert info.value.reply.kind is Kind.INIT_ERROR
    assert resp.phase is Phase.FAILED
    assert resp.keypair is None  # no DH_MSG2 was prepared


def test_wrong_master_key_rejected():
    run = run_p2p(KM, TOY64_INSECURE, responder_key=MasterKey(os.urandom(32)))
    assert isinstance(run.error, AuthenticationFailed)
    assert not run.initiator.completed and not run.responder.completed


@pytest.mark.parametrize("kind", [Kind.DH_MSG1, Kind.DH_MSG2, Kind.HC_MSG1, Kind.HC_MSG2])
def test_single_byte_tamper_aborts(kind):
    rng = random.Random(int(kind))
    for _ in range(40):
        def tamper(k, raw):
            if k is not kind:
                return raw
            buf = bytearray(raw)
            buf[rng.randrange(len(buf))] ^= rng.randrange(1, 256)
            return bytes(buf)

        run = run_p2p(KM, TOY64_INSECURE, tamper=tamper)
        assert isinstance(run.error, AuthenticationFailed)
        assert not run.initiator.completed and not run.responder.completed


def test_degenerate_public_value():
    resp = Responder(KM, TOY64_INSECURE)
    for value in (0, 1, TOY64_INSECURE.prime_p - 1):
        resp = Responder(KM, TOY64_INSECURE)
        body = value.to_bytes(8, "big")
        with pytest.raises(InvalidPublicValue):
            resp.step(InitMessage(Kind.DH_MSG1, body, H(KM, body)))
        assert resp.phase is Phase.FAILED


def test_out_of_order_message():
    resp = Responder(KM, TOY64_INSECURE)
    with pytest.raises(ProtocolViolation):
        resp.step(InitMessage(Kind.HC_MSG1, bytes(32), bytes(32)))
    init = Initiator(KM, TOY64_INSECURE)
    with pytest.raises(ProtocolViolation):
        init.step(InitMessage(Kind.DH_MSG2, bytes(8), bytes(32)))


def test_terminal_state_rejects_further_messages():
    run = run_p2p(KM, TOY64_INSECURE)
    with pytest.raises(ProtocolViolation):
        run.responder.step(InitMessage(Kind.DH_MSG1, bytes(8), bytes(32)))


def test_late_init_error_revokes_responder():
    run = run_p2p(KM, TOY64_INSECURE)
    with pytest.raises(InitFailure):
        run.responder.step(InitMessage(Kind.INIT_ERROR))
    assert run.responder.phase is Phase.FAILED and run.responder.result is None


def test_timeout():
    now = [0.0]
    init = Initiator(KM, TOY64_INSECURE, timeout=5.0, clock=lambda: now[0])
    resp = Responder(KM, TOY64_INSECURE, timeout=5.0, clock=lambda: now[0])
    dh2, _ = resp.step(init.start())
    now[0] = 6.0
    with pytest.raises(InitFailure, match="timed out"):
        init.step(dh2)
    assert init.phase is Phase.FAILED


def test_replayed_dh1_completes_no_session():
    old = run_p2p(KM, TOY64_INSECURE)
    dh1, _, hc1, _ = old.transcript
    resp = Responder(KM, TOY64_INSECURE)
    resp.step(dh1)  # the master-key tag is still valid, so the responder answers
    with pytest.raises(AuthenticationFailed):
        resp.step(hc1)
    assert not resp.completed


def test_transcript_does_not_leak_secrets():
    for _ in range(20):
        run = run_p2p(KM, TOY64_INSECURE)
        ks, seed = run.initiator.result.session_key.data, run.initiator.result.seed
        h0 = hmac(ks, seed)
        blob = b"".join(run.transcript)
        # h_0 is the HC_MSG1 tag itself; sessions therefore start at h_1
        assert InitMessage.decode(run.transcript[2]).tag == h0
        assert disclosed_chain_values(run.initiator.result) == 1
        h1 = hmac(ks, h0)
        for secret in (ks, seed, h1, hmac(ks, h1)):
            assert secret not in blob
        msgs = [InitMessage.decode(r) for r in run.transcript]
        big_l = msgs[2].body
        fields = [f for m in msgs for f in (m.body, m.tag) if f]
        for f in fields:
            f32 = f[:32].ljust(32, b"\x00")
            assert bytes(x ^ y for x, y in zip(big_l, f32)) != seed


def test_group_honest():
    run = run_group(4, KM, TOY64_INSECURE)
    assert run.completed and not run.errors
    results = [run.coordinator.result] + [m.result for m in run.members.values()]
    assert len({(r.session_key.data, r.seed) for r in results}) == 1


def test_group_single_member():
    run = run_group(1, KM, TOY64_INSECURE)
    assert run.completed and run.coordinator.result is not None


def test_group_tampered_key_to_one_member():
    def tamper(member, kind, raw):
        if member == 2 and kind is Kind.GROUP_KEY:
            buf = bytearray(raw)
            buf[5] ^= 0x40
            return bytes(buf)
        return raw

    run = run_group(4, KM, TOY64_INSECURE, tamper=tamper)
    assert isinstance(run.errors[0], AuthenticationFailed)
    assert run.members[2].failed
    assert run.coordinator.failed and not run.coordinator.completed
    assert not any(m.completed for m in run.members.values())


def test_group_members_unaffected_before_abort():
    from acric.handshake import GroupCoordinator, GroupMember

    coord = GroupCoordinator([1, 2], KM, TOY64_INSECURE, timeout=None)
    members = {m: GroupMember(m, KM, TOY64_INSECURE, timeout=None) for m in (1, 2)}
    pending = list(coord.start())
    while pending:
        m, msg = pending.pop(0)
        if members[m].failed:
            continue
        if m == 2 and msg.kind is Kind.GROUP_KEY:
            raw = bytearray(msg.encode())
            raw[3] ^= 1
            with pytest.raises(AuthenticationFailed):
                members[2].receive(bytes(raw))
            continue
        for reply in members[m].receive(msg):
            pending.extend(coord.receive(m, reply))
    assert members[1].completed and members[2].failed


def test_init_over_loopback_tcp():
    listener = socket.create_server(("127.0.0.1", 0))
    port = listener.getsockname()[1]
    box = {}

    def serve():
        try:
            box["resp"] = serve_responder(listener, KM, TOY64_INSECURE, timeout=5.0)
        except Exception as exc:  # surfaced by the assertion below
            box["err"] = exc

    t = threading.Thread(target=serve)
    t.start()
    result = dial_initiator(("127.0.0.1", port), KM, TOY64_INSECURE, timeout=5.0)
    t.join()
    listener.close()
    assert "err" not in box
    assert box["resp"] == result


def test_production_group_runs():
    for _ in range(3):
        run = run_p2p(KM, MODP2048)
        assert run.completed
        assert run.initiator.result == run.responder.result


def test_group_over_loopback_tcp():
    from acric.handshake import dial_group_member, serve_group_coordinator

    listener = socket.create_server(("127.0.0.1", 0))
    box = {}

    def serve():
        box["coord"] = serve_group_coordinator(listener, 3, KM, TOY64_INSECURE, timeout=5.0)

    t = threading.Thread(target=serve)
    t.start()
    results = []

    def member(i):
        results.append(dial_group_member(listener.getsockname(), KM, TOY64_INSECURE,
                                         member_id=i, timeout=5.0))

    threads = [threading.Thread(target=member, args=(i,)) for i in (1, 2, 3)]
    for th in threads:
        th.start()
    for th in threads + [t]:
        th.join()
    listener.close()
    assert len(results) == 3
    assert all(r == box["coord"] for r in results)


def test_group_member_with_wrong_key_over_tcp():
    from acric.handshake import dial_group_member, serve_group_coordinator

    listener = socket.create_server(("127.0.0.1", 0))
    box = {}

    def serve():
        try:
            serve_group_coordinator(listener, 1, KM, TOY64_INSECURE, timeout=5.0)
        except InitFailure as exc:
            box["coord"] = exc

    t = threading.Thread(target=serve)
    t.start()
    with pytest.raises(InitFailure):
        dial_group_member(listener.getsockname(), MasterKey(os.urandom(32)), TOY64_INSECURE, timeout=5.0)
    t.join()
    listener.close()
    assert isinstance(box.get("coord"), InitFailure)
