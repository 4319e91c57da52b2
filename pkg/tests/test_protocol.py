import dataclasses
import threading

import numpy as np
import pytest

from ambfhe.biometrics import FINGERPRINT, IRIS, normalize
from ambfhe.ckks import ciphertext_from_bytes, ciphertext_to_bytes
from ambfhe.fusion import Decision, MatchPolicy, plain_cascade
from ambfhe.protocol import (AuthClient, AuthServer, KeyCache, ProtocolFailure, ReferenceStore, RetryLimiter,
                             connect_tcp, serve_inproc, serve_tcp, wire)
from ambfhe.protocol.server import Session, SessionState, _Conn

D = 4


class FakeClock:
    def __init__(self):
        self.t = 0.0

    def __call__(self):
        return self.t


def _templates(rng, noise=0.0, base=None):
    if base is None:
        base = [rng.normal(size=D), rng.normal(size=D)]
    return [normalize(b + noise * rng.normal(size=D), m) for b, m in zip(base, (IRIS, FINGERPRINT))], base


def _server(toy, policy, **kw):
    return AuthServer(toy.ctx, toy.sk, toy.pk, toy.evk, policy, **kw)


def _client(server, policy, **kw):
    return AuthClient(serve_inproc(server), policy, template_len=D, rng=np.random.default_rng(0), **kw)


def _capture(templates):
    by_mod = {t.modality: t for t in templates}
    return lambda m: by_mod[m]


POLICY = MatchPolicy.named("amb-fhe-1", [0.5, 1.0])


def test_enroll_stores_decryptable_reference(toy):
    rng = np.random.default_rng(1)
    ref, _ = _templates(rng)
    server = _server(toy, POLICY)
    client = _client(server, POLICY)
    assert client.enroll("alice", ref) == wire.EnrollOk("alice")
    ct = ciphertext_from_bytes(server.store.get("alice"), toy.params)
    got = toy.dec(ct)
    want = np.concatenate([t.vector for t in ref])
    assert np.abs(got - want).max() < 1e-4


def test_identical_enrollments_give_distinct_blobs(toy):
    rng = np.random.default_rng(2)
    ref, _ = _templates(rng)
    server = _server(toy, POLICY)
    client = _client(server, POLICY)
    client.enroll("a", ref)
    client.enroll("b", ref)
    assert server.store.get("a") != server.store.get("b")


def test_enroll_errors(toy):
    rng = np.random.default_rng(3)
    ref, _ = _templates(rng)
    server = _server(toy, POLICY)
    client = _client(server, POLICY)
    with pytest.raises(ProtocolFailure) as err:
        client.enroll("a", ref[:1])
    assert err.value.code == wire.AppErrorCode.MODALITY_COUNT
    client.enroll("a", ref)
    with pytest.raises(ProtocolFailure) as err:
        client.enroll("a", ref)
    assert err.value.code == wire.AppErrorCode.DUPLICATE_SUBJECT
    client.enroll("a", ref, replace=True)
    reply = server.handle(server_conn(), wire.Enroll("b", 2, b"junk"))[0]
    assert reply.code == wire.AppErrorCode.BAD_CIPHERTEXT


def server_conn():
    return _Conn()


def test_mated_stage_one_transcript(toy):
    rng = np.random.default_rng(4)
    ref, base = _templates(rng)
    probe, _ = _templates(rng, 0.01, base)
    server = _server(toy, POLICY)
    client = _client(server, POLICY)
    client.enroll("alice", ref)
    res = client.verify("alice", _capture(probe))
    assert res.accepted and res.stages_used == 1
    kinds = [e.kind for e in res.transcript]
    assert kinds == ["VERIFY_CLAIM", "REFERENCE", "COMPUTE", "SCORE", "DECISION"]
    assert res.captures == [IRIS]
    assert res.transcript[-1].message == wire.DecisionMsg(1, wire.ACCEPT)


def test_impostor_two_stage_transcript(toy):
    rng = np.random.default_rng(5)
    ref, _ = _templates(rng)
    probe, _ = _templates(rng)
    policy = MatchPolicy.named("amb-fhe-1", [0.05, 0.1])
    assert plain_cascade(ref, probe, policy)[0] is Decision.REJECT
    server = _server(toy, policy)
    client = _client(server, policy)
    client.enroll("alice", ref)
    res = client.verify("alice", _capture(probe))
    assert not res.accepted and res.stages_used == 2
    kinds = [e.kind for e in res.transcript]
    assert kinds == ["VERIFY_CLAIM", "REFERENCE", "COMPUTE", "SCORE", "DECISION", "COMPUTE", "SCORE", "DECISION"]
    assert [e.message.stage for e in res.transcript if e.kind == "SCORE"] == [1, 2]
    assert res.captures == [IRIS, FINGERPRINT]


@pytest.mark.parametrize("seed", range(6))
def test_session_verdict_matches_plain_cascade(toy, seed):
    rng = np.random.default_rng(100 + seed)
    ref, base = _templates(rng)
    probe, _ = _templates(rng, 0.5, base)
    policy = MatchPolicy.named("amb-fhe-2", [0.6, 1.6])
    order = {t.modality: t for t in ref}
    porder = {t.modality: t for t in probe}
    decision, used, _ = plain_cascade([order[m] for m in policy.modality_order],
                                      [porder[m] for m in policy.modality_order], policy)
    server = _server(toy, policy)
    client = _client(server, policy)
    client.enroll("s", [order[m] for m in policy.modality_order])
    res = client.verify("s", _capture(probe))
    assert (res.accepted, res.stages_used) == (decision is Decision.ACCEPT, used)


def test_unconditional_session(toy):
    rng = np.random.default_rng(6)
    ref, base = _templates(rng)
    probe, _ = _templates(rng, 0.01, base)
    policy = MatchPolicy.named("multi-and", [0.5])
    server = _server(toy, policy)
    client = _client(server, policy)
    client.enroll("a", ref)
    res = client.verify("a", _capture(probe))
    assert res.accepted and res.stages_used == 1 and res.captures == [IRIS, FINGERPRINT]


def test_unknown_subject(toy):
    client = _client(_server(toy, POLICY), POLICY)
    res = client.verify("nobody", _capture([]))
    assert not res.accepted and res.error.code == wire.AppErrorCode.UNKNOWN_SUBJECT
    assert [e.kind for e in res.transcript] == ["VERIFY_CLAIM", "ERROR"]


def test_key_cache_reuses_fingerprint(toy):
    server = _server(toy, POLICY)
    cache = KeyCache()
    t = serve_inproc(server)
    client = AuthClient(t, POLICY, template_len=D, key_cache=cache)
    k1 = client.fetch_keys()
    k2 = client.fetch_keys()
    assert k1 is k2 and cache.latest == server.fingerprint
    # the second reply carries no key material
    reply = server.handle(server_conn(), wire.Keys(server.fingerprint))[0]
    assert reply.public_key == b"" and reply.eval_keys == b""


def test_retry_limiter_with_injected_clock(toy):
    clock = FakeClock()
    rng = np.random.default_rng(7)
    ref, _ = _templates(rng)
    impostor, _ = _templates(rng)
    policy = MatchPolicy.named("amb-fhe-1", [0.01, 0.02])
    server = _server(toy, policy, limiter=RetryLimiter(3, 60.0, clock))
    client = _client(server, policy)
    client.enroll("a", ref)
    for _ in range(3):
        assert not client.verify("a", _capture(impostor)).accepted
    res = client.verify("a", _capture(impostor))
    assert res.error.code == wire.AppErrorCode.THROTTLED
    clock.t = 61.0
    res = client.verify("a", _capture(impostor))
    assert res.error is None and not res.accepted


def test_retry_limiter_unit():
    clock = FakeClock()
    lim = RetryLimiter(2, 10.0, clock)
    lim.record_failure("x")
    assert not lim.blocked("x")
    clock.t = 5
    lim.record_failure("x")
    assert lim.blocked("x") and not lim.blocked("y")
    clock.t = 10.5
    assert lim.failures("x") == 1
    lim.reset("x")
    assert lim.failures("x") == 0
    with pytest.raises(ValueError):
        RetryLimiter(0)


def test_stale_stage_and_unexpected_messages(toy):
    rng = np.random.default_rng(8)
    ref, _ = _templates(rng)
    server = _server(toy, POLICY)
    _client(server, POLICY).enroll("a", ref)
    conn = server_conn()
    assert isinstance(server.handle(conn, wire.Score(1, b""))[0], wire.ErrorMsg)
    assert isinstance(server.handle(conn, wire.VerifyClaim("a"))[0], wire.Reference)
    reply = server.handle(conn, wire.Score(2, b""))[0]
    assert reply.code == wire.AppErrorCode.STALE_STAGE
    assert conn.session.state is SessionState.CLOSED
    assert server.handle(conn, wire.Reference(b""))[0].code == wire.AppErrorCode.UNEXPECTED_MESSAGE


def test_score_level_checked(toy):
    rng = np.random.default_rng(9)
    ref, _ = _templates(rng)
    server = _server(toy, POLICY)
    _client(server, POLICY).enroll("a", ref)
    conn = server_conn()
    server.handle(conn, wire.VerifyClaim("a"))
    fresh = ciphertext_to_bytes(toy.enc([1.0]))  # top level, not a product
    assert server.handle(conn, wire.Score(1, fresh))[0].code == wire.AppErrorCode.BAD_CIPHERTEXT


def test_decide_tie_is_reject(toy):
    # delta == tau exactly is not a match; tau is set from the decrypted value itself
    ct = toy.ctx.mul(toy.enc(np.full(8, 0.5)), toy.enc(np.ones(8)), toy.evk)
    s_val = toy.dec(ct)[0]
    server = _server(toy, MatchPolicy.named("amb-fhe-1", [2 - 2 * s_val, 1.0]))
    s = Session(1, "a")
    msg = server.decrypt_and_decide(s, wire.Score(1, ciphertext_to_bytes(ct)))
    assert msg.verdict == wire.REJECT and s.stage == 2
    server.policy = MatchPolicy.named("amb-fhe-1", [np.nextafter(2 - 2 * s_val, 10), 1.0])
    s = Session(2, "a")
    assert server.decrypt_and_decide(s, wire.Score(1, ciphertext_to_bytes(ct))).verdict == wire.ACCEPT


def test_bad_frame_closes_connection(toy):
    server = _server(toy, POLICY)
    t = serve_inproc(server)
    t.send_raw(b"garbage-frame")
    reply = t.recv(timeout=5)
    assert reply.code == wire.AppErrorCode.BAD_FRAME


def test_schema_carries_no_plaintext_scores():
    # every field is raw bytes, an integer, a bool or a short string: never a float or a vector
    for name, fields in wire.message_schema().items():
        for field, typ in fields.items():
            assert typ in {"bytes", "int", "str", "bool"}, (name, field, typ)


def test_transcripts_carry_only_schema_fields(toy):
    rng = np.random.default_rng(10)
    ref, _ = _templates(rng)
    probe, _ = _templates(rng)
    server = _server(toy, MatchPolicy.named("amb-fhe-1", [0.05, 0.1]))
    client = _client(server, server.policy)
    client.enroll("a", ref)
    res = client.verify("a", _capture(probe))
    for e in res.transcript:
        if e.message is None:
            continue
        for f in dataclasses.fields(e.message):
            v = getattr(e.message, f.name)
            assert isinstance(v, (bytes, int, str)) and not isinstance(v, float)


def test_tcp_and_concurrent_sessions(toy):
    rng = np.random.default_rng(11)
    server = _server(toy, POLICY)
    srv = serve_tcp(server)
    host, port = srv.server_address
    try:
        people = {}
        for k in range(4):
            ref, base = _templates(rng)
            probe, _ = _templates(rng, 0.01, base)
            people[f"p{k}"] = probe
            AuthClient(connect_tcp(host, port), POLICY, template_len=D).enroll(f"p{k}", ref)
        results = {}

        def run(name):
            c = AuthClient(connect_tcp(host, port), POLICY, template_len=D, rng=np.random.default_rng())
            results[name] = c.verify(name, _capture(people[name]))
            c.t.close()

        threads = [threading.Thread(target=run, args=(n,)) for n in people]
        for t in threads:
            t.start()
        for t in threads:
            t.join(60)
        assert all(r.accepted and r.stages_used == 1 for r in results.values())
        assert len(results) == 4
    finally:
        srv.shutdown()
        srv.server_close()


def test_persistent_store_survives_restart(toy, tmp_path):
    rng = np.random.default_rng(12)
    ref, base = _templates(rng)
    probe, _ = _templates(rng, 0.01, base)
    path = tmp_path / "refs.log"
    _client(_server(toy, POLICY, store=ReferenceStore(path)), POLICY).enroll("a", ref)
    again = _server(toy, POLICY, store=ReferenceStore(path))
    assert _client(again, POLICY).verify("a", _capture(probe)).accepted
