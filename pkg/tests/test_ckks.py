import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ambfhe.ckks import (CkksContext, CkksError, MissingKeyError, ciphertext_to_bytes, count_ops,
                         preset)

slots8 = arrays(np.float64, 8, elements=st.floats(-1, 1))


# -- keygen -------------------------------------------------------------------------


@pytest.mark.parametrize("name,slots", [("PN12QP109", 2048), ("PN13QP218", 4096)])
def test_keygen_slot_count(name, slots):
    ctx = CkksContext(preset(name))
    sk, pk, evk = ctx.keygen([], rng=np.random.default_rng(0))
    ct = ctx.encrypt(pk, ctx.encode([1.0]), rng=np.random.default_rng(1))
    assert ct.slot_count == slots == ctx.params.slot_count
    assert sk.coeffs.shape == (2 * slots,)
    assert set(np.unique(sk.coeffs)) <= {-1, 0, 1}


def test_galois_keys_cover_exactly_requested_steps():
    ctx = CkksContext(preset("TOY16"))
    _, _, evk = ctx.keygen({1, 2, 4}, rng=np.random.default_rng(0))
    assert len(evk.galois_keys) == 3
    assert evk.rotation_steps == {1, 2, 4}


@pytest.mark.parametrize("bad", [0, 8, -1])
def test_keygen_rejects_out_of_range_steps(bad):
    with pytest.raises(CkksError):
        CkksContext(preset("TOY16")).keygen([bad])


# -- encoding ----------------------------------------------------------------------


def test_encode_zero_is_zero_polynomial(toy):
    pt = toy.ctx.encode(np.zeros(8))
    assert not pt.poly.any()


def test_encode_decode_worked_example(toy):
    v = np.array([1.0, -0.5, 0.25, -0.125, 0.0625, 0.5, -1.0, 0.75])
    assert np.abs(toy.ctx.decode(toy.ctx.encode(v)) - v).max() < 1e-6


def test_encode_preserves_slot_order(toy):
    e3 = np.eye(8)[3]
    np.testing.assert_allclose(toy.ctx.decode(toy.ctx.encode(e3)), e3, atol=1e-9)


def test_encode_errors(toy):
    with pytest.raises(CkksError):
        toy.ctx.encode(np.zeros(9))
    with pytest.raises(CkksError):
        toy.ctx.encode([np.nan])
    with pytest.raises(CkksError):
        toy.ctx.encode([1.0], level=7)


@settings(deadline=None, max_examples=50)
@given(slots8)
def test_decode_encode_relative_error(v):
    ctx = CkksContext(preset("TOY16"))
    out = ctx.decode(ctx.encode(v))
    assert np.abs(out - v).max() <= 2.0 ** -20 * max(1.0, np.abs(v).max())


def test_decode_encode_full_ring_pn12():
    ctx = CkksContext(preset("PN12QP109"))
    v = np.random.default_rng(5).uniform(-1, 1, 2048)
    assert np.abs(ctx.decode(ctx.encode(v)) - v).max() < 2.0 ** -20


# -- encryption --------------------------------------------------------------------


def test_encryption_is_probabilistic(toy):
    pt = toy.ctx.encode([0.5, 0.25])
    a = toy.ctx.encrypt(toy.pk, pt)
    b = toy.ctx.encrypt(toy.pk, pt)
    assert ciphertext_to_bytes(a) != ciphertext_to_bytes(b)
    for ct in (a, b):
        assert np.abs(toy.dec(ct)[:2] - [0.5, 0.25]).max() < 1e-6


def test_encrypt_zero(toy):
    assert np.abs(toy.dec(toy.enc(np.zeros(8)))).max() < 1e-6


def test_roundtrip_random(toy):
    v = toy.rng.uniform(-1, 1, 8)
    assert np.abs(toy.dec(toy.enc(v)) - v).max() < 1e-4


def test_decrypt_rejects_three_parts(toy):
    a = toy.enc([1.0])
    with pytest.raises(CkksError):
        toy.ctx.decrypt(toy.sk, toy.ctx.tensor(a, a))


# -- add family -----------------------------------------------------------------------


def test_add_oracle_identity_and_symmetry(toy):
    u, v = toy.rng.uniform(-1, 1, (2, 8))
    cu, cv = toy.enc(u), toy.enc(v)
    assert np.abs(toy.dec(toy.ctx.add(cu, cv)) - (u + v)).max() < 1e-4
    assert np.abs(toy.dec(toy.ctx.add(cu, toy.enc(np.zeros(8)))) - u).max() < 1e-4
    np.testing.assert_allclose(toy.dec(toy.ctx.add(cu, cv)), toy.dec(toy.ctx.add(cv, cu)), atol=1e-9)


def test_add_plain_sub_negate(toy):
    v = toy.rng.uniform(-1, 1, 8)
    cv = toy.enc(v)
    assert np.abs(toy.dec(toy.ctx.add_plain(cv, toy.ctx.encode(np.zeros(8)))) - v).max() < 1e-4
    assert np.abs(toy.dec(toy.ctx.sub(cv, cv))).max() < 1e-9
    assert np.abs(toy.dec(toy.ctx.negate(cv)) + v).max() < 1e-4


def test_add_rejects_mismatched_operands(toy):
    a = toy.enc([1.0])
    with pytest.raises(CkksError):
        toy.ctx.add(a, toy.ctx.drop_level(a, 1))
    with pytest.raises(CkksError):
        toy.ctx.add(a, toy.ctx.encrypt(toy.pk, toy.ctx.encode([1.0], scale=2.0 ** 30)))


# -- multiplication -----------------------------------------------------------------


def test_mul_oracle(toy):
    u, v = toy.rng.uniform(-1, 1, (2, 8))
    out = toy.ctx.mul(toy.enc(u), toy.enc(v), toy.evk)
    assert np.abs(toy.dec(out) - u * v).max() < 1e-4


def test_mul_identity_and_annihilator(toy):
    u = toy.rng.uniform(-1, 1, 8)
    cu = toy.enc(u)
    assert np.abs(toy.dec(toy.ctx.mul(cu, toy.enc(np.ones(8)), toy.evk)) - u).max() < 1e-4
    assert np.abs(toy.dec(toy.ctx.mul(cu, toy.enc(np.zeros(8)), toy.evk))).max() < 1e-4


def test_mul_plain(toy):
    u, v = toy.rng.uniform(-1, 1, (2, 8))
    out = toy.ctx.mul_plain(toy.enc(u), toy.ctx.encode(v))
    assert np.abs(toy.dec(out) - u * v).max() < 1e-4


def test_mul_bookkeeping(toy):
    a, b = toy.enc([0.5]), toy.enc([0.5])
    q_top = toy.params.modulus_chain[a.level]
    out = toy.ctx.mul(a, b, toy.evk)
    assert out.level == a.level - 1 and out.size == 2
    assert out.scale == a.scale * b.scale / q_top
    t = toy.ctx.tensor(a, b)
    assert t.size == 3 and t.level == a.level and t.scale == a.scale * b.scale
    r = toy.ctx.relinearize(t, toy.evk)
    assert r.size == 2 and r.level == a.level and r.scale == t.scale
    s = toy.ctx.rescale(r)
    assert s.level == a.level - 1 and s.scale == t.scale / q_top


def test_mul_errors(toy):
    a = toy.enc([1.0])
    low = toy.ctx.drop_level(a, 0)
    with pytest.raises(CkksError):
        toy.ctx.mul(low, low, toy.evk)
    from ambfhe.ckks import EvaluationKeys
    with pytest.raises(MissingKeyError):
        toy.ctx.mul(a, a, EvaluationKeys(None, {}))


def test_mul_counts_once(toy):
    a = toy.enc([1.0])
    with count_ops() as ops:
        toy.ctx.mul(a, a, toy.evk)
    assert ops["mul"] == 1 and ops["relinearize"] == 0 and ops["rescale"] == 0


def test_two_levels_of_multiplication(toy):
    u = toy.rng.uniform(-1, 1, 8)
    c = toy.enc(u)
    c2 = toy.ctx.mul(c, c, toy.evk)
    c4 = toy.ctx.mul(c2, c2, toy.evk)
    assert c4.level == 0
    assert np.abs(toy.dec(c4) - u ** 4).max() < 1e-3


# -- rotation ---------------------------------------------------------------------------


def test_rotate_examples(toy):
    v = np.array([1, 2, 3, 4, 0, 0, 0, 0], dtype=float)
    c = toy.enc(v)
    assert toy.ctx.rotate(c, 0, toy.evk) is c
    assert np.abs(toy.dec(toy.ctx.rotate(c, 1, toy.evk)) - [2, 3, 4, 0, 0, 0, 0, 1]).max() < 1e-4
    for k in range(1, 8):
        back = toy.ctx.rotate(toy.ctx.rotate(c, k, toy.evk), 8 - k, toy.evk)
        assert np.abs(toy.dec(back) - v).max() < 1e-4


def test_rotate_missing_key():
    ctx = CkksContext(preset("TOY16"))
    rng = np.random.default_rng(0)
    sk, pk, evk = ctx.keygen({1}, rng=rng)
    c = ctx.encrypt(pk, ctx.encode([1.0]), rng=rng)
    with pytest.raises(MissingKeyError):
        ctx.rotate(c, 2, evk)


def test_rotate_preserves_level_scale_and_multiset(toy):
    v = toy.rng.uniform(-1, 1, 8)
    c = toy.enc(v)
    r = toy.ctx.rotate(c, 3, toy.evk)
    assert (r.level, r.scale) == (c.level, c.scale)
    np.testing.assert_allclose(np.sort(toy.dec(r)), np.sort(v), atol=1e-4)


def test_rotate_after_rescale(toy):
    v = toy.rng.uniform(-1, 1, 8)
    c = toy.ctx.mul(toy.enc(v), toy.enc(np.ones(8)), toy.evk)
    assert np.abs(toy.dec(toy.ctx.rotate(c, 5, toy.evk)) - np.roll(v, -5)).max() < 1e-4


# -- property tests on the toy ring ------------------------------------------------------


@settings(deadline=None, max_examples=25)
@given(slots8, slots8, st.integers(0, 7))
def test_homomorphism_properties_toy(u, v, k):
    ctx = CkksContext(preset("TOY16"))
    rng = np.random.default_rng(11)
    sk, pk, evk = ctx.keygen(range(1, 8), rng=rng)
    cu = ctx.encrypt(pk, ctx.encode(u), rng=rng)
    cv = ctx.encrypt(pk, ctx.encode(v), rng=rng)
    assert np.abs(ctx.decrypt_values(sk, ctx.add(cu, cv)) - (u + v)).max() < 1e-4
    assert np.abs(ctx.decrypt_values(sk, ctx.mul(cu, cv, evk)) - u * v).max() < 1e-4
    assert np.abs(ctx.decrypt_values(sk, ctx.rotate(cu, k, evk)) - np.roll(u, -k)).max() < 1e-4


# -- default parameter sets ----------------------------------------------------------------


@pytest.mark.parametrize("keys", ["pn12", "pn13"])
def test_homomorphism_default_presets(keys, request):
    ks = request.getfixturevalue(keys)
    n = ks.params.slot_count
    u, v = ks.rng.uniform(-1, 1, (2, n))
    cu, cv = ks.enc(u), ks.enc(v)
    assert np.abs(ks.dec(ks.ctx.add(cu, cv)) - (u + v)).max() < 1e-4
    assert np.abs(ks.dec(ks.ctx.mul(cu, cv, ks.evk)) - u * v).max() < 1e-3
    r = ks.ctx.rotate(cu, 1, ks.evk)
    assert np.abs(ks.dec(r) - np.roll(u, -1)).max() < 1e-4


def test_ciphertexts_are_immutable(toy):
    c = toy.enc([1.0])
    with pytest.raises(ValueError):
        c.parts[0, 0, 0] = 1
    with pytest.raises(AttributeError):
        c.level = 0
