import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from ambfhe.ckks import CkksContext, CkksError, MissingKeyError, count_ops, preset
from ambfhe.linops import (PackedLayout, accumulate_score, block_align, inner_product, rotation_steps_for,
                           slot_sum, sum_steps)


def test_layout():
    lay = PackedLayout(512, 2, 2048)
    assert lay.fused_len == 1024
    assert lay.block(2) == slice(512, 1024)
    with pytest.raises(ValueError):
        lay.block(3)
    with pytest.raises(ValueError):
        PackedLayout(512, 5, 2048)
    assert rotation_steps_for(lay) == {1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024}
    assert sum_steps(8) == [1, 2, 4]


def test_inner_product_worked_example(toy):
    a = toy.enc([1, 2, 3, 4])
    b = toy.enc([4, 3, 2, 1])
    out = toy.dec(inner_product(toy.ctx, a, b, toy.evk))
    assert np.abs(out - 20).max() < 1e-3


def test_inner_product_zero_and_basis(toy):
    v = toy.rng.uniform(-1, 1, 8)
    z = toy.dec(inner_product(toy.ctx, toy.enc(v), toy.enc(np.zeros(8)), toy.evk))
    assert np.abs(z).max() < 1e-4
    e0 = toy.dec(inner_product(toy.ctx, toy.enc(v), toy.enc(np.eye(8)[0]), toy.evk))
    assert np.abs(e0 - v[0]).max() < 1e-4


def test_inner_product_op_count(toy):
    a = toy.enc([1.0])
    with count_ops() as ops:
        inner_product(toy.ctx, a, a, toy.evk)
    assert ops["mul"] == 1
    assert ops["rotate"] == 3 == int(np.log2(toy.params.slot_count))


def test_inner_product_missing_key():
    ctx = CkksContext(preset("TOY16"))
    rng = np.random.default_rng(0)
    sk, pk, evk = ctx.keygen({1, 2}, rng=rng)
    a = ctx.encrypt(pk, ctx.encode([1.0]), rng=rng)
    with pytest.raises(MissingKeyError):
        inner_product(ctx, a, a, evk)


def test_slot_sum(toy):
    v = toy.rng.uniform(-1, 1, 8)
    assert np.abs(toy.dec(slot_sum(toy.ctx, toy.enc(v), toy.evk)) - v.sum()).max() < 1e-4


def test_block_align_examples(toy):
    lay = PackedLayout(4, 2, 8)
    v = np.arange(1, 9, dtype=float)
    c = toy.enc(v)
    assert block_align(toy.ctx, c, 1, lay, toy.evk) is c
    out = toy.dec(block_align(toy.ctx, c, 2, lay, toy.evk))
    assert np.abs(out[:4] - [5, 6, 7, 8]).max() < 1e-4


def test_cross_block_isolation(toy):
    # block 2 of the reference must not leak into the stage-1 score
    lay = PackedLayout(4, 2, 8)
    ref = np.r_[0.5, -0.5, 0.5, -0.5, 9, 9, 9, 9] / 4
    probe = np.r_[1, 1, 1, 1, 0, 0, 0, 0]
    s1 = toy.dec(inner_product(toy.ctx, toy.enc(ref), toy.enc(probe), toy.evk))
    assert np.abs(s1).max() < 1e-4
    aligned = block_align(toy.ctx, toy.enc(ref), 2, lay, toy.evk)
    s2 = toy.dec(inner_product(toy.ctx, aligned, toy.enc(probe), toy.evk))
    assert np.abs(s2 - 9).max() < 1e-3


def test_accumulate_score(toy):
    ip = inner_product(toy.ctx, toy.enc(np.full(8, 0.5)), toy.enc(np.ones(8)), toy.evk)
    assert accumulate_score(toy.ctx, None, ip) is ip
    # a fresh top-level ciphertext at the product scale is dropped to the lower level
    fresh = toy.enc(np.full(8, 0.25), scale=ip.scale)
    tot = accumulate_score(toy.ctx, fresh, ip)
    assert tot.level == ip.level < fresh.level
    assert np.abs(toy.dec(tot) - 4.25).max() < 1e-3


def test_accumulate_rejects_incompatible_scales(toy):
    a = toy.enc([1.0])
    b = toy.enc([1.0], scale=2.0 ** 30)
    with pytest.raises(CkksError):
        accumulate_score(toy.ctx, a, b)


@settings(deadline=None, max_examples=25)
@given(arrays(np.float64, 8, elements=st.floats(-1, 1)), arrays(np.float64, 8, elements=st.floats(-1, 1)))
def test_inner_product_matches_numpy(u, v):
    ctx = CkksContext(preset("TOY16"))
    rng = np.random.default_rng(3)
    sk, pk, evk = ctx.keygen(range(1, 8), rng=rng)
    ip = inner_product(ctx, ctx.encrypt(pk, ctx.encode(u), rng=rng), ctx.encrypt(pk, ctx.encode(v), rng=rng), evk)
    assert np.abs(ctx.decrypt_values(sk, ip) - float(u @ v)).max() < 1e-3


def test_inner_product_pn12_unit_templates(pn12):
    rng = np.random.default_rng(9)
    u, v = rng.normal(size=(2, 512))
    u /= np.linalg.norm(u)
    v /= np.linalg.norm(v)
    out = pn12.dec(inner_product(pn12.ctx, pn12.enc(u), pn12.enc(v), pn12.evk))
    assert abs(out[0] - u @ v) < 1e-4
    assert np.abs(out - u @ v).max() < 1e-4
