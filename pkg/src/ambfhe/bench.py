"""Microbenchmarks of the CKKS primitives and of the incremental stage-2 path."""

from __future__ import annotations

import statistics
import time
from dataclasses import dataclass, field

import numpy as np

from .ckks import CkksContext, count_ops, preset
from .fusion import ClientKeys, stage_score
from .biometrics import normalize
from .linops import PackedLayout, block_align, inner_product, rotation_steps_for

COLUMNS = ("Ecd", "Dcd", "Enc", "Dec", "Add", "Mul", "MulRelin", "Rot1", "IP_d", "IP_2d")


def median_time(fn, runs: int = 21, warmup: int = 3) -> float:
    for _ in range(warmup):
        fn()
    samples = []
    for _ in range(runs):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


@dataclass
class BenchReport:
    preset: str
    runs: int
    medians: dict  # column -> seconds
    rotation_share: float
    normalized: dict = field(default_factory=dict)

    def __post_init__(self):
        add = self.medians["Add"]
        self.normalized = {k: (1.0 if k == "Add" else v / add) for k, v in self.medians.items()}

    def to_dict(self) -> dict:
        return {"preset": self.preset, "runs": self.runs, "median_seconds": self.medians,
                "normalized_to_add": self.normalized, "rotation_share_of_ip": self.rotation_share}

    def table(self) -> str:
        lines = [f"preset {self.preset}, median of {self.runs} runs",
                 f"{'op':<10} {'median ms':>12} {'x Add':>12}"]
        for k in COLUMNS:
            if k in self.medians:
                lines.append(f"{k:<10} {self.medians[k] * 1e3:>12.4f} {self.normalized[k]:>12.1f}")
        lines.append(f"rotation share of inner product time: {self.rotation_share * 100:.1f}%")
        return "\n".join(lines)


def _setup(preset_name: str, d: int, m: int, seed: int):
    params = preset(preset_name)
    ctx = CkksContext(params)
    rng = np.random.default_rng(seed)
    layout = PackedLayout(d, m, params.slot_count)
    steps = rotation_steps_for(layout) | {1}
    sk, pk, evk = ctx.keygen(steps, rng=rng)
    return ctx, sk, pk, evk, layout, rng


def _unit(rng, n):
    v = rng.normal(size=n)
    return v / np.linalg.norm(v)


def bench_ops(preset_name: str = "PN12QP109", d: int = 512, runs: int = 21, warmup: int = 3,
              seed: int = 0) -> BenchReport:
    ctx, sk, pk, evk, layout, rng = _setup(preset_name, d, 2, seed)
    u, v = _unit(rng, 2 * d), _unit(rng, 2 * d)
    pt = ctx.encode(u)
    a = ctx.encrypt(pk, pt, rng=rng)
    b = ctx.encrypt(pk, ctx.encode(v), rng=rng)
    a_d = ctx.encrypt(pk, ctx.encode(u[:d]), rng=rng)
    b_d = ctx.encrypt(pk, ctx.encode(v[:d]), rng=rng)
    t = {
        "Ecd": median_time(lambda: ctx.encode(u), runs, warmup),
        "Dcd": median_time(lambda: ctx.decode(pt), runs, warmup),
        "Enc": median_time(lambda: ctx.encrypt(pk, pt, rng=rng), runs, warmup),
        "Dec": median_time(lambda: ctx.decrypt(sk, a), runs, warmup),
        "Add": median_time(lambda: ctx.add(a, b), runs, warmup),
        # ciphertext product alone, as reported by common CKKS libraries
        "Mul": median_time(lambda: ctx.tensor(a, b), runs, warmup),
        "MulRelin": median_time(lambda: ctx.mul(a, b, evk), runs, warmup),
        "Rot1": median_time(lambda: ctx.rotate(a, 1, evk), runs, warmup),
        "IP_d": median_time(lambda: inner_product(ctx, a_d, b_d, evk), runs, warmup),
        "IP_2d": median_time(lambda: inner_product(ctx, a, b, evk), runs, warmup),
    }
    share = rotation_share(ctx, a, b, evk, runs=max(3, runs // 3))
    return BenchReport(preset_name, runs, t, share)


def rotation_share(ctx, a, b, evk, runs: int = 5) -> float:
    """Fraction of inner-product wall time spent in rotations."""
    with count_ops() as ops:
        for _ in range(runs):
            t0 = time.perf_counter()
            inner_product(ctx, a, b, evk)
            ops.seconds["_total"] += time.perf_counter() - t0
    return ops.seconds["rotate"] / ops.seconds["_total"]


@dataclass
class IncrementalReport:
    preset: str
    d: int
    incremental_ops: dict
    naive_ops: dict
    incremental_seconds: float
    naive_seconds: float
    rotation_share: float

    @property
    def op_total(self) -> tuple[int, int]:
        keys = ("rotate", "mul", "add", "encrypt")
        return (sum(self.incremental_ops.get(k, 0) for k in keys),
                sum(self.naive_ops.get(k, 0) for k in keys))

    @property
    def time_ratio(self) -> float:
        return self.incremental_seconds / self.naive_seconds

    def to_dict(self) -> dict:
        inc, naive = self.op_total
        return {"preset": self.preset, "d": self.d, "incremental_ops": self.incremental_ops,
                "naive_ops": self.naive_ops, "incremental_op_total": inc, "naive_op_total": naive,
                "incremental_seconds": self.incremental_seconds, "naive_seconds": self.naive_seconds,
                "time_ratio": self.time_ratio, "rotation_share_of_ip": self.rotation_share}

    def table(self) -> str:
        inc, naive = self.op_total
        ops = sorted(set(self.incremental_ops) | set(self.naive_ops))
        lines = [f"stage-2 cost, preset {self.preset}, d={self.d}",
                 f"{'op':<12} {'incremental':>12} {'naive':>8}"]
        lines += [f"{k:<12} {self.incremental_ops.get(k, 0):>12} {self.naive_ops.get(k, 0):>8}" for k in ops]
        lines.append(f"{'ops (rot+mul+add+enc)':<12} {inc:>3} {naive:>8}")
        lines.append(f"median wall time: incremental {self.incremental_seconds * 1e3:.2f} ms, "
                     f"naive {self.naive_seconds * 1e3:.2f} ms (ratio {self.time_ratio:.3f})")
        lines.append(f"rotation share of inner product time: {self.rotation_share * 100:.1f}%")
        return "\n".join(lines)


def bench_incremental_vs_naive(preset_name: str = "PN12QP109", d: int = 512, m: int = 2, runs: int = 21,
                               warmup: int = 3, seed: int = 0) -> IncrementalReport:
    """Stage 2 of the cascade two ways, starting from the stage-1 state.

    incremental: rotate the reference by d, encrypt probe 2, multiply,
    rotate-and-sum, add to the stage-1 score.
    naive: encrypt the full fused probe and compute a fresh inner product
    against the fused reference.
    """
    if m != 2:
        raise ValueError("the comparison is defined for two modalities")
    ctx, sk, pk, evk, layout, rng = _setup(preset_name, d, m, seed)
    keys = ClientKeys(ctx, pk, evk)
    ref_vec = np.concatenate([_unit(rng, d), _unit(rng, d)])
    p1 = normalize(_unit(rng, d))
    p2 = normalize(_unit(rng, d))
    ref = ctx.encrypt(pk, ctx.encode(ref_vec), rng=rng)
    delta1 = stage_score(keys, ref, p1, None, rng=rng)

    def incremental():
        aligned = block_align(ctx, ref, 2, layout, evk)
        return stage_score(keys, aligned, p2, delta1, rng=rng)

    fused = np.concatenate([p1.vector, p2.vector])

    def naive():
        enc = ctx.encrypt(pk, ctx.encode(fused), rng=rng)
        return inner_product(ctx, ref, enc, evk)

    with count_ops() as inc_ops:
        incremental()
    with count_ops() as naive_ops:
        naive()
    t_inc = median_time(incremental, runs, warmup)
    t_naive = median_time(naive, runs, warmup)
    a = ctx.encrypt(pk, ctx.encode(fused), rng=rng)
    share = rotation_share(ctx, ref, a, evk, runs=max(3, runs // 3))
    return IncrementalReport(preset_name, d, dict(inc_ops.counts), dict(naive_ops.counts), t_inc, t_naive, share)
