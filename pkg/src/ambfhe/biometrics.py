"""Template model, fusion by concatenation, and a synthetic multi-modal database."""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

IRIS = "iris"
FINGERPRINT = "fingerprint"
DEFAULT_DIM = 512


def other_modality(index: int) -> str:
    return f"other{index}"


def check_modality(name: str) -> str:
    if name in (IRIS, FINGERPRINT):
        return name
    if name.startswith("other") and name[5:].isdigit():
        return name
    raise ValueError(f"unknown modality {name!r}")


@dataclass(frozen=True, eq=False)
class Template:
    modality: str
    vector: np.ndarray

    def __post_init__(self):
        check_modality(self.modality)
        v = np.array(self.vector, dtype=np.float64).ravel()
        if not np.all(np.isfinite(v)):
            raise ValueError("template entries must be finite")
        v.flags.writeable = False
        object.__setattr__(self, "vector", v)

    @property
    def dim(self) -> int:
        return self.vector.size


def normalize(v, modality: str = IRIS) -> Template:
    v = np.asarray(v, dtype=np.float64).ravel()
    norm = np.linalg.norm(v)
    if not np.isfinite(norm):
        raise ValueError("template entries must be finite")
    if norm == 0:
        raise ValueError("cannot normalize a zero vector")
    return Template(modality, v / norm)


@dataclass(frozen=True, eq=False)
class FusedTemplate:
    parts: tuple[Template, ...]

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([p.vector for p in self.parts])

    @property
    def modalities(self) -> tuple[str, ...]:
        return tuple(p.modality for p in self.parts)

    def __len__(self) -> int:
        return sum(p.dim for p in self.parts)

    def unpack(self, vector: np.ndarray) -> list[np.ndarray]:
        """Split a packed slot vector back into per-modality pieces."""
        out, pos = [], 0
        for p in self.parts:
            out.append(np.asarray(vector[pos:pos + p.dim]))
            pos += p.dim
        return out


def concatenate(parts: Sequence[Template]) -> FusedTemplate:
    if not parts:
        raise ValueError("need at least one template to concatenate")
    return FusedTemplate(tuple(parts))


def dissimilarity(u: Template, v: Template) -> float:
    """Squared Euclidean distance of unit vectors, 2 - 2<u, v>."""
    return 2.0 - 2.0 * float(np.dot(u.vector, v.vector))


@dataclass(frozen=True, eq=False)
class SubjectRecord:
    subject_id: str
    samples: dict  # modality -> list[Template]

    def __post_init__(self):
        for m, lst in self.samples.items():
            if not lst:
                raise ValueError(f"subject {self.subject_id} has no {m} sample")

    def sample_count(self, modality: str) -> int:
        return len(self.samples[modality])

    def fused(self, modalities: Sequence[str], index: int = 0) -> FusedTemplate:
        return concatenate([self.samples[m][index] for m in modalities])


# -- synthetic generator -----------------------------------------------------------

# Per-modality noise calibrated so that each uni-modal EER sits near 1.8 %
# at d=512 (see calibrate_sigma); frozen so that runs are reproducible.
DEFAULT_SIGMA = {IRIS: 0.0939, FINGERPRINT: 0.0939}


@dataclass
class SyntheticConfig:
    n_subjects: int = 533
    d: int = DEFAULT_DIM
    samples_range: tuple[int, int] = (2, 5)
    intra_noise_sigma: dict = field(default_factory=lambda: dict(DEFAULT_SIGMA))
    seed: int = 42
    modalities: tuple[str, ...] = (IRIS, FINGERPRINT)

    def validate(self):
        if self.n_subjects < 2:
            raise ValueError("need at least two subjects")
        if self.d < 1:
            raise ValueError("template dimension must be positive")
        lo, hi = self.samples_range
        if not 1 <= lo <= hi:
            raise ValueError(f"bad samples range {self.samples_range}")
        for m in self.modalities:
            check_modality(m)
            sigma = self.intra_noise_sigma.get(m)
            if sigma is None or not sigma >= 0:
                raise ValueError(f"noise sigma for {m} must be given and non-negative")


def _unit_rows(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x, axis=-1, keepdims=True)


def generate_synthetic_db(cfg: SyntheticConfig) -> list[SubjectRecord]:
    """Gaussian-on-sphere model: unit class centre plus isotropic noise per sample.

    Every subject has the same number of samples in each modality, so sample
    i of all modalities forms one multi-modal capture. Modalities draw
    independent centres.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    lo, hi = cfg.samples_range
    counts = rng.integers(lo, hi + 1, size=cfg.n_subjects)
    db = []
    for i, s in enumerate(counts):
        samples = {}
        for m in cfg.modalities:
            center = _unit_rows(rng.normal(size=cfg.d))
            noisy = center + cfg.intra_noise_sigma[m] * rng.normal(size=(s, cfg.d))
            samples[m] = [Template(m, row) for row in _unit_rows(noisy)]
        db.append(SubjectRecord(f"S{i:04d}", samples))
    return db


@dataclass(frozen=True)
class PairLists:
    mated: list  # (subject index, sample i, sample j), i < j
    nonmated: list  # (subject a, subject b) comparing sample 0 of each, a < b


def mated_and_nonmated_pairs(db: Sequence[SubjectRecord], modality: str | None = None) -> PairLists:
    if len(db) < 2:
        raise ValueError("need at least two subjects")
    mated = []
    for si, rec in enumerate(db):
        m = modality or next(iter(rec.samples))
        s = rec.sample_count(m)
        mated.extend((si, i, j) for i in range(s) for j in range(i + 1, s))
    nonmated = [(a, b) for a in range(len(db)) for b in range(a + 1, len(db))]
    return PairLists(mated, nonmated)


def calibrate_sigma(target_eer: float, d: int = DEFAULT_DIM, n_subjects: int = 533, seed: int = 7,
                    lo: float = 0.01, hi: float = 0.3, iters: int = 20) -> float:
    """Bisect the noise level so a single-modality database hits ``target_eer``."""
    from .metrics import eer, modality_scores

    def measure(sigma):
        cfg = SyntheticConfig(n_subjects=n_subjects, d=d, seed=seed, modalities=(IRIS,),
                              intra_noise_sigma={IRIS: sigma})
        db = generate_synthetic_db(cfg)
        return eer(modality_scores(db, IRIS))

    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if measure(mid) < target_eer:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# -- dataset files ------------------------------------------------------------------

DB_MAGIC = b"AFDB"
DB_VERSION = 1


def save_db(db: Sequence[SubjectRecord], path, cfg: SyntheticConfig | None = None) -> Path:
    """Write the binary dataset plus a JSON manifest next to it (``.json``)."""
    path = Path(path)
    modalities = tuple(db[0].samples) if db else ()
    d = db[0].samples[modalities[0]][0].dim if db else 0
    out = [DB_MAGIC, struct.pack("<HIIH", DB_VERSION, len(db), d, len(modalities))]
    for m in modalities:
        raw = m.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
    for rec in db:
        raw = rec.subject_id.encode()
        out.append(struct.pack("<H", len(raw)) + raw)
        for m in modalities:
            vecs = rec.samples[m]
            out.append(struct.pack("<H", len(vecs)))
            out.append(np.stack([t.vector for t in vecs]).astype("<f4").tobytes())
    path.write_bytes(b"".join(out))
    manifest = {"format": "AFDB", "version": DB_VERSION, "subjects": len(db), "d": d,
                "modalities": list(modalities)}
    if cfg is not None:
        c = asdict(cfg)
        manifest.update(sigma=c["intra_noise_sigma"], seed=c["seed"],
                        samples_range=list(c["samples_range"]))
    path.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def load_db(path) -> list[SubjectRecord]:
    """Read a dataset file; templates are re-normalized after the float32 round trip."""
    buf = Path(path).read_bytes()
    if buf[:4] != DB_MAGIC:
        raise ValueError(f"{path}: not a template database")
    version, n, d, n_mod = struct.unpack_from("<HIIH", buf, 4)
    if version != DB_VERSION:
        raise ValueError(f"{path}: unsupported database version {version}")
    pos = 16
    try:
        modalities = []
        for _ in range(n_mod):
            (ln,) = struct.unpack_from("<H", buf, pos)
            modalities.append(buf[pos + 2:pos + 2 + ln].decode())
            pos += 2 + ln
        db = []
        for _ in range(n):
            (ln,) = struct.unpack_from("<H", buf, pos)
            sid = buf[pos + 2:pos + 2 + ln].decode()
            pos += 2 + ln
            samples = {}
            for m in modalities:
                (cnt,) = struct.unpack_from("<H", buf, pos)
                pos += 2
                size = cnt * d * 4
                if pos + size > len(buf):
                    raise ValueError("truncated")
                arr = np.frombuffer(buf, dtype="<f4", count=cnt * d, offset=pos).reshape(cnt, d)
                pos += size
                samples[m] = [normalize(row, m) for row in arr]
            db.append(SubjectRecord(sid, samples))
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        raise ValueError(f"{path}: corrupt database ({exc})") from exc
    if pos != len(buf):
        raise ValueError(f"{path}: trailing bytes")
    return db
