"""FMR/FNMR/EER, threshold calibration and saved-presentation accounting.

Dissimilarity scores throughout: a comparison is a match when score < tau.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .biometrics import SubjectRecord, mated_and_nonmated_pairs


@dataclass(frozen=True, eq=False)
class ScoreSet:
    mated: np.ndarray
    nonmated: np.ndarray
    label: str = ""

    def __post_init__(self):
        for name in ("mated", "nonmated"):
            a = np.asarray(getattr(self, name), dtype=np.float64).ravel()
            if not np.all(np.isfinite(a)):
                raise ValueError(f"{name} scores must be finite")
            object.__setattr__(self, name, a)


def fmr_at(scores: ScoreSet, tau: float) -> float:
    return float(np.mean(scores.nonmated < tau))


def fnmr_at(scores: ScoreSet, tau: float) -> float:
    return float(np.mean(scores.mated >= tau))


def threshold_at_fmr(scores: ScoreSet, fmr: float) -> float:
    """Largest tau whose empirical FMR (fraction of non-mated < tau) is <= fmr."""
    if not 0 < fmr < 1:
        raise ValueError("target FMR must lie in (0, 1)")
    nm = np.sort(scores.nonmated)
    if nm.size == 0:
        raise ValueError("no non-mated scores to calibrate against")
    k = int(math.floor(fmr * nm.size + 1e-9))
    return float(nm[min(k, nm.size - 1)])


def eer(scores: ScoreSet) -> float:
    """Equal error rate: mean of FMR and FNMR where they are closest.

    Ties in |FMR - FNMR| resolve to the smallest threshold.
    """
    m, nm = np.sort(scores.mated), np.sort(scores.nonmated)
    if m.size == 0 or nm.size == 0:
        raise ValueError("EER needs mated and non-mated scores")
    taus = np.append(np.unique(np.concatenate((m, nm))), np.inf)
    false_match = np.searchsorted(nm, taus, side="left")
    false_nonmatch = m.size - np.searchsorted(m, taus, side="left")
    # compare on integer cross-multiplied counts so ties are exact
    gap = np.abs(false_match * m.size - false_nonmatch * nm.size)
    i = int(np.argmin(gap))
    return float((false_match[i] / nm.size + false_nonmatch[i] / m.size) / 2)


def score_deviation(plain: Sequence[float], encrypted: Sequence[float]) -> tuple[float, float]:
    a = np.asarray(plain, dtype=np.float64)
    b = np.asarray(encrypted, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size == 0:
        return 0.0, 0.0
    dev = np.abs(a - b)
    return float(dev.mean()), float(dev.max())


# -- per-stage plaintext scores -----------------------------------------------------


def stage_score_sets(db: Sequence[SubjectRecord], modality_order: Sequence[str]) -> list[ScoreSet]:
    """Cumulative dissimilarity score sets for stages 1..m of a cascade."""
    pairs = mated_and_nonmated_pairs(db, modality_order[0])
    mated_acc = np.zeros(len(pairs.mated))
    nonmated_acc = None
    out = []
    for j, mod in enumerate(modality_order, start=1):
        mated_acc = mated_acc + _mated_scores(db, mod, pairs.mated)
        nm = _nonmated_scores(db, mod)
        nonmated_acc = nm if nonmated_acc is None else nonmated_acc + nm
        out.append(ScoreSet(mated_acc.copy(), nonmated_acc.copy(), f"stage{j}:{'+'.join(modality_order[:j])}"))
    return out


def modality_scores(db: Sequence[SubjectRecord], modality: str) -> ScoreSet:
    return stage_score_sets(db, [modality])[0]


def _mated_scores(db, modality, mated_pairs) -> np.ndarray:
    if not mated_pairs:
        return np.zeros(0)
    s, i, j = np.array(mated_pairs).T
    a = np.stack([db[k].samples[modality][x].vector for k, x in zip(s, i)])
    b = np.stack([db[k].samples[modality][x].vector for k, x in zip(s, j)])
    return np.sum((a - b) ** 2, axis=1)


def _nonmated_scores(db, modality) -> np.ndarray:
    first = np.stack([rec.samples[modality][0].vector for rec in db])
    gram = first @ first.T
    iu = np.triu_indices(len(db), k=1)
    return 2.0 - 2.0 * gram[iu]


def calibrate_thresholds(db: Sequence[SubjectRecord], modality_order: Sequence[str], fmr: float,
                         fused: bool = False) -> list[float]:
    """Per-stage thresholds at ``fmr`` on the cumulative non-mated distributions.

    With ``fused=True`` a single threshold for the full-concatenation score.
    """
    sets = stage_score_sets(db, modality_order)
    if fused:
        return [threshold_at_fmr(sets[-1], fmr)]
    return [threshold_at_fmr(s, fmr) for s in sets]


# -- saved presentations ------------------------------------------------------------


@dataclass
class SavedRow:
    policy: str
    fmr: float
    presentations: list[int]  # per stage, in policy order
    total: int
    saved: int
    budget: int  # stage-2+ presentations of the unconditional baseline
    saved_pct: float
    thresholds: list[float] = field(default_factory=list)


@dataclass
class SavedPresentationsReport:
    mated_comparisons: int
    baseline: list[int]
    rows: list[SavedRow]

    def to_dict(self) -> dict:
        return {"mated_comparisons": self.mated_comparisons, "baseline": self.baseline,
                "rows": [asdict(r) for r in self.rows]}

    def table(self) -> str:
        head = (f"{'policy':<12} {'FMR %':>7} {'stage presentations':>22} {'total':>7} "
                f"{'saved':>7} {'of':>6} {'saved %':>8}")
        lines = [head, "-" * len(head)]
        base = "/".join(str(x) for x in self.baseline)
        lines.append(f"{'multi-and':<12} {'-':>7} {base:>22} {sum(self.baseline):>7} {0:>7} "
                     f"{self.baseline[-1] if self.baseline else 0:>6} {0.0:>8.2f}")
        for r in self.rows:
            pres = "/".join(str(x) for x in r.presentations)
            lines.append(f"{r.policy:<12} {r.fmr * 100:>7.3g} {pres:>22} {r.total:>7} {r.saved:>7} "
                         f"{r.budget:>6} {r.saved_pct:>8.2f}")
        return "\n".join(lines)


def count_presentations(stage_sets: Sequence[ScoreSet], thresholds: Sequence[float]) -> list[int]:
    """Modality acquisitions per stage when running the cascade on mated pairs."""
    n = stage_sets[0].mated.size
    pending = np.ones(n, dtype=bool)
    counts = []
    for s, tau in zip(stage_sets, thresholds):
        counts.append(int(pending.sum()))
        pending &= ~(s.mated < tau)
    return counts


def saved_presentations(db: Sequence[SubjectRecord], policy, fmr_list: Sequence[float],
                        thresholds: dict | None = None) -> SavedPresentationsReport:
    """Mated-only accounting of modality presentations against the unconditional baseline.

    ``thresholds`` maps each FMR to per-stage taus; when omitted they are
    calibrated on ``db`` itself. Savings are expressed against the presentations of
    stages 2..m that the unconditional baseline always needs.
    """
    order = policy.modality_order
    sets = stage_score_sets(db, order)
    n = sets[0].mated.size
    baseline = [n] * len(order)
    budget = n * (len(order) - 1)
    rows = []
    for fmr in fmr_list:
        taus = None if thresholds is None else thresholds.get(fmr)
        if taus is None:
            if thresholds is not None:
                raise KeyError(f"no thresholds for FMR {fmr}")
            taus = [threshold_at_fmr(s, fmr) for s in sets]
        pres = count_presentations(sets, taus)
        saved = sum(baseline) - sum(pres)
        pct = 100.0 * saved / budget if budget else 0.0
        rows.append(SavedRow(policy.name or "custom", fmr, pres, sum(pres), saved, budget, pct, list(taus)))
    return SavedPresentationsReport(n, baseline, rows)


# -- files ------------------------------------------------------------------------------

SCORE_FIELDS = ("probe", "reference", "stage", "plain_score", "encrypted_score")


def write_scores(path, records: Sequence[tuple]) -> Path:
    """One comparison per row; encrypted_score may be empty when not computed."""
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(SCORE_FIELDS)
        for probe, ref, stage, plain, enc in records:
            w.writerow([probe, ref, stage, f"{plain:.12g}", "" if enc is None else f"{enc:.12g}"])
    return path


def read_scores(path) -> list[dict]:
    with Path(path).open(newline="") as f:
        rows = list(csv.DictReader(f))
    if rows and tuple(rows[0]) != SCORE_FIELDS:
        raise ValueError(f"{path}: unexpected score file header")
    for r in rows:
        r["stage"] = int(r["stage"])
        r["plain_score"] = float(r["plain_score"])
        r["encrypted_score"] = float(r["encrypted_score"]) if r["encrypted_score"] else None
    return rows


def write_report(path, data: dict, text: str) -> None:
    """Write ``<path>.json`` and ``<path>.txt`` side by side."""
    path = Path(path)
    path.with_suffix(".json").write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    path.with_suffix(".txt").write_text(text + "\n")
