"""Transferability scoring and whole-model scans (all ordered pairs, or one source per target)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np

from ..classifier import Dataset, penultimate_class_means
from .guidance import Failure, GuidanceConfig, TriggerCandidate, invert_many

FAILED_STRENGTH = -1.0
TROJANED, CLEAN = "trojaned", "clean"

# inverter(pairs, cfg, seed) -> list of TriggerCandidate | Failure
Inverter = Callable[[Sequence[tuple[int, int]], GuidanceConfig, int], list]


@dataclass
class PairScore:
    y_src: int
    y_tar: int
    strength: float
    accepted: bool
    confidence: float
    retries_used: int

    def to_dict(self) -> dict:
        return {"y_src": self.y_src, "y_tar": self.y_tar, "strength": self.strength, "accepted": self.accepted,
                "confidence": self.confidence, "retries_used": self.retries_used}

    @classmethod
    def from_dict(cls, d: dict) -> "PairScore":
        return cls(int(d["y_src"]), int(d["y_tar"]), float(d["strength"]), bool(d["accepted"]),
                   float(d["confidence"]), int(d["retries_used"]))


@dataclass
class ScanReport:
    pairs: list[PairScore]
    overall: float
    decision: str
    predicted_target: Optional[int]
    tie: bool
    mode: str
    config: dict
    seed: int
    inversions: int
    flags: list[str] = field(default_factory=list)
    # accepted patterns keyed by (y_src, y_tar); kept in memory but not serialized
    candidates: dict = field(default_factory=dict, repr=False, compare=False)

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config": dict(self.config),
            "overall": self.overall,
            "decision": self.decision,
            "predicted_target": self.predicted_target,
            "tie": self.tie,
            "inversions": self.inversions,
            "flags": list(self.flags),
            "pairs": [p.to_dict() for p in self.pairs],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScanReport":
        pt = d.get("predicted_target")
        return cls(
            pairs=[PairScore.from_dict(p) for p in d["pairs"]],
            overall=float(d["overall"]),
            decision=d["decision"],
            predicted_target=None if pt is None else int(pt),
            tie=bool(d["tie"]),
            mode=d["mode"],
            config=dict(d["config"]),
            seed=int(d["seed"]),
            inversions=int(d["inversions"]),
            flags=list(d.get("flags", [])),
        )


def trigger_score(f, cand: TriggerCandidate, heldout_src: np.ndarray) -> float:
    """Mean ``p_tar - p_src`` over held-out source images with the pattern added (and clamped)."""
    heldout_src = np.asarray(heldout_src, dtype=np.float64)
    if heldout_src.shape[0] == 0:
        raise ValueError("held-out source set is empty")
    probs = f.probs(np.clip(heldout_src + cand.pattern, -1.0, 1.0))
    return float(np.mean(probs[:, cand.y_tar] - probs[:, cand.y_src]))


def _argmax_pair(pairs: Sequence[PairScore]) -> tuple[int, bool]:
    """Index of the strongest pair; ties go to the smallest target (then source) index."""
    strengths = np.array([p.strength for p in pairs])
    best = strengths.max()
    tied = [i for i, p in enumerate(pairs) if p.strength == best]
    tied.sort(key=lambda i: (pairs[i].y_tar, pairs[i].y_src))
    distinct_targets = {pairs[i].y_tar for i in tied}
    return tied[0], len(distinct_targets) > 1


def predict_target(report: ScanReport) -> Optional[int]:
    if report.decision != TROJANED or not report.pairs:
        return None
    return report.pairs[_argmax_pair(report.pairs)[0]].y_tar


def assemble_report(f, results: list, heldout: Mapping[int, np.ndarray], cfg: GuidanceConfig, seed: int,
                    mode: str, flags: Sequence[str] = ()) -> ScanReport:
    """Score inversion results and reduce them to a decision."""
    pairs, candidates = [], {}
    for res in results:
        if isinstance(res, TriggerCandidate):
            s = trigger_score(f, res, heldout[res.y_src])
            pairs.append(PairScore(res.y_src, res.y_tar, s, True, res.confidence, res.retries_used))
            candidates[(res.y_src, res.y_tar)] = res
        elif isinstance(res, Failure):
            pairs.append(PairScore(res.y_src, res.y_tar, FAILED_STRENGTH, False, res.best_confidence,
                                   res.retries_used))
        else:
            raise TypeError(f"unexpected inversion result {type(res).__name__}")
    if not pairs:
        raise ValueError("scan produced no pairs")
    overall = max(p.strength for p in pairs)
    decision = TROJANED if overall >= cfg.lambda2_detect else CLEAN
    _, tie = _argmax_pair(pairs)
    report = ScanReport(pairs, overall, decision, None, tie, mode, cfg.to_dict(), int(seed), len(results),
                        list(flags), candidates)
    report.predicted_target = predict_target(report)
    return report


def all_pairs(num_classes: int) -> list[tuple[int, int]]:
    return [(s, t) for s in range(num_classes) for t in range(num_classes) if s != t]


def _default_inverter(f, model) -> Inverter:
    def inv(pairs, cfg, seed):
        return invert_many(model, f, pairs, cfg, seed)

    return inv


def scan_full(f, model, cfg: GuidanceConfig, heldout: Mapping[int, np.ndarray], seed: int,
              inverter: Optional[Inverter] = None) -> ScanReport:
    """Invert and score all ``K (K - 1)`` ordered pairs; the model score is the maximum strength."""
    k = f.num_classes
    if k < 2:
        raise ValueError("scan needs at least 2 classes")
    inverter = inverter or _default_inverter(f, model)
    results = inverter(all_pairs(k), cfg, seed)
    return assemble_report(f, results, heldout, cfg, seed, "full")


def feature_cosines(phi: np.ndarray) -> tuple[np.ndarray, list[int]]:
    """Pairwise cosine similarity of class feature means; a zero vector has cosine 0 with everything."""
    norms = np.linalg.norm(phi, axis=1)
    zero = [int(i) for i in np.flatnonzero(norms == 0)]
    safe = np.where(norms == 0, 1.0, norms)
    cos = (phi @ phi.T) / np.outer(safe, safe)
    cos[zero, :] = 0.0
    cos[:, zero] = 0.0
    return cos, zero


def fast_pairs(phi: np.ndarray) -> tuple[list[tuple[int, int]], list[int]]:
    """For each target, the least-similar source class (smallest index on ties)."""
    cos, zero = feature_cosines(phi)
    k = phi.shape[0]
    pairs = []
    for tar in range(k):
        cands = [y for y in range(k) if y != tar]
        src = min(cands, key=lambda y: (cos[y, tar], y))
        pairs.append((src, tar))
    return pairs, zero


def scan_fast(f, model, cfg: GuidanceConfig, probe: Dataset, heldout: Mapping[int, np.ndarray], seed: int,
              inverter: Optional[Inverter] = None) -> ScanReport:
    """``K`` inversions: each target class is paired with its most distant source class in feature space."""
    if f.num_classes < 2:
        raise ValueError("scan needs at least 2 classes")
    phi = penultimate_class_means(f, probe)
    pairs, zero = fast_pairs(phi)
    flags = [f"zero-norm features for class {y}" for y in zero]
    inverter = inverter or _default_inverter(f, model)
    results = inverter(pairs, cfg, seed)
    return assemble_report(f, results, heldout, cfg, seed, "fast", flags)
