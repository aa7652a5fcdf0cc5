"""Corner-region guidance for detectors and the combined class-shift + displacement score."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

from ..numerics import Tensor, log_sigmoid, tabs, tsum
from ..numerics.tensor import getitem
from ..classifier.poison import CORNERS
from ..inversion.guidance import (
    Failure,
    GuidanceConfig,
    TriggerCandidate,
    _check_pairs,
    _check_schedule,
    _guided_pass,
    classifier_conf_fn,
    classifier_grad_fn,
    invert_pairs,
)
from ..inversion.scan import CLEAN, FAILED_STRENGTH, TROJANED, all_pairs
from .detector import Detector, Scenes

TAU = 0.05


@dataclass(frozen=True)
class CornerSpec:
    corner: str
    radius: float = 0.2

    def __post_init__(self):
        if self.corner not in CORNERS:
            raise ValueError(f"unknown corner {self.corner!r}, expected one of {CORNERS}")
        if not 0.0 < self.radius < 0.5:
            raise ValueError(f"corner radius must lie in (0, 0.5), got {self.radius}")

    @property
    def center(self) -> tuple[float, float]:
        """Region center ``(cx0, cy0)``; the region is the square of half-width ``radius`` around it."""
        r = self.radius
        cx = r if self.corner[1] == "L" else 1.0 - r
        cy = r if self.corner[0] == "T" else 1.0 - r
        return cx, cy


def random_corner(rng: np.random.Generator, radius: float = 0.2) -> CornerSpec:
    return CornerSpec(CORNERS[int(rng.integers(len(CORNERS)))], radius)


def membership(cx, cy, corner: CornerSpec, tau: float = TAU):
    """``sigmoid((r - |cx - cx0|) / tau) * sigmoid((r - |cy - cy0|) / tau)`` on plain arrays."""
    cx0, cy0 = corner.center
    r = corner.radius

    def sig(z):
        return 0.5 * (1.0 + np.tanh(0.5 * z))

    return sig((r - np.abs(np.asarray(cx) - cx0)) / tau) * sig((r - np.abs(np.asarray(cy) - cy0)) / tau)


def log_membership(box: Tensor, corner: CornerSpec, tau: float = TAU) -> Tensor:
    """Per-sample ``log P(center in region)`` from a box tensor ``[N, 4]``."""
    cx0, cy0 = corner.center
    r = corner.radius
    cx = getitem(box, (slice(None), 0))
    cy = getitem(box, (slice(None), 1))
    return log_sigmoid((r - tabs(cx - cx0)) * (1.0 / tau)) + log_sigmoid((r - tabs(cy - cy0)) * (1.0 / tau))


def corner_log_prob(det: Detector, x: np.ndarray, corner: CornerSpec, tau: float = TAU) -> np.ndarray:
    xb, single = det._batched(x)
    out = log_membership(det.heads(Tensor(xb))[1], corner, tau).data
    return out[0] if single else out


def corner_shift_grad(det: Detector, x_t: np.ndarray, corner: CornerSpec, tau: float = TAU) -> np.ndarray:
    """``grad_x log P(predicted center in corner region)`` per sample."""
    xb, single = det._batched(x_t)
    xt = Tensor(xb, requires_grad=True)
    tsum(log_membership(det.heads(xt)[1], corner, tau)).backward()
    g = xt.grad if xt.grad is not None else np.zeros_like(xb)
    return g[0] if single else g


def _detection_grad_fn(det: Detector, cfg: GuidanceConfig, corner: CornerSpec, corner_weight: float):
    class_grad = classifier_grad_fn(det, cfg)
    if corner_weight == 0:
        return class_grad

    def grad(x_in, src, tar):
        return class_grad(x_in, src, tar) + corner_weight * corner_shift_grad(det, x_in, corner)

    return grad


def invert_detection_many(model, det: Detector, pairs: Sequence[tuple[int, int]], corner: CornerSpec,
                          cfg: GuidanceConfig, seed: int, corner_weight: float = 1.0) -> list:
    _check_schedule(model, cfg)
    if pairs:
        _check_pairs(det.num_classes, np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs]))
    grad_fn = _detection_grad_fn(det, cfg, corner, corner_weight)

    def pass_fn(src, tar, rngs):
        return _guided_pass(model, src, tar, cfg, rngs, grad_fn)

    return invert_pairs(pairs, cfg, seed, pass_fn, classifier_conf_fn(det))


def invert_detection_trigger(model, det: Detector, y_src: int, y_tar: int, corner: CornerSpec,
                             cfg: GuidanceConfig, seed: int, corner_weight: float = 1.0):
    """Guidance = class-shift gradient + ``corner_weight`` * corner-membership gradient; gate on the class head."""
    return invert_detection_many(model, det, [(y_src, y_tar)], corner, cfg, seed, corner_weight)[0]


@dataclass
class DetectionRun:
    y_src: int
    y_tar: int
    corner: str
    accepted: bool
    class_shift: float
    displacement: float
    corner_shift: float

    @property
    def combined(self) -> float:
        return self.class_shift + self.displacement

    def to_dict(self) -> dict:
        return {"y_src": self.y_src, "y_tar": self.y_tar, "corner": self.corner, "accepted": self.accepted,
                "class_shift": self.class_shift, "displacement": self.displacement,
                "corner_shift": self.corner_shift, "combined": self.combined}


@dataclass
class DetectionScanReport:
    class_shift: float
    displacement: float
    corner_shift: float
    corner: Optional[str]
    pair: Optional[tuple[int, int]]
    decision: str
    threshold: float
    runs: list[DetectionRun] = field(default_factory=list)
    candidate: Optional[TriggerCandidate] = field(default=None, repr=False, compare=False)

    @property
    def combined(self) -> float:
        return self.class_shift + self.displacement

    def to_dict(self) -> dict:
        return {"class_shift": self.class_shift, "displacement": self.displacement, "combined": self.combined,
                "corner_shift": self.corner_shift, "corner": self.corner,
                "pair": None if self.pair is None else list(self.pair), "decision": self.decision,
                "threshold": self.threshold, "runs": [r.to_dict() for r in self.runs]}


def detection_terms(det: Detector, pattern: np.ndarray, y_src: int, y_tar: int, heldout: Scenes,
                    corner: Optional[CornerSpec] = None) -> tuple[float, float, float]:
    """Class shift, mean center displacement vs ground truth, and mean approach toward ``corner``."""
    if len(heldout) == 0:
        raise ValueError("held-out scene set is empty")
    stamped = np.clip(heldout.images + pattern, -1.0, 1.0)
    probs = det.probs(stamped)
    shift = float(np.mean(probs[:, y_tar] - probs[:, y_src]))
    after = det.boxes(stamped)[:, :2]
    disp = float(np.mean(np.linalg.norm(after - heldout.boxes[:, :2], axis=1)))
    approach = 0.0
    if corner is not None:
        c0 = np.array(corner.center)
        before = det.boxes(heldout.images)[:, :2]
        approach = float(np.mean(np.linalg.norm(before - c0, axis=1) - np.linalg.norm(after - c0, axis=1)))
    return shift, disp, approach


def detector_trojan_score(det: Detector, cand: TriggerCandidate, heldout: Scenes, threshold: float = 1.0,
                          corner: Optional[CornerSpec] = None) -> DetectionScanReport:
    """Combined score = class shift (on the candidate's source-class scenes) + mean center displacement."""
    shift, disp, approach = detection_terms(det, cand.pattern, cand.y_src, cand.y_tar, heldout, corner)
    decision = TROJANED if shift + disp >= threshold else CLEAN
    return DetectionScanReport(shift, disp, approach, None if corner is None else corner.corner,
                               (cand.y_src, cand.y_tar), decision, threshold, [], cand)


def scan_detector(det: Detector, model, cfg: GuidanceConfig, heldout: Mapping[int, Scenes], seed: int,
                  corner_weight: float = 1.0, threshold: float = 1.0, radius: float = 0.2,
                  corners: Sequence[str] = CORNERS) -> DetectionScanReport:
    """Invert every ordered pair once per corner region and keep the run with the largest combined score."""
    runs, cands = [], {}
    for ci, name in enumerate(corners):
        corner = CornerSpec(name, radius)
        pairs = all_pairs(det.num_classes)
        results = invert_detection_many(model, det, pairs, corner, cfg, seed + 7 * ci, corner_weight)
        for res in results:
            if isinstance(res, TriggerCandidate):
                shift, disp, approach = detection_terms(det, res.pattern, res.y_src, res.y_tar,
                                                        heldout[res.y_src], corner)
                runs.append(DetectionRun(res.y_src, res.y_tar, name, True, shift, disp, approach))
                cands[len(runs) - 1] = res
            elif isinstance(res, Failure):
                runs.append(DetectionRun(res.y_src, res.y_tar, name, False, FAILED_STRENGTH, 0.0, 0.0))
    best = max(range(len(runs)), key=lambda i: (runs[i].combined, -i))
    b = runs[best]
    decision = TROJANED if b.combined >= threshold else CLEAN
    return DetectionScanReport(b.class_shift, b.displacement, b.corner_shift, b.corner, (b.y_src, b.y_tar),
                               decision, threshold, runs, cands.get(best))
