"""Zoo-wide benchmarks, ablation setups, metrics and mitigation runs."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from ..classifier import TrainConfig
from ..detect import scan_detector
from ..diffusion import MixtureDenoiser, NoiseSchedule, isotropic_prior
from ..inversion import (
    TROJANED,
    MitigationResult,
    ScanReport,
    mitigate,
    pixel_inverter,
    predict_target,
    scan_fast,
    scan_full,
)
from .config import RunConfig
from .formats import ModelFormatError, load_model, read_doc, write_doc
from .zoo import ZooSpec, classifier_metrics, load_manifest, load_poison, scene_test_set, zoo_test_set

SETUPS = ("A", "B", "D", "G")
SETUP_NAMES = {"A": "pixel-space", "B": "no-noise", "D": "fast", "G": "default"}


def auc(clean: Sequence[float], trojaned: Sequence[float]) -> float:
    """Mann-Whitney AUC from mid-ranks: P(trojaned > clean) + 0.5 P(tie)."""
    c, t = np.asarray(clean, dtype=np.float64), np.asarray(trojaned, dtype=np.float64)
    if c.size == 0 or t.size == 0:
        raise ValueError("AUC needs at least one clean and one Trojaned score")
    allv = np.concatenate([c, t])
    order = np.argsort(allv, kind="stable")
    ranks = np.empty(allv.size)
    sorted_v = allv[order]
    i = 0
    while i < allv.size:
        j = i
        while j + 1 < allv.size and sorted_v[j + 1] == sorted_v[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    u = ranks[c.size :].sum() - t.size * (t.size + 1) / 2.0
    return float(u / (c.size * t.size))


def calibrate_threshold(clean: Sequence[float], trojaned: Sequence[float], fallback: float = 0.5) -> float:
    """Midpoint between the largest clean and the smallest Trojaned calibration score."""
    if len(clean) == 0 or len(trojaned) == 0:
        return fallback
    return 0.5 * (max(clean) + min(trojaned))


@dataclass
class ScanContext:
    """Everything a scan needs besides the model: generator, held-out images and probe set."""

    spec: ZooSpec
    run: RunConfig
    generator: MixtureDenoiser
    heldout: dict
    probe: object

    @classmethod
    def build(cls, spec: ZooSpec, run: RunConfig) -> "ScanContext":
        law = spec.law()
        g = run.guidance
        gen = MixtureDenoiser(isotropic_prior(law.shape, run.prior_var), NoiseSchedule.linear(g.T))
        heldout = law.heldout_per_class(run.heldout_per_class, g.seed + 5)
        probe = law.sample(run.probe_per_class, np.random.default_rng([g.seed, 271]))
        return cls(spec, run, gen, heldout, probe)


def setup_config(run: RunConfig, setup: str) -> RunConfig:
    if setup not in SETUPS:
        raise ValueError(f"unknown setup {setup!r}, expected one of {SETUPS}")
    if setup == "B":
        return RunConfig(**{**run.__dict__, "guidance": run.guidance.replace(lambda1=0.0)})
    return run


def scan_classifier(f, ctx: ScanContext, mode: str = "full", setup: str = "G",
                    lambda2_detect: Optional[float] = None) -> ScanReport:
    run = setup_config(ctx.run, setup)
    cfg = run.guidance if lambda2_detect is None else run.guidance.replace(lambda2_detect=lambda2_detect)
    if setup == "D":
        mode = "fast"
    inverter = pixel_inverter(f, ctx.generator.schedule) if setup == "A" else None
    ho = ctx.heldout
    if mode == "full":
        return scan_full(f, ctx.generator, cfg, ho, cfg.seed, inverter)
    if mode == "fast":
        return scan_fast(f, ctx.generator, cfg, ctx.probe, ho, cfg.seed, inverter)
    raise ValueError(f"unknown scan mode {mode!r}, expected full or fast")


def scan_detector_model(det, spec: ZooSpec, run: RunConfig):
    g = run.guidance
    law = spec.scene_law()
    gen = MixtureDenoiser(isotropic_prior(law.shape, run.prior_var), NoiseSchedule.linear(g.T))
    heldout = law.heldout_per_class(32, g.seed + 3)
    return scan_detector(det, gen, g, heldout, g.seed, run.corner_weight, run.detector_threshold,
                         run.corner_radius)


@dataclass
class Summary:
    auc: float
    accuracy: float
    threshold: float
    target_accuracy: Optional[float]
    n_clean: int
    n_trojaned: int
    n_target_eligible: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(reports: dict, entries: dict, threshold: float) -> Summary:
    """Metrics recomputed from stored reports: AUC, accuracy at ``threshold``, target accuracy."""
    clean = [reports[i].overall for i in sorted(reports) if entries[i]["ground_truth"] == "clean"]
    troj = [reports[i].overall for i in sorted(reports) if entries[i]["ground_truth"] == TROJANED]
    correct = sum((reports[i].overall >= threshold) == (entries[i]["ground_truth"] == TROJANED) for i in reports)
    eligible = [i for i in sorted(reports)
                if entries[i]["attack"] is not None and entries[i]["attack"]["mapping"] == "all-to-one"]
    hits = sum(predict_target(reports[i]) == entries[i]["attack"]["target"] for i in eligible)
    return Summary(auc(clean, troj), correct / len(reports), threshold,
                   hits / len(eligible) if eligible else None, len(clean), len(troj), len(eligible))


@dataclass
class BenchmarkResult:
    setup: str
    mode: str
    reports: dict
    calibration: dict
    summary: Summary
    entries: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    skipped: list = field(default_factory=list)

    @property
    def auc(self) -> float:
        return self.summary.auc

    @property
    def accuracy(self) -> float:
        return self.summary.accuracy

    @property
    def target_accuracy(self) -> Optional[float]:
        return self.summary.target_accuracy


def _usable(zoo_dir: Path, entries: list, skipped: list) -> list:
    out = []
    for e in entries:
        if e["admission"]["status"] != "admitted":
            skipped.append({"id": e["id"], "reason": "rejected at admission"})
            continue
        try:
            out.append((e, load_model(zoo_dir / e["model"])))
        except (OSError, ModelFormatError) as exc:
            skipped.append({"id": e["id"], "reason": f"unreadable model: {exc}"})
    return out


def _truth(entry: dict) -> dict:
    a = entry["attack"]
    attack = None if a is None else {k: a[k] for k in ("kind", "mapping", "target")}
    return {"id": entry["id"], "split": entry["split"], "ground_truth": entry["ground_truth"], "attack": attack}


def calibrated_threshold(calib: dict, entries: dict, fallback: float) -> float:
    clean = [calib[i].overall for i in sorted(calib) if entries[i]["ground_truth"] == "clean"]
    troj = [calib[i].overall for i in sorted(calib) if entries[i]["ground_truth"] == TROJANED]
    return calibrate_threshold(clean, troj, fallback)


def run_benchmark(zoo_dir, run: RunConfig, mode: str = "full", setup: str = "G", out=None,
                  log=None) -> BenchmarkResult:
    """Calibrate the threshold on the calibration split, then scan the evaluation split."""
    zoo_dir = Path(zoo_dir)
    manifest = load_manifest(zoo_dir)
    spec = ZooSpec.from_dict(manifest["spec"])
    ctx = ScanContext.build(spec, run)
    classifiers = [e for e in manifest["entries"] if e["kind"] == "classifier"]
    skipped: list = []
    seconds: dict = {}

    def scan_split(split, threshold=None):
        reports = {}
        for e, f in _usable(zoo_dir, [e for e in classifiers if e["split"] == split], skipped):
            t0 = time.perf_counter()
            reports[e["id"]] = scan_classifier(f, ctx, mode, setup, threshold)
            seconds[e["id"]] = time.perf_counter() - t0
            if log:
                r = reports[e["id"]]
                log(f"[{setup}] {e['id']:<12} {e['ground_truth']:<9} score={r.overall:+.3f} "
                    f"target={r.predicted_target} ({seconds[e['id']]:.1f}s)")
        return reports

    calib = scan_split("calib")
    entries = {e["id"]: _truth(e) for e in classifiers}
    threshold = calibrated_threshold(calib, entries, run.guidance.lambda2_detect)
    reports = scan_split("eval", threshold)
    if not reports:
        raise ValueError("no usable evaluation entries in the zoo")
    result = BenchmarkResult(setup, "fast" if setup == "D" else mode, reports, calib,
                             summarize(reports, entries, threshold), entries, seconds, skipped)
    if out is not None:
        write_benchmark(result, out)
    return result


def write_benchmark(result: BenchmarkResult, out) -> None:
    """Per-entry reports plus a summary; wall-clock times go to a separate file."""
    out = Path(out)
    for name, reports in (("reports", result.reports), ("calibration", result.calibration)):
        (out / name).mkdir(parents=True, exist_ok=True)
        for entry_id, rep in reports.items():
            write_doc(out / name / f"{entry_id}.json", rep.to_dict())
    write_doc(out / "entries.json", result.entries)
    write_doc(out / "summary.json", {"setup": result.setup, "mode": result.mode,
                                     "summary": result.summary.to_dict(), "skipped": result.skipped})
    write_doc(out / "timings.json", {k: round(v, 3) for k, v in result.seconds.items()})


def load_benchmark(directory) -> BenchmarkResult:
    """Rebuild a benchmark from its stored reports; every metric is recomputed, none is read back."""
    directory = Path(directory)
    meta = read_doc(directory / "summary.json")
    entries = read_doc(directory / "entries.json")
    reports = load_reports(directory / "reports")
    calib = load_reports(directory / "calibration")
    if not reports:
        raise ValueError(f"{directory} holds no scan reports")
    fallback = next(iter(reports.values())).config.get("lambda2_detect", 0.5)
    if calib:
        fallback = next(iter(calib.values())).config.get("lambda2_detect", fallback)
    threshold = calibrated_threshold(calib, entries, fallback)
    return BenchmarkResult(meta["setup"], meta["mode"], reports, calib, summarize(reports, entries, threshold),
                           entries, {}, meta.get("skipped", []))


def decision_agreement(a: BenchmarkResult, b: BenchmarkResult) -> float:
    common = sorted(set(a.reports) & set(b.reports))
    if not common:
        raise ValueError("benchmarks share no entries")
    return sum(a.reports[i].decision == b.reports[i].decision for i in common) / len(common)


def run_ablation(zoo_dir, run: RunConfig, setups: Sequence[str] = SETUPS, out=None, log=None) -> dict:
    """One benchmark per setup; returns ``{setup: BenchmarkResult}``."""
    results = {}
    for s in setups:
        if s not in SETUPS:
            raise ValueError(f"unknown setup {s!r}, expected one of {SETUPS}")
        sub = None if out is None else Path(out) / s
        results[s] = run_benchmark(zoo_dir, run, "full", s, sub, log)
    if out is not None:
        write_doc(Path(out) / "ablation.json", ablation_table(results))
    return results


def ablation_table(results: dict) -> dict:
    """Side-by-side metrics in canonical setup order, whatever order the setups ran in."""
    results = {s: results[s] for s in SETUPS if s in results}
    rows = {}
    for s, r in results.items():
        rows[s] = {"name": SETUP_NAMES[s], "auc": r.auc, "accuracy": r.accuracy, "threshold": r.summary.threshold,
                   "target_accuracy": r.target_accuracy,
                   "inversions_per_model": sorted({rep.inversions for rep in r.reports.values()})}
    table = {"setups": rows}
    if "G" in results:
        table["gaps_vs_G"] = {s: results["G"].auc - r.auc for s, r in results.items() if s != "G"}
        if "D" in results:
            table["D_agreement_with_G"] = decision_agreement(results["D"], results["G"])
    return table


def selected_triggers(report: ScanReport) -> list:
    """Accepted candidates aimed at the top-scoring pair's target class, one per source."""
    accepted = [p for p in report.pairs if p.accepted]
    if not accepted:
        return []
    target = max(accepted, key=lambda p: (p.strength, -p.y_tar, -p.y_src)).y_tar
    return [report.candidates[(p.y_src, p.y_tar)] for p in accepted if p.y_tar == target]


@dataclass
class MitigationRun:
    entry_id: str
    triggers: int
    result: MitigationResult

    def to_dict(self) -> dict:
        r = self.result
        return {"id": self.entry_id, "triggers": self.triggers, "acc_before": r.acc_before,
                "acc_after": r.acc_after, "asr_before": r.asr_before, "asr_after": r.asr_after,
                "finetune_size": r.finetune_size}


def mitigate_entry(zoo_dir, entry: dict, run: RunConfig, f=None, report: Optional[ScanReport] = None,
                   clean_fraction: float = 0.01, hyper: Optional[TrainConfig] = None) -> MitigationRun:
    """Scan (unless a report is given), fine-tune with the recovered triggers, re-measure ACC and ASR."""
    zoo_dir = Path(zoo_dir)
    manifest = load_manifest(zoo_dir)
    spec = ZooSpec.from_dict(manifest["spec"])
    f = f if f is not None else load_model(zoo_dir / entry["model"])
    if report is None:
        report = scan_classifier(f, ScanContext.build(spec, run))
    triggers = selected_triggers(report)
    if not triggers:
        raise ValueError(f"scan of {entry['id']} accepted no trigger; nothing to mitigate with")
    n_per_class = max(1, int(round(clean_fraction * spec.train_per_class)))
    clean = spec.law().sample(n_per_class, np.random.default_rng([manifest["seed"], entry["data_seed"], 61]))
    test = zoo_test_set(spec, manifest["seed"])
    poison = load_poison(zoo_dir, entry)
    asr_fn = None if poison is None else (lambda model: classifier_metrics(model, poison, test)[1])

    hyper = hyper or TrainConfig(epochs=10, lr=1e-3, batch_size=32, seed=entry["train_seed"])
    res = mitigate(f, triggers, clean, hyper, test, asr_fn)
    return MitigationRun(entry["id"], len(triggers), res)


def recheck_entry(zoo_dir, entry: dict) -> tuple[float, Optional[float]]:
    """Re-evaluate an entry's admission metrics from its stored files."""
    zoo_dir = Path(zoo_dir)
    manifest = load_manifest(zoo_dir)
    spec = ZooSpec.from_dict(manifest["spec"])
    model = load_model(zoo_dir / entry["model"])
    poison = load_poison(zoo_dir, entry)
    if entry["kind"] == "detector":
        from ..detect import detection_accuracy, detector_asr

        scenes = scene_test_set(spec, manifest["seed"])
        acc = detection_accuracy(model, scenes)[0]
        return acc, None if poison is None else detector_asr(model, scenes, poison)
    return classifier_metrics(model, poison, zoo_test_set(spec, manifest["seed"]))


def load_reports(directory) -> dict:
    return {p.stem: ScanReport.from_dict(read_doc(p)) for p in sorted(Path(directory).glob("*.json"))}

