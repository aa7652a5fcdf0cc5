"""Model-zoo construction: seeded clean/Trojaned classifiers and detectors with an admission gate."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from ..classifier import (
    ATTACK_KINDS,
    DataLaw,
    LabelMapping,
    PoisonSpec,
    TrainConfig,
    apply_trigger,
    attack_success_rate,
    blocky_pattern,
    corner_patch,
    default_arch,
    evaluate,
    poison_dataset,
    train,
)
from ..classifier.poison import CORNERS
from ..detect import (
    CornerSpec,
    DetectorPoison,
    DetectorTrainConfig,
    SceneLaw,
    default_detector_arch,
    detection_accuracy,
    detector_asr,
    poison_scenes,
    train_detector,
)
from .formats import read_doc, save_model, write_doc

ZOO_FORMAT = "diffscan-zoo-1"
MIN_ASR = 0.9
MIN_ACC = 0.85
MAX_RETRAINS = 3
SEED_STRIDE = 7919


@dataclass(frozen=True)
class ZooSpec:
    n_clean: int = 16
    n_trojaned: int = 16
    n_calib_clean: int = 4
    n_calib_trojaned: int = 4
    n_det_clean: int = 4
    n_det_trojaned: int = 4
    n_one_to_one: int = 2
    n_all_to_all: int = 2
    num_classes: int = 4
    channels: int = 1
    size: int = 16
    sigma: float = 0.3
    amplitude: float = 0.9
    law_seed: int = 0
    train_per_class: int = 150
    test_per_class: int = 100
    epochs: int = 10
    lr: float = 2e-3
    widths: tuple[int, ...] = (6, 8)
    patch_size: int = 4
    patch_rate: float = 0.15
    blend_alpha: float = 0.2
    blend_rate: float = 0.1
    flip_alpha: float = 0.15
    flip_rate: float = 0.2
    rate_jitter: float = 0.05
    all_to_all_rate: float = 0.3
    scene_sprite: int = 8
    scene_sigma: float = 0.2
    det_train: int = 800
    det_test: int = 400
    det_epochs: int = 12
    det_rate: float = 0.15
    det_patch_size: int = 3

    def __post_init__(self):
        if self.n_clean < 1 or self.n_trojaned < 1:
            raise ValueError("a zoo needs at least one clean and one Trojaned model")
        if self.n_one_to_one + self.n_all_to_all > self.n_trojaned:
            raise ValueError("more special label mappings than Trojaned models")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))

    def law(self) -> DataLaw:
        return DataLaw(self.num_classes, (self.channels, self.size, self.size), self.sigma, self.amplitude,
                       self.law_seed)

    def scene_law(self) -> SceneLaw:
        return SceneLaw(self.num_classes, (self.channels, self.size, self.size), self.scene_sprite, 3,
                        self.scene_sigma, self.amplitude, self.law_seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ZooSpec":
        names = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - names)
        if unknown:
            raise KeyError(f"unknown zoo spec key {unknown[0]!r}")
        kw = dict(d)
        if "widths" in kw:
            kw["widths"] = tuple(kw["widths"])
        return cls(**kw)


def zoo_test_set(spec: ZooSpec, seed: int):
    return spec.law().sample(spec.test_per_class, np.random.default_rng([seed, 99991]))


def scene_test_set(spec: ZooSpec, seed: int):
    return spec.scene_law().sample(spec.det_test, np.random.default_rng([seed, 99989]))


def _attack_plan(spec: ZooSpec, seed: int, offset: int, count: int, mapped: bool) -> list[dict]:
    """Attack kind cycles patch / blended / label-flip; special mappings go to random slots."""
    rng = np.random.default_rng([seed, offset, 404])
    plan = []
    for i in range(count):
        plan.append({"kind": ATTACK_KINDS[i % len(ATTACK_KINDS)], "mapping": "all-to-one"})
    if mapped:
        slots = rng.permutation(count)
        for j in slots[: spec.n_one_to_one]:
            plan[j]["mapping"] = "one-to-one"
        for j in slots[spec.n_one_to_one : spec.n_one_to_one + spec.n_all_to_all]:
            plan[j]["mapping"] = "all-to-all"
    return plan


def make_poison(spec: ZooSpec, kind: str, mapping_kind: str, rng: np.random.Generator) -> PoisonSpec:
    k = spec.num_classes
    shape = (spec.channels, spec.size, spec.size)
    target = int(rng.integers(k))
    if mapping_kind == "all-to-one":
        mapping = LabelMapping("all-to-one", target=target)
    elif mapping_kind == "one-to-one":
        source = int((target + rng.integers(1, k)) % k)
        mapping = LabelMapping("one-to-one", target=target, source=source)
    else:
        mapping = LabelMapping("all-to-all", shift=int(rng.integers(1, k)))
    jitter = float(rng.uniform(0.0, spec.rate_jitter))
    if mapping_kind == "all-to-all":
        jitter += spec.all_to_all_rate - {"patch": spec.patch_rate, "blended": spec.blend_rate,
                                          "label-flip": spec.flip_rate}[kind]
    if kind == "patch":
        corner = CORNERS[int(rng.integers(len(CORNERS)))]
        pattern, mask = corner_patch(shape, spec.patch_size, corner, rng)
        return PoisonSpec("patch", pattern, mapping, spec.patch_rate + jitter, mask=mask,
                          notes={"corner": corner, "size": spec.patch_size})
    if kind == "blended":
        return PoisonSpec("blended", blocky_pattern(shape, 4, rng), mapping, spec.blend_rate + jitter,
                          alpha=spec.blend_alpha, notes={"block": 4})
    return PoisonSpec("label-flip", blocky_pattern(shape, 4, rng), mapping, spec.flip_rate + jitter,
                      alpha=spec.flip_alpha, notes={"block": 4, "label_consistent_fraction": 0.5})


def _asr_target(poison: PoisonSpec):
    m = poison.mapping
    return m if m.kind != "all-to-one" else m.target


def _train_classifier(spec: ZooSpec, width: int, data_seed: int, train_seed: int,
                      poison: Optional[PoisonSpec]):
    law = spec.law()
    d = law.sample(spec.train_per_class, np.random.default_rng([data_seed, 1]))
    if poison is not None:
        d, _ = poison_dataset(d, poison, data_seed)
    arch = default_arch(spec.num_classes, law.shape, width=width)
    model, _ = train(d, arch, TrainConfig(epochs=spec.epochs, lr=spec.lr, seed=train_seed))
    return model.rounded()


def classifier_metrics(model, poison: Optional[PoisonSpec], test) -> tuple[float, Optional[float]]:
    acc = evaluate(model, test)
    if poison is None:
        return acc, None
    return acc, attack_success_rate(model, test, lambda x: apply_trigger(x, poison), _asr_target(poison))


def _build_classifier_entry(spec: ZooSpec, seed: int, entry_id: str, split: str, index: int,
                            plan: Optional[dict], test, out: Path) -> dict:
    rng = np.random.default_rng([seed, index, 2 if plan else 1, 31337 if split == "calib" else 17])
    width = int(spec.widths[int(rng.integers(len(spec.widths)))])
    data_seed = int(rng.integers(2**31))
    train_seed = int(rng.integers(2**31))
    poison = make_poison(spec, plan["kind"], plan["mapping"], rng) if plan else None
    status, attempts = "rejected", 0
    acc = asr = None
    model = None
    for attempts in range(1, MAX_RETRAINS + 2):
        ds, ts = (s + (attempts - 1) * SEED_STRIDE for s in (data_seed, train_seed))
        model = _train_classifier(spec, width, ds, ts, poison)
        acc, asr = classifier_metrics(model, poison, test)
        if acc >= MIN_ACC and (asr is None or asr >= MIN_ASR):
            status = "admitted"
            break
    edir = out / "entries" / entry_id
    edir.mkdir(parents=True, exist_ok=True)
    save_model(model, edir / "model.dstl", {"id": entry_id})
    entry = {
        "id": entry_id,
        "kind": "classifier",
        "split": split,
        "ground_truth": "trojaned" if poison else "clean",
        "model": f"entries/{entry_id}/model.dstl",
        "width": width,
        "data_seed": ds,
        "train_seed": ts,
        "attack": None,
        "admission": {"acc": acc, "asr": asr, "attempts": attempts, "status": status},
    }
    if poison is not None:
        write_doc(edir / "attack.json", poison.to_dict())
        m = poison.mapping
        entry["attack"] = {"kind": poison.kind, "mapping": m.kind, "target": m.target, "source": m.source,
                           "shift": m.shift, "rate": poison.rate, "file": f"entries/{entry_id}/attack.json"}
    return entry


def _build_detector_entry(spec: ZooSpec, seed: int, entry_id: str, index: int, trojaned: bool, test,
                          out: Path) -> dict:
    rng = np.random.default_rng([seed, index, 3 if trojaned else 4, 23])
    law = spec.scene_law()
    data_seed = int(rng.integers(2**31))
    train_seed = int(rng.integers(2**31))
    poison = None
    if trojaned:
        corner = CORNERS[index % len(CORNERS)]
        pattern, mask = corner_patch(law.shape, spec.det_patch_size, corner, rng)
        target = int(rng.integers(spec.num_classes))
        poison = DetectorPoison(pattern, mask, target, corner, spec.det_rate, CornerSpec(corner).center)
    arch = default_detector_arch(spec.num_classes, law.shape)
    status, attempts = "rejected", 0
    for attempts in range(1, MAX_RETRAINS + 2):
        ds, ts = (s + (attempts - 1) * SEED_STRIDE for s in (data_seed, train_seed))
        scenes = law.sample(spec.det_train, np.random.default_rng([ds, 1]))
        if poison is not None:
            scenes, _ = poison_scenes(scenes, poison, ds)
        det = train_detector(scenes, arch, DetectorTrainConfig(epochs=spec.det_epochs, seed=ts)).rounded()
        acc, err = detection_accuracy(det, test)
        asr = detector_asr(det, test, poison) if poison else None
        if acc >= MIN_ACC and (asr is None or asr >= MIN_ASR):
            status = "admitted"
            break
    edir = out / "entries" / entry_id
    edir.mkdir(parents=True, exist_ok=True)
    save_model(det, edir / "model.dstl", {"id": entry_id})
    entry = {
        "id": entry_id,
        "kind": "detector",
        "split": "detector",
        "ground_truth": "trojaned" if trojaned else "clean",
        "model": f"entries/{entry_id}/model.dstl",
        "data_seed": ds,
        "train_seed": ts,
        "attack": None,
        "admission": {"acc": acc, "asr": asr, "center_error": err, "attempts": attempts, "status": status},
    }
    if poison is not None:
        write_doc(edir / "attack.json", poison.to_dict())
        entry["attack"] = {"kind": "patch", "mapping": "all-to-one", "target": poison.target,
                           "corner": poison.corner, "rate": poison.rate, "file": f"entries/{entry_id}/attack.json"}
    return entry


def build_zoo(spec: ZooSpec, seed: int, out, log=None) -> dict:
    """Train every zoo member, write per-entry files and ``manifest.json``; returns the manifest."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    test = zoo_test_set(spec, seed)
    entries = []
    groups = [
        ("eval", "clean", spec.n_clean, None),
        ("eval", "trojaned", spec.n_trojaned, _attack_plan(spec, seed, 0, spec.n_trojaned, True)),
        ("calib", "clean", spec.n_calib_clean, None),
        ("calib", "trojaned", spec.n_calib_trojaned, _attack_plan(spec, seed, 1, spec.n_calib_trojaned, False)),
    ]
    for split, truth, count, plan in groups:
        for i in range(count):
            entry_id = f"{split}-{truth[0]}{i:02d}"
            offset = i + (1000 if truth == "trojaned" else 0)
            entries.append(_build_classifier_entry(spec, seed, entry_id, split, offset,
                                                   plan[i] if plan else None, test, out))
            write_doc(out / "entries" / entry_id / "entry.json", entries[-1])
            if log:
                log(_entry_line(entries[-1]))
    if spec.n_det_clean or spec.n_det_trojaned:
        det_test = scene_test_set(spec, seed)
        for truth, count in (("clean", spec.n_det_clean), ("trojaned", spec.n_det_trojaned)):
            for i in range(count):
                entries.append(_build_detector_entry(spec, seed, f"det-{truth[0]}{i:02d}", i,
                                                     truth == "trojaned", det_test, out))
                write_doc(out / entries[-1]["model"].rsplit("/", 1)[0] / "entry.json", entries[-1])
                if log:
                    log(_entry_line(entries[-1]))
    manifest = {"format": ZOO_FORMAT, "seed": int(seed), "spec": spec.to_dict(), "entries": entries}
    write_doc(out / "manifest.json", manifest)
    return manifest


def _entry_line(e: dict) -> str:
    a = e["admission"]
    asr = "-" if a["asr"] is None else f"{a['asr']:.3f}"
    kind = e["attack"]["kind"] + "/" + e["attack"]["mapping"] if e["attack"] else "clean"
    return f"{e['id']:<12} {kind:<22} acc={a['acc']:.3f} asr={asr} attempts={a['attempts']} {a['status']}"


def load_manifest(zoo_dir) -> dict:
    path = Path(zoo_dir) / "manifest.json"
    manifest = read_doc(path)
    if manifest.get("format") != ZOO_FORMAT:
        raise ValueError(f"{path} is not a zoo manifest (format {manifest.get('format')!r})")
    return manifest


def load_poison(zoo_dir, entry: dict):
    if entry.get("attack") is None:
        return None
    doc = read_doc(Path(zoo_dir) / entry["attack"]["file"])
    return DetectorPoison.from_dict(doc) if entry["kind"] == "detector" else PoisonSpec.from_dict(doc)
