"""Command-line entry point: ``diffscan <subcommand> ...``.

Exit status is 0 on success, 1 on a usage error (bad arguments, bad config)
and 2 on a runtime failure (missing or unreadable files, failed scans).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from ..classifier import Classifier
from ..detect import Detector
from .bench import (
    SETUPS,
    ScanContext,
    ablation_table,
    load_benchmark,
    mitigate_entry,
    run_ablation,
    scan_classifier,
    scan_detector_model,
)
from .config import ConfigError, RunConfig, load_config
from .formats import ModelFormatError, export_trigger, load_model, read_doc, save_model, write_doc
from .zoo import ZooSpec, build_zoo, load_manifest

log = logging.getLogger("diffscan")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def parse_zoo_spec(path) -> ZooSpec:
    """``key = value`` lines naming :class:`ZooSpec` fields; ``widths`` is a comma list."""
    types = {f.name: f.type for f in fields(ZooSpec)}
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown zoo spec key {key!r}")
        try:
            if key == "widths":
                values[key] = tuple(int(w) for w in value.split(","))
            else:
                values[key] = {"int": int, "float": float}[types[key]](value)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
    try:
        return ZooSpec(**values)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def _run_config(path) -> RunConfig:
    return RunConfig() if path is None else load_config(path)


def _zoo_spec_for(zoo) -> ZooSpec:
    return ZooSpec() if zoo is None else ZooSpec.from_dict(load_manifest(zoo)["spec"])


def cmd_zoo(args) -> int:
    spec = ZooSpec() if args.spec is None else parse_zoo_spec(args.spec)
    manifest = build_zoo(spec, args.seed, args.out, log=log.info)
    rejected = [e["id"] for e in manifest["entries"] if e["admission"]["status"] != "admitted"]
    print(f"wrote {len(manifest['entries'])} entries to {args.out} ({len(rejected)} rejected)")
    for entry_id in rejected:
        print(f"  rejected: {entry_id}")
    return EXIT_OK


def cmd_scan(args) -> int:
    run = _run_config(args.config)
    f = load_model(args.model)
    if not isinstance(f, Classifier):
        raise UsageError(f"{args.model} is not a classifier; use scan-detect for detectors")
    report = scan_classifier(f, ScanContext.build(_zoo_spec_for(args.zoo), run), args.mode)
    write_doc(args.out, report.to_dict())
    if args.triggers:
        tdir = Path(args.triggers)
        tdir.mkdir(parents=True, exist_ok=True)
        for (s, t), cand in sorted(report.candidates.items()):
            export_trigger(cand.pattern, tdir / f"trigger_{s}_to_{t}.pgm")
    print(f"overall={report.overall:.4f} decision={report.decision} target={report.predicted_target}")
    return EXIT_OK


def cmd_scan_detect(args) -> int:
    run = _run_config(args.config)
    det = load_model(args.model)
    if not isinstance(det, Detector):
        raise UsageError(f"{args.model} is not a detector; use scan for classifiers")
    report = scan_detector_model(det, _zoo_spec_for(args.zoo), run)
    write_doc(args.out, report.to_dict())
    if args.triggers and report.candidate is not None:
        Path(args.triggers).mkdir(parents=True, exist_ok=True)
        export_trigger(report.candidate.pattern, Path(args.triggers) / "trigger.pgm")
    print(f"combined={report.combined:.4f} (shift {report.class_shift:.4f} + displacement "
          f"{report.displacement:.4f}) corner={report.corner} decision={report.decision}")
    return EXIT_OK


def cmd_mitigate(args) -> int:
    run = _run_config(args.config)
    entry_dir = Path(args.zoo_entry)
    entry = read_doc(entry_dir / "entry.json")
    zoo_dir = entry_dir.parent.parent
    f = load_model(args.model)
    if not isinstance(f, Classifier):
        raise UsageError(f"{args.model} is not a classifier")
    res = mitigate_entry(zoo_dir, entry, run, f=f)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_model(res.result.model, out / "model.dstl", {"mitigated_from": entry["id"]})
    write_doc(out / "mitigation.json", res.to_dict())
    d = res.to_dict()
    asr = "" if d["asr_before"] is None else f" asr {d['asr_before']:.3f} -> {d['asr_after']:.3f}"
    print(f"acc {d['acc_before']:.3f} -> {d['acc_after']:.3f}{asr}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    setups = [s.strip() for s in args.setups.split(",") if s.strip()]
    bad = [s for s in setups if s not in SETUPS]
    if bad or not setups:
        raise UsageError(f"unknown setup {bad[0] if bad else '(none)'!r}; choose from {','.join(SETUPS)}")
    out = Path(args.out) if args.out else Path(args.zoo) / "ablation"
    results = run_ablation(args.zoo, _run_config(args.config), setups, out, log=log.info)
    print(render_ablation(ablation_table(results)))
    return EXIT_OK


def render_ablation(table: dict) -> str:
    lines = [f"{'setup':<6} {'name':<12} {'AUC':>7} {'acc':>7} {'thresh':>8} {'target':>7} {'inv/model':>9}"]
    for s, row in table["setups"].items():
        tgt = "-" if row["target_accuracy"] is None else f"{row['target_accuracy']:.3f}"
        inv = ",".join(str(i) for i in row["inversions_per_model"])
        lines.append(f"{s:<6} {row['name']:<12} {row['auc']:>7.3f} {row['accuracy']:>7.3f} "
                     f"{row['threshold']:>8.3f} {tgt:>7} {inv:>9}")
    for s, gap in table.get("gaps_vs_G", {}).items():
        lines.append(f"AUC gap G - {s}: {gap:+.3f}")
    if "D_agreement_with_G" in table:
        lines.append(f"fast/full decision agreement: {table['D_agreement_with_G']:.3f}")
    return "\n".join(lines)


def render_benchmark(result) -> str:
    s = result.summary
    tgt = "-" if s.target_accuracy is None else f"{s.target_accuracy:.3f} over {s.n_target_eligible}"
    lines = [f"setup {result.setup} ({result.mode}): {s.n_clean} clean, {s.n_trojaned} trojaned",
             f"  AUC {s.auc:.4f}  accuracy {s.accuracy:.4f} at threshold {s.threshold:.4f}  target accuracy {tgt}",
             f"  {'entry':<12} {'truth':<9} {'score':>8} {'decision':<9} {'target':>6}"]
    for entry_id in sorted(result.reports):
        r = result.reports[entry_id]
        truth = result.entries[entry_id]["ground_truth"]
        pt = "-" if r.predicted_target is None else str(r.predicted_target)
        lines.append(f"  {entry_id:<12} {truth:<9} {r.overall:>8.4f} {r.decision:<9} {pt:>6}")
    for sk in result.skipped:
        lines.append(f"  skipped {sk['id']}: {sk['reason']}")
    return "\n".join(lines)


def cmd_report(args) -> int:
    root = Path(args.input)
    if not root.is_dir():
        raise FileNotFoundError(f"no such directory: {root}")
    dirs = [root] if (root / "summary.json").exists() else sorted(p.parent for p in root.glob("*/summary.json"))
    if not dirs:
        raise FileNotFoundError(f"{root} holds no benchmark output")
    results = {}
    for d in dirs:
        r = load_benchmark(d)
        results[r.setup] = r
        print(render_benchmark(r))
    if len(results) > 1:
        print(render_ablation(ablation_table(results)))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="diffscan", description="Diffusion-guided Trojan scanning of small image models.")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-model progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    z = sub.add_parser("zoo", help="train a seeded zoo of clean and Trojaned models")
    z.add_argument("--spec", help="key = value zoo spec (defaults if omitted)")
    z.add_argument("--out", required=True)
    z.add_argument("--seed", type=int, default=0)
    z.set_defaults(func=cmd_zoo)

    for name, func, help_ in (("scan", cmd_scan, "scan a classifier"),
                              ("scan-detect", cmd_scan_detect, "scan an object detector")):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--model", required=True)
        s.add_argument("--config", help="key = value run config")
        s.add_argument("--zoo", help="zoo directory whose data law supplies held-out images")
        s.add_argument("--out", required=True, help="report file")
        s.add_argument("--triggers", help="directory for exported trigger images")
        if name == "scan":
            s.add_argument("--mode", choices=("full", "fast"), default="full")
        s.set_defaults(func=func)

    m = sub.add_parser("mitigate", help="fine-tune a model with its recovered triggers")
    m.add_argument("--model", required=True)
    m.add_argument("--zoo-entry", required=True, help="zoo entry directory (holds entry.json)")
    m.add_argument("--config")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_mitigate)

    a = sub.add_parser("ablate", help="benchmark a zoo under ablation setups")
    a.add_argument("--zoo", required=True)
    a.add_argument("--setups", default=",".join(SETUPS))
    a.add_argument("--config")
    a.add_argument("--out", help="output directory (default: <zoo>/ablation)")
    a.set_defaults(func=cmd_ablate)

    r = sub.add_parser("report", help="summarize stored benchmark reports")
    r.add_argument("--in", dest="input", required=True)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ModelFormatError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
