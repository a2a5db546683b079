"""Command line: synth, train, detect, eval, inspect.

Exit status is 0 on success, 1 on usage errors and 2 on data errors.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .dcccp import TrainLimits, train
from .evaluation import ScoredBox, evaluate, match, top1_accuracy
from .inference import detect
from .io import (DetectionLine, ManifestError, ModelFormatError, SampleFormatError, dump_detections,
                 load_manifest, load_model, load_sample, parse_detections, save_model, write_dataset)
from .model import ModelConfig
from .samples import negative_windows, positive_windows
from .synth import SynthSpec, synth_splits

log = logging.getLogger("aogshape")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


@dataclass
class DetectConfig:
    n_scales: int = 6
    per_octave: int = 2
    nms_iou: float = 0.3
    prune_k: int | None = None
    stride: tuple[float, float] | None = None


@dataclass
class RunConfig:
    """Everything a ``--config`` JSON file may set; unknown keys are rejected."""

    model: ModelConfig = field(default_factory=ModelConfig)
    limits: TrainLimits = field(default_factory=TrainLimits)
    detect: DetectConfig = field(default_factory=DetectConfig)
    negatives_per_image: int = 3
    negatives_per_positive_image: int = 0
    negatives_min_iou: float = 0.0  # near misses: windows from positive images overlap a box at least this much
    synth: SynthSpec = field(default_factory=SynthSpec)
    splits: dict = field(default_factory=lambda: {"train": [60, 60], "test": [40, 40]})

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        extra = set(d) - known
        if extra:
            raise DataError(f"unknown config keys: {sorted(extra)}")
        out = cls()
        if "model" in d:
            out.model = ModelConfig.from_dict(d["model"])
        if "limits" in d:
            out.limits = TrainLimits(**d["limits"])
        if "detect" in d:
            dd = dict(d["detect"])
            if dd.get("stride") is not None:
                dd["stride"] = tuple(dd["stride"])
            out.detect = DetectConfig(**dd)
        if "synth" in d:
            out.synth = SynthSpec.from_dict(d["synth"])
        if "negatives_per_image" in d:
            out.negatives_per_image = int(d["negatives_per_image"])
        if "negatives_per_positive_image" in d:
            out.negatives_per_positive_image = int(d["negatives_per_positive_image"])
        if "negatives_min_iou" in d:
            out.negatives_min_iou = float(d["negatives_min_iou"])
        if "splits" in d:
            out.splits = {k: list(v) for k, v in d["splits"].items()}
        return out


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="aogshape", description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=None, help="random seed (synth data, negative windows)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for per-image detection")
    p.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="cmd", required=True, parser_class=_Parser)

    s = sub.add_parser("synth", help="generate a synthetic dataset")
    s.add_argument("--spec", type=Path, help="SynthSpec JSON (overrides the config's synth section)")
    s.add_argument("--out", type=Path, required=True)

    t = sub.add_parser("train", help="train a model from a manifest")
    t.add_argument("--manifest", type=Path, required=True)
    t.add_argument("--split", default="train")
    t.add_argument("--out", type=Path, required=True, help="model file")
    t.add_argument("--report", type=Path, help="JSON training summary")

    d = sub.add_parser("detect", help="run the detector")
    d.add_argument("--model", type=Path, required=True)
    d.add_argument("--input", type=Path, required=True, help="manifest (.json) or a single sample file")
    d.add_argument("--split", default="test")
    d.add_argument("--out", type=Path, help="detections file (default: stdout)")

    e = sub.add_parser("eval", help="score detections against groundtruth")
    e.add_argument("--detections", type=Path, required=True)
    e.add_argument("--manifest", type=Path, required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--iou", type=float, default=0.5)
    e.add_argument("--csv-prefix", type=Path, help="write <prefix>_fppi.csv and <prefix>_pr.csv")
    e.add_argument("--pr-svg", type=Path, help="precision-recall curve as SVG")
    e.add_argument("--overlay-dir", type=Path, help="one SVG per image with contours, groundtruth and detections")
    e.add_argument("--top1-accuracy", action="store_true", help="also report highest-score-per-image accuracy")
    e.add_argument("--json", type=Path, help="write metrics as JSON")

    i = sub.add_parser("inspect", help="describe a model file")
    i.add_argument("model", type=Path)
    return p


# --- subcommands -----------------------------------------------------------

def cmd_synth(args, cfg: RunConfig) -> int:
    spec = cfg.synth
    if args.spec:
        spec = SynthSpec.from_dict(json.loads(args.spec.read_text()))
    if args.seed is not None:
        spec.seed = args.seed
    sizes = {k: tuple(v) for k, v in cfg.splits.items()}
    pairs = synth_splits(spec, sizes)
    man = write_dataset(pairs, args.out, {"synth": spec.to_dict(), "splits": cfg.splits})
    print(f"wrote {len(man.entries)} samples to {args.out / 'manifest.json'}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    man = load_manifest(args.manifest)
    recs = man.load(args.split)
    pos = positive_windows(recs, cfg.model)
    seed = args.seed if args.seed is not None else 0
    neg = negative_windows(recs, cfg.model, cfg.negatives_per_image, seed,
                           per_positive_image=cfg.negatives_per_positive_image, min_iou=cfg.negatives_min_iou)
    if not pos or not neg:
        raise DataError(f"split {args.split!r} needs positives with groundtruth and negatives")
    log.info("training on %d positive and %d negative windows", len(pos), len(neg))
    t0 = time.perf_counter()
    model, report = train(cfg.model, pos, neg, cfg.limits)
    save_model(model, args.out)
    summary = {"created": time.strftime("%Y-%m-%dT%H:%M:%S"), "seconds": round(time.perf_counter() - t0, 3),
               "n_positive": len(pos), "n_negative": len(neg), **report.to_dict()}
    if args.report:
        args.report.write_text(json.dumps(summary, indent=1) + "\n")
    print(f"iterations {len(report.iterations)} converged {report.converged} "
          f"objective {report.objectives[-1]:.6f} leaves {report.leaves_per_or_node}")
    return 0


def detect_records(model, records, dcfg: DetectConfig, threads: int = 1) -> list[DetectionLine]:
    def run(rec):
        dets = detect(model, rec.contours, dcfg.stride, dcfg.prune_k, dcfg.nms_iou, dcfg.n_scales,
                      dcfg.per_octave, rec.id)
        return [DetectionLine(rec.id, d.score, d.box) for d in dets]

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            chunks = list(ex.map(run, records))
    else:
        chunks = [run(r) for r in records]
    return [d for c in chunks for d in c]


def _records(path: Path, split: str):
    if path.suffix == ".json":
        return load_manifest(path).load(split)
    return [load_sample(path)]


def cmd_detect(args, cfg: RunConfig) -> int:
    model = load_model(args.model)
    dets = detect_records(model, _records(args.input, args.split), cfg.detect, args.threads)
    text = dump_detections(dets)
    if args.out:
        args.out.write_text(text)
    else:
        sys.stdout.write(text)
    return 0


def _svg_curve(x, y, xlabel: str, ylabel: str, title: str) -> str:
    W, H, m = 320, 320, 40
    x = np.concatenate([[0.0], np.asarray(x, dtype=float)])
    y = np.concatenate([[y[0] if len(y) else 0.0], np.asarray(y, dtype=float)])
    xmax = max(1.0, float(x.max()))
    pts = " ".join(f"{m + (W - 2 * m) * a / xmax:.2f},{H - m - (H - 2 * m) * b:.2f}" for a, b in zip(x, y))
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}">\n'
            f'<rect x="{m}" y="{m}" width="{W - 2 * m}" height="{H - 2 * m}" fill="none" stroke="#888"/>\n'
            f'<polyline points="{pts}" fill="none" stroke="#c03" stroke-width="1.5"/>\n'
            f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-size="12">{xlabel}</text>\n'
            f'<text x="12" y="{H / 2}" font-size="12" transform="rotate(-90 12 {H / 2})">{ylabel}</text>\n'
            f'<text x="{W / 2}" y="24" text-anchor="middle" font-size="13">{title}</text>\n</svg>\n')


def _svg_overlay(rec, dets: list[DetectionLine], tp: dict) -> str:
    X = rec.contours
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{X.width:g}" height="{X.height:g}" '
           f'viewBox="0 0 {X.width:g} {X.height:g}">', '<rect width="100%" height="100%" fill="white"/>']
    for c in X.contours:
        pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in c.points)
        out.append(f'<polyline points="{pts}" fill="none" stroke="black" stroke-width="0.8"/>')
    for b in rec.groundtruth:
        out.append(f'<rect x="{b.xmin:.2f}" y="{b.ymin:.2f}" width="{b.width:.2f}" height="{b.height:.2f}" '
                   'fill="none" stroke="#1a7" stroke-width="1"/>')
    for d in dets[:3]:
        color = "#c03" if not tp.get(id(d)) else "#03c"
        b = d.box
        out.append(f'<rect x="{b.xmin:.2f}" y="{b.ymin:.2f}" width="{b.width:.2f}" height="{b.height:.2f}" '
                   f'fill="none" stroke="{color}" stroke-dasharray="2,1" stroke-width="0.8"/>')
    out.append("</svg>\n")
    return "\n".join(out)


def cmd_eval(args, cfg: RunConfig) -> int:
    man = load_manifest(args.manifest)
    recs = man.load(args.split)
    gt = {r.id: list(r.groundtruth) for r in recs}
    images = [r.id for r in recs]
    dets = parse_detections(args.detections.read_text())
    unknown = sorted({d.image_id for d in dets} - set(images))
    if unknown:
        raise DataError(f"detections for images not in split {args.split!r}: {unknown[:3]}")
    boxes = [ScoredBox(d.image_id, d.score, d.box) for d in dets]
    curve = evaluate(boxes, gt, args.iou, images)
    print(f"AP {curve.ap:.4f}")
    metrics = {"ap": curve.ap, "n_detections": len(boxes), "n_images": len(images),
               "n_groundtruth": sum(len(v) for v in gt.values())}
    if args.top1_accuracy:
        acc = top1_accuracy(boxes, gt, args.iou)
        metrics["top1_accuracy"] = acc
        print(f"TOP1 {acc:.4f}")
    if args.csv_prefix:
        base = str(args.csv_prefix)
        Path(base + "_fppi.csv").write_text("fppi,recall\n" + "".join(
            f"{f!r},{r!r}\n" for f, r in zip(curve.fppi.tolist(), curve.fppi_recall.tolist())))
        Path(base + "_pr.csv").write_text("recall,precision\n" + "".join(
            f"{r!r},{p!r}\n" for r, p in zip(curve.recall.tolist(), curve.precision.tolist())))
    if args.pr_svg:
        args.pr_svg.write_text(_svg_curve(curve.recall, curve.precision, "recall", "precision",
                                          f"AP {curve.ap:.4f}"))
    if args.overlay_dir:
        args.overlay_dir.mkdir(parents=True, exist_ok=True)
        m = match(boxes, gt, args.iou, images)
        flags = {(b.image_id, b.score, b.box.as_tuple()): bool(t) for b, t in zip(m.detections, m.tp)}
        by_img: dict[str, list[DetectionLine]] = {}
        for d in sorted(dets, key=lambda d: -d.score):
            by_img.setdefault(d.image_id, []).append(d)
        for r in recs:
            ds = by_img.get(r.id, [])
            tp = {id(d): flags.get((d.image_id, d.score, d.box.as_tuple()), False) for d in ds}
            (args.overlay_dir / f"{r.id}.svg").write_text(_svg_overlay(r, ds, tp))
    if args.json:
        args.json.write_text(json.dumps(metrics, indent=1) + "\n")
    return 0


def cmd_inspect(args, cfg: RunConfig) -> int:
    model = load_model(args.model)
    c = model.config
    lay = model.layout
    w = model.omega
    print(f"layout {c.b1}x{c.b2} (z={c.z}), m={c.m}, window {c.window_w:g}x{c.window_h:g}, dim {lay.dim}")
    print(f"live leaves {int(model.live.sum())}")
    for i in range(c.z):
        slots = model.live_slots(i)
        norms = " ".join(f"{s}:{np.linalg.norm(w[lay.leaf(s)]):.4f}" for s in slots)
        print(f"  or-node {i}: {len(slots)} leaves {norms} | deformation {np.linalg.norm(w[lay.deformation(i)]):.4f}")
    print(f"edges {len(model.edges)} |w_edges| {np.linalg.norm(w[lay.edges]):.4f}")
    print(f"|w_root| {np.linalg.norm(w[lay.root]):.4f}")
    print(f"|w| {np.linalg.norm(w):.4f}")
    return 0


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "detect": cmd_detect, "eval": cmd_eval, "inspect": cmd_inspect}


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.threads < 1:
        print(parser.format_usage() + "aogshape: error: --threads must be >= 1", file=sys.stderr)
        return 1
    try:
        cfg = RunConfig()
        if args.config:
            cfg = RunConfig.from_dict(json.loads(args.config.read_text()))
        return COMMANDS[args.cmd](args, cfg)
    except (DataError, SampleFormatError, ModelFormatError, ManifestError, FileNotFoundError,
            json.JSONDecodeError, TypeError, ValueError) as e:
        print(f"aogshape {args.cmd}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
