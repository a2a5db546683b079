"""Sample text format, binary model container, manifests and detection files."""
from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import BoundingBox, Contour, ContourSet
from .model import AndOrModel, ModelConfig

SAMPLE_MAGIC = "AOGC"
SAMPLE_VERSION = 1
MODEL_MAGIC = b"AOGM"
MODEL_VERSION = 1
MANIFEST_VERSION = 1


class SampleFormatError(ValueError):
    def __init__(self, line: int, msg: str, path: str | None = None):
        self.line = line
        where = f"{path}:" if path else "line "
        super().__init__(f"{where}{line}: {msg}")


class VersionError(SampleFormatError):
    pass


class MalformedLineError(SampleFormatError):
    pass


class OutOfBoundsError(SampleFormatError):
    pass


class ModelFormatError(ValueError):
    pass


class ManifestError(ValueError):
    pass


def fmt_real(x: float) -> str:
    """Shortest text that parses back to the same double; integers lose the '.0'."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return repr(x)


@dataclass
class SampleRecord:
    id: str
    label: int
    contours: ContourSet
    groundtruth: list[BoundingBox] = field(default_factory=list)

    def __post_init__(self):
        if self.label not in (1, -1):
            raise ValueError(f"label must be +1 or -1, got {self.label}")


# --- samples ---------------------------------------------------------------

def dump_sample(rec: SampleRecord) -> str:
    X = rec.contours
    lines = [f"{SAMPLE_MAGIC} {SAMPLE_VERSION} {fmt_real(X.width)} {fmt_real(X.height)} {'+1' if rec.label == 1 else '-1'}"]
    for c in X.contours:
        lines.append(f"C {c.id} {len(c.points)}")
        lines.extend(f"{fmt_real(x)} {fmt_real(y)}" for x, y in c.points)
    for b in rec.groundtruth:
        lines.append("GT " + " ".join(fmt_real(v) for v in b.as_tuple()))
    return "\n".join(lines) + "\n"


def _reals(parts: list[str], n: int, lineno: int, path) -> list[float]:
    if len(parts) != n:
        raise MalformedLineError(lineno, f"expected {n} numbers, got {len(parts)}", path)
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        raise MalformedLineError(lineno, f"not a number in {' '.join(parts)!r}", path) from None
    if not all(np.isfinite(vals)):
        raise MalformedLineError(lineno, "non-finite value", path)
    return vals


def parse_sample(text: str, sample_id: str = "", path: str | None = None) -> SampleRecord:
    lines = text.splitlines()
    if not lines:
        raise MalformedLineError(1, "empty file", path)
    head = lines[0].split()
    if len(head) != 5 or head[0] != SAMPLE_MAGIC:
        raise MalformedLineError(1, "header must be 'AOGC <version> <width> <height> <label>'", path)
    if head[1] != str(SAMPLE_VERSION):
        raise VersionError(1, f"unsupported version {head[1]}", path)
    width, height = _reals(head[2:4], 2, 1, path)
    if width <= 0 or height <= 0:
        raise MalformedLineError(1, "canvas size must be positive", path)
    if head[4] not in ("+1", "-1", "1"):
        raise MalformedLineError(1, f"label must be +1 or -1, got {head[4]!r}", path)
    label = -1 if head[4] == "-1" else 1
    contours: list[Contour] = []
    gts: list[BoundingBox] = []
    n = 1
    while n < len(lines):
        lineno = n + 1
        parts = lines[n].split()
        n += 1
        if not parts:
            continue
        if parts[0] == "C":
            if len(parts) != 3:
                raise MalformedLineError(lineno, "contour line must be 'C <id> <npoints>'", path)
            try:
                cid, npts = int(parts[1]), int(parts[2])
            except ValueError:
                raise MalformedLineError(lineno, "contour id and size must be integers", path) from None
            if npts < 2:
                raise MalformedLineError(lineno, "a contour needs at least two points", path)
            pts = []
            for _ in range(npts):
                if n >= len(lines):
                    raise MalformedLineError(n + 1, f"contour {cid} ends early", path)
                x, y = _reals(lines[n].split(), 2, n + 1, path)
                if not (0.0 <= x <= width and 0.0 <= y <= height):
                    raise OutOfBoundsError(n + 1, f"point ({x}, {y}) outside the {fmt_real(width)}x{fmt_real(height)} canvas", path)
                pts.append((x, y))
                n += 1
            try:
                contours.append(Contour(np.array(pts), cid))
            except ValueError as e:
                raise MalformedLineError(lineno, str(e), path) from None
        elif parts[0] == "GT":
            x0, y0, x1, y1 = _reals(parts[1:], 4, lineno, path)
            if not (x0 < x1 and y0 < y1):
                raise MalformedLineError(lineno, "groundtruth box must have xmin < xmax and ymin < ymax", path)
            gts.append(BoundingBox(x0, y0, x1, y1))
        else:
            raise MalformedLineError(lineno, f"unknown record {parts[0]!r}", path)
    try:
        X = ContourSet(tuple(contours), width, height)
    except ValueError as e:
        raise MalformedLineError(1, str(e), path) from None
    return SampleRecord(sample_id, label, X, gts)


def save_sample(rec: SampleRecord, path) -> None:
    Path(path).write_text(dump_sample(rec), encoding="ascii")


def load_sample(path, sample_id: str | None = None) -> SampleRecord:
    p = Path(path)
    return parse_sample(p.read_text(encoding="ascii"), sample_id if sample_id is not None else p.stem, str(p))


# --- models ----------------------------------------------------------------

def dump_model(model: AndOrModel) -> bytes:
    header = json.dumps({"config": model.config.to_dict()}, sort_keys=True).encode()
    live = model.live.astype(np.uint8)
    parts = [
        MODEL_MAGIC,
        struct.pack("<II", MODEL_VERSION, len(header)),
        header,
        struct.pack("<II", *live.shape), live.tobytes(),
        struct.pack("<Q", len(model.edges)), model.edges.astype("<i8").tobytes(),
        struct.pack("<Q", len(model.omega)), model.omega.astype("<f8").tobytes(),
    ]
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def parse_model(data: bytes) -> AndOrModel:
    if len(data) < 12 or data[:4] != MODEL_MAGIC:
        raise ModelFormatError("not a model file")
    body, (crc,) = data[:-4], struct.unpack("<I", data[-4:])
    if zlib.crc32(body) != crc:
        raise ModelFormatError("checksum mismatch (truncated or corrupted file)")
    version, hlen = struct.unpack_from("<II", body, 4)
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    off = 12
    header = json.loads(body[off:off + hlen])
    off += hlen
    z, m = struct.unpack_from("<II", body, off)
    off += 8
    live = np.frombuffer(body, np.uint8, z * m, off).reshape(z, m).astype(bool)
    off += z * m
    (ne,) = struct.unpack_from("<Q", body, off)
    off += 8
    edges = np.frombuffer(body, "<i8", 2 * ne, off).reshape(ne, 2).astype(np.int64)
    off += 16 * ne
    (nw,) = struct.unpack_from("<Q", body, off)
    off += 8
    omega = np.frombuffer(body, "<f8", nw, off).astype(np.float64)
    off += 8 * nw
    if off != len(body):
        raise ModelFormatError("trailing bytes in model file")
    return AndOrModel(ModelConfig.from_dict(header["config"]), live, omega, edges)


def save_model(model: AndOrModel, path) -> None:
    Path(path).write_bytes(dump_model(model))


def load_model(path) -> AndOrModel:
    return parse_model(Path(path).read_bytes())


# --- manifests -------------------------------------------------------------

@dataclass
class ManifestEntry:
    id: str
    file: str
    split: str
    label: int


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)
    meta: dict = field(default_factory=dict)
    version: int = MANIFEST_VERSION

    def split(self, name: str) -> list[ManifestEntry]:
        return [e for e in self.entries if e.split == name]

    def path(self, e: ManifestEntry) -> Path:
        return self.root / e.file

    def load(self, split: str | None = None) -> list[SampleRecord]:
        es = self.entries if split is None else self.split(split)
        return [load_sample(self.path(e), e.id) for e in es]


def save_manifest(man: DatasetManifest, path) -> None:
    doc = {"version": man.version, "meta": man.meta,
           "samples": [{"id": e.id, "file": e.file, "split": e.split, "label": e.label} for e in man.entries]}
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")


def load_manifest(path, check_files: bool = True) -> DatasetManifest:
    p = Path(path)
    try:
        doc = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ManifestError(f"{p}: not JSON ({e})") from None
    if doc.get("version") != MANIFEST_VERSION:
        raise ManifestError(f"{p}: unsupported manifest version {doc.get('version')}")
    entries = [ManifestEntry(str(s["id"]), s["file"], s.get("split", ""), int(s["label"])) for s in doc["samples"]]
    ids = [e.id for e in entries]
    if len(set(ids)) != len(ids):
        raise ManifestError(f"{p}: duplicate sample ids")
    man = DatasetManifest(entries, p.parent, doc.get("meta", {}))
    if check_files:
        missing = [e.file for e in entries if not man.path(e).exists()]
        if missing:
            raise ManifestError(f"{p}: missing sample files {missing[:3]}")
    return man


def write_dataset(records: Iterable[tuple[str, SampleRecord]], out_dir, meta: dict | None = None) -> DatasetManifest:
    """Save (split, record) pairs as sample files plus ``manifest.json``."""
    out = Path(out_dir)
    (out / "samples").mkdir(parents=True, exist_ok=True)
    entries = []
    for split, rec in records:
        rel = f"samples/{rec.id}.aogc"
        save_sample(rec, out / rel)
        entries.append(ManifestEntry(rec.id, rel, split, rec.label))
    man = DatasetManifest(entries, out, meta or {})
    save_manifest(man, out / "manifest.json")
    return man


# --- detections ------------------------------------------------------------

@dataclass
class DetectionLine:
    image_id: str
    score: float
    box: BoundingBox


def dump_detections(dets: Sequence[DetectionLine]) -> str:
    """One line per detection, grouped by image, score descending within an image."""
    order = sorted(dets, key=lambda d: (d.image_id, -d.score, d.box.as_tuple()))
    return "".join(f"{d.image_id} {repr(float(d.score))} " + " ".join(repr(float(v)) for v in d.box.as_tuple()) + "\n"
                   for d in order)


def parse_detections(text: str) -> list[DetectionLine]:
    out = []
    for n, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise MalformedLineError(n, "detection line must be '<image-id> <score> <xmin> <ymin> <xmax> <ymax>'")
        vals = _reals(parts[1:], 5, n, None)
        out.append(DetectionLine(parts[0], vals[0], BoundingBox(*vals[1:])))
    return out
