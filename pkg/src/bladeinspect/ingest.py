"""Readers for detector output, OBB ground truth and dataset manifests.

Detection/annotation files hold one record per line::

    class_index x1 y1 x2 y2 x3 y3 x4 y4 [confidence]

with normalized coordinates. Blank lines and ``#`` comments are skipped.
Ground-truth lines omit the confidence, which then defaults to 1.0.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .geometry import Detection, GeometryError, OrientedBox

SPLITS = frozenset({"train", "val", "test"})
DEFAULT_TAXONOMY = ("coating", "dirt", "VG-missing-teeth", "markings")


class ParseError(ValueError):
    def __init__(self, message: str, line_no: int | None = None, source: str | None = None):
        super().__init__(message)
        self.message = message
        self.line_no = line_no
        self.source = source

    def __str__(self) -> str:
        where = [self.source] if self.source else []
        if self.line_no is not None:
            where.append(f"line {self.line_no}")
        return ": ".join(where + [self.message])


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class ImageEntry:
    image_id: str
    width_px: int
    height_px: int
    path: str
    split: str


@dataclass(frozen=True)
class DatasetManifest:
    images: tuple[ImageEntry, ...]
    taxonomy: tuple[str, ...]

    def split(self, name: str) -> list[ImageEntry]:
        return [im for im in self.images if im.split == name]

    def get(self, image_id: str) -> ImageEntry:
        for im in self.images:
            if im.image_id == image_id:
                return im
        raise KeyError(image_id)


@dataclass
class AnnotationSet:
    image_id: str
    ground_truth: list[Detection] = field(default_factory=list)


def parse_obb_line(line: str, taxonomy: Sequence[str], line_no: int | None = None) -> Detection:
    fields = line.split()
    if len(fields) not in (9, 10):
        raise ParseError(
            f"expected 9 or 10 fields (class + 8 coordinates [+ confidence]), got {len(fields)}", line_no
        )
    try:
        cls_index = int(fields[0])
    except ValueError:
        raise ParseError(f"class index {fields[0]!r} is not an integer", line_no) from None
    if not 0 <= cls_index < len(taxonomy):
        raise ParseError(f"class index {cls_index} outside taxonomy of {len(taxonomy)} classes", line_no)
    try:
        values = [float(v) for v in fields[1:]]
    except ValueError as exc:
        raise ParseError(f"non-numeric field: {exc}", line_no) from None
    coords = values[:8]
    confidence = values[8] if len(values) == 9 else 1.0
    for v in coords:
        if not 0.0 <= v <= 1.0:
            raise ParseError(f"coordinate {v} outside [0, 1]", line_no)
    try:
        return Detection(OrientedBox.from_flat(coords), taxonomy[cls_index], confidence)
    except GeometryError as exc:
        raise ParseError(str(exc), line_no) from None


def _num(v: float) -> str:
    text = repr(float(v))
    return text[:-2] if text.endswith(".0") else text


def format_obb_line(d: Detection, taxonomy: Sequence[str], with_confidence: bool = True) -> str:
    """Canonical serialization; :func:`parse_obb_line` inverts it exactly."""
    parts = [str(taxonomy.index(d.class_label))] + [_num(v) for v in d.box.flat()]
    if with_confidence:
        parts.append(_num(d.confidence))
    return " ".join(parts)


def parse_obb_text(text: str, taxonomy: Sequence[str], source: str | None = None) -> list[Detection]:
    out = []
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            out.append(parse_obb_line(line, taxonomy, no))
        except ParseError as exc:
            exc.source = source
            raise
    return out


def load_detection_file(path: str | Path, taxonomy: Sequence[str]) -> list[Detection]:
    path = Path(path)
    return parse_obb_text(path.read_text(encoding="utf-8"), taxonomy, source=str(path))


def write_detection_file(path: str | Path, detections: Iterable[Detection], taxonomy: Sequence[str],
                         with_confidence: bool = True) -> None:
    lines = [format_obb_line(d, taxonomy, with_confidence) for d in detections]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_manifest(document: str | bytes | dict) -> DatasetManifest:
    """Validate a manifest given as JSON text or an already-decoded mapping."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest is not valid JSON: {exc}") from None
    if not isinstance(document, dict):
        raise ManifestError("manifest must be a JSON object")

    taxonomy = document.get("taxonomy")
    if not isinstance(taxonomy, list) or not taxonomy or not all(isinstance(c, str) and c for c in taxonomy):
        raise ManifestError("taxonomy must be a non-empty list of class names")
    if len(set(taxonomy)) != len(taxonomy):
        raise ManifestError("taxonomy contains duplicate class names")

    raw_images = document.get("images")
    if not isinstance(raw_images, list) or not raw_images:
        raise ManifestError("manifest lists no images")
    seen: set[str] = set()
    images = []
    for k, entry in enumerate(raw_images):
        try:
            image_id = str(entry["id"])
            width, height = int(entry["width"]), int(entry["height"])
            split = entry["split"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"image entry {k} is malformed: {exc!r}") from None
        if image_id in seen:
            raise ManifestError(f"duplicate image id {image_id!r}")
        if split not in SPLITS:
            raise ManifestError(f"image {image_id!r} has unknown split {split!r}")
        if width <= 0 or height <= 0:
            raise ManifestError(f"image {image_id!r} has non-positive dimensions")
        seen.add(image_id)
        images.append(ImageEntry(image_id, width, height, str(entry.get("path", "")), split))
    return DatasetManifest(tuple(images), tuple(taxonomy))


def load_manifest_file(path: str | Path) -> DatasetManifest:
    return load_manifest(Path(path).read_text(encoding="utf-8"))


def manifest_to_dict(manifest: DatasetManifest) -> dict:
    return {
        "taxonomy": list(manifest.taxonomy),
        "images": [
            {"id": im.image_id, "width": im.width_px, "height": im.height_px, "path": im.path, "split": im.split}
            for im in manifest.images
        ],
    }


def load_annotations(directory: str | Path, manifest: DatasetManifest, split: str | None = None) -> list[AnnotationSet]:
    """Read ``<image_id>.txt`` ground truth for every (selected) manifest image."""
    directory = Path(directory)
    out = []
    for im in manifest.images:
        if split is not None and im.split != split:
            continue
        path = directory / f"{im.image_id}.txt"
        if not path.exists():
            raise FileNotFoundError(f"no annotation file for image {im.image_id!r} at {path}")
        dets = load_detection_file(path, manifest.taxonomy)
        out.append(AnnotationSet(im.image_id, [Detection(d.box, d.class_label, 1.0) for d in dets]))
    return out
