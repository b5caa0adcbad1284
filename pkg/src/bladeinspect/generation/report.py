"""Maintenance report model, JSON extraction from raw model text, and
validation of a report against the detection evidence it was built from."""
from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from typing import Iterable, Sequence

import jsonschema

from ..geometry import Detection, GridLabel, OrientedBox, centroid, grid_cell
from ..ingest import DEFAULT_TAXONOMY

URGENCY_LEVELS = ("routine", "scheduled", "immediate")
DEFAULT_CORNER_TOL = 0.05

_DEFECT_KEYS = ("defect_class", "grid_label", "obb_corners", "severity_code", "procedure_ref", "urgency",
                "recommendation")
_REPORT_KEYS = ("report_id", "image_id", "defects", "summary")
PRESENCE_FIELDS = ("severity_code", "procedure_ref", "urgency", "recommendation")

VIOLATION_KINDS = (
    "grid_mismatch",
    "corner_drift",
    "unknown_class",
    "unknown_procedure",
    "missing_field",
    "count_mismatch",
    "schema_error",
)
SPATIAL_KINDS = frozenset({"grid_mismatch", "corner_drift"})


@lru_cache(maxsize=1)
def report_schema() -> dict:
    text = resources.files("bladeinspect").joinpath("assets/report_schema.json").read_text(encoding="utf-8")
    return json.loads(text)


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    defect_index: int | None = None

    def __post_init__(self):
        if self.kind not in VIOLATION_KINDS:
            raise ValueError(f"unknown violation kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "detail": self.detail, "defect_index": self.defect_index}


class ReportExtractionError(ValueError):
    """Raw model output holds no usable JSON report."""

    def __init__(self, message: str, raw: str = "", fields: Sequence[tuple[str, str]] = ()):
        super().__init__(message)
        self.raw = raw
        self.fields = list(fields)

    def violations(self) -> list[Violation]:
        if not self.fields:
            return [Violation("schema_error", str(self))]
        return [Violation("schema_error", f"{path}: {msg}") for path, msg in self.fields]


class ReportSchemaError(ReportExtractionError):
    """A JSON object was found but it does not satisfy the report schema."""


@dataclass
class DefectEntry:
    defect_class: str
    grid_label: GridLabel
    obb_corners: tuple[tuple[float, float], ...]
    severity_code: str | None = None
    procedure_ref: str | None = None
    urgency: str | None = None
    recommendation: str | None = None
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_detection(cls, d: Detection, **fields) -> "DefectEntry":
        return cls(d.class_label, grid_cell(centroid(d.box)), tuple(d.box.as_tuples()), **fields)

    @property
    def centroid(self) -> tuple[float, float]:
        xs, ys = zip(*self.obb_corners)
        return math.fsum(xs) / 4.0, math.fsum(ys) / 4.0

    def to_dict(self) -> dict:
        out = {
            "defect_class": self.defect_class,
            "grid_label": self.grid_label.value,
            "obb_corners": [[x, y] for x, y in self.obb_corners],
        }
        for key in PRESENCE_FIELDS:
            value = getattr(self, key)
            if value is not None:
                out[key] = value
        out.update(self.extras)
        return out


@dataclass
class MaintenanceReport:
    defects: list[DefectEntry] = field(default_factory=list)
    report_id: str | None = None
    image_id: str | None = None
    summary: str | None = None
    extras: dict = field(default_factory=dict)
    flags: list[str] = field(default_factory=list, compare=False)

    def to_dict(self) -> dict:
        out: dict = {}
        if self.report_id is not None:
            out["report_id"] = self.report_id
        if self.image_id is not None:
            out["image_id"] = self.image_id
        out["defects"] = [d.to_dict() for d in self.defects]
        if self.summary is not None:
            out["summary"] = self.summary
        out.update(self.extras)
        return out

    def to_json(self, indent: int | None = 2) -> str:
        return json.dumps(self.to_dict(), indent=indent, ensure_ascii=False)

    @property
    def text(self) -> str:
        """Prose content used by the text-overlap metrics."""
        parts = [d.recommendation for d in self.defects if d.recommendation]
        if self.summary:
            parts.append(self.summary)
        return "\n".join(parts)


def _path(err: jsonschema.ValidationError) -> str:
    out = ""
    for part in err.absolute_path:
        out += f"[{part}]" if isinstance(part, int) else (f".{part}" if out else str(part))
    return out or "<root>"


def report_from_dict(obj: dict) -> MaintenanceReport:
    """Schema-validate a decoded object and build the typed report."""
    validator = jsonschema.Draft202012Validator(report_schema())
    errors = sorted(validator.iter_errors(obj), key=lambda e: (list(map(str, e.absolute_path)), e.message))
    if errors:
        fields = [(_path(e), e.message) for e in errors]
        raise ReportSchemaError(
            "report fails schema: " + "; ".join(f"{p}: {m}" for p, m in fields), json.dumps(obj), fields
        )
    flags = [f"unknown field {k!r}" for k in obj if k not in _REPORT_KEYS]
    defects = []
    for i, raw in enumerate(obj["defects"]):
        flags += [f"defects[{i}]: unknown field {k!r}" for k in raw if k not in _DEFECT_KEYS]
        defects.append(
            DefectEntry(
                defect_class=raw["defect_class"],
                grid_label=GridLabel.parse(raw["grid_label"]),
                obb_corners=tuple((float(x), float(y)) for x, y in raw["obb_corners"]),
                extras={k: v for k, v in raw.items() if k not in _DEFECT_KEYS},
                **{k: raw.get(k) for k in PRESENCE_FIELDS},
            )
        )
    return MaintenanceReport(
        defects=defects,
        report_id=obj.get("report_id"),
        image_id=obj.get("image_id"),
        summary=obj.get("summary"),
        extras={k: v for k, v in obj.items() if k not in _REPORT_KEYS},
        flags=flags,
    )


_FENCE = re.compile(r"```[a-zA-Z0-9_-]*\s*\n?(.*?)```", re.DOTALL)
_KEY_BEFORE = re.compile(r'"([^"\\]+)"\s*:')


def _balanced_object(text: str, start: int) -> int | None:
    """Index one past the brace closing the object opened at ``start``."""
    depth = 0
    in_string = escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
        elif ch == '"':
            in_string = True
        elif ch == "{":
            depth += 1
        elif ch == "}":
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def extract_json(raw: str) -> MaintenanceReport:
    """Parse the first balanced top-level JSON object out of model text."""
    text = raw or ""
    fence = next((m for m in _FENCE.finditer(text) if "{" in m.group(1)), None)
    region = fence.group(1) if fence else text
    start = region.find("{")
    end = _balanced_object(region, start) if start >= 0 else None
    if end is None:
        raise ReportExtractionError("no balanced JSON object found in model output", raw)

    chunk = region[start:end]
    try:
        obj = json.loads(chunk)
    except json.JSONDecodeError as exc:
        keys = _KEY_BEFORE.findall(chunk[: exc.pos])
        name = keys[-1] if keys else "<root>"
        raise ReportSchemaError(f"malformed JSON at field {name!r}: {exc.msg}", raw, [(name, exc.msg)]) from None
    if not isinstance(obj, dict):
        raise ReportSchemaError("top-level JSON value is not an object", raw)

    report = report_from_dict(obj)
    if region[end:].strip():
        report.flags.append("trailing content after the first JSON object")
    return report


# --------------------------------------------------------------------------
# validation against evidence


def _max_corner_distance(corners: Sequence[tuple[float, float]], box: OrientedBox) -> float:
    return max(math.dist(c, (p.x, p.y)) for c, p in zip(corners, box.corners))


def validate_report(
    report: MaintenanceReport,
    evidence: Sequence[Detection],
    kb=None,
    corner_tol: float = DEFAULT_CORNER_TOL,
    taxonomy: Iterable[str] = DEFAULT_TAXONOMY,
) -> list[Violation]:
    """Structural consistency check; an empty list means fully consistent.

    Each defect entry is matched to the evidence box whose centroid is
    nearest its own; the grid label must equal that box's cell. Corner drift
    is the smallest, over all evidence boxes, of the largest corner-to-corner
    distance.
    """
    taxonomy = set(taxonomy)
    out: list[Violation] = []
    centroids = [centroid(d.box) for d in evidence]
    for i, entry in enumerate(report.defects):
        for key in PRESENCE_FIELDS:
            value = getattr(entry, key)
            if value is None or (isinstance(value, str) and not value.strip()):
                out.append(Violation("missing_field", f"{key} is missing", i))
        if entry.defect_class not in taxonomy:
            out.append(Violation("unknown_class", f"class {entry.defect_class!r} is not in the taxonomy", i))
        if evidence:
            cx, cy = entry.centroid
            nearest = min(range(len(evidence)), key=lambda k: math.dist((cx, cy), (centroids[k].x, centroids[k].y)))
            expected = grid_cell(centroids[nearest])
            if entry.grid_label is not expected:
                out.append(Violation(
                    "grid_mismatch",
                    f"report says {entry.grid_label.value!r}, nearest evidence lies in {expected.value!r}",
                    i,
                ))
            drift = min(_max_corner_distance(entry.obb_corners, d.box) for d in evidence)
            if drift > corner_tol:
                out.append(Violation("corner_drift", f"corners are {drift:.4f} from the closest evidence box", i))
        if kb is not None and entry.procedure_ref and entry.procedure_ref not in kb:
            out.append(Violation("unknown_procedure", f"procedure {entry.procedure_ref!r} is not in the knowledge base", i))
    if len(report.defects) != len(evidence):
        out.append(Violation("count_mismatch", f"{len(report.defects)} defects reported, {len(evidence)} in evidence"))
    return out
