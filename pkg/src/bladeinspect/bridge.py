"""Deterministic encoding of detections into a grid-referenced prompt.

No learned state: the rendered prompt is a pure function of the detections,
the two template texts and the (optional) retrieval source.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources
from pathlib import Path
from typing import Sequence

from .geometry import Detection, GridLabel, centroid, grid_cell
from .knowledge import ProcedureRecord, Retriever

DEFAULT_CONF_FLOOR = 0.70
DEFAULT_PROTOCOL_MAX_CHARS = 400
NO_DEFECTS_BLOCK = "No defects detected above the confidence threshold."
SEPARATOR = "\n\n"


def _decimal(value: float) -> Decimal:
    # shortest repr, so 0.913 is exactly 0.913 rather than its binary expansion
    return Decimal(repr(float(value)))


def format_confidence(confidence: float) -> str:
    return str((_decimal(confidence) * 100).quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


def format_coord(v: float) -> str:
    return str(_decimal(v).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class Protocol:
    procedure_id: str
    excerpt: str


@dataclass(frozen=True)
class DetectionBlock:
    ordinal: int
    detection: Detection
    grid: GridLabel
    protocol: Protocol | None = None

    @property
    def text(self) -> str:
        d = self.detection
        corners = ", ".join(f"({format_coord(p.x)}, {format_coord(p.y)})" for p in d.box.corners)
        line = (
            f"Defect {self.ordinal}: {d.class_label}. Confidence: {format_confidence(d.confidence)}%. "
            f"Location: {self.grid.rendered}. OBB corners (normalized): [{corners}]."
        )
        if self.protocol is not None:
            line += f"\nRetrieved Protocol: {self.protocol.excerpt}"
        return line


def encode_detection(d: Detection, ordinal: int) -> DetectionBlock:
    if ordinal < 1:
        raise ValueError(f"ordinals are 1-based, got {ordinal}")
    return DetectionBlock(ordinal, d, grid_cell(centroid(d.box)))


_SENTENCE_END = re.compile(r"[.!?](?=\s|$)")


def protocol_excerpt(record: ProcedureRecord, max_chars: int) -> str:
    body = " ".join(record.body.split())
    if len(body) <= max_chars:
        excerpt = body
    else:
        cuts = [m.end() for m in _SENTENCE_END.finditer(body) if m.end() <= max_chars]
        if cuts:
            excerpt = body[: cuts[-1]]
        else:
            # no sentence fits; fall back to the last word boundary
            head = body[:max_chars]
            excerpt = head.rsplit(" ", 1)[0] if " " in head else head
    if record.procedure_id not in excerpt:
        excerpt = f"procedure {record.procedure_id} applies: {excerpt}"
    return excerpt


def attach_protocol(block: DetectionBlock, record: ProcedureRecord,
                    max_chars: int = DEFAULT_PROTOCOL_MAX_CHARS) -> DetectionBlock:
    return replace(block, protocol=Protocol(record.procedure_id, protocol_excerpt(record, max_chars)))


@dataclass(frozen=True)
class AssembledPrompt:
    system_preamble: str
    blocks: tuple[DetectionBlock, ...]
    query_suffix: str
    segments: tuple[str, ...] = field(repr=False)

    @property
    def rendered(self) -> str:
        return SEPARATOR.join(self.segments)

    @property
    def body(self) -> str:
        """Everything after the system preamble."""
        return SEPARATOR.join(self.segments[1:])


def select_evidence(detections: Sequence[Detection], conf_floor: float = DEFAULT_CONF_FLOOR) -> list[Detection]:
    """Detections at or above the floor, in prompt order.

    Order is confidence descending, then centroid row (y), then column (x),
    then input position.
    """
    survivors = [d for d in detections if d.confidence >= conf_floor]

    def key(d: Detection):
        c = centroid(d.box)
        return (-d.confidence, c.y, c.x)

    return sorted(survivors, key=key)


def assemble_prompt(
    detections: Sequence[Detection],
    system_preamble: str,
    query_suffix: str,
    retrieval: Retriever | None = None,
    conf_floor: float = DEFAULT_CONF_FLOOR,
    protocol_max_chars: int = DEFAULT_PROTOCOL_MAX_CHARS,
) -> AssembledPrompt:
    if retrieval is not None:
        retrieval.check()
    blocks = []
    for ordinal, d in enumerate(select_evidence(detections, conf_floor), start=1):
        block = encode_detection(d, ordinal)
        if retrieval is not None:
            record, _ = retrieval.lookup(d.class_label)
            block = attach_protocol(block, record, protocol_max_chars)
        blocks.append(block)
    preamble, suffix = system_preamble.strip(), query_suffix.strip()
    middle = [b.text for b in blocks] or [NO_DEFECTS_BLOCK]
    return AssembledPrompt(preamble, tuple(blocks), suffix, tuple([preamble, *middle, suffix]))


@dataclass(frozen=True)
class PromptTemplates:
    system_preamble: str
    query_suffix: str

    @classmethod
    def bundled(cls) -> "PromptTemplates":
        assets = resources.files("bladeinspect").joinpath("assets")
        return cls(
            assets.joinpath("system_preamble.txt").read_text(encoding="utf-8"),
            assets.joinpath("query_suffix.txt").read_text(encoding="utf-8"),
        )

    @classmethod
    def from_files(cls, system_path: str | Path, query_path: str | Path) -> "PromptTemplates":
        return cls(Path(system_path).read_text(encoding="utf-8"), Path(query_path).read_text(encoding="utf-8"))


@dataclass(frozen=True)
class BridgeSettings:
    templates: PromptTemplates
    conf_floor: float = DEFAULT_CONF_FLOOR
    protocol_max_chars: int = DEFAULT_PROTOCOL_MAX_CHARS
    retriever: Retriever | None = None

    def build(self, detections: Sequence[Detection]) -> AssembledPrompt:
        return assemble_prompt(
            detections,
            self.templates.system_preamble,
            self.templates.query_suffix,
            retrieval=self.retriever,
            conf_floor=self.conf_floor,
            protocol_max_chars=self.protocol_max_chars,
        )

    def evidence(self, detections: Sequence[Detection]) -> list[Detection]:
        return select_evidence(detections, self.conf_floor)


_BLOCK_RE = re.compile(
    r"^Defect (?P<ordinal>\d+): (?P<cls>.+?)\. Confidence: (?P<conf>\d+\.\d)%\. "
    r"Location: (?P<grid>.+?)\. OBB corners \(normalized\): \[(?P<corners>[^\]]*)\]\.$",
    re.MULTILINE,
)
_PAIR_RE = re.compile(r"\((-?\d+\.\d+), (-?\d+\.\d+)\)")


@dataclass(frozen=True)
class ParsedBlock:
    ordinal: int
    class_label: str
    confidence_pct: float
    grid: GridLabel
    corners: tuple[tuple[float, float], ...]


def parse_blocks(rendered: str) -> list[ParsedBlock]:
    """Recover the detection blocks from a rendered prompt."""
    out = []
    for m in _BLOCK_RE.finditer(rendered):
        corners = tuple((float(x), float(y)) for x, y in _PAIR_RE.findall(m["corners"]))
        out.append(ParsedBlock(int(m["ordinal"]), m["cls"], float(m["conf"]), GridLabel.parse(m["grid"]), corners))
    return out

