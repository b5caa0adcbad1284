"""Per-image glue: load detections (full-frame or per-tile), build the prompt,
call the generation endpoint and check the report against its evidence."""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..bridge import AssembledPrompt, BridgeSettings
from ..geometry import Detection, merge_tiles, nms, tile_plan
from ..ingest import DEFAULT_TAXONOMY, ImageEntry, load_detection_file
from .client import CallLog, EndpointError, GenerationConfig, complete
from .report import (
    DEFAULT_CORNER_TOL,
    MaintenanceReport,
    ReportExtractionError,
    Violation,
    extract_json,
    validate_report,
)


def load_image_detections(
    directory: str | Path,
    image: ImageEntry,
    taxonomy: Sequence[str] = DEFAULT_TAXONOMY,
    tile_size_px: int = 640,
    overlap_ratio: float = 0.2,
    iou_threshold: float = 0.5,
) -> list[Detection]:
    """Detections for one image.

    ``<id>.txt`` holds full-frame boxes; ``<id>.tile<j>.txt`` files hold
    boxes local to tile ``j`` of the sliding-window plan. Tile files are
    remapped and everything present is merged by NMS.
    """
    directory = Path(directory)
    whole = directory / f"{image.image_id}.txt"
    pattern = re.compile(rf"^{re.escape(image.image_id)}\.tile(\d+)\.txt$")
    tiles = {}
    for p in directory.glob(f"{image.image_id}.tile*.txt"):
        m = pattern.match(p.name)
        if m:
            tiles[int(m.group(1))] = load_detection_file(p, taxonomy)
    if not whole.exists() and not tiles:
        raise FileNotFoundError(f"no detection file for image {image.image_id!r} in {directory}")

    detections = load_detection_file(whole, taxonomy) if whole.exists() else []
    if not tiles:
        return detections
    plan = tile_plan(image.width_px, image.height_px, tile_size_px, overlap_ratio)
    merged = merge_tiles(tiles, plan, iou_threshold)
    return nms(detections + merged, iou_threshold) if detections else merged


@dataclass
class GenerationResult:
    image_id: str
    prompt: AssembledPrompt
    evidence: list[Detection]
    raw: str | None = None
    report: MaintenanceReport | None = None
    violations: list[Violation] = field(default_factory=list)
    error: str | None = None
    error_kind: str | None = None
    attempts: int = 0

    @property
    def ok(self) -> bool:
        return self.report is not None

    def log_entry(self) -> dict:
        return {
            "image_id": self.image_id,
            "ok": self.ok,
            "attempts": self.attempts,
            "error_kind": self.error_kind,
            "error": self.error,
            "violations": [v.to_dict() for v in self.violations],
            "flags": list(self.report.flags) if self.report else [],
        }


def fill_identity(report: MaintenanceReport, image_id: str) -> MaintenanceReport:
    if report.image_id is None:
        report.image_id = image_id
    if report.report_id is None:
        report.report_id = f"RPT-{image_id}"
    return report


def generate_report(
    image_id: str,
    detections: Sequence[Detection],
    bridge: BridgeSettings,
    cfg: GenerationConfig,
    kb=None,
    taxonomy: Sequence[str] = DEFAULT_TAXONOMY,
    corner_tol: float = DEFAULT_CORNER_TOL,
    call_log: CallLog | None = None,
    session=None,
) -> GenerationResult:
    """Endpoint failures and unusable output are captured on the result, not raised."""
    prompt = bridge.build(detections)
    result = GenerationResult(image_id, prompt, bridge.evidence(detections))
    try:
        resp = complete(prompt, cfg, call_log=call_log, session=session)
    except EndpointError as exc:
        result.error, result.error_kind, result.attempts = str(exc), type(exc).__name__, exc.attempts
        return result
    result.raw, result.attempts = resp.text, resp.attempts
    try:
        report = extract_json(resp.text)
    except ReportExtractionError as exc:
        result.error, result.error_kind = str(exc), "extraction"
        result.violations = exc.violations()
        return result
    result.report = fill_identity(report, image_id)
    result.violations = validate_report(report, result.evidence, kb=kb, corner_tol=corner_tol, taxonomy=taxonomy)
    return result
