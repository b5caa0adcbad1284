"""Teacher-corpus production: Bridge prompt -> teacher report -> JSONL pairs."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from ..bridge import BridgeSettings
from ..geometry import Detection
from ..ingest import DatasetManifest
from .client import CallLog, EndpointAuthError, GenerationConfig, map_bounded
from .pipeline import GenerationResult, generate_report
from .report import DEFAULT_CORNER_TOL

log = logging.getLogger(__name__)

CORPUS_FILE = "corpus.jsonl"
REJECT_FILE = "rejects.jsonl"


class CorpusConfigError(ValueError):
    pass


@dataclass(frozen=True)
class CorpusStats:
    accepted: int
    rejected: int
    errors: int
    corpus_path: Path
    reject_path: Path

    @property
    def total(self) -> int:
        return self.accepted + self.rejected

    def to_dict(self) -> dict:
        return {
            "accepted": self.accepted,
            "rejected": self.rejected,
            "errors": self.errors,
            "corpus": str(self.corpus_path),
            "rejects": str(self.reject_path),
        }


def _dump(obj: dict) -> str:
    return json.dumps(obj, ensure_ascii=False, separators=(",", ":"))


def _reject(res: GenerationResult) -> dict:
    return {
        "image_id": res.image_id,
        "prompt": res.prompt.rendered,
        "raw": res.raw,
        "error_kind": res.error_kind,
        "error": res.error,
        "violations": [v.to_dict() for v in res.violations],
    }


def build_teacher_corpus(
    manifest: DatasetManifest,
    detections: Mapping[str, Sequence[Detection]],
    bridge: BridgeSettings,
    teacher: GenerationConfig,
    out_dir: str | Path,
    kb=None,
    split: str = "train",
    corner_tol: float = DEFAULT_CORNER_TOL,
    call_log: CallLog | None = None,
) -> CorpusStats:
    """One teacher call per image of ``split``.

    Reports with any violation, extraction failure or endpoint failure go to
    the reject file; both files follow manifest order. Missing detections for
    an image abort before any call is made.
    """
    images = manifest.split(split)
    if not images:
        raise CorpusConfigError(f"manifest has no {split!r} images")
    missing = [im.image_id for im in images if im.image_id not in detections]
    if missing:
        raise CorpusConfigError(f"no detections for {len(missing)} {split} image(s), first: {missing[0]!r}")

    def run(image_id: str) -> GenerationResult:
        return generate_report(image_id, detections[image_id], bridge, teacher, kb=kb,
                               taxonomy=manifest.taxonomy, corner_tol=corner_tol, call_log=call_log)

    results = map_bounded(run, [im.image_id for im in images], teacher.max_in_flight)
    auth = next((r for r in results if r.error_kind == EndpointAuthError.__name__), None)
    if auth is not None:
        raise EndpointAuthError(auth.error or "authentication failed", auth.attempts)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus_path, reject_path = out_dir / CORPUS_FILE, out_dir / REJECT_FILE
    accepted = rejected = errors = 0
    with corpus_path.open("w", encoding="utf-8") as good, reject_path.open("w", encoding="utf-8") as bad:
        for res in results:
            if res.ok and not res.violations:
                good.write(_dump({"image_id": res.image_id, "prompt": res.prompt.rendered,
                                  "report": res.report.to_dict()}) + "\n")
                accepted += 1
                continue
            bad.write(_dump(_reject(res)) + "\n")
            rejected += 1
            if res.error_kind not in (None, "extraction"):
                errors += 1
                log.warning("teacher call failed for %s: %s", res.image_id, res.error)
    return CorpusStats(accepted, rejected, errors, corpus_path, reject_path)
