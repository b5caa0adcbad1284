"""Evaluation run documents: one JSON with aggregates plus a flat per-image CSV."""
from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from ..generation.report import Violation
from .judge import JudgeScores


def _rate(name: str, v: float | None) -> None:
    if v is not None and not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} = {v} is outside [0, 1]")


@dataclass
class EvalScores:
    bleu4: float | None = None
    rouge_l: float | None = None
    violations: list[Violation] = field(default_factory=list)
    shr: float | None = None
    hr: float | None = None
    pcr: float | None = None
    judge: JudgeScores | None = None

    def __post_init__(self):
        for name in ("bleu4", "rouge_l", "shr", "hr", "pcr"):
            _rate(name, getattr(self, name))

    def to_dict(self) -> dict:
        out = {k: getattr(self, k) for k in ("bleu4", "rouge_l", "shr", "hr", "pcr") if getattr(self, k) is not None}
        if self.violations:
            out["violations"] = [v.to_dict() for v in self.violations]
        if self.judge is not None:
            out["judge"] = self.judge.to_dict()
        return out


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(v, ensure_ascii=False, sort_keys=True)
    return repr(v) if isinstance(v, float) else str(v)


def csv_text(rows: Sequence[dict]) -> str:
    columns: list[str] = []
    for row in rows:
        columns += [k for k in row if k not in columns]
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_cell(row.get(c)) for c in columns])
    return buf.getvalue()


@dataclass(frozen=True)
class RunDocument:
    mode: str
    per_image: list[dict]
    aggregate: dict

    @property
    def run_id(self) -> str:
        blob = json.dumps([self.mode, self.per_image, self.aggregate], sort_keys=True, default=str)
        return f"{self.mode}-{hashlib.sha256(blob.encode('utf-8')).hexdigest()[:12]}"

    def to_dict(self) -> dict:
        return {"run_id": self.run_id, "mode": self.mode, "per_image": self.per_image, "aggregate": self.aggregate}

    def write(self, out_dir: str | Path, stem: str | None = None) -> tuple[Path, Path]:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        stem = stem or f"eval_{self.mode}"
        jpath, cpath = out_dir / f"{stem}.json", out_dir / f"{stem}.csv"
        jpath.write_text(json.dumps(self.to_dict(), indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
        cpath.write_text(csv_text(self.per_image), encoding="utf-8")
        return jpath, cpath
