"""Rubric-prompted scoring of reports by a judge endpoint."""
from __future__ import annotations

import ast
import json
import math
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Sequence

from ..geometry import Detection, centroid, grid_cell
from ..generation.client import CallLog, GenerationConfig, complete, map_bounded
from ..generation.report import MaintenanceReport, _balanced_object

AXES = ("factuality", "domain_alignment", "actionability")
AXIS_RANGE = (1, 10)


class JudgeError(ValueError):
    pass


class JudgeRangeError(JudgeError):
    pass


class JudgeParseError(JudgeError):
    def __init__(self, message: str, raw: str, attempts: int):
        super().__init__(message)
        self.raw = raw
        self.attempts = attempts


@lru_cache(maxsize=1)
def judge_rubric() -> str:
    return resources.files("bladeinspect").joinpath("assets/judge_rubric.txt").read_text(encoding="utf-8").strip()


@dataclass(frozen=True)
class JudgeScores:
    factuality: int
    domain_alignment: int
    actionability: int
    rationale: str = ""

    def __post_init__(self):
        lo, hi = AXIS_RANGE
        for axis in AXES:
            v = getattr(self, axis)
            if isinstance(v, bool) or not isinstance(v, int):
                raise JudgeRangeError(f"{axis} must be an integer, got {v!r}")
            if not lo <= v <= hi:
                raise JudgeRangeError(f"{axis} = {v} is outside [{lo}, {hi}]")

    @property
    def mean(self) -> float:
        return math.fsum(getattr(self, a) for a in AXES) / len(AXES)

    def to_dict(self) -> dict:
        out = {a: getattr(self, a) for a in AXES}
        out["mean"] = self.mean
        out["rationale"] = self.rationale
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "JudgeScores":
        """Build from a judge reply; any ``mean`` it carries is ignored."""
        missing = [a for a in AXES if a not in d]
        if missing:
            raise JudgeParseError(f"judge reply lacks {missing}", json.dumps(d, default=str), 0)
        values = {}
        for a in AXES:
            v = d[a]
            if isinstance(v, float) and v.is_integer():
                v = int(v)
            values[a] = v
        rationale = d.get("rationale", "")
        return cls(**values, rationale=rationale if isinstance(rationale, str) else str(rationale))


def parse_judge_reply(raw: str) -> dict:
    text = raw or ""
    start = text.find("{")
    end = _balanced_object(text, start) if start >= 0 else None
    if end is None:
        raise ValueError("no JSON object in judge reply")
    chunk = text[start:end]
    try:
        obj = json.loads(chunk)
    except json.JSONDecodeError:
        # rubric shows single-quoted keys; some judges answer in that style
        obj = ast.literal_eval(chunk)
    if not isinstance(obj, dict):
        raise ValueError("judge reply is not an object")
    return obj


def evidence_array(evidence: Sequence[Detection]) -> list[dict]:
    return [
        {
            "class": d.class_label,
            "confidence": d.confidence,
            "grid_label": grid_cell(centroid(d.box)).value,
            "obb_corners": [list(c) for c in d.box.as_tuples()],
        }
        for d in evidence
    ]


def judge_messages(report: MaintenanceReport, evidence: Sequence[Detection], rubric: str | None = None) -> list[dict]:
    rubric = judge_rubric() if rubric is None else rubric
    content = (
        f"{rubric}\n\nMaintenance report:\n{report.to_json(indent=2)}\n\n"
        f"Detection array:\n{json.dumps(evidence_array(evidence), indent=2)}"
    )
    return [{"role": "user", "content": content}]


def judge_report(
    report: MaintenanceReport,
    evidence: Sequence[Detection],
    cfg: GenerationConfig,
    rubric: str | None = None,
    call_log: CallLog | None = None,
    session=None,
) -> JudgeScores:
    """Score one report; unparsable replies are re-requested up to ``cfg.max_retries`` times.

    Out-of-range axis values raise at once: re-asking would not make a
    parsed answer valid.
    """
    messages = judge_messages(report, evidence, rubric)
    raw = ""
    for attempt in range(1, cfg.max_retries + 2):
        raw = complete(messages, cfg, call_log=call_log, session=session).text
        try:
            obj = parse_judge_reply(raw)
        except (ValueError, SyntaxError):
            continue
        try:
            return JudgeScores.from_dict(obj)
        except JudgeParseError:
            continue
    raise JudgeParseError(f"judge output unparsable after {cfg.max_retries + 1} attempts", raw, cfg.max_retries + 1)


def judge_batch(
    items: Sequence[tuple[MaintenanceReport, Sequence[Detection]]],
    cfg: GenerationConfig,
    rubric: str | None = None,
    call_log: CallLog | None = None,
) -> list[JudgeScores]:
    """Scores in input order whatever order the calls complete in."""
    return map_bounded(lambda it: judge_report(it[0], it[1], cfg, rubric, call_log), items, cfg.max_in_flight)
