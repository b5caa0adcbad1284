"""Structural hallucination rates and protocol-compliance traceability."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

from ..generation.report import SPATIAL_KINDS, DefectEntry, MaintenanceReport, Violation
from ..knowledge import ProcedureRecord
from ..text import ngrams, tokenize

PCR_NGRAM = 5


@dataclass(frozen=True)
class HallucinationRates:
    shr: float
    hr: float
    entries: int
    spatial_flagged: int
    flagged: int

    def to_dict(self) -> dict:
        return {"shr": self.shr, "hr": self.hr, "entries": self.entries,
                "spatial_flagged": self.spatial_flagged, "flagged": self.flagged}


def entry_flags(report: MaintenanceReport | None, violations: Sequence[Violation]) -> tuple[int, int, int, int]:
    """(entries, entries with a spatial violation, entries with any violation, report-level violations)."""
    n = len(report.defects) if report is not None else 0
    spatial = {v.defect_index for v in violations if v.kind in SPATIAL_KINDS and v.defect_index is not None}
    flagged = {v.defect_index for v in violations if v.kind != "schema_error" and v.defect_index is not None}
    report_level = sum(1 for v in violations if v.kind != "schema_error" and v.defect_index is None)
    return n, len(spatial), len(flagged), report_level


def hallucination_rates(checked: Iterable[tuple[MaintenanceReport | None, Sequence[Violation]]]) -> HallucinationRates:
    """Micro-averaged over every defect entry in the corpus.

    An entry counts once however many violations it carries. Report-level
    violations (a count mismatch) add one each to the HR numerator, which is
    then capped at the entry count. Schema errors are extraction failures and
    do not count; a corpus with no entries scores 0.
    """
    entries = spatial = flagged = 0
    for report, violations in checked:
        n, s, f, r = entry_flags(report, violations)
        entries += n
        spatial += s
        flagged += f + r
    if entries == 0:
        return HallucinationRates(0.0, 0.0, 0, spatial, flagged)
    return HallucinationRates(spatial / entries, min(flagged, entries) / entries, entries, spatial, flagged)


def shares_ngram(a: str, b: str, n: int = PCR_NGRAM) -> bool:
    grams = set(ngrams(tokenize(b), n))
    return any(g in grams for g in ngrams(tokenize(a), n))


def is_compliant(entry: DefectEntry, record: ProcedureRecord | None, n: int = PCR_NGRAM) -> bool:
    if record is None or entry.procedure_ref != record.procedure_id:
        return False
    return shares_ngram(entry.recommendation or "", record.body, n)


@dataclass(frozen=True)
class ComplianceRate:
    pcr: float
    compliant: int
    entries: int

    def to_dict(self) -> dict:
        return {"pcr": self.pcr, "compliant": self.compliant, "entries": self.entries}


Retrieved = ProcedureRecord | Sequence[ProcedureRecord | None] | None


def pcr(pairs: Iterable[tuple[MaintenanceReport, Retrieved]]) -> ComplianceRate:
    """Share of entries citing the retrieved procedure and reusing a 5-gram of its body.

    ``retrieved`` is either one record for the whole report or one record
    (or None) per defect entry, aligned by position.
    """
    compliant = total = 0
    for report, retrieved in pairs:
        for i, entry in enumerate(report.defects):
            if isinstance(retrieved, ProcedureRecord) or retrieved is None:
                record = retrieved
            else:
                record = retrieved[i] if i < len(retrieved) else None
            total += 1
            compliant += is_compliant(entry, record)
    return ComplianceRate(compliant / total if total else 0.0, compliant, total)
