"""Per-class recall of annotated defect instances with synonym normalization."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from ..ingest import DEFAULT_TAXONOMY, AnnotationSet
from ..text import tokenize


class EquivalenceError(ValueError):
    pass


def _key(phrase: str) -> tuple[str, ...]:
    return tuple(tokenize(phrase))


class EquivalenceDictionary:
    """Canonical class label -> synonymous phrases; matching is token-level."""

    def __init__(self, mapping: Mapping[str, Iterable[str]], taxonomy: Sequence[str] = DEFAULT_TAXONOMY):
        self.taxonomy = tuple(taxonomy)
        self.mapping: dict[str, frozenset[str]] = {}
        self._lookup: dict[tuple[str, ...], str] = {}
        for canonical in self.taxonomy:
            self._lookup[_key(canonical)] = canonical
        for canonical, phrases in mapping.items():
            if canonical not in self.taxonomy:
                raise EquivalenceError(f"canonical label {canonical!r} is not in the taxonomy {list(self.taxonomy)}")
            phrases = frozenset(phrases)
            self.mapping[canonical] = phrases
            for phrase in phrases:
                key = _key(phrase)
                if not key:
                    raise EquivalenceError(f"empty phrase for {canonical!r}")
                owner = self._lookup.get(key)
                if owner is not None and owner != canonical:
                    raise EquivalenceError(f"phrase {phrase!r} maps to both {owner!r} and {canonical!r}")
                self._lookup[key] = canonical
        self._max_len = max(len(k) for k in self._lookup)

    @classmethod
    def load(cls, path: str | Path, taxonomy: Sequence[str] = DEFAULT_TAXONOMY) -> "EquivalenceDictionary":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")), taxonomy)

    @classmethod
    def bundled(cls, taxonomy: Sequence[str] = DEFAULT_TAXONOMY) -> "EquivalenceDictionary":
        text = resources.files("bladeinspect").joinpath("assets/equivalence.json").read_text(encoding="utf-8")
        return cls(json.loads(text), taxonomy)

    def normalize(self, mention: str) -> str | None:
        return self._lookup.get(_key(mention))

    def mentions_in(self, text: str) -> set[str]:
        """Canonical classes named anywhere in free text, longest phrase first."""
        toks = tokenize(text)
        found, i = set(), 0
        while i < len(toks):
            for n in range(min(self._max_len, len(toks) - i), 0, -1):
                hit = self._lookup.get(tuple(toks[i : i + n]))
                if hit is not None:
                    found.add(hit)
                    i += n
                    break
            else:
                i += 1
        return found


@dataclass(frozen=True)
class RecallResult:
    per_class: dict[str, float]
    identified: dict[str, int]
    totals: dict[str, int]

    @property
    def macro(self) -> float:
        return math.fsum(self.per_class.values()) / len(self.per_class) if self.per_class else 0.0

    def to_dict(self) -> dict:
        return {"per_class": dict(self.per_class), "identified": dict(self.identified),
                "totals": dict(self.totals), "macro": self.macro}


def per_class_recall(
    predicted: Mapping[str, Iterable[str]],
    truth: Sequence[AnnotationSet],
    dictionary: EquivalenceDictionary,
) -> RecallResult:
    """An annotated instance counts as found when its image's normalized
    prediction set holds its class. Classes with no instances are omitted."""
    totals = {c: 0 for c in dictionary.taxonomy}
    hits = dict(totals)
    for ann in truth:
        mentions = {dictionary.normalize(m) for m in predicted.get(ann.image_id, ())} - {None}
        for d in ann.ground_truth:
            if d.class_label not in totals:
                raise EquivalenceError(f"annotated class {d.class_label!r} is not in the taxonomy")
            totals[d.class_label] += 1
            hits[d.class_label] += d.class_label in mentions
    per_class = {c: hits[c] / totals[c] for c in dictionary.taxonomy if totals[c]}
    return RecallResult(per_class, {c: hits[c] for c in per_class}, {c: totals[c] for c in per_class})
