"""PNG figures written next to the evaluation JSON/CSV.

Figures are built on bare ``Figure`` objects with the Agg canvas so nothing
touches pyplot's global state and rendering works headless.
"""
from __future__ import annotations

from collections import Counter
from pathlib import Path
from typing import Mapping, Sequence

from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .generation.report import VIOLATION_KINDS

_STYLE = {"dpi": 120}
# stripping the Software tag keeps reruns byte-identical across matplotlib builds
_META = {"Software": None}


def _figure(width=6.0, height=4.0) -> Figure:
    fig = Figure(figsize=(width, height), dpi=_STYLE["dpi"])
    FigureCanvasAgg(fig)
    return fig


def _save(fig: Figure, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.tight_layout()
    fig.savefig(path, format="png", metadata=_META)
    return path


def text_metrics_figure(bleu: Sequence[float], rouge: Sequence[float], path: str | Path) -> Path:
    fig = _figure(7, 3.5)
    for k, (name, values) in enumerate((("BLEU-4", bleu), ("ROUGE-L", rouge))):
        ax = fig.add_subplot(1, 2, k + 1)
        ax.hist(list(values), bins=[i / 10 for i in range(11)], color="0.35", edgecolor="white")
        mean = sum(values) / len(values) if values else 0.0
        ax.axvline(mean, color="C3", ls="--", lw=1)
        ax.set_title(f"{name} (mean {mean:.3f})")
        ax.set_xlim(0, 1)
        ax.set_xlabel("score per image")
        ax.set_ylabel("images")
    return _save(fig, path)


def recall_figure(per_class: Mapping[str, float], macro: float, path: str | Path) -> Path:
    fig = _figure()
    ax = fig.add_subplot()
    names = list(per_class)
    ax.bar(names, [per_class[n] for n in names], color="C0")
    ax.axhline(macro, color="C3", ls="--", lw=1, label=f"macro {macro:.3f}")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("recall")
    ax.legend(loc="lower right")
    return _save(fig, path)


def violations_figure(kinds: Sequence[str], shr: float, hr: float, path: str | Path) -> Path:
    fig = _figure()
    ax = fig.add_subplot()
    counts = Counter(kinds)
    ax.bar(VIOLATION_KINDS, [counts.get(k, 0) for k in VIOLATION_KINDS], color="C1")
    ax.set_ylabel("violations")
    ax.set_title(f"SHR {shr:.3f}   HR {hr:.3f}")
    ax.tick_params(axis="x", labelrotation=35)
    return _save(fig, path)


def pcr_figure(compliant_by_class: Mapping[str, tuple[int, int]], rate: float, path: str | Path) -> Path:
    """``compliant_by_class`` maps class -> (compliant, total)."""
    fig = _figure()
    ax = fig.add_subplot()
    names = list(compliant_by_class)
    ok = [compliant_by_class[n][0] for n in names]
    rest = [compliant_by_class[n][1] - compliant_by_class[n][0] for n in names]
    ax.bar(names, ok, color="C2", label="traceable")
    ax.bar(names, rest, bottom=ok, color="0.75", label="not traceable")
    ax.set_ylabel("recommendations")
    ax.set_title(f"PCR {rate:.3f}")
    ax.legend()
    return _save(fig, path)


def judge_figure(scores: Sequence[Mapping[str, float]], path: str | Path) -> Path:
    fig = _figure()
    ax = fig.add_subplot()
    axes = ("factuality", "domain_alignment", "actionability", "mean")
    ax.boxplot([[s[a] for s in scores] for a in axes], tick_labels=[a.replace("_", " ") for a in axes])
    ax.set_ylim(0.5, 10.5)
    ax.set_ylabel("score (1-10)")
    return _save(fig, path)


def agreement_figure(xs: Sequence[float], ys: Sequence[float], r: float, ci: tuple[float | None, float | None],
                     path: str | Path, labels: tuple[str, str] = ("judge A", "judge B")) -> Path:
    fig = _figure(4.8, 4.8)
    ax = fig.add_subplot()
    lo = min(min(xs), min(ys)) - 0.5
    hi = max(max(xs), max(ys)) + 0.5
    ax.plot([lo, hi], [lo, hi], color="0.5", ls="--", lw=1, label="y = x")
    ax.scatter(xs, ys, s=22, color="C0", zorder=3)
    # rug marks on both margins
    ax.plot(xs, [lo] * len(xs), "|", color="C0", ms=8, alpha=0.6)
    ax.plot([lo] * len(ys), ys, "_", color="C0", ms=8, alpha=0.6)
    text = f"r = {r:.3f}"
    if ci[0] is not None:
        text += f"\n95% CI [{ci[0]:.3f}, {ci[1]:.3f}]"
    ax.text(0.04, 0.96, text, transform=ax.transAxes, va="top")
    ax.set_xlim(lo, hi)
    ax.set_ylim(lo, hi)
    ax.set_aspect("equal")
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    ax.legend(loc="lower right")
    return _save(fig, path)
