"""Inter-judge agreement: Pearson r with a Fisher-z confidence interval."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

Z_95 = 1.96


@dataclass(frozen=True)
class Agreement:
    r: float
    ci_low: float | None
    ci_high: float | None
    n: int

    def to_dict(self) -> dict:
        return {"r": self.r, "ci_low": self.ci_low, "ci_high": self.ci_high, "n": self.n}


def pearson_r(xs: Sequence[float], ys: Sequence[float]) -> float:
    x = np.asarray(xs, dtype=float)
    y = np.asarray(ys, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = math.sqrt(float(dx @ dx)), math.sqrt(float(dy @ dy))
    if sx == 0 or sy == 0:
        raise ValueError("zero variance: correlation undefined")
    return max(-1.0, min(1.0, float(dx @ dy) / (sx * sy)))


def fisher_ci(r: float, n: int, z_crit: float = Z_95) -> tuple[float, float]:
    if n <= 3:
        raise ValueError("Fisher interval needs n > 3")
    if abs(r) >= 1.0:
        return r, r
    z = math.atanh(r)
    half = z_crit / math.sqrt(n - 3)
    return math.tanh(z - half), math.tanh(z + half)


def pearson_agreement(xs: Sequence[float], ys: Sequence[float]) -> Agreement:
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 3:
        raise ValueError("need at least 3 paired scores")
    r = pearson_r(xs, ys)
    # three points leave no degrees of freedom for the interval
    lo, hi = fisher_ci(r, len(xs)) if len(xs) > 3 else (None, None)
    return Agreement(r, lo, hi, len(xs))
