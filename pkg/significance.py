# significance.py: sample sets and Welch's two-sample t-test, NumPy-powered
# -----------------------------------------------------------------------------
#   • unequal variances, Welch–Satterthwaite degrees of freedom;
#   • two-sided p-value from the t distribution via the regularised
#     incomplete beta function;
#   • zero-variance inputs resolved by convention (p = 1 equal means,
#     p = 0 otherwise) and flagged degenerate;
#   • every result is a plain float, never an ndarray.
# -----------------------------------------------------------------------------

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np
from scipy import special

from config import ALPHA


class InsufficientSamplesError(ValueError):
    pass


@dataclass(frozen=True)
class SampleSet:
    label: str
    values: np.ndarray

    @classmethod
    def of(cls, label: str, values: Iterable[float]) -> "SampleSet":
        arr = np.asarray(list(values), dtype=float)
        if arr.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if not np.all(np.isfinite(arr)):
            raise ValueError(f"{label}: samples must be finite")
        return cls(label, arr)

    @property
    def n(self) -> int:
        return int(self.values.size)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.n else float("nan")

    @property
    def stddev(self) -> float:
        return float(np.std(self.values, ddof=1)) if self.n > 1 else 0.0


@dataclass(frozen=True)
class WelchResult:
    t_statistic: float
    degrees_of_freedom: float
    p_value: float
    significant: bool
    degenerate: bool = False


def _t_two_sided(t: float, df: float) -> float:
    # P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2)
    x = df / (df + t * t)
    return float(min(1.0, max(0.0, special.betainc(df / 2.0, 0.5, x))))


def welch_t_test(a: SampleSet, b: SampleSet, alpha: float = ALPHA) -> WelchResult:
    if a.n < 2 or b.n < 2:
        raise InsufficientSamplesError(f"Welch's test needs n ≥ 2 per side (got {a.n} and {b.n})")

    va = float(np.var(a.values, ddof=1))
    vb = float(np.var(b.values, ddof=1))
    diff = a.mean - b.mean
    sa, sb = va / a.n, vb / b.n
    se2 = sa + sb

    if se2 == 0.0:
        df = float(a.n + b.n - 2)
        if diff == 0.0:
            return WelchResult(0.0, df, 1.0, False, degenerate=True)
        return WelchResult(float(np.copysign(np.inf, diff)), df, 0.0, 0.0 < alpha, degenerate=True)

    t = diff / np.sqrt(se2)
    df = se2 * se2 / ((sa * sa) / (a.n - 1) + (sb * sb) / (b.n - 1))
    p = _t_two_sided(float(t), float(df))
    return WelchResult(float(t), float(df), p, p < alpha)


def relative(value: float, baseline: float) -> Optional[float]:
    """value / baseline, None when the baseline is zero."""
    if baseline == 0:
        return None
    return value / baseline
