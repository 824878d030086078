"""Error metrics shared by every analysis stage.

Per-sample values are fractions. Aggregates (MRE, gaps, relative differences)
are percents; the fraction-to-percent conversion happens only in :func:`mre`.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import EmptyGroup, NonPositiveBaseline, NonPositiveTruth, OrderViolation


@dataclass(frozen=True)
class ErrorSample:
    record_id: str
    model: str
    relative_error: float


@dataclass(frozen=True)
class GroupStats:
    label: str
    n: int
    mre: float
    median_relative_error: float | None = None

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "n": self.n,
            "mre": self.mre,
            "median_relative_error": self.median_relative_error,
        }


@dataclass(frozen=True)
class GapStats:
    absolute_gap: float
    relative_variation: float


def relative_error(y_true: float, y_pred: float) -> float:
    if not y_true > 0:
        raise NonPositiveTruth(f"y_true must be > 0, got {y_true!r}")
    return abs(y_pred - y_true) / y_true


def relative_errors(y_true, y_pred) -> np.ndarray:
    """Vectorised :func:`relative_error`; NaN predictions propagate as NaN."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if np.any(~(y_true > 0)):
        raise NonPositiveTruth("y_true must be > 0 for every sample")
    return np.abs(y_pred - y_true) / y_true


def _as_fractions(samples: Iterable[Union[ErrorSample, float]]) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return samples.astype(float, copy=False).ravel()
    return np.array(
        [s.relative_error if isinstance(s, ErrorSample) else float(s) for s in samples],
        dtype=float,
    )


def mre(samples) -> float:
    """Mean Relative Error in percent."""
    errs = _as_fractions(samples)
    if errs.size == 0:
        raise EmptyGroup("MRE of an empty group is undefined")
    return 100.0 * float(np.mean(errs))


def median_signed_error(y_true, y_pred) -> float:
    """Median signed relative error in percent (bias direction; not an MRE)."""
    y_true = np.asarray(y_true, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_true.size == 0:
        raise EmptyGroup("median of an empty group is undefined")
    return 100.0 * float(np.median((y_pred - y_true) / y_true))


def group_stats(label: str, samples) -> GroupStats:
    errs = _as_fractions(samples)
    return GroupStats(
        label=label,
        n=int(errs.size),
        mre=mre(errs),
        median_relative_error=100.0 * float(np.median(errs)),
    )


def _mre_of(g) -> float:
    return float(g.mre) if hasattr(g, "mre") else float(g)


def gap_stats(best, worst) -> GapStats:
    """Best-vs-worst gap. Accepts GroupStats-like objects or plain MRE percents."""
    b, w = _mre_of(best), _mre_of(worst)
    if b > w:
        raise OrderViolation(f"best MRE {b} exceeds worst MRE {w}")
    if b <= 0:
        if w == b:
            return GapStats(0.0, 0.0)
        raise NonPositiveBaseline("relative variation needs a positive best MRE")
    return GapStats(absolute_gap=w - b, relative_variation=100.0 * (w - b) / b)


def relative_difference(mre_low: float, mre_high: float) -> float:
    """Percent reduction from ``mre_low`` to ``mre_high``; negative if high is worse."""
    if not mre_low > 0:
        raise NonPositiveBaseline(f"baseline MRE must be > 0, got {mre_low!r}")
    return 100.0 * (mre_low - mre_high) / mre_low
