"""Two-factor joint partitions and within-stratum gradient analysis.

A grid crosses a row factor (the potential confounder, e.g. BMI or GA) with a
column factor (the candidate driver, e.g. pixel spacing). Within each row
stratum the low-vs-high column difference is compared with the marginal
difference to decide whether the column effect persists or is explained away.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import metrics
from .errors import TooFewStrata, UnknownBin
from .ingest import Dataset
from .stratify import DEFAULT_MIN_N, Binning

INDEPENDENT = "independent-effect"
PARTIAL = "partially-confounded"
FULL = "fully-confounded"
INCONCLUSIVE = "inconclusive"

DEFAULT_PERSIST_PP = 3.0
DEFAULT_ATTENUATE = 0.5


@dataclass(frozen=True)
class JointCell:
    row: int
    col: int
    n: int
    mre: dict[str, float | None]
    low_support: bool

    def to_dict(self) -> dict:
        return {"row": self.row, "col": self.col, "n": self.n, "mre": dict(self.mre),
                "low_support": self.low_support}


@dataclass(frozen=True, eq=False)
class JointGrid:
    row_binning: Binning
    col_binning: Binning
    models: tuple[str, ...]
    cells: tuple[JointCell, ...]  # row-major
    min_n: int
    # per-record bin indices and errors for the records in the grid, kept for re-aggregation
    row_idx: np.ndarray
    col_idx: np.ndarray
    errors: dict[str, np.ndarray]

    @property
    def shape(self) -> tuple[int, int]:
        return self.row_binning.n_bins, self.col_binning.n_bins

    def cell(self, i: int, j: int) -> JointCell:
        return self.cells[i * self.shape[1] + j]

    @property
    def n_total(self) -> int:
        return int(self.row_idx.size)

    def column_mre(self, model: str) -> list[float | None]:
        """Column-only MRE over the grid's record set (rows collapsed)."""
        e = self.errors[model]
        return [metrics.mre(e[self.col_idx == j]) if np.any(self.col_idx == j) else None
                for j in range(self.shape[1])]

    def transpose(self) -> "JointGrid":
        r, c = self.shape
        cells = tuple(
            JointCell(j, i, self.cell(i, j).n, self.cell(i, j).mre, self.cell(i, j).low_support)
            for j in range(c) for i in range(r)
        )
        return JointGrid(self.col_binning, self.row_binning, self.models, cells, self.min_n,
                         self.col_idx, self.row_idx, self.errors)

    def to_dict(self) -> dict:
        return {
            "row_factor": self.row_binning.factor,
            "col_factor": self.col_binning.factor,
            "row_binning": self.row_binning.to_dict(),
            "col_binning": self.col_binning.to_dict(),
            "models": list(self.models),
            "min_n": self.min_n,
            "n_total": self.n_total,
            "cells": [c.to_dict() for c in self.cells],
        }


def joint_partition(dataset: Dataset, row_binning: Binning, col_binning: Binning,
                    models: Sequence[str] | str | None = None, min_n: int = DEFAULT_MIN_N) -> JointGrid:
    """Cross two binnings; every model is evaluated on the same record set (rows
    non-missing in both factors and predicted by every requested model)."""
    if isinstance(models, str):
        models = [models]
    models = tuple(dataset.model_names if models is None else models)
    ri = row_binning.assign(dataset.factor(row_binning.factor))
    ci = col_binning.assign(dataset.factor(col_binning.factor))
    errs = {m: dataset.relative_errors(m) for m in models}
    keep = (ri >= 0) & (ci >= 0)
    for e in errs.values():
        keep &= ~np.isnan(e)
    ri, ci = ri[keep], ci[keep]
    errs = {m: e[keep] for m, e in errs.items()}
    cells = []
    for i in range(row_binning.n_bins):
        for j in range(col_binning.n_bins):
            sel = (ri == i) & (ci == j)
            n = int(sel.sum())
            mres = {m: (metrics.mre(e[sel]) if n else None) for m, e in errs.items()}
            cells.append(JointCell(i, j, n, mres, n < min_n))
    return JointGrid(row_binning, col_binning, models, tuple(cells), min_n, ri, ci, errs)


@dataclass(frozen=True)
class StratumGradient:
    row: int
    label: str
    relative_difference: float | None
    mre_low: float | None
    mre_high: float | None
    n_low: int
    n_high: int
    low_support: bool

    def to_dict(self) -> dict:
        return {"row": self.row, "label": self.label, "relative_difference": self.relative_difference,
                "mre_low": self.mre_low, "mre_high": self.mre_high, "n_low": self.n_low,
                "n_high": self.n_high, "low_support": self.low_support}


@dataclass(frozen=True)
class GradientSummary:
    row_factor: str
    col_factor: str
    model: str
    low_bin: str
    high_bin: str
    strata: tuple[StratumGradient, ...]
    marginal: float | None
    attenuation: float | None

    @property
    def valid(self) -> list[StratumGradient]:
        return [s for s in self.strata if s.relative_difference is not None]

    def to_dict(self) -> dict:
        return {"row_factor": self.row_factor, "col_factor": self.col_factor, "model": self.model,
                "low_bin": self.low_bin, "high_bin": self.high_bin,
                "strata": [s.to_dict() for s in self.strata],
                "marginal": self.marginal, "attenuation": self.attenuation}


def _resolve_bin(binning: Binning, b) -> int:
    if isinstance(b, (int, np.integer)):
        if not 0 <= b < binning.n_bins:
            raise UnknownBin(f"column bin {b} out of range")
        return int(b)
    try:
        return binning.index_of(b)
    except KeyError:
        raise UnknownBin(f"unknown column bin {b!r}; have {list(binning.labels)}") from None


def within_stratum_gradients(grid: JointGrid, low_bin=None, high_bin=None,
                             model: str | None = None) -> GradientSummary:
    """Relative MRE difference between the low and high column bins inside each row
    stratum (defaults: first and last column bins)."""
    model = model or grid.models[0]
    if model not in grid.models:
        raise KeyError(model)
    lo = _resolve_bin(grid.col_binning, 0 if low_bin is None else low_bin)
    hi = _resolve_bin(grid.col_binning, grid.shape[1] - 1 if high_bin is None else high_bin)
    strata = []
    for i in range(grid.shape[0]):
        cl, ch = grid.cell(i, lo), grid.cell(i, hi)
        ok = cl.n >= grid.min_n and ch.n >= grid.min_n and (cl.mre[model] or 0) > 0
        rd = metrics.relative_difference(cl.mre[model], ch.mre[model]) if ok else None
        strata.append(StratumGradient(i, grid.row_binning.labels[i], rd, cl.mre[model], ch.mre[model],
                                      cl.n, ch.n, not ok))
    col = grid.column_mre(model)
    marginal = None
    if col[lo] is not None and col[hi] is not None and col[lo] > 0:
        marginal = metrics.relative_difference(col[lo], col[hi])
    valid = [s.relative_difference for s in strata if s.relative_difference is not None]
    attenuation = None
    if valid and marginal:
        attenuation = 1.0 - float(np.mean(valid)) / marginal
    return GradientSummary(grid.row_binning.factor, grid.col_binning.factor, model,
                           grid.col_binning.labels[lo], grid.col_binning.labels[hi],
                           tuple(strata), marginal, attenuation)


@dataclass(frozen=True)
class Verdict:
    verdict: str
    persist: float
    attenuate: float
    marginal: float | None
    attenuation: float | None
    evidence: tuple[dict, ...]
    reason: str

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "thresholds": {"persist": self.persist, "attenuate": self.attenuate},
                "marginal": self.marginal, "attenuation": self.attenuation,
                "evidence": list(self.evidence), "reason": self.reason}


def confounding_verdict(summary: GradientSummary, persist: float = DEFAULT_PERSIST_PP,
                        attenuate: float = DEFAULT_ATTENUATE) -> Verdict:
    """Classify the column effect given its within-stratum gradients.

    Rules are checked in order: low support in more than half the strata, or
    fewer than two usable strata, is inconclusive; then independent-effect
    (every stratum shares the marginal's sign, attenuation < ``attenuate``);
    fully-confounded (a marginal effect beyond ``persist`` pp vanishes to within
    ``persist`` pp in every stratum); partially-confounded (attenuation >=
    ``attenuate`` but some stratum still exceeds ``persist``).
    """
    if len(summary.strata) < 2:
        raise TooFewStrata(f"{len(summary.strata)} row stratum; need at least 2")
    evidence = tuple(s.to_dict() for s in summary.strata)

    def verdict(v, reason):
        return Verdict(v, persist, attenuate, summary.marginal, summary.attenuation, evidence, reason)

    flagged = sum(s.low_support for s in summary.strata)
    if flagged > len(summary.strata) / 2:
        return verdict(INCONCLUSIVE, f"{flagged} of {len(summary.strata)} strata lack support")
    grads = [s.relative_difference for s in summary.valid]
    if len(grads) < 2:
        return verdict(INCONCLUSIVE, "fewer than two strata with usable gradients")
    marginal, att = summary.marginal, summary.attenuation
    if marginal is None or att is None:
        return verdict(INCONCLUSIVE, "marginal gradient undefined")
    sign = np.sign(marginal)
    if sign != 0 and all(np.sign(g) == sign for g in grads) and att < attenuate:
        return verdict(INDEPENDENT, "every stratum keeps the marginal direction with little attenuation")
    if abs(marginal) > persist and all(abs(g) <= persist for g in grads):
        return verdict(FULL, "marginal gradient vanishes within every stratum")
    if att >= attenuate and any(abs(g) > persist for g in grads):
        return verdict(PARTIAL, "gradient attenuated but persists in some strata")
    return verdict(INCONCLUSIVE, "no rule matched")
