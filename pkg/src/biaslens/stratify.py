"""Factor-wise stratified error analysis.

Each factor is partitioned (quantile bins, fixed cut-points, or categories),
MRE is computed per bin for every model, and the best/worst supported bins are
compared with a two-sided Mann-Whitney U test.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import metrics
from .errors import (
    BiaslensError,
    EmptySample,
    InsufficientSupport,
    TooFewValues,
    UnknownFactor,
)
from .ingest import CATEGORICAL, CONTINUOUS, Dataset, FactorSpec

DEFAULT_QUANTILES = 3
DEFAULT_MIN_N = 30

# Clinical defaults used when the schema gives no cut-points for these factor names.
GA_WEEKS_BINS = ((34.0, 36.0), ("28-34", "34-36", "36-41"))
BMI_BINS = ((18.5, 25.0), ("low", "normal", "high"))
NAMED_DEFAULT_BINS = {"ga": GA_WEEKS_BINS, "ga_weeks": GA_WEEKS_BINS, "bmi": BMI_BINS}


# ---------------------------------------------------------------------------
# Binning
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Quantile:
    q: int = DEFAULT_QUANTILES


@dataclass(frozen=True)
class Fixed:
    cutpoints: tuple[float, ...]
    labels: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Categories:
    categories: tuple[str, ...] | None = None


@dataclass(frozen=True)
class Binning:
    """Partition of one factor.

    Continuous bins are half-open ``[lo, hi)`` with the last bin closed. The
    outermost bins are open-ended, so values beyond the observed/declared range
    still land in exactly one bin; ``edges`` keeps the nominal bounds for labels.
    """

    factor: str
    kind: str
    labels: tuple[str, ...]
    cutpoints: tuple[float, ...] = ()
    edges: tuple[float | None, ...] = ()
    categories: tuple[str, ...] = ()
    collapsed: bool = False  # duplicate quantile cut-points were merged
    constant: bool = False  # single distinct value

    def __post_init__(self):
        if any(not b > a for a, b in zip(self.cutpoints, self.cutpoints[1:])):
            raise ValueError("cut-points must be strictly increasing")

    @property
    def n_bins(self) -> int:
        return len(self.labels)

    def index_of(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise KeyError(label) from None

    def assign(self, values) -> np.ndarray:
        """Bin index per value; -1 for missing (NaN / None) or unknown categories."""
        if self.kind == CONTINUOUS:
            v = np.asarray(values, dtype=float)
            out = np.searchsorted(np.asarray(self.cutpoints, dtype=float), v, side="right")
            out[np.isnan(v)] = -1
            return out.astype(int)
        lookup = {c: i for i, c in enumerate(self.categories)}
        return np.array([lookup.get(v, -1) if v is not None else -1 for v in values], dtype=int)

    def to_dict(self) -> dict:
        return {
            "factor": self.factor,
            "kind": self.kind,
            "labels": list(self.labels),
            "cutpoints": list(self.cutpoints),
            "edges": list(self.edges),
            "categories": list(self.categories),
            "collapsed": self.collapsed,
            "constant": self.constant,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Binning":
        return cls(
            factor=d["factor"],
            kind=d["kind"],
            labels=tuple(d["labels"]),
            cutpoints=tuple(d.get("cutpoints", ())),
            edges=tuple(d.get("edges", ())),
            categories=tuple(d.get("categories", ())),
            collapsed=d.get("collapsed", False),
            constant=d.get("constant", False),
        )


def _fmt_edge(x: float) -> str:
    return f"{x:.4g}"


def default_strategy(spec: FactorSpec, q: int = DEFAULT_QUANTILES):
    if spec.kind == CATEGORICAL:
        return Categories(spec.categories)
    if spec.cutpoints is not None:
        return Fixed(spec.cutpoints, spec.labels)
    named = NAMED_DEFAULT_BINS.get(spec.name.lower())
    if named is not None:
        return Fixed(*named)
    return Quantile(q)


def bin_factor(dataset: Dataset, factor: str, strategy=None) -> Binning:
    if factor not in dataset.schema:
        raise UnknownFactor(f"unknown factor {factor!r}")
    spec = dataset.schema[factor]
    if strategy is None:
        strategy = default_strategy(spec)
    col = dataset.factor(factor)

    if isinstance(strategy, Categories):
        present = [v for v in col if v is not None]
        if spec.kind == CONTINUOUS:
            raise TooFewValues(f"factor {factor!r} is continuous; use quantile or fixed bins")
        if strategy.categories is not None:
            cats = tuple(strategy.categories)
        else:
            cats = tuple(sorted(set(present)))
        if not cats:
            raise TooFewValues(f"factor {factor!r} has no non-missing values")
        return Binning(factor, CATEGORICAL, labels=cats, categories=cats, constant=len(set(present)) == 1)

    if spec.kind != CONTINUOUS:
        raise TooFewValues(f"factor {factor!r} is categorical; use natural categories")
    vals = col[~np.isnan(col)]
    if vals.size == 0:
        raise TooFewValues(f"factor {factor!r} has no non-missing values")
    lo, hi = float(vals.min()), float(vals.max())

    if isinstance(strategy, Fixed):
        cps = tuple(float(c) for c in strategy.cutpoints)
        labels = strategy.labels
        if labels is None:
            labels = (f"<{_fmt_edge(cps[0])}",) if cps else ("all",)
            labels += tuple(f"[{_fmt_edge(a)},{_fmt_edge(b)})" for a, b in zip(cps, cps[1:]))
            if cps:
                labels += (f">={_fmt_edge(cps[-1])}",)
        if len(labels) != len(cps) + 1:
            raise ValueError(f"factor {factor!r}: {len(cps)} cut-points need {len(cps) + 1} labels")
        edges = (None, *cps, None)
        return Binning(factor, CONTINUOUS, tuple(labels), cps, edges)

    q = strategy.q if isinstance(strategy, Quantile) else int(strategy)
    if q < 1:
        raise ValueError("quantile count must be >= 1")
    distinct = np.unique(vals)
    if distinct.size == 1:
        return Binning(factor, CONTINUOUS, ("q1",), (), (lo, hi), constant=True)
    if distinct.size < q:
        raise TooFewValues(f"factor {factor!r}: {distinct.size} distinct values for {q} quantile bins")
    raw = np.quantile(vals, [i / q for i in range(1, q)])  # linear interpolation
    cps = []
    for c in raw:
        c = float(c)
        if c > lo and (not cps or c > cps[-1]):
            cps.append(c)
    collapsed = len(cps) != q - 1
    labels = tuple(f"q{i + 1}" for i in range(len(cps) + 1))
    return Binning(factor, CONTINUOUS, labels, tuple(cps), (lo, *cps, hi), collapsed=collapsed)


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TestResult:
    u: float  # statistic for the first sample
    z: float
    p_value: float
    n1: int
    n2: int
    tie_corrected: bool

    def to_dict(self) -> dict:
        return {"u": self.u, "z": self.z, "p_value": self.p_value, "n1": self.n1, "n2": self.n2,
                "tie_corrected": self.tie_corrected}


def _midranks(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    boundaries = np.flatnonzero(np.diff(xs)) + 1
    starts = np.concatenate(([0], boundaries))
    ends = np.concatenate((boundaries, [len(xs)]))
    ranks = np.empty(len(x))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks, ends - starts


def mann_whitney_u(a, b) -> TestResult:
    """Two-sided Mann-Whitney U via the normal approximation (tie-corrected variance,
    0.5 continuity correction). U counts pairs with a > b, ties counted as 1/2."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    n1, n2 = len(a), len(b)
    if n1 == 0 or n2 == 0:
        raise EmptySample("both samples need at least one value")
    ranks, ties = _midranks(np.concatenate((a, b)))
    u = float(ranks[:n1].sum() - n1 * (n1 + 1) / 2.0)
    n = n1 + n2
    tie_term = float(np.sum(ties.astype(float) ** 3 - ties))
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return TestResult(u, 0.0, 1.0, n1, n2, tie_term > 0)
    mu = n1 * n2 / 2.0
    z = max(abs(u - mu) - 0.5, 0.0) / math.sqrt(var)
    p = min(1.0, math.erfc(z / math.sqrt(2.0)))
    return TestResult(u, math.copysign(z, u - mu), p, n1, n2, tie_term > 0)


def benjamini_hochberg(pvalues: Sequence[float]) -> list[float]:
    p = np.asarray(pvalues, dtype=float)
    m = len(p)
    if m == 0:
        return []
    order = np.argsort(p, kind="mergesort")
    scaled = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out.tolist()


# ---------------------------------------------------------------------------
# Stratified MRE and gaps
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StratumStats:
    label: str
    index: int
    n: int
    mre: float | None
    median_relative_error: float | None
    low_support: bool

    def to_dict(self) -> dict:
        return {"label": self.label, "index": self.index, "n": self.n, "mre": self.mre,
                "median_relative_error": self.median_relative_error, "low_support": self.low_support}


def bin_errors(dataset: Dataset, binning: Binning, model: str) -> list[np.ndarray]:
    """Per-bin arrays of relative errors (fractions) for records with a prediction."""
    errs = dataset.relative_errors(model)
    idx = binning.assign(dataset.factor(binning.factor))
    ok = ~np.isnan(errs) & (idx >= 0)
    return [errs[ok & (idx == i)] for i in range(binning.n_bins)]


def stratified_mre(dataset: Dataset, binning: Binning, model: str,
                   min_n: int = DEFAULT_MIN_N) -> list[StratumStats]:
    out = []
    for i, e in enumerate(bin_errors(dataset, binning, model)):
        if e.size:
            out.append(StratumStats(binning.labels[i], i, int(e.size), metrics.mre(e),
                                    100.0 * float(np.median(e)), e.size < min_n))
        else:
            out.append(StratumStats(binning.labels[i], i, 0, None, None, True))
    return out


@dataclass(frozen=True)
class FactorGap:
    factor: str
    model: str
    best: StratumStats
    worst: StratumStats
    absolute_gap: float
    relative_variation: float
    test: TestResult
    adjusted_p: float | None = None

    @property
    def p_value(self) -> float:
        return self.test.p_value

    def to_dict(self) -> dict:
        return {
            "factor": self.factor,
            "model": self.model,
            "best": self.best.to_dict(),
            "worst": self.worst.to_dict(),
            "absolute_gap": self.absolute_gap,
            "relative_variation": self.relative_variation,
            "p_value": self.p_value,
            "adjusted_p": self.adjusted_p,
            "test": self.test.to_dict(),
        }


def factor_gap(dataset: Dataset, binning: Binning, model: str, min_n: int = DEFAULT_MIN_N) -> FactorGap:
    """Best/worst supported bins by MRE (earliest bin wins ties) and their MWU p-value."""
    errors = bin_errors(dataset, binning, model)
    strata = stratified_mre(dataset, binning, model, min_n)
    ok = [s for s in strata if s.n >= min_n]
    if len(ok) < 2:
        raise InsufficientSupport(
            f"factor {binning.factor!r}: {len(ok)} bin(s) with n >= {min_n}; need 2"
        )
    best = min(ok, key=lambda s: (s.mre, s.index))
    worst = max(ok, key=lambda s: (s.mre, -s.index))
    if worst.index == best.index:  # all MREs equal
        worst = next(s for s in ok if s.index != best.index)
    gap = metrics.gap_stats(best, worst)
    test = mann_whitney_u(errors[best.index], errors[worst.index])
    return FactorGap(binning.factor, model, best, worst, gap.absolute_gap, gap.relative_variation, test)


@dataclass(frozen=True)
class RadarAxis:
    factor: str
    binning: Binning | None
    gaps: dict[str, FactorGap | None]
    reasons: dict[str, str] = field(default_factory=dict)

    def value(self, model: str) -> float | None:
        g = self.gaps.get(model)
        return None if g is None else g.absolute_gap

    def to_dict(self) -> dict:
        return {
            "factor": self.factor,
            "binning": None if self.binning is None else self.binning.to_dict(),
            "absolute_gap": {m: self.value(m) for m in self.gaps},
            "gaps": {m: (g.to_dict() if g is not None else None) for m, g in self.gaps.items()},
            "reasons": dict(self.reasons),
        }


@dataclass(frozen=True)
class RadarData:
    models: tuple[str, ...]
    axes: tuple[RadarAxis, ...]
    min_n: int
    bh_adjusted: bool = False

    def axis(self, factor: str) -> RadarAxis:
        for a in self.axes:
            if a.factor == factor:
                return a
        raise UnknownFactor(factor)

    def ranked(self, model: str) -> list[FactorGap]:
        """Gaps for one model, largest absolute gap first."""
        gaps = [a.gaps[model] for a in self.axes if a.gaps.get(model) is not None]
        return sorted(gaps, key=lambda g: (-g.absolute_gap, g.factor))

    def to_dict(self) -> dict:
        return {
            "models": list(self.models),
            "min_n": self.min_n,
            "bh_adjusted": self.bh_adjusted,
            "axes": [a.to_dict() for a in self.axes],
        }


def resolve_binnings(dataset: Dataset, factors: Sequence[str] | None = None,
                     strategies: Mapping[str, object] | None = None,
                     q: int = DEFAULT_QUANTILES) -> tuple[dict[str, Binning], dict[str, str]]:
    """Binning per factor plus a reason for each factor that could not be binned."""
    factors = list(dataset.schema.names if factors is None else factors)
    strategies = strategies or {}
    out, failed = {}, {}
    for f in factors:
        if f not in dataset.schema:
            raise UnknownFactor(f"unknown factor {f!r}")
        strat = strategies.get(f) or default_strategy(dataset.schema[f], q)
        try:
            out[f] = bin_factor(dataset, f, strat)
        except BiaslensError as exc:
            failed[f] = f"{type(exc).__name__}: {exc}"
    return out, failed


def global_gap_profile(dataset: Dataset, factors: Sequence[str] | None = None,
                       models: Sequence[str] | None = None, strategies=None,
                       min_n: int = DEFAULT_MIN_N, q: int = DEFAULT_QUANTILES,
                       bh_adjust: bool = False,
                       binnings: Mapping[str, Binning] | None = None) -> RadarData:
    """One radar axis per factor with each model's best-vs-worst gap.

    Pass ``binnings`` to reuse partitions computed elsewhere (e.g. full-dataset
    bins for a slice-restricted analysis). Factors that cannot be analysed get a
    null gap and a reason.
    """
    models = list(dataset.model_names if models is None else models)
    for m in models:
        dataset.prediction(m)
    if binnings is None:
        binnings, failed = resolve_binnings(dataset, factors, strategies, q)
        factor_list = list(dataset.schema.names if factors is None else factors)
    else:
        factor_list = list(binnings if factors is None else factors)
        failed = {f: "no binning supplied" for f in factor_list if f not in binnings}

    axes = []
    for f in factor_list:
        if f in failed:
            axes.append(RadarAxis(f, None, {m: None for m in models}, {m: failed[f] for m in models}))
            continue
        gaps, reasons = {}, {}
        for m in models:
            try:
                gaps[m] = factor_gap(dataset, binnings[f], m, min_n)
            except BiaslensError as exc:
                gaps[m] = None
                reasons[m] = f"{type(exc).__name__}: {exc}"
        axes.append(RadarAxis(f, binnings[f], gaps, reasons))

    if bh_adjust:
        for m in models:
            present = [(i, a.gaps[m]) for i, a in enumerate(axes) if a.gaps[m] is not None]
            adj = benjamini_hochberg([g.p_value for _, g in present])
            for (i, g), p in zip(present, adj):
                axes[i].gaps[m] = FactorGap(g.factor, g.model, g.best, g.worst, g.absolute_gap,
                                            g.relative_variation, g.test, p)
    return RadarData(tuple(models), tuple(axes), min_n, bh_adjust)
