"""Unsupervised slice discovery on model embeddings.

Embeddings are projected with PCA, clustered with a GMM sweep over k, hard
assigned by maximum posterior, and the resulting slices are ranked by the MRE
of one designated model. Slice indices are GMM component order and carry no
meaning; reports refer to slices by MRE rank.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from . import gmm, metrics
from .errors import BinningMismatch, NoEmbeddings, SingleCluster, TooFewPoints, UnknownFactor, UnknownSlice
from .ingest import Dataset
from .pca import PcaModel, fit_pca, transform
from .stratify import Binning


@dataclass(frozen=True)
class SliceConfig:
    variance_target: float = 0.99
    cap: int = 128
    k_min: int = 5
    k_max: int = 20
    restarts: int = 5
    seed: int = 0
    standardize: bool = False
    silhouette_max_points: int = 10_000
    threads: int | None = None

    def to_dict(self) -> dict:
        return {
            "variance_target": self.variance_target,
            "cap": self.cap,
            "k_min": self.k_min,
            "k_max": self.k_max,
            "restarts": self.restarts,
            "seed": self.seed,
            "standardize": self.standardize,
            "silhouette_max_points": self.silhouette_max_points,
        }


@dataclass(frozen=True, eq=False)
class SliceResult:
    pca: PcaModel
    selection: gmm.SelectionResult
    ids: tuple[str, ...]  # embedded record ids, in dataset order
    label_array: np.ndarray
    stats: dict[str, list[metrics.GroupStats | None]]  # per model, per slice index
    order: tuple[int, ...]  # slice indices by ascending ranking-model MRE
    ranking_model: str
    n_excluded: int

    @property
    def chosen_k(self) -> int:
        return self.selection.chosen_k

    @property
    def labels(self) -> dict[str, int]:
        return dict(zip(self.ids, (int(x) for x in self.label_array)))

    @property
    def best(self) -> int:
        return self.order[0]

    @property
    def worst(self) -> int:
        nonempty = [s for s in self.order if self.stats[self.ranking_model][s] is not None]
        return nonempty[-1]

    def rank_of(self, slice_index: int) -> int:
        return self.order.index(slice_index) + 1

    def relative_variation(self, model: str | None = None) -> metrics.GapStats:
        model = model or self.ranking_model
        return metrics.gap_stats(self.stats[model][self.best], self.stats[model][self.worst])

    def to_dict(self) -> dict:
        slices = []
        for rank, s in enumerate(self.order, start=1):
            slices.append({
                "slice": s,
                "rank": rank,
                "n": int(np.sum(self.label_array == s)),
                "stats": {m: (st[s].to_dict() if st[s] is not None else None) for m, st in self.stats.items()},
            })
        return {
            "ranking_model": self.ranking_model,
            "chosen_k": self.chosen_k,
            "n_embedded": len(self.ids),
            "n_excluded": self.n_excluded,
            "pca": {
                "d_in": self.pca.d_in,
                "d_out": self.pca.d_out,
                "explained_variance_ratio": self.pca.explained_variance_ratio.tolist(),
            },
            "selection": self.selection.to_dict(),
            "order": list(self.order),
            "slices": slices,
            "relative_variation": self.relative_variation().relative_variation,
        }


def discover_slices(dataset: Dataset, ranking_model: str | None = None,
                    config: SliceConfig = SliceConfig()) -> SliceResult:
    ranking_model = ranking_model or dataset.model_names[0]
    dataset.prediction(ranking_model)
    if config.k_min < 2 or config.k_max < 2:
        raise SingleCluster("slice discovery needs k >= 2 (silhouette undefined for one cluster)")
    if dataset.embeddings is None or not dataset.has_embedding.any():
        raise NoEmbeddings("dataset has no embeddings")
    mask = dataset.has_embedding
    X = dataset.embeddings[mask]
    needed = config.k_max * (min(config.cap, X.shape[1]) + 1)
    if len(X) < needed:
        raise TooFewPoints(f"need >= {needed} embedded records for k_max={config.k_max}, have {len(X)}")

    pca = fit_pca(X, config.variance_target, config.cap, standardize=config.standardize)
    Z = transform(pca, X)
    selection = gmm.select_k(Z, config.k_min, config.k_max, config.restarts, config.seed,
                             max_points=config.silhouette_max_points, threads=config.threads)
    labels, _ = gmm.assign(selection.model, Z)
    k = selection.chosen_k

    idx = np.flatnonzero(mask)
    stats: dict[str, list] = {}
    for m in dataset.model_names:
        errs = dataset.relative_errors(m)[idx]
        per = []
        for s in range(k):
            e = errs[(labels == s) & ~np.isnan(errs)]
            per.append(metrics.group_stats(f"slice {s}", e) if e.size else None)
        stats[m] = per
    rank_key = [st.mre if st is not None else math.inf for st in stats[ranking_model]]
    order = tuple(sorted(range(k), key=lambda s: (rank_key[s], s)))
    return SliceResult(pca, selection, tuple(dataset.ids[i] for i in idx), labels, stats, order,
                       ranking_model, int((~mask).sum()))


def slice_mask(dataset: Dataset, result: SliceResult, slice_index: int) -> np.ndarray:
    """Boolean mask over the dataset rows belonging to one slice."""
    if not 0 <= slice_index < result.chosen_k:
        raise UnknownSlice(f"slice {slice_index} not in 0..{result.chosen_k - 1}")
    members = {rid for rid, lab in zip(result.ids, result.label_array) if lab == slice_index}
    return np.array([rid in members for rid in dataset.ids], dtype=bool)


def _embedded_mask(dataset: Dataset, result: SliceResult) -> np.ndarray:
    ids = set(result.ids)
    return np.array([rid in ids for rid in dataset.ids], dtype=bool)


# ---------------------------------------------------------------------------
# Characterisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BinShare:
    label: str
    share_in_slice: float
    share_overall: float
    enrichment: float
    undefined: bool = False  # share_overall was 0; enrichment reported as 0

    def to_dict(self) -> dict:
        return {"label": self.label, "share_in_slice": self.share_in_slice,
                "share_overall": self.share_overall, "enrichment": self.enrichment,
                "undefined": self.undefined}


@dataclass(frozen=True)
class SliceProfile:
    slice_index: int
    factors: dict[str, tuple[BinShare, ...]]

    def to_dict(self) -> dict:
        return {"slice": self.slice_index,
                "factors": {f: [b.to_dict() for b in bins] for f, bins in self.factors.items()}}


def _shares(idx: np.ndarray, n_bins: int) -> np.ndarray:
    counts = np.bincount(idx[idx >= 0], minlength=n_bins).astype(float)
    total = counts.sum()
    return counts / total if total else counts


def characterize_slice(dataset: Dataset, result: SliceResult, slice_index: int,
                       binnings: Mapping[str, Binning]) -> SliceProfile:
    """Per-bin shares inside a slice vs across all embedded records, with enrichment ratios."""
    in_slice = slice_mask(dataset, result, slice_index)
    overall = _embedded_mask(dataset, result)
    factors = {}
    for f, binning in binnings.items():
        if f not in dataset.schema:
            raise UnknownFactor(f"unknown factor {f!r}")
        idx = binning.assign(dataset.factor(f))
        s_in = _shares(idx[in_slice], binning.n_bins)
        s_all = _shares(idx[overall], binning.n_bins)
        bins = []
        for label, a, b in zip(binning.labels, s_in, s_all):
            if b > 0:
                bins.append(BinShare(label, float(a), float(b), float(a / b)))
            else:
                bins.append(BinShare(label, float(a), 0.0, 0.0, undefined=True))
        factors[f] = tuple(bins)
    return SliceProfile(slice_index, factors)


@dataclass(frozen=True)
class FactorDivergence:
    factor: str
    total_variation: float
    max_contrast_bin: str
    enrichment_contrast: float  # best-slice enrichment minus worst-slice enrichment at that bin

    def to_dict(self) -> dict:
        return {"factor": self.factor, "total_variation": self.total_variation,
                "max_contrast_bin": self.max_contrast_bin, "enrichment_contrast": self.enrichment_contrast}


def compare_slices(profile_best: SliceProfile, profile_worst: SliceProfile) -> list[FactorDivergence]:
    """Total-variation distance per factor between two slice profiles, largest first."""
    if set(profile_best.factors) != set(profile_worst.factors):
        raise BinningMismatch("profiles cover different factors")
    out = []
    for f, bins_b in profile_best.factors.items():
        bins_w = profile_worst.factors[f]
        if [b.label for b in bins_b] != [b.label for b in bins_w]:
            raise BinningMismatch(f"factor {f!r}: bin labels differ")
        tv = 0.5 * sum(abs(b.share_in_slice - w.share_in_slice) for b, w in zip(bins_b, bins_w))
        contrasts = [b.enrichment - w.enrichment for b, w in zip(bins_b, bins_w)]
        j = int(np.argmax(np.abs(contrasts)))
        out.append(FactorDivergence(f, float(tv), bins_b[j].label, float(contrasts[j])))
    return sorted(out, key=lambda d: (-d.total_variation, d.factor))
