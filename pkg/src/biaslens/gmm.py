"""Full-covariance Gaussian mixtures fitted by EM, plus BIC / silhouette model selection.

Seeding: a sweep with base seed ``s`` fits component count ``k`` with seed
``s + k``; restart ``r`` of that fit draws from ``SeedSequence([s + k, r])``.
Fits for different k are independent, so running them on a thread pool gives
results identical to a serial sweep.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist
from scipy.stats import rankdata

from .errors import BiaslensError, DimensionMismatch, SingleCluster, SingularComponent, TooFewPoints

REG_FLOOR = 1e-6
TOL = 1e-6
MAX_ITER = 200
THREADS_ENV = "BIASLENS_THREADS"
_LOG_2PI = math.log(2.0 * math.pi)
# batched buffers above this many float64 entries fall back to per-component loops
_BATCH_LIMIT = 20_000_000


@dataclass(frozen=True, eq=False)
class GmmModel:
    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray  # k x d x d
    log_likelihood: float  # summed over rows
    n_iter: int
    converged: bool
    ll_history: tuple[float, ...] = field(default=(), repr=False)

    @property
    def k(self) -> int:
        return int(self.weights.shape[0])

    @property
    def d(self) -> int:
        return int(self.means.shape[1])

    def to_dict(self, include_covariances: bool = True) -> dict:
        out = {
            "k": self.k,
            "weights": self.weights.tolist(),
            "means": self.means.tolist(),
            "log_likelihood": self.log_likelihood,
            "n_iter": self.n_iter,
            "converged": self.converged,
        }
        if include_covariances:
            out["covariances"] = self.covariances.tolist()
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "GmmModel":
        return cls(
            weights=np.array(d["weights"], dtype=float),
            means=np.array(d["means"], dtype=float),
            covariances=np.array(d["covariances"], dtype=float),
            log_likelihood=float(d["log_likelihood"]),
            n_iter=int(d["n_iter"]),
            converged=bool(d["converged"]),
        )


def n_parameters(k: int, d: int) -> int:
    return (k - 1) + k * d + k * d * (d + 1) // 2


def bic(model: GmmModel, n: int) -> float:
    if n < 1:
        raise ValueError("n must be >= 1")
    return n_parameters(model.k, model.d) * math.log(n) - 2.0 * model.log_likelihood


# ---------------------------------------------------------------------------
# EM
# ---------------------------------------------------------------------------

def _cholesky(covs: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        raise SingularComponent("covariance not positive definite after regularization") from None


def _log_joint(X, weights, means, covs) -> np.ndarray:
    """n x k matrix of log(weight_j * N(x_i | mean_j, cov_j))."""
    d = X.shape[1]
    L = _cholesky(covs)
    precs = np.linalg.inv(L).transpose(0, 2, 1)
    logdet = 2.0 * np.log(np.diagonal(L, axis1=1, axis2=2)).sum(axis=1)
    offsets = np.einsum("kd,kde->ke", means, precs)
    n, k = X.shape[0], len(weights)
    if n * k * d <= _BATCH_LIMIT:
        y = np.einsum("nd,kde->nke", X, precs, optimize=True)
        y -= offsets[None]
        maha = np.einsum("nke,nke->nk", y, y)
    else:
        maha = np.empty((n, k))
        for j in range(k):
            y = X @ precs[j] - offsets[j]
            maha[:, j] = np.einsum("ne,ne->n", y, y)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)
    return logw - 0.5 * (d * _LOG_2PI + logdet + maha)


def _normalize_rows(lj: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row log-sum-exp and the row-normalised posteriors, in the log domain."""
    m = lj.max(axis=1, keepdims=True)
    m[~np.isfinite(m)] = 0.0
    e = np.exp(lj - m)
    s = e.sum(axis=1, keepdims=True)
    return np.log(s[:, 0]) + m[:, 0], e / s


def _kmeanspp(X, k, rng) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.integers(n) if total <= 0 else rng.choice(n, p=d2 / total)
        centers.append(X[idx])
        d2 = np.minimum(d2, np.sum((X - X[idx]) ** 2, axis=1))
    return np.array(centers)


def _m_step(X, XX, resp, reg):
    """XX holds the per-row outer products x x^T flattened to n x d^2 (None when too large)."""
    d = X.shape[1]
    nk = resp.sum(axis=0) + 10 * np.finfo(float).eps
    weights = nk / nk.sum()
    means = (resp.T @ X) / nk[:, None]
    if XX is not None:
        second = (resp.T @ XX).reshape(-1, d, d) / nk[:, None, None]
        covs = second - means[:, :, None] * means[:, None, :]
    else:
        covs = np.empty((len(nk), d, d))
        for j in range(len(nk)):
            diff = X - means[j]
            covs[j] = (resp[:, j, None] * diff).T @ diff / nk[j]
    covs = 0.5 * (covs + covs.transpose(0, 2, 1)) + reg * np.eye(d)
    return weights, means, covs


def _em_run(X, k, rng, reg, tol, max_iter) -> GmmModel:
    n, d = X.shape
    means = _kmeanspp(X, k, rng)
    pooled = float(np.mean(X.var(axis=0)))
    covs = np.repeat(((pooled + reg) * np.eye(d))[None], k, axis=0)
    weights = np.full(k, 1.0 / k)

    XX = (X[:, :, None] * X[:, None, :]).reshape(n, d * d) if n * d * d <= _BATCH_LIMIT else None
    history: list[float] = []
    converged = False
    n_iter = 0
    while True:
        row_ll, resp = _normalize_rows(_log_joint(X, weights, means, covs))
        ll = float(row_ll.sum())
        if history and ll - history[-1] < tol * abs(history[-1]):
            history.append(ll)
            converged = True
            break
        history.append(ll)
        if n_iter >= max_iter:
            break
        weights, means, covs = _m_step(X, XX, resp, reg)
        n_iter += 1
    return GmmModel(weights, means, covs, ll, n_iter, converged, tuple(history))


def fit_gmm(X, k: int, restarts: int = 5, seed: int = 0, reg: float = REG_FLOOR,
            tol: float = TOL, max_iter: int = MAX_ITER) -> GmmModel:
    """Best-of-``restarts`` EM fit (highest final log-likelihood; earliest restart on ties)."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatch("X must be a 2-D matrix")
    n, d = X.shape
    if k < 1:
        raise ValueError("k must be >= 1")
    if n < k * (d + 1):
        raise TooFewPoints(f"need n >= k*(d+1) = {k * (d + 1)}, got {n}")
    # EM runs on column-centred data to keep the second-moment covariance update well conditioned
    shift = X.mean(axis=0)
    Xc = X - shift
    best = None
    for r in range(max(1, restarts)):
        rng = np.random.default_rng(np.random.SeedSequence([seed, r]))
        model = _em_run(Xc, k, rng, reg, tol, max_iter)
        if best is None or model.log_likelihood > best.log_likelihood:
            best = model
    return GmmModel(best.weights, best.means + shift, best.covariances, best.log_likelihood,
                    best.n_iter, best.converged, best.ll_history)


def assign(model: GmmModel, X) -> tuple[np.ndarray, np.ndarray]:
    """Hard labels (argmax posterior, lowest index on ties) and posterior matrix."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.d:
        raise DimensionMismatch(f"expected {model.d} columns, got {X.shape[1]}")
    _, post = _normalize_rows(_log_joint(X, model.weights, model.means, model.covariances))
    return np.argmax(post, axis=1), post


# ---------------------------------------------------------------------------
# Silhouette
# ---------------------------------------------------------------------------

def _stratified_sample(inv, counts, m, rng) -> np.ndarray:
    n = counts.sum()
    quota = m * counts / n
    take = np.floor(quota).astype(int)
    short = m - take.sum()
    if short:
        frac = quota - take
        order = np.lexsort((np.arange(len(counts)), -frac))
        take[order[:short]] += 1
    picked = []
    for c, t in enumerate(take):
        members = np.flatnonzero(inv == c)
        if t:
            picked.append(rng.choice(members, size=t, replace=False))
    return np.sort(np.concatenate(picked))


def silhouette(X, labels, max_points: int = 10_000, seed: int = 0, chunk: int = 1024) -> float:
    """Mean silhouette (Euclidean). Above ``max_points`` rows, scores a cluster-stratified
    subsample while a and b are still measured against every row."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    labels = np.asarray(labels)
    uniq, inv = np.unique(labels, return_inverse=True)
    if len(uniq) < 2:
        raise SingleCluster("silhouette needs at least two clusters")
    n, k = len(X), len(uniq)
    counts = np.bincount(inv, minlength=k)
    if n > max_points:
        idx = _stratified_sample(inv, counts, max_points, np.random.default_rng(seed))
    else:
        idx = np.arange(n)
    onehot = np.zeros((n, k))
    onehot[np.arange(n), inv] = 1.0

    scores = np.empty(len(idx))
    for start in range(0, len(idx), chunk):
        rows = idx[start:start + chunk]
        sums = cdist(X[rows], X) @ onehot
        own = inv[rows]
        r = np.arange(len(rows))
        own_n = counts[own]
        with np.errstate(divide="ignore", invalid="ignore"):
            a = sums[r, own] / (own_n - 1)
            means = sums / counts
        means[r, own] = np.inf
        b = means.min(axis=1)
        denom = np.maximum(a, b)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = np.where(denom > 0, (b - a) / denom, 0.0)
        s[own_n == 1] = 0.0
        scores[start:start + len(rows)] = s
    return float(scores.mean())


# ---------------------------------------------------------------------------
# Model selection
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Candidate:
    k: int
    bic: float | None
    silhouette: float | None
    bic_rank: int | None = None
    sil_rank: int | None = None
    model: GmmModel | None = field(default=None, repr=False)
    error: str | None = None

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "bic": self.bic,
            "silhouette": self.silhouette,
            "bic_rank": self.bic_rank,
            "sil_rank": self.sil_rank,
            "error": self.error,
        }


@dataclass(frozen=True, eq=False)
class SelectionResult:
    candidates: tuple[Candidate, ...]
    chosen_k: int

    @property
    def model(self) -> GmmModel:
        return self.candidate(self.chosen_k).model

    def candidate(self, k: int) -> Candidate:
        for c in self.candidates:
            if c.k == k:
                return c
        raise KeyError(k)

    def to_dict(self, include_model: bool = True) -> dict:
        out = {"chosen_k": self.chosen_k, "candidates": [c.to_dict() for c in self.candidates]}
        if include_model:
            out["model"] = self.model.to_dict(include_covariances=False)
        return out


def default_threads() -> int:
    raw = os.environ.get(THREADS_ENV)
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def _score_k(X, k, restarts, seed, max_points) -> Candidate:
    try:
        model = fit_gmm(X, k, restarts=restarts, seed=seed + k)
    except BiaslensError as exc:
        return Candidate(k, None, None, error=f"{type(exc).__name__}: {exc}")
    labels, _ = assign(model, X)
    try:
        sil = silhouette(X, labels, max_points=max_points, seed=seed + k)
    except SingleCluster:
        sil = None
    return Candidate(k, bic(model, len(X)), sil, model=model,
                     error=None if sil is not None else "hard assignment collapsed to one cluster")


def rank_candidates(candidates) -> tuple[list[Candidate], int]:
    """Rank by BIC ascending and silhouette descending ('min' ranks); pick the lowest
    rank sum, smaller k on ties. Candidates without a score rank last on that criterion."""
    scored = [c for c in candidates if c.bic is not None]
    if not scored:
        raise SingleCluster("no candidate k could be fitted")
    bics = np.array([c.bic for c in scored])
    sils = np.array([c.silhouette if c.silhouette is not None else -np.inf for c in scored])
    bic_r = rankdata(bics, method="min").astype(int)
    sil_r = rankdata(-sils, method="min").astype(int)
    ranked = {c.k: Candidate(c.k, c.bic, c.silhouette, int(br), int(sr), c.model, c.error)
              for c, br, sr in zip(scored, bic_r, sil_r)}
    out = [ranked.get(c.k, c) for c in candidates]
    chosen = min(ranked.values(), key=lambda c: (c.bic_rank + c.sil_rank, c.k)).k
    return out, chosen


def select_k(X, k_min: int = 5, k_max: int = 20, restarts: int = 5, seed: int = 0,
             max_points: int = 10_000, threads: int | None = None) -> SelectionResult:
    if k_min < 2:
        raise SingleCluster("k_min must be >= 2 for the silhouette to exist")
    if k_max < k_min:
        raise ValueError("k_max must be >= k_min")
    X = np.asarray(X, dtype=float)
    ks = list(range(k_min, k_max + 1))
    threads = default_threads() if threads is None else max(1, threads)
    if threads > 1 and len(ks) > 1:
        with ThreadPoolExecutor(max_workers=min(threads, len(ks))) as pool:
            cands = list(pool.map(lambda k: _score_k(X, k, restarts, seed, max_points), ks))
    else:
        cands = [_score_k(X, k, restarts, seed, max_points) for k in ks]
    ranked, chosen = rank_candidates(cands)
    return SelectionResult(tuple(ranked), chosen)
