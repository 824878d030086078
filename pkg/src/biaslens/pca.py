"""Principal component projection of embedding vectors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateData, DimensionMismatch, InsufficientRows

_RATIO_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # d_out x d_in, rows orthonormal
    explained_variance_ratio: np.ndarray
    scale: np.ndarray | None = None  # set when fitted with standardize=True

    @property
    def d_in(self) -> int:
        return int(self.mean.shape[0])

    @property
    def d_out(self) -> int:
        return int(self.components.shape[0])

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "components": self.components.tolist(),
            "explained_variance_ratio": self.explained_variance_ratio.tolist(),
            "scale": None if self.scale is None else self.scale.tolist(),
            "d_out": self.d_out,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PcaModel":
        comps = np.array(d["components"], dtype=float).reshape(-1, len(d["mean"]))
        return cls(
            mean=np.array(d["mean"], dtype=float),
            components=comps,
            explained_variance_ratio=np.array(d["explained_variance_ratio"], dtype=float),
            scale=None if d.get("scale") is None else np.array(d["scale"], dtype=float),
        )


def _fix_signs(vecs: np.ndarray) -> np.ndarray:
    """Flip each row so its largest-magnitude entry is nonnegative (first index on ties)."""
    idx = np.argmax(np.abs(vecs), axis=1)
    signs = np.sign(vecs[np.arange(len(vecs)), idx])
    signs[signs == 0] = 1.0
    return vecs * signs[:, None]


def fit_pca(X, variance_target: float = 0.99, cap: int = 128, standardize: bool = False) -> PcaModel:
    """Fit PCA keeping min(cap, fewest components reaching ``variance_target``).

    Uses the d x d covariance when d <= n, otherwise the n x n Gram matrix.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    n, d = X.shape
    if n < 2:
        raise InsufficientRows(f"PCA needs at least 2 rows, got {n}")
    if d < 1:
        raise DimensionMismatch("PCA needs at least one column")
    if not 0 < variance_target <= 1:
        raise ValueError("variance_target must be in (0, 1]")
    if cap < 1:
        raise ValueError("cap must be >= 1")

    mean = X.mean(axis=0)
    Xc = X - mean
    scale = None
    if standardize:
        scale = Xc.std(axis=0, ddof=1)
        scale[scale == 0] = 1.0
        Xc = Xc / scale
    if not np.any(Xc):
        raise DegenerateData("all rows are identical")

    if d <= n:
        cov = Xc.T @ Xc / (n - 1)
        evals, evecs = np.linalg.eigh(cov)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        vecs = evecs[:, order].T
    else:
        gram = Xc @ Xc.T / (n - 1)
        evals, evecs = np.linalg.eigh(gram)
        order = np.argsort(evals)[::-1]
        evals = np.clip(evals[order], 0.0, None)
        keep = evals > evals[0] * 1e-12
        evals, u = evals[keep], evecs[:, order][:, keep]
        vecs = (Xc.T @ u).T
        vecs /= np.linalg.norm(vecs, axis=1, keepdims=True)

    total = float(np.trace(Xc.T @ Xc)) / (n - 1) if d <= n else float(np.sum(Xc * Xc)) / (n - 1)
    ratios = evals / total
    cum = np.cumsum(ratios)
    if variance_target >= 1.0:
        needed = len(ratios)  # full retention keeps every direction, however small
    else:
        needed = int(np.searchsorted(cum, variance_target - _RATIO_TOL) + 1)
    d_out = max(1, min(cap, needed, d, n - 1, len(ratios)))
    comps = _fix_signs(vecs[:d_out])
    return PcaModel(mean=mean, components=comps, explained_variance_ratio=ratios[:d_out], scale=scale)


def transform(model: PcaModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.d_in:
        raise DimensionMismatch(f"expected {model.d_in} columns, got {X.shape[1]}")
    Xc = X - model.mean
    if model.scale is not None:
        Xc = Xc / model.scale
    return Xc @ model.components.T


def inverse_transform(model: PcaModel, Z) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    out = Z @ model.components
    if model.scale is not None:
        out = out * model.scale
    return out + model.mean
