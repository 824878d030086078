from __future__ import annotations

import numpy as np
import pytest

from biaslens.ingest import CATEGORICAL, CONTINUOUS, Dataset, FactorSchema, FactorSpec


def make_dataset(y_true, preds: dict, factors: dict | None = None, embeddings=None,
                 kinds: dict | None = None, cutpoints: dict | None = None) -> Dataset:
    """Small in-memory dataset; factor kind inferred from the first non-missing value."""
    factors = factors or {}
    kinds = kinds or {}
    cutpoints = cutpoints or {}
    specs, cols = [], {}
    for name, values in factors.items():
        kind = kinds.get(name)
        if kind is None:
            first = next((v for v in values if v is not None), 0.0)
            kind = CATEGORICAL if isinstance(first, str) else CONTINUOUS
        if kind == CONTINUOUS:
            cols[name] = np.array([np.nan if v is None else v for v in values], dtype=float)
            specs.append(FactorSpec(name, kind, cutpoints=cutpoints.get(name)))
        else:
            col = np.empty(len(values), dtype=object)
            col[:] = list(values)
            cols[name] = col
            specs.append(FactorSpec(name, kind))
    n = len(y_true)
    return Dataset(
        ids=tuple(f"r{i}" for i in range(n)),
        y_true=np.asarray(y_true, dtype=float),
        predictions={m: np.asarray(v, dtype=float) for m, v in preds.items()},
        factors=cols,
        schema=FactorSchema(tuple(specs)),
        embeddings=None if embeddings is None else np.asarray(embeddings, dtype=float),
    )


def dataset_with_errors(errors: dict, factors: dict | None = None, y: float = 1000.0, **kw) -> Dataset:
    """Dataset whose per-model relative errors are exactly ``errors`` (over-predictions)."""
    n = len(next(iter(errors.values())))
    y_true = np.full(n, y)
    preds = {m: y_true * (1.0 + np.asarray(e, dtype=float)) for m, e in errors.items()}
    return make_dataset(y_true, preds, factors, **kw)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# -- acceptance reporting ----------------------------------------------------

_ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict_line():
    """Record one PASS/FAIL line per acceptance criterion; echoed in the terminal summary."""
    def emit(number: int, ok: bool, detail: str) -> None:
        line = f"ACCEPTANCE #{number} {'PASS' if ok else 'FAIL'}: {detail}"
        print(line)
        _ACCEPTANCE_LINES.append(line)
    return emit


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split("#")[1].split()[0])):
            terminalreporter.write_line(line)
