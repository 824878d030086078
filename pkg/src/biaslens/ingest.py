"""Loading, validating and writing prediction records.

A :class:`Dataset` is column-oriented (numpy arrays keyed by model / factor)
because every analysis works on whole columns; :class:`Record` is the row view
used for construction and inspection.

File formats
------------
records CSV
    header with ``id``, ``y_true_g``, one ``pred_<model>_g`` per model and one
    column per schema factor. Empty cell = missing.
schema JSON
    ``{"factors": [{"name", "kind", "unit", "cutpoints"?, "categories"?, "labels"?}]}``
embeddings
    CSV ``id,e0,...,e{d-1}`` or the binary ``BLNS`` sidecar (little-endian:
    magic, u32 count, u32 dim, then per record u32 id length, UTF-8 id,
    ``dim`` float32 values).
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, DuplicateId, ParseError, SchemaMismatch, UnknownFactor, UnknownModel

BLNS_MAGIC = b"BLNS"
CONTINUOUS = "continuous"
CATEGORICAL = "categorical"
_PRED_PREFIX, _PRED_SUFFIX = "pred_", "_g"


# ---------------------------------------------------------------------------
# Schema
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FactorSpec:
    name: str
    kind: str
    unit: str = ""
    cutpoints: tuple[float, ...] | None = None
    categories: tuple[str, ...] | None = None
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in (CONTINUOUS, CATEGORICAL):
            raise SchemaMismatch(f"factor {self.name!r}: unknown kind {self.kind!r}")
        if self.cutpoints is not None:
            cps = self.cutpoints
            if self.kind != CONTINUOUS:
                raise SchemaMismatch(f"factor {self.name!r}: cutpoints need a continuous factor")
            if any(not b > a for a, b in zip(cps, cps[1:])):
                raise SchemaMismatch(f"factor {self.name!r}: cutpoints must be strictly increasing")
        if self.categories is not None and len(set(self.categories)) != len(self.categories):
            raise SchemaMismatch(f"factor {self.name!r}: duplicate categories")

    def to_dict(self) -> dict:
        out: dict = {"name": self.name, "kind": self.kind, "unit": self.unit}
        if self.cutpoints is not None:
            out["cutpoints"] = list(self.cutpoints)
        if self.categories is not None:
            out["categories"] = list(self.categories)
        if self.labels is not None:
            out["labels"] = list(self.labels)
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "FactorSpec":
        try:
            name, kind = d["name"], d["kind"]
        except KeyError as exc:
            raise SchemaMismatch(f"factor entry missing {exc.args[0]!r}: {dict(d)}") from None
        cps = d.get("cutpoints")
        cats = d.get("categories")
        labels = d.get("labels")
        return cls(
            name=str(name),
            kind=str(kind),
            unit=str(d.get("unit", "")),
            cutpoints=tuple(float(c) for c in cps) if cps is not None else None,
            categories=tuple(str(c) for c in cats) if cats is not None else None,
            labels=tuple(str(x) for x in labels) if labels is not None else None,
        )


@dataclass(frozen=True)
class FactorSchema:
    factors: tuple[FactorSpec, ...]

    def __post_init__(self):
        names = [f.name for f in self.factors]
        dupes = {n for n in names if names.count(n) > 1}
        if dupes:
            raise SchemaMismatch(f"duplicate factor names: {sorted(dupes)}")

    @property
    def names(self) -> list[str]:
        return [f.name for f in self.factors]

    def __getitem__(self, name: str) -> FactorSpec:
        for f in self.factors:
            if f.name == name:
                return f
        raise UnknownFactor(name)

    def __contains__(self, name: str) -> bool:
        return any(f.name == name for f in self.factors)

    def to_dict(self) -> dict:
        return {"factors": [f.to_dict() for f in self.factors]}

    @classmethod
    def from_dict(cls, d) -> "FactorSchema":
        entries = d["factors"] if isinstance(d, Mapping) else d
        return cls(tuple(FactorSpec.from_dict(e) for e in entries))


# ---------------------------------------------------------------------------
# Records / Dataset
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Record:
    id: str
    y_true: float
    predictions: Mapping[str, float]
    factors: Mapping[str, object] = field(default_factory=dict)
    embedding: tuple[float, ...] | None = None


@dataclass(frozen=True, eq=False)
class Dataset:
    """Validated, immutable collection of prediction records.

    Missing values: NaN in continuous factor / prediction arrays, ``None`` in
    categorical arrays, NaN rows in ``embeddings`` (see ``has_embedding``).
    """

    ids: tuple[str, ...]
    y_true: np.ndarray
    predictions: dict[str, np.ndarray]
    factors: dict[str, np.ndarray]
    schema: FactorSchema
    embeddings: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.ids)
        if len(set(self.ids)) != n:
            seen, dup = set(), None
            for i in self.ids:
                if i in seen:
                    dup = i
                    break
                seen.add(i)
            raise DuplicateId(f"duplicate record id {dup!r}")
        for arr in (self.y_true, *self.predictions.values(), *self.factors.values()):
            arr.setflags(write=False)
            if len(arr) != n:
                raise DimensionMismatch("column length differs from id count")
        if self.embeddings is not None:
            self.embeddings.setflags(write=False)
            if self.embeddings.ndim != 2 or self.embeddings.shape[0] != n:
                raise DimensionMismatch("embedding matrix must be n x d")
        if set(self.factors) != set(self.schema.names):
            raise SchemaMismatch("factor columns do not match schema")

    # -- basic accessors ----------------------------------------------------
    def __len__(self) -> int:
        return len(self.ids)

    @property
    def model_names(self) -> list[str]:
        return list(self.predictions)

    @property
    def embedding_dim(self) -> int | None:
        return None if self.embeddings is None else int(self.embeddings.shape[1])

    @cached_property
    def has_embedding(self) -> np.ndarray:
        if self.embeddings is None:
            return np.zeros(len(self), dtype=bool)
        return ~np.isnan(self.embeddings).any(axis=1)

    def prediction(self, model: str) -> np.ndarray:
        try:
            return self.predictions[model]
        except KeyError:
            raise UnknownModel(f"unknown model {model!r}; have {self.model_names}") from None

    def factor(self, name: str) -> np.ndarray:
        try:
            return self.factors[name]
        except KeyError:
            raise UnknownFactor(f"unknown factor {name!r}") from None

    def relative_errors(self, model: str) -> np.ndarray:
        """Per-record |pred - y| / y as fractions; NaN where the prediction is missing."""
        return np.abs(self.prediction(model) - self.y_true) / self.y_true

    def missing_mask(self, name: str) -> np.ndarray:
        col = self.factor(name)
        if self.schema[name].kind == CONTINUOUS:
            return np.isnan(col)
        return np.array([v is None for v in col], dtype=bool)

    def record(self, i: int) -> Record:
        facs = {}
        for name, col in self.factors.items():
            v = col[i]
            if self.schema[name].kind == CONTINUOUS:
                v = None if math.isnan(v) else float(v)
            facs[name] = v
        emb = None
        if self.embeddings is not None and self.has_embedding[i]:
            emb = tuple(float(x) for x in self.embeddings[i])
        preds = {m: float(a[i]) for m, a in self.predictions.items() if not math.isnan(a[i])}
        return Record(self.ids[i], float(self.y_true[i]), preds, facs, emb)

    @property
    def records(self) -> list[Record]:
        return [self.record(i) for i in range(len(self))]

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        idx = np.flatnonzero(mask) if mask.dtype == bool else mask
        return Dataset(
            ids=tuple(self.ids[i] for i in idx),
            y_true=self.y_true[idx].copy(),
            predictions={m: a[idx].copy() for m, a in self.predictions.items()},
            factors={f: a[idx].copy() for f, a in self.factors.items()},
            schema=self.schema,
            embeddings=None if self.embeddings is None else self.embeddings[idx].copy(),
        )

    def equals(self, other: "Dataset") -> bool:
        """Field-for-field equality (NaN == NaN)."""
        if self.ids != other.ids or self.schema != other.schema:
            return False
        if self.model_names != other.model_names or list(self.factors) != list(other.factors):
            return False
        if not np.array_equal(self.y_true, other.y_true):
            return False
        for m in self.predictions:
            if not np.array_equal(self.predictions[m], other.predictions[m], equal_nan=True):
                return False
        for f, col in self.factors.items():
            if self.schema[f].kind == CONTINUOUS:
                if not np.array_equal(col, other.factors[f], equal_nan=True):
                    return False
            elif list(col) != list(other.factors[f]):
                return False
        if (self.embeddings is None) != (other.embeddings is None):
            return False
        if self.embeddings is not None and not np.array_equal(
            self.embeddings, other.embeddings, equal_nan=True
        ):
            return False
        return True

    def digest(self) -> dict:
        return {
            "n_records": len(self),
            "models": self.model_names,
            "factors": self.schema.names,
            "embedding_dim": self.embedding_dim,
            "n_embedded": int(self.has_embedding.sum()),
        }

    # -- construction ---------------------------------------------------------
    @classmethod
    def from_records(
        cls,
        records: Sequence[Record],
        schema: FactorSchema,
        model_names: Sequence[str] | None = None,
        embedding_dim: int | None = None,
    ) -> "Dataset":
        if model_names is None:
            seen: dict[str, None] = {}
            for r in records:
                for m in r.predictions:
                    seen.setdefault(m, None)
            model_names = list(seen)
        n = len(records)
        y = np.empty(n)
        preds = {m: np.full(n, np.nan) for m in model_names}
        facs: dict[str, np.ndarray] = {}
        for spec in schema.factors:
            facs[spec.name] = np.full(n, np.nan) if spec.kind == CONTINUOUS else np.full(n, None, dtype=object)
        dims = {len(r.embedding) for r in records if r.embedding is not None}
        if embedding_dim is None and dims:
            if len(dims) > 1:
                raise DimensionMismatch(f"embedding lengths vary: {sorted(dims)}")
            embedding_dim = dims.pop()
        emb = None
        if embedding_dim is not None:
            emb = np.full((n, embedding_dim), np.nan)
        for i, r in enumerate(records):
            if not r.y_true > 0:
                raise ParseError(f"record {r.id!r}: y_true must be > 0")
            y[i] = r.y_true
            for m, v in r.predictions.items():
                if m not in preds:
                    raise UnknownModel(f"record {r.id!r}: unknown model {m!r}")
                if not v > 0:
                    raise ParseError(f"record {r.id!r}: prediction {m} must be > 0")
                preds[m][i] = v
            for name, v in r.factors.items():
                if name not in facs:
                    raise SchemaMismatch(f"record {r.id!r}: unknown factor {name!r}")
                if v is not None:
                    facs[name][i] = _coerce(schema[name], v)
            if r.embedding is not None:
                if len(r.embedding) != embedding_dim:
                    raise DimensionMismatch(
                        f"record {r.id!r}: embedding length {len(r.embedding)} != {embedding_dim}"
                    )
                emb[i] = r.embedding
        return cls(tuple(r.id for r in records), y, preds, facs, schema, emb)


def _coerce(spec: FactorSpec, value):
    if spec.kind == CONTINUOUS:
        try:
            v = float(value)
        except (TypeError, ValueError):
            raise SchemaMismatch(f"factor {spec.name!r} is continuous; got {value!r}") from None
        if math.isnan(v):
            raise SchemaMismatch(f"factor {spec.name!r}: NaN is not a value; leave the cell empty")
        return v
    v = str(value)
    if spec.categories is not None and v not in spec.categories:
        raise SchemaMismatch(f"factor {spec.name!r}: category {v!r} not in {list(spec.categories)}")
    return v


# ---------------------------------------------------------------------------
# Readers
# ---------------------------------------------------------------------------

def load_schema(path) -> FactorSchema:
    with open(path, encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON ({exc.msg})", exc.lineno) from None
    try:
        return FactorSchema.from_dict(raw)
    except (KeyError, TypeError) as exc:
        raise SchemaMismatch(f"{path}: malformed schema ({exc})") from None


def _positive(text: str, what: str, line: int) -> float:
    try:
        v = float(text)
    except ValueError:
        raise ParseError(f"{what} is not a number: {text!r}", line) from None
    if not v > 0:
        raise ParseError(f"{what} must be > 0, got {text!r}", line)
    return v


def read_records(path, schema: FactorSchema):
    """Parse the records CSV. Returns (ids, y_true, predictions, factors)."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty file", 1) from None
        if "id" not in header or "y_true_g" not in header:
            raise ParseError("header needs 'id' and 'y_true_g' columns", 1)
        models, factor_cols = [], []
        for col in header:
            if col in ("id", "y_true_g"):
                continue
            if col.startswith(_PRED_PREFIX) and col.endswith(_PRED_SUFFIX) and len(col) > 6:
                models.append(col[len(_PRED_PREFIX):-len(_PRED_SUFFIX)])
            elif col in schema:
                factor_cols.append(col)
            else:
                raise SchemaMismatch(f"column {col!r} is not a schema factor")
        missing = set(schema.names) - set(factor_cols)
        if missing:
            raise SchemaMismatch(f"schema factors absent from records: {sorted(missing)}")
        pos = {c: j for j, c in enumerate(header)}

        ids: list[str] = []
        seen: set[str] = set()
        y: list[float] = []
        preds: dict[str, list[float]] = {m: [] for m in models}
        facs: dict[str, list] = {f: [] for f in factor_cols}
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} fields, got {len(row)}", line_no)
            rid = row[pos["id"]]
            if not rid:
                raise ParseError("empty id", line_no)
            if rid in seen:
                raise DuplicateId(f"line {line_no}: duplicate record id {rid!r}")
            seen.add(rid)
            ids.append(rid)
            y.append(_positive(row[pos["y_true_g"]], "y_true_g", line_no))
            for m in models:
                cell = row[pos[f"{_PRED_PREFIX}{m}{_PRED_SUFFIX}"]]
                preds[m].append(_positive(cell, f"pred_{m}_g", line_no) if cell != "" else math.nan)
            for f in factor_cols:
                cell = row[pos[f]]
                if cell == "":
                    facs[f].append(None)
                    continue
                try:
                    facs[f].append(_coerce(schema[f], cell))
                except SchemaMismatch as exc:
                    raise SchemaMismatch(f"line {line_no}: {exc}") from None
    return ids, y, preds, facs


def read_embeddings(path) -> tuple[list[str], np.ndarray]:
    """Read CSV or BLNS embeddings; format detected from the magic bytes."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == BLNS_MAGIC:
        return _read_blns(path)
    return _read_embedding_csv(path)


def _read_blns(path: Path) -> tuple[list[str], np.ndarray]:
    buf = path.read_bytes()
    if len(buf) < 12:
        raise ParseError(f"{path}: truncated BLNS header")
    count, dim = struct.unpack_from("<II", buf, 4)
    off = 12
    ids = []
    out = np.empty((count, dim), dtype=np.float64)
    for i in range(count):
        if off + 4 > len(buf):
            raise ParseError(f"{path}: truncated at record {i}")
        (id_len,) = struct.unpack_from("<I", buf, off)
        off += 4
        end = off + id_len + 4 * dim
        if end > len(buf):
            raise ParseError(f"{path}: truncated at record {i}")
        ids.append(buf[off:off + id_len].decode("utf-8"))
        off += id_len
        out[i] = np.frombuffer(buf, dtype="<f4", count=dim, offset=off)
        off += 4 * dim
    if off != len(buf):
        raise ParseError(f"{path}: {len(buf) - off} trailing bytes after {count} records")
    return ids, out


def _read_embedding_csv(path: Path) -> tuple[list[str], np.ndarray]:
    ids, rows = [], []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "id":
            raise ParseError(f"{path}: embeddings CSV must start with an 'id' column", 1)
        dim = len(header) - 1
        for line_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) - 1 != dim:
                raise DimensionMismatch(f"{path} line {line_no}: embedding length {len(row) - 1} != {dim}")
            try:
                rows.append([float(x) for x in row[1:]])
            except ValueError:
                raise ParseError(f"{path}: non-numeric embedding value", line_no) from None
            ids.append(row[0])
    return ids, np.array(rows, dtype=float).reshape(len(rows), dim)


def load_dataset(records_path, schema_path, embeddings_path=None) -> Dataset:
    schema = load_schema(schema_path)
    ids, y, preds, facs = read_records(records_path, schema)
    n = len(ids)
    factors: dict[str, np.ndarray] = {}
    for spec in schema.factors:
        if spec.kind == CONTINUOUS:
            factors[spec.name] = np.array([np.nan if v is None else v for v in facs[spec.name]], dtype=float)
        else:
            col = np.empty(n, dtype=object)
            col[:] = facs[spec.name]
            factors[spec.name] = col
    emb = None
    if embeddings_path is not None:
        e_ids, e_mat = read_embeddings(embeddings_path)
        index = {rid: i for i, rid in enumerate(ids)}
        emb = np.full((n, e_mat.shape[1]), np.nan)
        seen: set[str] = set()
        for j, rid in enumerate(e_ids):
            if rid in seen:
                raise DuplicateId(f"duplicate embedding id {rid!r}")
            seen.add(rid)
            if rid not in index:
                raise SchemaMismatch(f"embedding for unknown record id {rid!r}")
            emb[index[rid]] = e_mat[j]
    return Dataset(
        ids=tuple(ids),
        y_true=np.array(y, dtype=float),
        predictions={m: np.array(v, dtype=float) for m, v in preds.items()},
        factors=factors,
        schema=schema,
        embeddings=emb,
    )


# ---------------------------------------------------------------------------
# Writers
# ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return "" if math.isnan(v) else repr(float(v))


def write_records(dataset: Dataset, path) -> None:
    header = ["id", "y_true_g", *(f"pred_{m}_g" for m in dataset.model_names), *dataset.schema.names]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i, rid in enumerate(dataset.ids):
            row = [rid, _fmt(dataset.y_true[i])]
            row += [_fmt(dataset.predictions[m][i]) for m in dataset.model_names]
            for spec in dataset.schema.factors:
                v = dataset.factors[spec.name][i]
                if spec.kind == CONTINUOUS:
                    row.append(_fmt(v))
                else:
                    row.append("" if v is None else v)
            w.writerow(row)


def write_schema(schema: FactorSchema, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(schema.to_dict(), fh, indent=2)
        fh.write("\n")


def write_embeddings(dataset: Dataset, path, fmt: str = "bin") -> None:
    """Write embedded records only. ``fmt="bin"`` stores float32 (lossy for float64 input)."""
    if dataset.embeddings is None:
        raise DimensionMismatch("dataset has no embeddings")
    rows = np.flatnonzero(dataset.has_embedding)
    dim = dataset.embedding_dim
    if fmt == "bin":
        parts = [BLNS_MAGIC, struct.pack("<II", len(rows), dim)]
        for i in rows:
            rid = dataset.ids[i].encode("utf-8")
            parts.append(struct.pack("<I", len(rid)))
            parts.append(rid)
            parts.append(dataset.embeddings[i].astype("<f4").tobytes())
        Path(path).write_bytes(b"".join(parts))
    elif fmt == "csv":
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["id", *(f"e{j}" for j in range(dim))])
            for i in rows:
                w.writerow([dataset.ids[i], *(repr(float(x)) for x in dataset.embeddings[i])])
    else:
        raise ValueError(f"unknown embeddings format {fmt!r}")


def save_dataset(dataset: Dataset, directory, embeddings_format: str = "bin") -> dict[str, Path]:
    """Write records.csv, schema.json and (if present) embeddings; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = {"records": directory / "records.csv", "schema": directory / "schema.json"}
    write_records(dataset, paths["records"])
    write_schema(dataset.schema, paths["schema"])
    if dataset.embeddings is not None:
        ext = "bin" if embeddings_format == "bin" else "csv"
        paths["embeddings"] = directory / f"embeddings.{ext}"
        write_embeddings(dataset, paths["embeddings"], embeddings_format)
    return paths


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Validation report
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidationReport:
    n_records: int
    missingness: dict[str, float]
    model_coverage: dict[str, float]
    embedding_coverage: float
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "n_records": self.n_records,
            "missingness": dict(self.missingness),
            "model_coverage": dict(self.model_coverage),
            "embedding_coverage": self.embedding_coverage,
            "warnings": list(self.warnings),
        }


def validate(dataset: Dataset) -> ValidationReport:
    n = len(dataset)
    warnings = []
    missingness = {}
    for name in dataset.schema.names:
        rate = float(dataset.missing_mask(name).mean()) if n else 0.0
        missingness[name] = rate
        if rate == 1.0:
            warnings.append(f"factor {name!r} is entirely missing")
    coverage = {
        m: float((~np.isnan(a)).mean()) if n else 0.0 for m, a in dataset.predictions.items()
    }
    emb_cov = float(dataset.has_embedding.mean()) if n else 0.0
    if emb_cov == 0.0:
        warnings.append("no embeddings: slice discovery is unavailable")
    elif emb_cov < 1.0:
        warnings.append(f"{n - int(dataset.has_embedding.sum())} records lack embeddings and are excluded from slice discovery")
    return ValidationReport(n, missingness, coverage, emb_cov, tuple(warnings))
