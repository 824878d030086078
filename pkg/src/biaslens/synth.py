"""Synthetic audit datasets with planted error effects, confounding and embedding clusters.

Determinism contract (draw order version 1)
-------------------------------------------
All randomness comes from one ``numpy.random.PCG64(seed)`` stream read with
``Generator.random`` (53-bit uniforms), consumed in this order:

1. embedding cluster centres: ``n_clusters x dim`` uniforms, row-major;
2. records in index order, each taking a fixed-width block of uniforms:
   per factor in config order one value draw (none for ``mean`` factors) then
   one missingness draw; one draw for weight noise; per model one error-noise
   draw then one sign draw; then ``dim`` embedding draws.

Uniforms ``u`` are mapped to the open interval as ``u + 2**-54`` and turned
into normal / gamma variates by inverse CDF, so the layout never depends on
parameter values (a zero noise scale still consumes its slot).
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.special import gammaincinv, ndtri
from scipy.stats import norm

from .clinical import growth_curve
from .errors import InvalidConfig, MismatchedProvenance
from .ingest import CATEGORICAL, CONTINUOUS, Dataset, FactorSchema, FactorSpec

DRAW_ORDER_VERSION = 1
MAX_RELATIVE_ERROR = 0.95  # keeps predictions positive


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass
class FactorDef:
    """One generated factor.

    kind: ``uniform`` (low, high), ``normal`` (mean, sd), ``categorical``
    (categories, probs) or ``mean`` (average of ``sources``). Continuous values
    get ``sum(coef * value[other])`` from ``links`` and an optional sinusoidal
    ``ripple`` {source, amplitude, period} added before clipping.
    """

    name: str
    kind: str
    unit: str = ""
    low: float = 0.0
    high: float = 1.0
    mean: float = 0.0
    sd: float = 1.0
    clip: tuple[float, float] | None = None
    links: dict[str, float] = field(default_factory=dict)
    ripple: dict | None = None
    categories: list[str] = field(default_factory=list)
    probs: list[float] = field(default_factory=list)
    sources: list[str] = field(default_factory=list)
    missing_rate: float = 0.0
    cutpoints: list[float] | None = None
    labels: list[str] | None = None

    @property
    def schema_kind(self) -> str:
        return CATEGORICAL if self.kind == "categorical" else CONTINUOUS

    @property
    def draws(self) -> int:
        return 0 if self.kind == "mean" else 1


@dataclass
class EffectDef:
    """Multiplicative error effect: bins from ``cutpoints`` (continuous) or the
    factor's categories, one multiplier per bin."""

    factor: str
    multipliers: list[float]
    cutpoints: list[float] | None = None


@dataclass
class ModelDef:
    name: str
    base: float
    noise: float = 0.0  # coefficient of variation of the gamma error noise
    effects: list[EffectDef] = field(default_factory=list)


@dataclass
class EmbeddingDef:
    dim: int = 16
    keys: list[EffectDef] = field(default_factory=list)  # multipliers unused; bins define clusters
    spread: float = 1.0
    center_scale: float = 3.0


@dataclass
class SynthConfig:
    n: int
    seed: int
    factors: list[FactorDef]
    models: list[ModelDef]
    embedding: EmbeddingDef | None = None
    ga_factor: str | None = "ga_weeks"  # weeks; drives the reference weight
    weight_noise: float = 0.08
    expected_verdicts: dict[str, str] = field(default_factory=dict)
    name: str = "custom"

    # -- validation --------------------------------------------------------
    def validate(self) -> None:
        if self.n < 1:
            raise InvalidConfig("n must be >= 1")
        if self.seed < 0:
            raise InvalidConfig("seed must be >= 0")
        names: list[str] = []
        for f in self.factors:
            if f.name in names:
                raise InvalidConfig(f"duplicate factor {f.name!r}")
            if f.kind not in ("uniform", "normal", "categorical", "mean"):
                raise InvalidConfig(f"factor {f.name!r}: unknown kind {f.kind!r}")
            if not 0 <= f.missing_rate < 1:
                raise InvalidConfig(f"factor {f.name!r}: missing_rate must be in [0, 1)")
            if f.kind == "normal" and f.sd < 0:
                raise InvalidConfig(f"factor {f.name!r}: sd must be >= 0")
            if f.kind == "uniform" and not f.high > f.low:
                raise InvalidConfig(f"factor {f.name!r}: need high > low")
            if f.kind == "categorical":
                if not f.categories or len(f.categories) != len(f.probs):
                    raise InvalidConfig(f"factor {f.name!r}: categories and probs must align")
                if abs(sum(f.probs) - 1.0) > 1e-9 or min(f.probs) < 0:
                    raise InvalidConfig(f"factor {f.name!r}: probs must be a distribution")
            refs = list(f.links) + list(f.sources) + ([f.ripple["source"]] if f.ripple else [])
            for r in refs:
                if r not in names:
                    raise InvalidConfig(f"factor {f.name!r} references {r!r}, which is not an earlier factor")
                if self.factor(r).kind == "categorical":
                    raise InvalidConfig(f"factor {f.name!r}: link source {r!r} is categorical")
            if f.kind == "mean" and not f.sources:
                raise InvalidConfig(f"factor {f.name!r}: mean needs sources")
            names.append(f.name)
        if not self.models:
            raise InvalidConfig("at least one model is required")
        for m in self.models:
            if not m.base > 0:
                raise InvalidConfig(f"model {m.name!r}: base error level must be > 0")
            if m.noise < 0:
                raise InvalidConfig(f"model {m.name!r}: noise scale must be >= 0")
            for e in m.effects:
                self._check_bins(e, len(e.multipliers))
                if min(e.multipliers) <= 0:
                    raise InvalidConfig(f"model {m.name!r}: multipliers must be > 0")
        if self.embedding is not None:
            if self.embedding.dim < 2:
                raise InvalidConfig("embedding dimension must be >= 2")
            for k in self.embedding.keys:
                self._check_bins(k, None)
        if self.ga_factor is not None and self.ga_factor not in names:
            raise InvalidConfig(f"ga_factor {self.ga_factor!r} is not a factor")

    def _check_bins(self, e: EffectDef, n_mult: int | None) -> None:
        try:
            f = self.factor(e.factor)
        except KeyError:
            raise InvalidConfig(f"effect on unknown factor {e.factor!r}") from None
        n_bins = len(f.categories) if f.kind == "categorical" else len(e.cutpoints or []) + 1
        if f.kind != "categorical" and not e.cutpoints:
            raise InvalidConfig(f"effect on continuous {e.factor!r} needs cutpoints")
        if n_mult is not None and n_mult != n_bins:
            raise InvalidConfig(f"effect on {e.factor!r}: {n_mult} multipliers for {n_bins} bins")

    def factor(self, name: str) -> FactorDef:
        for f in self.factors:
            if f.name == name:
                return f
        raise KeyError(name)

    # -- serialisation -----------------------------------------------------
    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "SynthConfig":
        try:
            emb = d.get("embedding")
            return cls(
                n=int(d["n"]),
                seed=int(d["seed"]),
                factors=[FactorDef(**{**f, "clip": tuple(f["clip"]) if f.get("clip") else None})
                         for f in d["factors"]],
                models=[ModelDef(**{**m, "effects": [EffectDef(**e) for e in m.get("effects", [])]})
                        for m in d["models"]],
                embedding=None if emb is None else EmbeddingDef(
                    **{**emb, "keys": [EffectDef(**k) for k in emb.get("keys", [])]}),
                ga_factor=d.get("ga_factor", "ga_weeks"),
                weight_noise=float(d.get("weight_noise", 0.08)),
                expected_verdicts=dict(d.get("expected_verdicts", {})),
                name=d.get("name", "custom"),
            )
        except (KeyError, TypeError) as exc:
            raise InvalidConfig(f"malformed synth config: {exc}") from None

    @classmethod
    def load(cls, path) -> "SynthConfig":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Ground truth
# ---------------------------------------------------------------------------

@dataclass(eq=False)
class GroundTruth:
    ids: list[str]
    factor_values: dict[str, list]  # true values before missingness masking
    effect_bins: dict[str, list[int]]  # per effect / key factor
    clusters: list[int] | None
    relative_errors: dict[str, list[float]]
    planted_levels: dict[str, list[float]]
    planted_effects: dict[str, dict[str, list[float]]]
    links: dict[str, dict[str, float]]
    expected_mre: dict[str, float]
    expected_verdicts: dict[str, str]
    draw_order_version: int = DRAW_ORDER_VERSION

    def planted_factors(self, model: str) -> list[str]:
        return [f for f, mult in self.planted_effects.get(model, {}).items() if len(set(mult)) > 1]

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "draw_order_version", "ids", "factor_values", "effect_bins", "clusters", "relative_errors",
            "planted_levels", "planted_effects", "links", "expected_mre", "expected_verdicts")}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: Mapping) -> "GroundTruth":
        return cls(**{k: d[k] for k in (
            "ids", "factor_values", "effect_bins", "clusters", "relative_errors", "planted_levels",
            "planted_effects", "links", "expected_mre", "expected_verdicts")},
            draw_order_version=d.get("draw_order_version", DRAW_ORDER_VERSION))


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------

def _open_unit(u: np.ndarray) -> np.ndarray:
    return u + 2.0 ** -54


def _bin_index(config: SynthConfig, e: EffectDef, values) -> np.ndarray:
    f = config.factor(e.factor)
    if f.kind == "categorical":
        lookup = {c: i for i, c in enumerate(f.categories)}
        return np.array([lookup[v] for v in values], dtype=int)
    return np.searchsorted(np.asarray(e.cutpoints, dtype=float), np.asarray(values, dtype=float), side="right")


def generate(config: SynthConfig) -> tuple[Dataset, GroundTruth]:
    config.validate()
    n = config.n
    rng = np.random.Generator(np.random.PCG64(config.seed))
    emb = config.embedding

    n_clusters = 1
    if emb is not None:
        for k in emb.keys:
            f = config.factor(k.factor)
            n_clusters *= len(f.categories) if f.kind == "categorical" else len(k.cutpoints) + 1
        centers = ndtri(_open_unit(rng.random((n_clusters, emb.dim)))) * emb.center_scale

    width = sum(f.draws + 1 for f in config.factors) + 1 + 2 * len(config.models)
    width += emb.dim if emb is not None else 0
    U = rng.random((n, width))

    col = 0
    values: dict[str, np.ndarray] = {}
    missing: dict[str, np.ndarray] = {}
    for f in config.factors:
        if f.kind == "uniform":
            v = f.low + (f.high - f.low) * U[:, col]
        elif f.kind == "normal":
            v = f.mean + f.sd * ndtri(_open_unit(U[:, col]))
        elif f.kind == "categorical":
            cum = np.cumsum(f.probs)
            cum[-1] = 1.0
            idx = np.minimum(np.searchsorted(cum, U[:, col], side="right"), len(cum) - 1)
            v = np.array(f.categories, dtype=object)[idx]
        else:
            v = np.mean([values[s] for s in f.sources], axis=0)
        col += f.draws
        if f.kind in ("uniform", "normal"):
            for src, coef in f.links.items():
                v = v + coef * values[src]
            if f.ripple:
                v = v + f.ripple["amplitude"] * np.sin(2 * np.pi * values[f.ripple["source"]] / f.ripple["period"])
            if f.clip:
                v = np.clip(v, f.clip[0], f.clip[1])
        values[f.name] = v
        missing[f.name] = U[:, col] < f.missing_rate
        col += 1

    weight_z = ndtri(_open_unit(U[:, col]))
    col += 1
    if config.ga_factor is not None:
        curve = growth_curve()
        ga_days = np.clip(values[config.ga_factor] * 7.0, curve.ga_min, curve.ga_max)
        base_weight = np.polynomial.polynomial.polyval(ga_days, curve.coefficients)
    else:
        base_weight = np.full(n, 3000.0)
    y_true = base_weight * np.maximum(1.0 + config.weight_noise * weight_z, 0.2)

    preds, rel_errors, levels, effect_bins = {}, {}, {}, {}
    for m in config.models:
        level = np.full(n, m.base)
        for e in m.effects:
            bins = _bin_index(config, e, values[e.factor])
            effect_bins.setdefault(e.factor, bins.tolist())
            level = level * np.asarray(e.multipliers)[bins]
        if m.noise > 0:
            shape = 1.0 / m.noise ** 2
            g = gammaincinv(shape, _open_unit(U[:, col])) / shape
        else:
            g = np.ones(n)
        sign = np.where(U[:, col + 1] < 0.5, 1.0, -1.0)
        col += 2
        rel = np.minimum(level * g, MAX_RELATIVE_ERROR)
        preds[m.name] = y_true * (1.0 + sign * rel)
        rel_errors[m.name] = rel.tolist()
        levels[m.name] = level.tolist()

    embeddings, clusters = None, None
    if emb is not None:
        cl = np.zeros(n, dtype=int)
        for k in emb.keys:
            f = config.factor(k.factor)
            nb = len(f.categories) if f.kind == "categorical" else len(k.cutpoints) + 1
            bins = _bin_index(config, k, values[k.factor])
            effect_bins.setdefault(k.factor, bins.tolist())
            cl = cl * nb + bins
        noise = ndtri(_open_unit(U[:, col:col + emb.dim]))
        embeddings = centers[cl] + emb.spread * noise
        clusters = cl.tolist()
        col += emb.dim
    assert col == width

    width_digits = len(str(n - 1))
    ids = tuple(f"r{i:0{width_digits}d}" for i in range(n))
    schema = FactorSchema(tuple(
        FactorSpec(f.name, f.schema_kind, f.unit,
                   cutpoints=tuple(f.cutpoints) if f.cutpoints else None,
                   categories=tuple(f.categories) if f.kind == "categorical" else None,
                   labels=tuple(f.labels) if f.labels else None)
        for f in config.factors))
    factors = {}
    for f in config.factors:
        if f.kind == "categorical":
            c = values[f.name].copy()
            c[missing[f.name]] = None
        else:
            c = np.where(missing[f.name], np.nan, values[f.name]).astype(float)
        factors[f.name] = c
    dataset = Dataset(ids, y_true, preds, factors, schema, embeddings)

    planted = {m.name: {e.factor: list(e.multipliers) for e in m.effects} for m in config.models}
    truth = GroundTruth(
        ids=list(ids),
        factor_values={k: (v.tolist()) for k, v in values.items()},
        effect_bins=effect_bins,
        clusters=clusters,
        relative_errors=rel_errors,
        planted_levels=levels,
        planted_effects=planted,
        links={f.name: dict(f.links) for f in config.factors if f.links},
        expected_mre={m: 100.0 * float(np.mean(levels[m])) for m in levels},
        expected_verdicts=dict(config.expected_verdicts),
    )
    return dataset, truth


# ---------------------------------------------------------------------------
# Scenario presets
# ---------------------------------------------------------------------------

PS_PLANES = ("ps_head", "ps_abdomen", "ps_femur")
GA_CUTS, GA_LABELS = [34.0, 36.0], ["28-34", "34-36", "36-41"]
BMI_CUTS, BMI_LABELS = [18.5, 25.0], ["low", "normal", "high"]


def _common_factors(ps_defs: Sequence[FactorDef], categorical_devices: int = 3) -> list[FactorDef]:
    devices = [chr(ord("A") + i) for i in range(categorical_devices)]
    dev_probs = [0.6, 0.3, 0.1] if categorical_devices == 3 else [1.0 / categorical_devices] * categorical_devices
    return [
        FactorDef("ga_weeks", "uniform", "weeks", low=28.0, high=41.0, cutpoints=GA_CUTS, labels=GA_LABELS),
        FactorDef("bmi", "normal", "kg/m2", mean=25.0, sd=4.5, clip=(15.0, 50.0), missing_rate=0.02,
                  cutpoints=BMI_CUTS, labels=BMI_LABELS),
        FactorDef("maternal_age", "normal", "years", mean=31.0, sd=5.0, clip=(16.0, 50.0)),
        FactorDef("parity", "categorical", categories=["0", "1", "2+"], probs=[0.45, 0.35, 0.2]),
        FactorDef("conception", "categorical", categories=["natural", "art"], probs=[0.93, 0.07]),
        FactorDef("device", "categorical", categories=devices, probs=dev_probs),
        *ps_defs,
        FactorDef("ps_avg", "mean", "mm/px", sources=list(PS_PLANES)),
    ]


def _tertile_cuts(mean: float, sd: float) -> list[float]:
    return [float(mean + sd * norm.ppf(1 / 3)), float(mean + sd * norm.ppf(2 / 3))]


def independent_ps(n: int = 20_000, seed: int = 0, low_ps_multiplier: float = 1.25,
                   noise: float = 0.75, embedding_dim: int = 16) -> SynthConfig:
    """Low-PS tertile has higher error; PS independent of BMI and GA."""
    ps_mean, ps_sd = 0.2, 0.03
    planes = [FactorDef(p, "normal", "mm/px", mean=ps_mean, sd=ps_sd) for p in PS_PLANES]
    cuts = _tertile_cuts(ps_mean, ps_sd / math.sqrt(3))
    return SynthConfig(
        n=n, seed=seed, name="independent_ps",
        factors=_common_factors(planes),
        models=[
            ModelDef("dl", 0.0674, noise, [EffectDef("ps_avg", [low_ps_multiplier, 1.0], cuts[:1])]),
            ModelDef("hadlock", 0.077, noise, [EffectDef("ps_avg", [1.0 + (low_ps_multiplier - 1) / 2, 1.0], cuts[:1])]),
        ],
        embedding=EmbeddingDef(embedding_dim, [EffectDef("ga_weeks", [], GA_CUTS), EffectDef("ps_avg", [], cuts)]),
        expected_verdicts={"bmi:ps_avg": "independent-effect"},
    )


def confounded_ga(n: int = 40_000, seed: int = 0, noise: float = 0.3, embedding_dim: int = 16) -> SynthConfig:
    """Error depends only on the GA stratum; PS is a deterministic function of GA
    (linear trend plus a ripple with a period dividing every GA stratum)."""
    trend, amp, period = 0.004, 0.03, 0.5
    planes = [FactorDef(p, "normal", "mm/px", mean=0.2 - trend * 34.5, sd=0.0, links={"ga_weeks": trend},
                        ripple={"source": "ga_weeks", "amplitude": amp, "period": period})
              for p in PS_PLANES]
    return SynthConfig(
        n=n, seed=seed, name="confounded_ga",
        factors=_common_factors(planes),
        models=[
            ModelDef("dl", 0.0674, noise, [EffectDef("ga_weeks", [1.4, 1.15, 1.0], GA_CUTS)]),
            ModelDef("hadlock", 0.077, noise, [EffectDef("ga_weeks", [1.2, 1.1, 1.0], GA_CUTS)]),
        ],
        embedding=EmbeddingDef(embedding_dim, [EffectDef("ga_weeks", [], GA_CUTS)]),
        expected_verdicts={"ga_weeks:ps_avg": "fully-confounded"},
    )


def planted_slices(n: int = 3_000, seed: int = 0, multipliers=(1.0, 1.2, 1.5), embedding_dim: int = 8,
                   noise: float = 0.5) -> SynthConfig:
    """Three embedding clusters keyed by device, each with its own error multiplier."""
    planes = [FactorDef(p, "normal", "mm/px", mean=0.2, sd=0.03) for p in PS_PLANES]
    factors = _common_factors(planes, categorical_devices=len(multipliers))
    return SynthConfig(
        n=n, seed=seed, name="planted_slices",
        factors=factors,
        models=[ModelDef("dl", 0.0674, noise, [EffectDef("device", list(multipliers))]),
                ModelDef("hadlock", 0.077, noise)],
        embedding=EmbeddingDef(embedding_dim, [EffectDef("device", [])], spread=1.0, center_scale=6.0),
    )


def mixed(n: int = 5_000, seed: int = 0, embedding_dim: int = 16) -> SynthConfig:
    """PS depends on BMI and GA; both PS and GA carry error effects."""
    planes = [FactorDef(p, "normal", "mm/px", mean=0.2 - 0.003 * 25 + 0.002 * 34.5, sd=0.025,
                        links={"bmi": 0.003, "ga_weeks": -0.002}) for p in PS_PLANES]
    cuts = [0.19, 0.21]
    return SynthConfig(
        n=n, seed=seed, name="mixed",
        factors=_common_factors(planes),
        models=[
            ModelDef("dl", 0.0674, 0.75, [EffectDef("ps_avg", [1.25, 1.1, 1.0], cuts),
                                          EffectDef("ga_weeks", [1.15, 1.05, 1.0], GA_CUTS)]),
            ModelDef("hadlock", 0.077, 0.75, [EffectDef("ps_avg", [1.1, 1.05, 1.0], cuts),
                                              EffectDef("ga_weeks", [1.1, 1.0, 1.0], GA_CUTS)]),
        ],
        embedding=EmbeddingDef(embedding_dim, [EffectDef("ga_weeks", [], GA_CUTS), EffectDef("ps_avg", [], cuts)]),
    )


SCENARIOS = {
    "independent_ps": independent_ps,
    "confounded_ga": confounded_ga,
    "planted_slices": planted_slices,
    "mixed": mixed,
}


# ---------------------------------------------------------------------------
# Recovery scoring
# ---------------------------------------------------------------------------

def adjusted_rand_index(a: Sequence[int], b: Sequence[int]) -> float:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError("label vectors differ in length")
    _, ai = np.unique(a, return_inverse=True)
    _, bi = np.unique(b, return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)

    def pairs(x):
        return float(np.sum(x * (x - 1) / 2.0))

    n = len(a)
    total = n * (n - 1) / 2.0
    sum_ij = pairs(table)
    sum_a, sum_b = pairs(table.sum(axis=1)), pairs(table.sum(axis=0))
    expected = sum_a * sum_b / total if total else 0.0
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


@dataclass
class RecoveryReport:
    ari: float | None
    planted_factors: dict[str, dict[str, dict]]
    verdicts: dict[str, dict]

    @property
    def all_recovered(self) -> bool:
        facs = all(v["recovered"] for m in self.planted_factors.values() for v in m.values())
        verd = all(v["match"] for v in self.verdicts.values())
        return facs and verd

    def to_dict(self) -> dict:
        return {"ari": self.ari, "planted_factors": self.planted_factors, "verdicts": self.verdicts,
                "all_recovered": self.all_recovered}


def score_recovery(ground_truth: GroundTruth, slice_result=None, factor_gaps=None,
                   verdicts: Mapping[str, object] | None = None, alpha: float = 1e-3) -> RecoveryReport:
    """Compare audit outputs with the planted structure.

    ``factor_gaps`` is a stratify.RadarData; ``verdicts`` maps ``"row:col"`` to a
    Verdict (or verdict string) for the designated model.
    """
    ari = None
    if slice_result is not None:
        if ground_truth.clusters is None:
            raise MismatchedProvenance("ground truth has no planted clusters")
        index = {rid: i for i, rid in enumerate(ground_truth.ids)}
        missing = [rid for rid in slice_result.ids if rid not in index]
        if missing:
            raise MismatchedProvenance(f"{len(missing)} slice record ids not in ground truth")
        truth = [ground_truth.clusters[index[rid]] for rid in slice_result.ids]
        ari = adjusted_rand_index(truth, slice_result.label_array)

    planted: dict[str, dict[str, dict]] = {}
    if factor_gaps is not None:
        for model in factor_gaps.models:
            want = ground_truth.planted_factors(model)
            ranked = factor_gaps.ranked(model)
            top = [g.factor for g in ranked[:len(want)]]
            out = {}
            for f in want:
                g = next((x for x in ranked if x.factor == f), None)
                rank = None if g is None else [x.factor for x in ranked].index(f) + 1
                out[f] = {"rank": rank, "p_value": None if g is None else g.p_value,
                          "recovered": g is not None and f in top and g.p_value < alpha}
            planted[model] = out

    vmatch = {}
    for pair, expected in ground_truth.expected_verdicts.items():
        if verdicts is None or pair not in verdicts:
            continue
        got = verdicts[pair]
        got = getattr(got, "verdict", got)
        vmatch[pair] = {"expected": expected, "got": got, "match": got == expected}
    return RecoveryReport(ari, planted, vmatch)
