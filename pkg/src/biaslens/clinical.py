"""Hadlock estimated fetal weight and growth-curve reference weights.

Units are fixed at the interface: biometry in cm, gestational age in days,
weight in grams. Coefficients come from ``clinical_coefficients.json`` (or a
user file with the same layout) so alternative published variants can be
swapped without code changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import GaOrderViolation, GaOutOfRange, InvalidConfig, OutOfRange

BIOMETRY_MAX_CM = 100.0


@dataclass(frozen=True)
class Biometry:
    hc: float
    ac: float
    fl: float

    def __post_init__(self):
        for name in ("hc", "ac", "fl"):
            v = getattr(self, name)
            if not 0 < v < BIOMETRY_MAX_CM:
                raise OutOfRange(f"{name}={v!r} cm outside (0, {BIOMETRY_MAX_CM:g})")


@dataclass(frozen=True)
class GrowthCurve:
    coefficients: tuple[float, ...]  # constant term first
    ga_min: float
    ga_max: float
    name: str = ""

    def __post_init__(self):
        if not self.coefficients:
            raise InvalidConfig("growth curve needs at least one coefficient")
        if not self.ga_min <= self.ga_max:
            raise InvalidConfig("growth curve range is empty")
        grid = np.linspace(self.ga_min, self.ga_max, 1001)
        if np.any(horner(self.coefficients, grid) <= 0):
            raise InvalidConfig(f"growth curve {self.name!r} is not positive over its valid range")

    def __call__(self, ga_days: float) -> float:
        return growth_curve_weight(ga_days, self)


def horner(coefficients: Sequence[float], x):
    acc = 0.0
    for c in reversed(coefficients):
        acc = acc * x + c
    return acc


# ---------------------------------------------------------------------------
# Coefficient config
# ---------------------------------------------------------------------------

def load_coefficients(path=None) -> dict:
    if path is None:
        text = resources.files("biaslens").joinpath("data/clinical_coefficients.json").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    return json.loads(text)


def hadlock_coefficients(variant: str | None = None, config: dict | None = None) -> tuple[float, ...]:
    cfg = (config or load_coefficients())["hadlock"]
    variant = variant or cfg["default"]
    try:
        coeffs = tuple(float(c) for c in cfg["variants"][variant]["coefficients"])
    except KeyError:
        raise InvalidConfig(f"unknown Hadlock variant {variant!r}") from None
    if len(coeffs) != 5:
        raise InvalidConfig(f"Hadlock variant {variant!r} needs 5 coefficients")
    return coeffs


def growth_curve(variant: str | None = None, config: dict | None = None) -> GrowthCurve:
    cfg = (config or load_coefficients())["growth_curves"]
    variant = variant or cfg["default"]
    try:
        entry = cfg["variants"][variant]
    except KeyError:
        raise InvalidConfig(f"unknown growth curve {variant!r}") from None
    lo, hi = entry["ga_range_days"]
    return GrowthCurve(tuple(float(c) for c in entry["coefficients"]), float(lo), float(hi), variant)


# ---------------------------------------------------------------------------
# Formulas
# ---------------------------------------------------------------------------

def hadlock_efw(b: Biometry, coefficients: Sequence[float] | None = None) -> float:
    """Estimated fetal weight in grams: 10 ** (c0 + c1*AC*FL + c2*HC + c3*AC + c4*FL)."""
    c0, c1, c2, c3, c4 = hadlock_coefficients() if coefficients is None else coefficients
    exponent = c0 + c1 * b.ac * b.fl + c2 * b.hc + c3 * b.ac + c4 * b.fl
    return float(10.0 ** exponent)


def growth_curve_weight(ga_days: float, curve: GrowthCurve) -> float:
    if not curve.ga_min <= ga_days <= curve.ga_max:
        raise GaOutOfRange(f"GA {ga_days} d outside [{curve.ga_min:g}, {curve.ga_max:g}]")
    return float(horner(curve.coefficients, float(ga_days)))


def reference_weight_at_scan(birth_weight: float, ga_scan: float, ga_delivery: float,
                             curve: GrowthCurve) -> float:
    """Back-project birth weight to scan time assuming the fetus keeps its curve percentile
    (proportional scaling by the curve ratio)."""
    if not birth_weight > 0:
        raise OutOfRange("birth weight must be > 0")
    if ga_scan > ga_delivery:
        raise GaOrderViolation(f"scan GA {ga_scan} after delivery GA {ga_delivery}")
    if ga_scan == ga_delivery:
        growth_curve_weight(ga_scan, curve)  # range check only
        return float(birth_weight)
    return birth_weight * growth_curve_weight(ga_scan, curve) / growth_curve_weight(ga_delivery, curve)
