from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from biaslens import clinical
from biaslens.errors import GaOrderViolation, GaOutOfRange, InvalidConfig, OutOfRange
from oracles import hadlock_reference, polyval_reference


def test_constant_exponent_coefficients():
    b = clinical.Biometry(30, 26, 5.5)
    assert clinical.hadlock_efw(b, (3, 0, 0, 0, 0)) == pytest.approx(1000.0, rel=1e-15)


def test_shipped_defaults_match_reference():
    assert clinical.hadlock_efw(clinical.Biometry(30, 26, 5.5)) == pytest.approx(hadlock_reference(30, 26, 5.5), abs=1.0)


def test_ac_monotone():
    for hc, fl in [(20, 4), (28, 5.5), (34, 7.5)]:
        w = [clinical.hadlock_efw(clinical.Biometry(hc, ac, fl)) for ac in np.linspace(15, 38, 40)]
        assert np.all(np.diff(w) > 0)


@pytest.mark.parametrize("bad", [(0, 26, 5), (30, 100, 5), (30, 26, -1)])
def test_biometry_bounds(bad):
    with pytest.raises(OutOfRange):
        clinical.Biometry(*bad)


def test_curve_examples():
    const = clinical.GrowthCurve((500.0,), 100, 300)
    assert clinical.growth_curve_weight(180, const) == 500.0
    lin = clinical.GrowthCurve((0.0, 10.0), 100, 300)
    assert clinical.growth_curve_weight(200, lin) == 2000.0
    with pytest.raises(GaOutOfRange):
        clinical.growth_curve_weight(99, lin)


def test_shipped_curve_matches_independent_polynomial():
    curve = clinical.growth_curve()
    for ga in (200.0, 280.0):
        assert clinical.growth_curve_weight(ga, curve) == pytest.approx(polyval_reference(curve.coefficients, ga), rel=1e-6)
    rng = np.random.default_rng(0)
    for ga in rng.uniform(curve.ga_min, curve.ga_max, 1000):
        assert clinical.growth_curve_weight(ga, curve) == pytest.approx(polyval_reference(curve.coefficients, ga), rel=1e-12)


def test_shipped_curve_plausible_term_weight():
    curve = clinical.growth_curve()
    assert 3300 < clinical.growth_curve_weight(280, curve) < 3900


def test_reference_weight_examples():
    lin = clinical.GrowthCurve((0.0, 10.0), 100, 300)
    assert clinical.reference_weight_at_scan(3500, 200, 280, lin) == pytest.approx(2500.0)
    curve = clinical.growth_curve()
    assert clinical.reference_weight_at_scan(3456.7, 275, 275, curve) == 3456.7
    const = clinical.GrowthCurve((500.0,), 100, 300)
    assert clinical.reference_weight_at_scan(3100, 150, 290, const) == 3100
    with pytest.raises(GaOrderViolation):
        clinical.reference_weight_at_scan(3000, 281, 280, curve)
    with pytest.raises(GaOutOfRange):
        clinical.reference_weight_at_scan(3000, 100, 280, curve)


@settings(max_examples=100, deadline=None)
@given(st.floats(500, 5000), st.floats(140, 308), st.floats(0, 60))
def test_reference_weight_scale_equivariant(bw, scan, extra):
    curve = clinical.growth_curve()
    delivery = min(scan + extra, 308.0)
    a = clinical.reference_weight_at_scan(bw, scan, delivery, curve)
    b = clinical.reference_weight_at_scan(2 * bw, scan, delivery, curve)
    assert b == pytest.approx(2 * a, rel=1e-15)


@settings(max_examples=100, deadline=None)
@given(st.floats(1, 99), st.floats(1, 99), st.floats(1, 99))
def test_efw_positive(hc, ac, fl):
    assert clinical.hadlock_efw(clinical.Biometry(hc, ac, fl)) > 0


def test_config_injection(tmp_path):
    cfg = clinical.load_coefficients()
    cfg["hadlock"]["variants"]["flat"] = {"coefficients": [3.0, 0, 0, 0, 0]}
    assert clinical.hadlock_efw(clinical.Biometry(30, 26, 5.5), clinical.hadlock_coefficients("flat", cfg)) == pytest.approx(1000.0)
    with pytest.raises(InvalidConfig):
        clinical.GrowthCurve((-1.0,), 100, 200)
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg))
    assert clinical.load_coefficients(path)["hadlock"]["variants"]["flat"]["coefficients"] == [3.0, 0, 0, 0, 0]
