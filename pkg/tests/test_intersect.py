from __future__ import annotations

import numpy as np
import pytest

from biaslens import intersect, metrics, stratify, synth
from biaslens.errors import TooFewStrata, UnknownBin, UnknownFactor
from biaslens.intersect import GradientSummary, StratumGradient
from conftest import dataset_with_errors


def _grid_ds(seed=0, n=3000, col_effect=(1.3, 1.1, 1.0), row_effect=(1.0, 1.0, 1.0)):
    rng = np.random.default_rng(seed)
    r = rng.integers(0, 3, n)
    c = rng.integers(0, 3, n)
    errs = 0.07 * np.array(col_effect)[c] * np.array(row_effect)[r] * rng.gamma(16, 1 / 16, n)
    ds = dataset_with_errors({"dl": errs, "hadlock": errs * 1.1},
                             {"row": r.astype(float), "col": c.astype(float)})
    rb = stratify.Binning("row", "continuous", ("r0", "r1", "r2"), (0.5, 1.5))
    cb = stratify.Binning("col", "continuous", ("c0", "c1", "c2"), (0.5, 1.5))
    return ds, rb, cb


def test_grid_shape_and_counts():
    ds, rb, cb = _grid_ds()
    g = intersect.joint_partition(ds, rb, cb)
    assert g.shape == (3, 3) and len(g.cells) == 9
    assert sum(c.n for c in g.cells) == len(ds)


def test_column_only_effect_rows_identical():
    ds, rb, cb = _grid_ds(n=30000)
    g = intersect.joint_partition(ds, rb, cb)
    for j in range(3):
        col = [g.cell(i, j).mre["dl"] for i in range(3)]
        assert max(col) - min(col) < 0.3  # pp, sampling tolerance


def test_missing_factor_excluded():
    ds = dataset_with_errors({"dl": [0.1] * 6}, {"a": [1, 2, None, 4, 5, 6], "b": [1, 2, 3, None, 5, 6]},
                             kinds={"a": "continuous", "b": "continuous"})
    rb = stratify.Binning("a", "continuous", ("x", "y"), (3.0,))
    cb = stratify.Binning("b", "continuous", ("x", "y"), (3.0,))
    g = intersect.joint_partition(ds, rb, cb, min_n=1)
    assert g.n_total == 4 == sum(c.n for c in g.cells)


def test_single_cell_grid():
    ds, _, _ = _grid_ds(n=200)
    one_r = stratify.Binning("row", "continuous", ("all",), ())
    one_c = stratify.Binning("col", "continuous", ("all",), ())
    g = intersect.joint_partition(ds, one_r, one_c)
    assert len(g.cells) == 1
    assert g.cells[0].mre["dl"] == pytest.approx(metrics.mre(ds.relative_errors("dl")))


def test_identical_record_set_across_models():
    ds, rb, cb = _grid_ds(n=300)
    preds = dict(ds.predictions)
    h = preds["hadlock"].copy()
    h[:10] = np.nan
    preds["hadlock"] = h
    ds2 = type(ds)(ds.ids, ds.y_true, preds, ds.factors, ds.schema)
    g = intersect.joint_partition(ds2, rb, cb)
    assert g.n_total == 290
    with pytest.raises(UnknownFactor):
        intersect.joint_partition(ds2, stratify.Binning("zzz", "continuous", ("a",), ()), cb)


def test_row_collapse_equals_column_stratification():
    ds, rb, cb = _grid_ds(n=2000, seed=3)
    g = intersect.joint_partition(ds, rb, cb)
    oned = stratify.stratified_mre(ds, cb, "dl")
    for j in range(3):
        cells = [g.cell(i, j) for i in range(3)]
        collapsed = sum(c.n * c.mre["dl"] for c in cells) / sum(c.n for c in cells)
        assert collapsed == pytest.approx(oned[j].mre, rel=1e-9)


def test_transpose_exact():
    ds, rb, cb = _grid_ds(n=500)
    g = intersect.joint_partition(ds, rb, cb)
    t = intersect.joint_partition(ds, cb, rb)
    for i in range(3):
        for j in range(3):
            assert g.cell(i, j).n == t.cell(j, i).n
            assert g.cell(i, j).mre == t.cell(j, i).mre
    gt = g.transpose()
    assert [c.to_dict() for c in gt.cells] == [c.to_dict() for c in t.cells]


def test_independent_column_effect_gradients():
    ds, rb, cb = _grid_ds(n=60000, seed=1)
    s = intersect.within_stratum_gradients(intersect.joint_partition(ds, rb, cb))
    for st in s.strata:
        assert abs(st.relative_difference - s.marginal) < 5.0
    assert abs(s.attenuation) < 0.1
    assert intersect.confounding_verdict(s).verdict == intersect.INDEPENDENT


def test_flat_grid_all_zero():
    ds, rb, cb = _grid_ds(col_effect=(1, 1, 1))
    errs = np.full(len(ds), 0.08)
    ds = dataset_with_errors({"dl": errs}, {"row": ds.factor("row"), "col": ds.factor("col")})
    s = intersect.within_stratum_gradients(intersect.joint_partition(ds, rb, cb))
    # identical per-record errors up to rounding of y * 1.08
    assert all(st.relative_difference == pytest.approx(0.0, abs=1e-9) for st in s.strata)


def test_unknown_bin_and_named_bins():
    ds, rb, cb = _grid_ds(n=500)
    g = intersect.joint_partition(ds, rb, cb)
    with pytest.raises(UnknownBin):
        intersect.within_stratum_gradients(g, "nope", "c2")
    s = intersect.within_stratum_gradients(g, "c0", "c1", model="hadlock")
    assert (s.low_bin, s.high_bin, s.model) == ("c0", "c1", "hadlock")


def test_pure_confounding_scenario():
    ds, _ = synth.generate(synth.confounded_ga(n=40000, seed=2))
    ga, ps = stratify.bin_factor(ds, "ga_weeks"), stratify.bin_factor(ds, "ps_avg")
    s = intersect.within_stratum_gradients(intersect.joint_partition(ds, ga, ps))
    assert all(abs(st.relative_difference) < 3.0 for st in s.strata)
    assert s.attenuation > 0.8
    assert intersect.confounding_verdict(s).verdict == intersect.FULL


# -- verdict rules on constructed summaries -------------------------------

def summary(grads, marginal, low=None):
    low = low or [False] * len(grads)
    strata = tuple(StratumGradient(i, f"s{i}", None if fl else g, 8.0, 6.0, 100, 100, fl)
                   for i, (g, fl) in enumerate(zip(grads, low)))
    valid = [g for g, fl in zip(grads, low) if not fl]
    att = 1 - np.mean(valid) / marginal if valid and marginal else None
    return GradientSummary("row", "col", "dl", "low", "high", strata, marginal, att)


def test_verdict_independent():
    v = intersect.confounding_verdict(summary([19.0, 19.0, 19.0], 20.0))
    assert v.verdict == intersect.INDEPENDENT and v.attenuation == pytest.approx(0.05)


def test_verdict_fully_confounded():
    v = intersect.confounding_verdict(summary([0.5, -0.8, 0.9], 20.0))
    assert v.verdict == intersect.FULL


def test_verdict_partial():
    v = intersect.confounding_verdict(summary([8.0, 1.0, -2.0], 20.0))
    assert v.verdict == intersect.PARTIAL


def test_verdict_low_support_inconclusive():
    v = intersect.confounding_verdict(summary([10.0, 10.0, 10.0], 20.0, low=[True, True, False]))
    assert v.verdict == intersect.INCONCLUSIVE


def test_verdict_too_few_strata_and_purity():
    with pytest.raises(TooFewStrata):
        intersect.confounding_verdict(summary([5.0], 5.0))
    s = summary([19.0, 18.0, 21.0], 20.0)
    assert intersect.confounding_verdict(s, 3.0, 0.5) == intersect.confounding_verdict(s, 3.0, 0.5)


def test_verdict_thresholds_echoed():
    v = intersect.confounding_verdict(summary([0.5, 0.5], 20.0), persist=1.0, attenuate=0.4)
    assert v.to_dict()["thresholds"] == {"persist": 1.0, "attenuate": 0.4}
