"""Correlation coefficients, their p-values, and the authored beta function."""

import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from slidegene.errors import InputError, UndefinedCorrelationError
from slidegene.evalmetrics import (
    betainc_reg,
    gene_correlation_table,
    pearson,
    rankdata_average,
    spearman,
    student_t_two_sided_p,
)


# ---------------------------------------------------------------------------
# regularized incomplete beta (authored; scipy used only as oracle)
# ---------------------------------------------------------------------------


def test_betainc_matches_scipy_on_grid():
    # near the x=1 endpoint with a, b < 1 the integrand is singular and both
    # implementations carry ~1e-12; everywhere else we hold the tight bound
    a_vals = [0.5, 1.0, 2.5, 10.0, 50.0, 123.5]
    b_vals = [0.5, 1.0, 3.0, 25.0, 0.1]
    x_vals = [0.0, 1e-9, 0.1, 0.3, 0.5, 0.7, 0.9, 1 - 1e-9, 1.0]
    worst = 0.0
    for a in a_vals:
        for b in b_vals:
            for x in x_vals:
                got = betainc_reg(a, b, x)
                want = float(scipy.special.betainc(a, b, x))
                worst = max(worst, abs(got - want))
    assert worst < 5e-12


def test_betainc_tight_on_t_test_range():
    # the arguments the p-value path actually produces: a = df/2, b = 1/2
    worst = 0.0
    for df in range(1, 300):
        for t in (0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 30.0):
            x = df / (df + t * t)
            got = betainc_reg(df / 2, 0.5, x)
            want = float(scipy.special.betainc(df / 2, 0.5, x))
            worst = max(worst, abs(got - want))
    assert worst < 1e-12


def test_betainc_closed_forms():
    # I_x(1, 1) = x ; I_x(1, b) = 1 - (1-x)^b ; I_x(a, 1) = x^a
    for x in (0.0, 0.25, 0.5, 0.75, 1.0):
        assert betainc_reg(1.0, 1.0, x) == pytest.approx(x, abs=1e-14)
        assert betainc_reg(1.0, 3.0, x) == pytest.approx(1 - (1 - x) ** 3, abs=1e-13)
        assert betainc_reg(4.0, 1.0, x) == pytest.approx(x**4, abs=1e-13)


def test_betainc_symmetry():
    # I_x(a, b) = 1 - I_{1-x}(b, a)
    rng = np.random.default_rng(0)
    for _ in range(50):
        a, b = rng.uniform(0.2, 20, size=2)
        x = rng.uniform(0, 1)
        assert betainc_reg(a, b, x) == pytest.approx(1 - betainc_reg(b, a, 1 - x), abs=1e-12)


def test_betainc_monotone_in_x():
    xs = np.linspace(0, 1, 101)
    vals = [betainc_reg(2.3, 4.7, float(x)) for x in xs]
    assert all(b >= a - 1e-15 for a, b in zip(vals, vals[1:]))
    assert vals[0] == 0.0 and vals[-1] == 1.0


def test_betainc_domain_errors():
    with pytest.raises(InputError):
        betainc_reg(0.0, 1.0, 0.5)
    with pytest.raises(InputError):
        betainc_reg(1.0, -1.0, 0.5)
    with pytest.raises(InputError):
        betainc_reg(1.0, 1.0, 1.5)


def test_student_t_p_matches_scipy():
    for df in (1, 2, 5, 30, 200):
        for t in (0.0, 0.5, 1.0, 2.0, 5.0, 20.0):
            want = 2 * scipy.stats.t.sf(abs(t), df)
            assert student_t_two_sided_p(t, df) == pytest.approx(want, abs=1e-12)


# ---------------------------------------------------------------------------
# pearson
# ---------------------------------------------------------------------------


def test_pearson_hand_computed():
    x = [1.0, 2.0, 3.0, 4.0, 5.0]
    y = [2.0, 1.0, 4.0, 3.0, 6.0]
    # direct covariance oracle: sxy / sqrt(sxx * syy)
    xc = np.array(x) - 3.0
    yc = np.array(y) - 3.2
    want = float(xc @ yc) / math.sqrt(float(xc @ xc) * float(yc @ yc))
    r, p = pearson(x, y)
    assert r == pytest.approx(want, abs=1e-15)
    # sxy = 10, sxx = 10, syy = 14.8 -> r = 10 / sqrt(148)
    assert r == pytest.approx(10.0 / math.sqrt(148.0), abs=1e-15)
    assert r == pytest.approx(0.8220, abs=5e-5)


def test_pearson_p_matches_scipy():
    rng = np.random.default_rng(1)
    for n in (3, 5, 12, 50):
        x = rng.normal(size=n)
        y = 0.4 * x + rng.normal(size=n)
        r, p = pearson(x, y)
        sr = scipy.stats.pearsonr(x, y)
        assert r == pytest.approx(sr.statistic, abs=1e-12)
        assert p == pytest.approx(sr.pvalue, abs=1e-10)


def test_pearson_perfect_correlation():
    x = np.arange(5, dtype=np.float64)
    r, p = pearson(x, 2 * x + 1)
    assert r == 1.0 and p == 0.0
    r, p = pearson(x, -3 * x)
    assert r == -1.0 and p == 0.0


def test_pearson_shift_scale_invariance():
    rng = np.random.default_rng(2)
    x = rng.normal(size=20)
    y = rng.normal(size=20)
    r0, p0 = pearson(x, y)
    r1, p1 = pearson(5.0 * x - 7.0, 0.1 * y + 300.0)
    assert r1 == pytest.approx(r0, abs=1e-12)
    assert p1 == pytest.approx(p0, abs=1e-12)
    r2, _ = pearson(-x, y)
    assert r2 == pytest.approx(-r0, abs=1e-12)


def test_pearson_input_errors():
    with pytest.raises(InputError, match="at least 3"):
        pearson([1.0, 2.0], [3.0, 4.0])
    with pytest.raises(InputError, match="length mismatch"):
        pearson([1.0, 2.0, 3.0], [1.0, 2.0, 3.0, 4.0])
    with pytest.raises(InputError, match="non-finite"):
        pearson([1.0, np.nan, 3.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelationError):
        pearson([2.0, 2.0, 2.0], [1.0, 2.0, 3.0])
    with pytest.raises(UndefinedCorrelationError):
        pearson([1.0, 2.0, 3.0], [5.0, 5.0, 5.0])


# ---------------------------------------------------------------------------
# ranks and spearman
# ---------------------------------------------------------------------------


def test_rankdata_average_ties():
    np.testing.assert_array_equal(rankdata_average([10.0, 20.0, 30.0]), [1.0, 2.0, 3.0])
    np.testing.assert_array_equal(rankdata_average([1.0, 1.0, 2.0]), [1.5, 1.5, 3.0])
    np.testing.assert_array_equal(rankdata_average([5.0, 5.0, 5.0]), [2.0, 2.0, 2.0])
    np.testing.assert_array_equal(
        rankdata_average([3.0, 1.0, 4.0, 1.0, 5.0]), [3.0, 1.5, 4.0, 1.5, 5.0]
    )


def test_rankdata_matches_scipy():
    rng = np.random.default_rng(3)
    x = rng.integers(0, 10, size=200).astype(np.float64)
    np.testing.assert_array_equal(rankdata_average(x), scipy.stats.rankdata(x))


def test_spearman_with_ties_rank_then_pearson():
    x = [1.0, 1.0, 2.0]
    y = [1.0, 2.0, 3.0]
    rho, _ = spearman(x, y)
    # oracle: pearson of ([1.5, 1.5, 3], [1, 2, 3]) = sqrt(3)/2
    assert rho == pytest.approx(math.sqrt(3) / 2, abs=1e-12)
    assert rho == pytest.approx(0.8660, abs=5e-5)


def test_spearman_matches_scipy():
    rng = np.random.default_rng(4)
    x = rng.integers(0, 6, size=40).astype(np.float64)
    y = x + rng.integers(0, 6, size=40)
    rho, p = spearman(x, y)
    sr = scipy.stats.spearmanr(x, y)
    assert rho == pytest.approx(sr.statistic, abs=1e-12)
    assert p == pytest.approx(sr.pvalue, abs=1e-8)


def test_spearman_monotone_transform_invariance():
    rng = np.random.default_rng(5)
    x = rng.normal(size=30)
    y = rng.normal(size=30)
    rho0, p0 = spearman(x, y)
    rho1, p1 = spearman(np.exp(x), y**3)  # strictly increasing maps keep ranks
    assert rho1 == pytest.approx(rho0, abs=1e-12)
    assert p1 == pytest.approx(p0, abs=1e-12)


def test_spearman_perfect_monotone():
    x = np.array([1.0, 4.0, 9.0, 16.0, 25.0])
    rho, _ = spearman(x, np.log(x))
    assert rho == 1.0


# ---------------------------------------------------------------------------
# per-gene table
# ---------------------------------------------------------------------------


def test_gene_table_flags_strong_genes_only():
    rng = np.random.default_rng(6)
    n = 40
    truth = rng.normal(size=(n, 3))
    pred = np.empty_like(truth)
    pred[:, 0] = truth[:, 0] + 0.01 * rng.normal(size=n)  # near-perfect
    pred[:, 1] = rng.normal(size=n)  # independent
    pred[:, 2] = 1.0  # constant -> undefined, must not abort
    rows = gene_correlation_table(pred, truth, ["strong", "noise", "flat"], alpha=0.01)
    assert rows[0].significant_hs and rows[0].significant_bh
    assert rows[0].pearson_r > 0.99
    assert not rows[1].significant_hs
    assert rows[2].pearson_r == 0.0 and rows[2].pearson_p == 1.0
    assert not rows[2].significant_hs and not rows[2].significant_bh


def test_gene_table_rows_align_with_columns():
    rng = np.random.default_rng(7)
    truth = rng.normal(size=(20, 4))
    pred = truth + 0.2 * rng.normal(size=(20, 4))
    rows = gene_correlation_table(pred, truth, [f"g{i}" for i in range(4)])
    for i, row in enumerate(rows):
        r, p = pearson(pred[:, i], truth[:, i])
        assert row.gene_id == f"g{i}"
        assert row.pearson_r == pytest.approx(r, abs=1e-15)
        assert row.pearson_p == pytest.approx(p, abs=1e-15)
        rho, sp = spearman(pred[:, i], truth[:, i])
        assert row.spearman_rho == pytest.approx(rho, abs=1e-15)


def test_gene_table_input_errors():
    with pytest.raises(InputError):
        gene_correlation_table(np.zeros((5, 2)), np.zeros((5, 3)), ["a", "b"])
    with pytest.raises(InputError):
        gene_correlation_table(np.zeros((5, 2)), np.zeros((5, 2)), ["a"])
