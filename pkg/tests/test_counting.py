import math
from fractions import Fraction

import numpy as np
import pytest

from twinbeam.counting import (
    JointHistogram,
    accumulate,
    analytic_joint,
    bound_grid,
    classicality_bound,
    correlation_coefficient,
    criterion_test,
    difference_map,
    marginals,
    merge,
    total_variation,
)
from twinbeam.errors import UndefinedCorrelationError


def hist_from_pairs(pairs, cutoff=20):
    hist = JointHistogram(cutoff=cutoff)
    for c_s, c_i in pairs:
        hist.add(c_s, c_i)
    return hist


# ------------------------------------------------------------- accumulation


def test_accumulate_single_frame():
    hist = JointHistogram(cutoff=20)
    accumulate(hist, 0, 0)
    assert hist.n_frames == 1
    assert hist.counts[0, 0] == 1
    assert hist.counts.sum() == 1


def test_merge_equals_concatenated_stream():
    rng = np.random.default_rng(0)
    stream = [(int(a), int(b)) for a, b in rng.poisson(3.0, size=(400, 2))]
    full = hist_from_pairs(stream)
    parts = [hist_from_pairs(stream[:150]), hist_from_pairs(stream[150:])]
    merged = merge(parts[0], parts[1])
    assert np.array_equal(merged.counts, full.counts)
    assert merged.n_frames == full.n_frames


def test_merge_commutative_associative_random_orders():
    rng = np.random.default_rng(1)
    chunks = [
        hist_from_pairs([(int(a), int(b)) for a, b in rng.poisson(2.0, size=(50, 2))])
        for _ in range(6)
    ]
    reference = chunks[0]
    for c in chunks[1:]:
        reference = merge(reference, c)
    for trial in range(5):
        order = rng.permutation(6)
        acc = chunks[order[0]]
        for k in order[1:]:
            acc = merge(acc, chunks[k]) if trial % 2 == 0 else merge(chunks[k], acc)
        assert np.array_equal(acc.counts, reference.counts)
        assert acc.n_frames == reference.n_frames


def test_overflow_clamps_and_flags():
    hist = JointHistogram(cutoff=5)
    hist.add(7, 2)
    hist.add(3, 3)
    assert hist.overflow == 1
    assert hist.truncated
    assert hist.counts[5, 2] == 1
    assert hist.counts.sum() == hist.n_frames == 2
    hist.add_many(np.array([9, 1]), np.array([9, 1]))
    assert hist.overflow == 2
    assert hist.counts.sum() == hist.n_frames == 4


def test_add_many_matches_add():
    rng = np.random.default_rng(2)
    pairs = rng.poisson(4.0, size=(300, 2))
    one = hist_from_pairs([(int(a), int(b)) for a, b in pairs], cutoff=8)
    many = JointHistogram(cutoff=8).add_many(pairs[:, 0], pairs[:, 1])
    assert np.array_equal(one.counts, many.counts)
    assert one.overflow == many.overflow


# ---------------------------------------------------------------- marginals


def test_marginals_point_mass():
    hist = hist_from_pairs([(2, 3)])
    m_s, m_i = marginals(hist)
    assert m_s[2] == 1.0 and m_s.sum() == pytest.approx(1.0, abs=1e-12)
    assert m_i[3] == 1.0


def test_marginals_symmetric_histogram():
    hist = hist_from_pairs([(1, 2), (2, 1), (0, 3), (3, 0)])
    m_s, m_i = marginals(hist)
    np.testing.assert_allclose(m_s, m_i, atol=1e-15)


def test_analytic_marginals_are_thinned_poisson():
    from scipy import stats

    oracle = analytic_joint(1.0, 0.5, 0.5, 0.0, 0.0, cutoff=25)
    m_s, m_i = oracle.marginals()
    expected = stats.poisson.pmf(np.arange(26), 0.5)
    np.testing.assert_allclose(m_s, expected, atol=1e-12)
    np.testing.assert_allclose(m_i, expected, atol=1e-12)


def test_marginals_empty_histogram_fails():
    with pytest.raises(ValueError):
        marginals(JointHistogram(cutoff=3))


# -------------------------------------------------------------- correlation


def test_perfect_correlation():
    hist = hist_from_pairs([(0, 0), (1, 1)] * 50)
    result = correlation_coefficient(hist, resamples=100, seed=0)
    assert result.c_p == pytest.approx(1.0, abs=1e-12)


def test_product_form_gives_zero_within_error():
    rng = np.random.default_rng(3)
    c_s = rng.poisson(2.0, 50_000)
    c_i = rng.poisson(2.0, 50_000)
    hist = JointHistogram(cutoff=20).add_many(c_s, c_i)
    result = correlation_coefficient(hist, resamples=200, seed=1)
    assert abs(result.c_p) < 3 * result.std_err


def test_zero_variance_is_an_error():
    hist = hist_from_pairs([(1, 0), (1, 1), (1, 2)])
    with pytest.raises(UndefinedCorrelationError):
        correlation_coefficient(hist)


def test_analytic_correlation_closed_form():
    # dark-free thinning: cov = mu eta_s eta_i, var = mu eta -> C_p = sqrt(eta_s eta_i)
    oracle = analytic_joint(2.0, 0.07, 0.07, 0.0, 0.0, cutoff=20)
    # independent brute-force summation as the oracle
    k = np.arange(21, dtype=float)
    f = oracle.pmf
    m_s = (f.sum(axis=1) * k).sum()
    m_i = (f.sum(axis=0) * k).sum()
    cov = ((k[:, None] - m_s) * (k[None, :] - m_i) * f).sum()
    var_s = ((k - m_s) ** 2 * f.sum(axis=1)).sum()
    var_i = ((k - m_i) ** 2 * f.sum(axis=0)).sum()
    brute = cov / np.sqrt(var_s * var_i)
    assert oracle.correlation() == pytest.approx(brute, abs=1e-12)
    assert oracle.correlation() == pytest.approx(0.07, abs=1e-6)


def test_correlation_bootstrap_error_is_calibrated():
    # bootstrap std err should be close to the true sampling spread
    oracle = analytic_joint(5.0, 0.5, 0.5, 0.0, 0.0, cutoff=20)
    rng = np.random.default_rng(7)
    n_frames = 20_000
    estimates, errors = [], []
    for _ in range(20):
        draws = rng.multinomial(n_frames, oracle.pmf.ravel()).reshape(oracle.pmf.shape)
        hist = JointHistogram(cutoff=20, counts=draws)
        hist.n_frames = n_frames
        res = correlation_coefficient(hist, resamples=200, seed=int(rng.integers(1 << 30)))
        estimates.append(res.c_p)
        errors.append(res.std_err)
    spread = np.std(estimates, ddof=1)
    assert np.median(errors) == pytest.approx(spread, rel=0.6)


# -------------------------------------------------------------------- bound


def test_bound_trivial_values():
    assert classicality_bound(0, 0) == 1.0
    assert classicality_bound(1, 1) == pytest.approx(math.exp(-2.0), rel=1e-14)


def exact_bound(n_s: int, n_i: int) -> float:
    # exact-factorial oracle: (n^n / n!) e^{-n} per arm
    def one(n):
        if n == 0:
            return 1.0
        return float(Fraction(n**n, math.factorial(n))) * math.exp(-n)

    return one(n_s) * one(n_i)


def test_bound_example_8_9():
    # frozen from the exact-factorial oracle: 0.018391312853860562
    assert classicality_bound(8, 9) == pytest.approx(exact_bound(8, 9), rel=1e-12)
    assert classicality_bound(8, 9) == pytest.approx(0.0183913, abs=5e-7)


@pytest.mark.parametrize("n_s", [0, 1, 2, 5, 13, 30])
@pytest.mark.parametrize("n_i", [0, 3, 17, 30])
def test_bound_matches_exact_factorials(n_s, n_i):
    assert classicality_bound(n_s, n_i) == pytest.approx(exact_bound(n_s, n_i), rel=1e-12)


def test_bound_no_overflow_large_n():
    value = classicality_bound(10_000, 10_000)
    assert np.isfinite(value) and 0 < value < 1
    # Stirling: (n^n/n!)e^{-n} ~ 1/sqrt(2 pi n)
    assert value == pytest.approx(1.0 / (2 * np.pi * 10_000), rel=1e-3)


def test_bound_grid_matches_scalar():
    grid = bound_grid(12)
    for n_s in (0, 1, 7, 12):
        for n_i in (0, 2, 12):
            assert grid[n_s, n_i] == pytest.approx(classicality_bound(n_s, n_i), rel=1e-14)


def test_bound_is_max_over_poisson_products():
    # scan over the mean: max_mu Poisson(n; mu) is attained at mu = n
    from scipy import stats

    mus = np.linspace(0.01, 12.0, 2400)
    for n_s in (1, 2, 3):
        for n_i in (0, 1, 4):
            best = stats.poisson.pmf(n_s, mus).max() * (
                stats.poisson.pmf(n_i, mus).max() if n_i else 1.0
            )
            assert best <= classicality_bound(n_s, n_i) * (1 + 1e-6)
            assert best >= classicality_bound(n_s, n_i) * (1 - 1e-3)


# ---------------------------------------------------------------- criterion


def test_criterion_zero_excess_zero_significance():
    # exact equality: f = 1/2 at a bin where the bound is 1/2 cannot be built
    # from integers, so check a bin whose f equals its bound numerically
    hist = JointHistogram(cutoff=2)
    n = 1000
    k = int(round(classicality_bound(1, 1) * n))
    for _ in range(k):
        hist.add(1, 1)
    for _ in range(n - k):
        hist.add(0, 1)
    report = criterion_test(hist)
    f = hist.counts[1, 1] / n
    expected = (f - classicality_bound(1, 1)) / np.sqrt(f * (1 - f) / n)
    assert report.significance[1, 1] == pytest.approx(expected, rel=1e-12)
    assert abs(report.significance[1, 1]) < 0.05  # f is the rounded bound


def test_perfect_pair_source_violates():
    # lossless Poisson pairs: f(1,1) = mu e^{-mu} at mu=1 exceeds e^{-2}
    from scipy import stats

    rng = np.random.default_rng(11)
    n = rng.poisson(1.0, 100_000)
    hist = JointHistogram(cutoff=20).add_many(n, n)
    report = criterion_test(hist)
    assert any((v.n_s, v.n_i) == (1, 1) for v in report.violations)
    assert report.max_significance > 2.0
    # and the expected probability is the Poisson pmf
    assert hist.counts[1, 1] / hist.n_frames == pytest.approx(
        stats.poisson.pmf(1, 1.0), abs=0.01
    )


def test_criterion_undefined_bins_are_nan_not_inf():
    hist = hist_from_pairs([(0, 0)] * 10, cutoff=3)
    report = criterion_test(hist)
    assert np.isnan(report.significance[1, 1])  # f = 0
    assert np.isnan(report.significance[0, 0])  # f = 1
    assert not np.isinf(report.significance).any()


def test_criterion_max_bin_consistency():
    rng = np.random.default_rng(13)
    hist = JointHistogram(cutoff=10).add_many(rng.poisson(2, 5000), rng.poisson(2, 5000))
    report = criterion_test(hist)
    i, j = report.max_bin
    assert report.significance[i, j] == report.max_significance


# ----------------------------------------------------------- difference map


def test_difference_map_product_form_is_zero():
    oracle = analytic_joint(3.0, 0.4, 0.0, 0.0, 0.7, cutoff=15)  # independent arms
    hist = JointHistogram(cutoff=15, counts=np.round(oracle.pmf * 10**9).astype(np.int64))
    hist.n_frames = int(hist.counts.sum())
    diff = difference_map(hist)
    assert np.abs(diff).max() < 1e-4  # integer rounding noise only
    assert diff.sum() == pytest.approx(0.0, abs=1e-10)


def test_difference_map_diagonal_enhanced_for_pairs():
    rng = np.random.default_rng(17)
    n = rng.poisson(1.5, 50_000)
    hist = JointHistogram(cutoff=20).add_many(n, n)
    diff = difference_map(hist)
    assert diff.sum() == pytest.approx(0.0, abs=1e-10)
    for k in (1, 2, 3):
        assert diff[k, k] > 0.0


# ------------------------------------------------------------ analytic pmf


def test_analytic_zero_rate_point_mass():
    oracle = analytic_joint(0.0, 0.5, 0.5, 0.0, 0.0, cutoff=5)
    assert oracle.pmf[0, 0] == pytest.approx(1.0, abs=1e-12)
    assert oracle.pmf.sum() == pytest.approx(1.0, abs=1e-12)


def test_analytic_lossless_is_diagonal_poisson():
    from scipy import stats

    oracle = analytic_joint(2.0, 1.0, 1.0, 0.0, 0.0, cutoff=25)
    diag = np.diag(oracle.pmf)
    np.testing.assert_allclose(diag, stats.poisson.pmf(np.arange(26), 2.0), atol=1e-12)
    off = oracle.pmf - np.diag(diag)
    assert np.abs(off).max() < 1e-15


def test_analytic_vacuum_bin_series_value():
    # independent series oracle: f(0,0) = sum_n e^{-mu} mu^n/n! (1-eta)^{2n} = e^{-0.75}
    terms = [math.exp(-1.0) / math.factorial(n) * 0.25**n for n in range(60)]
    series = math.fsum(terms)
    oracle = analytic_joint(1.0, 0.5, 0.5, 0.0, 0.0, cutoff=20)
    assert series == pytest.approx(math.exp(-0.75), rel=1e-12)
    assert oracle.pmf[0, 0] == pytest.approx(series, rel=1e-10)


def test_analytic_normalization_and_tail():
    oracle = analytic_joint(5.0, 0.5, 0.5, 0.3, 0.3, cutoff=30)
    assert oracle.pmf.sum() == pytest.approx(1.0, abs=1e-9)
    assert 0 <= oracle.tail_mass < 1e-9


def test_analytic_cutoff_too_small_raises():
    with pytest.raises(ValueError):
        analytic_joint(50.0, 0.5, 0.5, 0.0, 0.0, cutoff=10)


def test_analytic_parameter_validation():
    with pytest.raises(ValueError):
        analytic_joint(-1.0, 0.5, 0.5)
    with pytest.raises(ValueError):
        analytic_joint(1.0, 1.5, 0.5)
    with pytest.raises(ValueError):
        analytic_joint(1.0, 0.5, 0.5, dark_s=-0.1)


def test_classicality_safety_independent_arms_never_violate():
    # eta_i = 0 with darks: both arms independent Poisson; excess <= 0 everywhere
    for mu, dark_s, dark_i in [(5.0, 0.0, 1.0), (20.0, 0.5, 2.0), (1.0, 3.0, 0.7)]:
        oracle = analytic_joint(mu, 0.07, 0.0, dark_s, dark_i, cutoff=25)
        assert oracle.criterion_excess().max() <= 1e-15


def test_pair_model_does_violate_somewhere():
    oracle = analytic_joint(1.0 / 0.07, 0.07, 0.07, 0.0, 0.0, cutoff=20)
    excess = oracle.criterion_excess()
    assert excess[1, 1] > 0  # the near-diagonal bin at the marginal mean


def test_total_variation_basics():
    p = np.array([0.5, 0.5])
    q = np.array([1.0, 0.0])
    assert total_variation(p, q) == pytest.approx(0.5)
    assert total_variation(p, p) == 0.0
