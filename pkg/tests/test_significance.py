import math

import numpy as np
import pytest
from scipy import stats

from significance import InsufficientSamplesError, SampleSet, relative, welch_t_test

# classic unequal-variance pair
A = [27.5, 21.0, 19.0, 23.6, 17.0, 17.9, 16.9, 20.1, 21.9, 22.6, 23.1, 19.6, 19.0, 21.7, 21.4]
B = [27.1, 22.0, 20.8, 23.4, 23.4, 23.5, 25.8, 22.0, 24.8, 20.2, 21.9, 22.1, 22.9, 30.3, 23.8,
     26.4, 27.5, 20.3, 23.7]


def _oracle_df(a, b):
    a, b = np.asarray(a), np.asarray(b)
    sa, sb = a.var(ddof=1) / a.size, b.var(ddof=1) / b.size
    return (sa + sb) ** 2 / (sa ** 2 / (a.size - 1) + sb ** 2 / (b.size - 1))


def _check_against_scipy(a, b):
    got = welch_t_test(SampleSet.of("a", a), SampleSet.of("b", b))
    ref = stats.ttest_ind(a, b, equal_var=False)
    assert abs(got.t_statistic - float(ref.statistic)) < 1e-6
    assert abs(got.degrees_of_freedom - _oracle_df(a, b)) < 1e-6
    assert abs(got.p_value - float(ref.pvalue)) < 1e-9
    return got


def test_reference_pair_matches_scipy():
    got = _check_against_scipy(A, B)
    assert got.t_statistic < 0
    assert got.significant
    assert not got.degenerate


def test_random_pairs_match_scipy(rng):
    for _ in range(200):
        na, nb = (int(x) for x in rng.integers(2, 60, size=2))
        a = rng.normal(100.0, rng.uniform(0.1, 5.0), size=na)
        b = rng.normal(100.0 + rng.uniform(-2, 2), rng.uniform(0.1, 5.0), size=nb)
        _check_against_scipy(list(a), list(b))


def test_swapping_sides_flips_t_only():
    ab = welch_t_test(SampleSet.of("a", A), SampleSet.of("b", B))
    ba = welch_t_test(SampleSet.of("b", B), SampleSet.of("a", A))
    assert ab.t_statistic == pytest.approx(-ba.t_statistic, abs=1e-12)
    assert ab.degrees_of_freedom == pytest.approx(ba.degrees_of_freedom, abs=1e-12)
    assert ab.p_value == pytest.approx(ba.p_value, abs=1e-12)


def test_common_scaling_leaves_t_unchanged():
    base = welch_t_test(SampleSet.of("a", A), SampleSet.of("b", B))
    scaled = welch_t_test(SampleSet.of("a", [x * 1000 for x in A]), SampleSet.of("b", [x * 1000 for x in B]))
    assert scaled.t_statistic == pytest.approx(base.t_statistic, rel=1e-9)
    assert scaled.p_value == pytest.approx(base.p_value, rel=1e-9)


def test_identical_samples_give_p_one():
    r = welch_t_test(SampleSet.of("a", A), SampleSet.of("b", A))
    assert r.t_statistic == 0.0
    assert r.p_value == pytest.approx(1.0)
    assert not r.significant


def test_zero_variance_conventions():
    same = welch_t_test(SampleSet.of("a", [5.0] * 4), SampleSet.of("b", [5.0] * 6))
    assert (same.t_statistic, same.p_value, same.degenerate) == (0.0, 1.0, True)
    assert same.degrees_of_freedom == 8.0
    apart = welch_t_test(SampleSet.of("a", [4.0] * 4), SampleSet.of("b", [5.0] * 6))
    assert apart.t_statistic == -math.inf
    assert apart.p_value == 0.0 and apart.significant and apart.degenerate


def test_needs_two_samples_per_side():
    with pytest.raises(InsufficientSamplesError):
        welch_t_test(SampleSet.of("a", [1.0]), SampleSet.of("b", [1.0, 2.0]))


def test_sample_set_rejects_non_finite():
    with pytest.raises(ValueError):
        SampleSet.of("a", [1.0, float("nan")])


def test_sample_set_summary():
    s = SampleSet.of("a", [1.0, 2.0, 3.0, 4.0])
    assert s.n == 4
    assert s.mean == 2.5
    assert s.stddev == pytest.approx(np.std([1, 2, 3, 4], ddof=1))
    assert isinstance(s.mean, float)


def test_relative():
    assert relative(50.0, 100.0) == 0.5
    assert relative(1.0, 0.0) is None
