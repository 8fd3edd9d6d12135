import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from carstat.errors import (
    Assumption5ViolatedError, EmptyInputError, InvalidArmError, InvalidPiError,
    NonFiniteOutcomeError, NoTestableCellError, UndeclaredLabelError,
)
from carstat.trial_data import (
    ADDITIONAL, STRATIFICATION, build_dataset, cell_stats, imbalance, sort_labels,
    validate_for_test,
)

from conftest import D0_ROWS


def test_build_d0_counts(d0):
    assert (d0.n, d0.n1, d0.n0) == (6, 3, 3)
    assert d0.strata == ("s1", "s2")
    assert d0.levels == (0, 1)
    assert [u.y for u in d0.units] == [3, 5, 1, 2, 2, 4]  # row order kept


def test_singleton():
    ds = build_dataset([(0, 1, "s1", 0)], 0.5)
    assert ds.n == 1
    assert ds.stats.n_ax[1, 0] == 1


@pytest.mark.parametrize("rows, pi, err", [
    ([], 0.5, EmptyInputError),
    ([(1, 2, "s", 0)], 0.5, InvalidArmError),
    ([(1, "1", "s", 0)], 0.5, InvalidArmError),
    ([(math.inf, 1, "s", 0)], 0.5, NonFiniteOutcomeError),
    ([(math.nan, 1, "s", 0)], 0.5, NonFiniteOutcomeError),
    ([("abc", 1, "s", 0)], 0.5, NonFiniteOutcomeError),
    ([(1, 1, "s", 0)], 0.0, InvalidPiError),
    ([(1, 1, "s", 0)], 1.0, InvalidPiError),
])
def test_build_errors(rows, pi, err):
    with pytest.raises(err):
        build_dataset(rows, pi)


def test_declared_labels_are_enforced():
    with pytest.raises(UndeclaredLabelError):
        build_dataset([(1, 1, "s9", 0)], 0.5, strata=("s1",))


def test_label_sorting_puts_numeric_first():
    assert sort_labels(["b", "10", 2, "a", "1"]) == ("1", 2, "10", "a", "b")


def test_cell_stats_d0(d0):
    st_ = d0.stats
    assert st_.mean(1, 1) == 4 and st_.mean(0, 1) == 1
    assert st_.mean(1, 0) == 2 and st_.mean(0, 0) == 3
    assert st_.var_ax[1, 1] == 1 and st_.var_ax[0, 0] == 1
    assert st_.var_ax[0, 1] == 0 and st_.var_ax[1, 0] == 0


def test_constant_outcome_stats():
    rows = [(7.0, a, s, x) for a in (0, 1) for s in ("p", "q") for x in (0, 1)]
    st_ = build_dataset(rows, 0.5).stats
    assert np.all(st_.mean_ax == 7.0)
    assert np.all(st_.var_ax == 0.0)


def test_absent_cell_is_flagged():
    ds = build_dataset([(1, 0, "s", 1), (2, 1, "s", 0), (3, 0, "s", 0)], 0.5)
    assert not ds.stats.has_ax[1, 1]
    assert ds.stats.mean(1, 1) is None
    assert np.isfinite(ds.stats.mean_ax).all()


def test_imbalance_d0(d0):
    assert imbalance(d0) == {"s1": 0.5, "s2": -0.5}


def test_imbalance_all_treated_and_balanced():
    treated = build_dataset([(0, 1, "s", 0)] * 4, 0.5)
    assert imbalance(treated)["s"] == 2.0
    balanced = build_dataset([(0, 1, "s", 0), (0, 0, "s", 0)], 0.5)
    assert imbalance(balanced)["s"] == 0.0


def test_validate_d0_stratification(d0):
    rep = validate_for_test(d0, STRATIFICATION)
    assert rep.x_fixed_within_strata and rep.dropped == () and rep.single_arm == ()
    assert rep.level_of_stratum == {"s1": 1, "s2": 0}


def test_validate_mixed_stratum_raises():
    rows = list(D0_ROWS)
    rows[2] = (1, 0, "s1", 0)
    with pytest.raises(Assumption5ViolatedError):
        validate_for_test(build_dataset(rows, 0.5), STRATIFICATION)


def test_empty_combination_is_dropped():
    rows = [(1, 1, "s1", 0), (2, 0, "s1", 0), (3, 1, "s1", 1), (1, 0, "s1", 1),
            (2, 1, "s2", 0), (0, 0, "s2", 0)]
    rep = validate_for_test(build_dataset(rows, 0.5), ADDITIONAL)
    assert rep.dropped == (("s2", 1),)
    assert rep.retained_levels == (0, 1)


def test_no_testable_cell():
    ds = build_dataset([(1, 1, "s1", 0), (2, 0, "s2", 0)], 0.5)
    with pytest.raises(NoTestableCellError):
        validate_for_test(ds, ADDITIONAL)


def test_single_arm_cells_reported():
    rows = [(1, 1, "s1", 0), (2, 0, "s1", 0), (3, 1, "s2", 0), (1, 1, "s2", 1), (4, 0, "s1", 1)]
    rep = validate_for_test(build_dataset(rows, 0.5), ADDITIONAL)
    assert set(rep.single_arm) == {("s2", 0), ("s1", 1), ("s2", 1)}
    assert rep.retained_levels == (0,)
    assert not rep.ok


rows_strategy = st.lists(
    st.tuples(st.floats(-100, 100), st.integers(0, 1), st.sampled_from("abc"), st.integers(0, 2)),
    min_size=1, max_size=40,
)


@given(rows_strategy, st.floats(0.05, 0.95))
def test_count_closure_and_imbalance_additivity(rows, pi):
    ds = build_dataset(rows, pi)
    s = ds.stats
    assert s.n_s.sum() == ds.n and s.n_x.sum() == ds.n
    assert np.array_equal(s.n_ax.sum(axis=0), s.n_x)
    assert np.array_equal(s.n_xs.sum(axis=0), s.n_s)
    assert np.array_equal(s.n_axs.sum(axis=2), s.n_ax)
    assert np.array_equal(s.n_a, [ds.n0, ds.n1])
    assert abs(sum(imbalance(ds).values()) - (ds.n1 - pi * ds.n)) <= 1e-12 * max(1, ds.n)
    assert np.all(s.var_ax >= 0)


@given(rows_strategy, st.randoms())
def test_cell_stats_permutation_invariant(rows, rnd):
    shuffled = list(rows)
    rnd.shuffle(shuffled)
    a, b = cell_stats(build_dataset(rows, 0.5)), cell_stats(build_dataset(shuffled, 0.5))
    assert np.array_equal(a.n_axs, b.n_axs)
    np.testing.assert_allclose(a.mean_axs, b.mean_axs, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(a.var_ax, b.var_ax, rtol=1e-9, atol=1e-9)
