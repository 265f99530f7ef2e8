import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from sortreg.exceptions import EmptyInput, JTooLarge
from sortreg.portfolio import assign_cells, form_partition, marginal_breakpoints

VALUES = [0.1, 0.2, 0.3, 0.6, 0.7, 0.9]


def brute_breakpoints(values, J):
    # 1-indexed order statistics z_(floor(n j / J)), by explicit enumeration
    s = sorted(values)
    n = len(s)
    return [s[(n * j) // J - 1] for j in range(1, J)]


def brute_bin(v, bps):
    # v in [b_{j-1}, b_j) with b_0 = -inf and b_J = +inf
    edges = [-np.inf] + list(bps) + [np.inf]
    for j in range(len(edges) - 1):
        if edges[j] <= v < edges[j + 1]:
            return j
    raise AssertionError


def test_breakpoints_hand_instances():
    np.testing.assert_array_equal(marginal_breakpoints(VALUES, 2), [0.3])
    np.testing.assert_array_equal(marginal_breakpoints(VALUES, 3), [0.2, 0.6])
    assert marginal_breakpoints(VALUES, 1).size == 0


def test_breakpoint_errors():
    with pytest.raises(JTooLarge):
        marginal_breakpoints(VALUES, 7)
    with pytest.raises(EmptyInput):
        marginal_breakpoints([], 1)


def test_assign_d1_boundary_joins_upper():
    part = assign_cells(np.array(VALUES)[:, None], [np.array([0.3])])
    np.testing.assert_array_equal(part.counts, [2, 4])
    np.testing.assert_array_equal(part.cell_of, [0, 0, 1, 1, 1, 1])
    assert part.locate(0.3) == 1
    assert part.locate(-100.0) == 0 and part.locate(100.0) == 1


def test_assign_d2_corners():
    Z = np.array([[-1, -1], [-1, 1], [1, -1], [1, 1]], dtype=float)
    part = assign_cells(Z, [np.array([0.0]), np.array([0.0])])
    np.testing.assert_array_equal(part.counts, [1, 1, 1, 1])
    assert part.nonempty.all()
    assert sorted(part.cell_of.tolist()) == [0, 1, 2, 3]


def test_assign_d2_vacancy():
    Z = np.array([[-1, -1], [-2, 1], [-0.5, 2]], dtype=float)
    part = assign_cells(Z, [np.array([0.0]), np.array([0.0])])
    np.testing.assert_array_equal(part.nonempty, [True, True, False, False])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=60),
       st.integers(1, 12))
def test_breakpoints_and_bins_match_enumeration(values, J):
    if J > len(values):
        return
    bps = marginal_breakpoints(values, J)
    assert list(bps) == brute_breakpoints(values, J)
    assert np.all(np.diff(bps) >= 0)
    part = form_partition(np.array(values), J)
    assert [brute_bin(v, bps) for v in values] == part.cell_of.tolist()
    assert part.counts.sum() == len(values)
    np.testing.assert_array_equal(part.nonempty, part.counts >= 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 200), st.integers(1, 20), st.integers(0, 10 ** 6))
def test_counts_distinct_values(n, J, seed):
    if J > n:
        return
    v = np.random.default_rng(seed).permutation(n).astype(float)
    counts = form_partition(v, J).counts
    exact = [(n * j) // J - (n * (j - 1)) // J for j in range(1, J + 1)]
    # the order-statistic rule moves one observation from the first to the last bin
    if J > 1:
        exact[0] -= 1
        exact[-1] += 1
    assert counts.tolist() == exact
    assert counts.min() >= n // J - 1 and counts.max() <= -(-n // J) + 1


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 80), st.integers(1, 5), st.integers(1, 2), st.integers(0, 10 ** 6))
def test_monotone_and_permutation_invariance(n, J, d, seed):
    rng = np.random.default_rng(seed)
    Z = rng.standard_normal((n, d))
    if J ** d > n:
        return
    base = form_partition(Z, J)
    mono = form_partition(np.exp(3 * Z) + 2, J)
    np.testing.assert_array_equal(base.cell_of, mono.cell_of)
    perm = rng.permutation(n)
    shuffled = form_partition(Z[perm], J)
    np.testing.assert_array_equal(shuffled.cell_of, base.cell_of[perm])
    np.testing.assert_array_equal(shuffled.counts, base.counts)


def test_ties_are_deterministic():
    v = np.array([1.0, 1.0, 1.0, 1.0, 2.0, 3.0])
    part = form_partition(v, 3)
    # breakpoints z_(2)=1 and z_(4)=1 coincide, so the middle bin is empty
    np.testing.assert_array_equal(part.breakpoints[0], [1.0, 1.0])
    np.testing.assert_array_equal(part.counts, [0, 0, 6])
    assert not part.nonempty[0]
