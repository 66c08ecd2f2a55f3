import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from compolab.boolean_fourier import (
    FourierTable,
    conjunction,
    cube_points,
    fourier_expand,
    fwht,
    low_order_approx,
    majority,
    mask_of,
    parity,
    random_function,
    reconstruct,
    sparse_approx,
    subset_of,
)
from compolab.errors import ConfigError


def brute_force_coeffs(values, n):
    """f^(S) = 2^-n sum_x f(x) prod_{i in S} x_i, by direct enumeration."""
    X = cube_points(n)
    out = {}
    for r in range(n + 1):
        for S in itertools.combinations(range(1, n + 1), r):
            chi = np.prod(X[:, [i - 1 for i in S]], axis=1) if S else np.ones(len(X))
            out[S] = float(np.mean(values * chi))
    return out


def test_cube_points_order():
    X = cube_points(2)
    np.testing.assert_array_equal(X, [[1, 1], [-1, 1], [1, -1], [-1, -1]])


def test_parity_two_bits():
    t = fourier_expand(parity, 2)
    assert t.nonzero() == {(1, 2): 1.0}


def test_constant_one():
    t = fourier_expand(lambda X: np.ones(len(X)), 5)
    assert t[()] == 1.0 and t.nonzero() == {(): 1.0}


def test_and_two_bits_against_brute_force():
    t = fourier_expand(conjunction, 2)
    assert t.nonzero() == {(): -0.5, (1,): 0.5, (2,): 0.5, (1, 2): 0.5}
    assert t.nonzero() == {S: c for S, c in brute_force_coeffs(conjunction(cube_points(2)), 2).items() if c}


@pytest.mark.parametrize("n", [1, 3, 6])
def test_fwht_matches_definition(n):
    vals = random_function(n, n)
    t = fourier_expand(vals, n)
    for S, c in brute_force_coeffs(vals, n).items():
        assert t[S] == pytest.approx(c, abs=1e-14)


def test_expand_errors():
    with pytest.raises(ConfigError):
        fourier_expand(parity, 21)
    with pytest.raises(ConfigError):
        fourier_expand(np.zeros(5), 2)
    with pytest.raises(ConfigError):
        fwht(np.zeros(6))


def test_low_order_examples():
    _, err = low_order_approx(fourier_expand(parity, 2), 1)
    assert err == 1.0
    approx, _ = low_order_approx(fourier_expand(parity, 2), 1)
    assert not approx.coeffs.any()
    f = fourier_expand(random_function(5, 1), 5)
    assert low_order_approx(f, 5)[1] == 0.0
    assert low_order_approx(fourier_expand(conjunction, 2), 1)[1] == 0.25
    with pytest.raises(ConfigError):
        low_order_approx(f, 6)


def test_sparse_examples():
    assert sparse_approx(fourier_expand(parity, 6), 1)[1] == 0.0
    f = fourier_expand(random_function(4, 2), 4)
    assert sparse_approx(f, 16)[1] == 0.0
    approx, err = sparse_approx(fourier_expand(conjunction, 2), 2)
    # four ties at magnitude 1/2: lexicographic order keeps () and (1,)
    assert set(approx.nonzero()) == {(), (1,)}
    assert err == 0.5
    with pytest.raises(ConfigError):
        sparse_approx(f, 0)


def test_sparse_tie_break_is_tuple_lexicographic():
    # (1, 3) precedes (2,) as tuples even though its bitmask is larger
    coeffs = np.zeros(8)
    coeffs[mask_of((2,))] = 1.0
    coeffs[mask_of((1, 3))] = -1.0
    approx, _ = sparse_approx(FourierTable(3, coeffs), 1)
    assert set(approx.nonzero()) == {(1, 3)}


def test_reconstruct_examples():
    assert reconstruct(FourierTable.empty(3), [1, -1, 1]) == 0.0
    t = fourier_expand(majority, 3)
    for x in cube_points(3):
        assert reconstruct(t, x) == pytest.approx(np.sign(x.sum()), abs=1e-15)
    with pytest.raises(ConfigError):
        reconstruct(t, [1, 0, 1])


@given(st.integers(1, 10), st.integers(0, 10**6))
def test_reconstruct_inverts_expand(n, seed):
    vals = random_function(n, seed)
    t = fourier_expand(vals, n)
    np.testing.assert_allclose(t.values(), vals, atol=1e-12)
    for k in np.random.default_rng(seed).integers(0, 2**n, 5):
        assert reconstruct(t, cube_points(n)[k]) == pytest.approx(vals[k], abs=1e-12)


@given(st.integers(1, 10), st.integers(0, 10**6))
def test_expand_of_values_round_trip(n, seed):
    coeffs = np.random.default_rng(seed).normal(size=2**n)
    t = FourierTable(n, coeffs)
    np.testing.assert_allclose(fourier_expand(t.values(), n).coeffs, coeffs, atol=1e-12)


@pytest.mark.parametrize("seed", range(50))
def test_parseval(seed):
    n = 2 + seed % 9
    vals = random_function(n, seed)
    assert abs(fourier_expand(vals, n).squared_norm() - np.mean(vals**2)) < 1e-12


@given(st.integers(1, 8), st.integers(0, 10**6))
def test_error_monotonicity_and_dominance(n, seed):
    t = fourier_expand(random_function(n, seed), n)
    low = [low_order_approx(t, k)[1] for k in range(n + 1)]
    assert all(b <= a for a, b in zip(low, low[1:]))
    sparse = [sparse_approx(t, s)[1] for s in range(1, 2**n + 1)]
    assert all(b <= a + 1e-15 for a, b in zip(sparse, sparse[1:]))
    for k in range(n + 1):
        count = int(np.sum(t.degrees() <= k))
        assert sparse_approx(t, count)[1] <= low[k] + 1e-15


def test_parity_hardness():
    t = fourier_expand(parity, 8)
    assert low_order_approx(t, 7)[1] == 1.0
    assert sparse_approx(t, 1)[1] == 0.0


def test_majority_low_order_error():
    t = fourier_expand(majority, 3)
    assert [t[(i,)] for i in (1, 2, 3)] == [0.5, 0.5, 0.5]
    assert t[(1, 2, 3)] == -0.5
    assert low_order_approx(t, 1)[1] == 0.25


def test_subset_mask_helpers():
    assert subset_of(0b1011) == (1, 2, 4)
    assert mask_of((4, 1, 2)) == 0b1011
    assert subset_of(0) == ()


def test_csv_export():
    text = fourier_expand(parity, 2).to_csv()
    lines = text.splitlines()
    assert lines[0] == "subset_mask,coefficient"
    assert lines[4] == "0x3,1.0"
