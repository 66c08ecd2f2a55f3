import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compolab.errors import ConfigError, DomainError
from compolab.targets import (
    Box,
    QInner,
    Q_DEFAULT_COEFFS,
    TrigNode,
    build_tree_target,
    builtin_targets,
    cos4,
    eval_target,
    get_target,
    q_poly,
    random_tree,
    tree_vertices,
)


def add(a, b):
    return a + b


def mul(a, b):
    return a * b


def test_single_node_sum():
    t = build_tree_target(2, {(1, 1): add})
    assert eval_target(t, [1.0, 2.0]) == 3.0


def test_two_level_composition():
    # (1*2) + (3*4)
    t = build_tree_target(4, {(1, 1): mul, (1, 2): mul, (2, 1): add})
    assert eval_target(t, [1, 2, 3, 4]) == 14.0


def test_max_tree_is_global_max():
    t = build_tree_target(8, {v: np.maximum for v in tree_vertices(8)})
    X = np.random.default_rng(3).normal(size=(50, 8))
    np.testing.assert_array_equal(t(X), X.max(axis=1))


def test_vertex_count():
    for d in (2, 4, 8, 16):
        assert len(tree_vertices(d)) == d - 1


def test_build_rejects_bad_trees():
    with pytest.raises(ConfigError):
        build_tree_target(6, {})
    with pytest.raises(ConfigError, match=r"\(2, 1\)"):
        build_tree_target(4, {(1, 1): add, (1, 2): add})
    with pytest.raises(ConfigError, match="unexpected"):
        build_tree_target(2, {(1, 1): add, (2, 1): add})
    with pytest.raises(ConfigError):
        build_tree_target(2, {(1, 1): add}, leaf_order=[0, 0])


def test_tree_matches_hand_composition():
    rng = np.random.default_rng(11)
    fns = {v: TrigNode(rng) for v in tree_vertices(4)}
    t = build_tree_target(4, fns)
    X = rng.uniform(-1, 1, (100, 4))
    h11, h12, h21 = fns[(1, 1)], fns[(1, 2)], fns[(2, 1)]
    expected = h21(h11(X[:, 0], X[:, 1]), h12(X[:, 2], X[:, 3]))
    np.testing.assert_array_equal(t(X), expected)


@settings(max_examples=30, deadline=None)
@given(st.permutations(list(range(8))), st.integers(0, 2**31 - 1))
def test_leaf_permutation_invariance(perm, seed):
    rng = np.random.default_rng(seed)
    fns = {v: TrigNode(rng) for v in tree_vertices(8)}
    base = build_tree_target(8, fns)
    permuted = build_tree_target(8, fns, leaf_order=perm)
    X = rng.uniform(-1, 1, (20, 8))
    # permuted leaf k reads input perm[k]; feed it the value base would read there
    Xp = np.empty_like(X)
    Xp[:, perm] = X
    np.testing.assert_array_equal(permuted(Xp), base(X))


def test_cos4_values():
    t = cos4()
    assert eval_target(t, [0.0]) == pytest.approx(1.0, abs=1e-15)
    assert eval_target(t, [np.pi / 4]) == pytest.approx(-1.0, abs=1e-14)
    assert t.arity == 1
    assert t.domain.lower == (-2 * np.pi,) and t.domain.upper == (2 * np.pi,)


def test_cos4_identity_on_grid():
    x = np.linspace(-2 * np.pi, 2 * np.pi, 10**4).reshape(-1, 1)
    assert np.max(np.abs(cos4()(x) - np.cos(4 * x[:, 0]))) < 1e-12


def test_eval_target_errors():
    with pytest.raises(ConfigError):
        eval_target(cos4(), [0.0, 1.0])
    with pytest.raises(DomainError):
        eval_target(cos4(), [7.0])


def test_q_poly_unit_constant():
    coeffs = (0, 0, 0, 0, 0, 0, 0, 0, 1.0)
    assert eval_target(q_poly(coeffs), [0.0, 0.0]) == 1.0
    assert len(get_target("q_poly").params["coefficients"]) == 9


def test_q_inner_normalized():
    inner = QInner(Q_DEFAULT_COEFFS)
    t = np.linspace(-1, 1, 401)
    X, Y = np.meshgrid(t, t)
    assert np.max(np.abs(inner(X, Y))) == pytest.approx(1.0, abs=1e-15)
    Z = np.random.default_rng(0).uniform(-1, 1, (1000, 2))
    assert np.all(np.isfinite(q_poly()(Z)))


def test_catalog():
    cat = builtin_targets()
    assert {"cos4", "gauss_bump", "q_poly", "random_tree"} <= set(cat)
    assert eval_target(get_target("gauss_bump", d=1), [0.0]) == 1.0
    with pytest.raises(ConfigError):
        get_target("nope")


def test_trig_node_bounded_and_deterministic():
    node = TrigNode(np.random.default_rng(5))
    again = TrigNode(np.random.default_rng(5))
    X = np.random.default_rng(1).uniform(-1, 1, (5000, 2))
    v = node(X[:, 0], X[:, 1])
    assert np.max(np.abs(v)) <= 1.0
    np.testing.assert_array_equal(v, again(X[:, 0], X[:, 1]))


def test_random_tree_interior_inputs_in_domain():
    t = random_tree(8, seed=2)
    X = t.domain.sample(2000, np.random.default_rng(0))
    for lo, hi in t.node_input_ranges(X).values():
        assert lo.min() >= -1.0 and hi.max() <= 1.0


def test_box_validation():
    with pytest.raises(ConfigError):
        Box((1.0,), (0.0,))
    with pytest.raises(ConfigError):
        Box((0.0,), (np.inf,))
