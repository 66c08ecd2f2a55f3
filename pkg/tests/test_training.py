import json
from dataclasses import replace

import numpy as np
import pytest

from compolab.acceptance import GRAD_ARCHS, central_difference, gradient_relative_error
from compolab.errors import ConfigError, DivergenceError, NumericalError
from compolab.experiments import cos4_data, cos4_defaults
from compolab.networks import (
    GenericMLP,
    MLPArch,
    ShallowArch,
    ShallowNet,
    SmoothActivation,
    clone,
    init_network,
    param_count,
)
from compolab.targets import build_tree_target, tree_vertices
from compolab.training import (
    TrainConfig,
    backprop_grad,
    best_of_restarts,
    fit_shallow_lsq,
    levenberg_marquardt,
    mse,
    report_header,
    sgd_train,
    train_tree_end_to_end,
    train_tree_staged,
)


def linear_unit(w):
    # a*sigma(w*x) with delta tiny and positive input acts as w*x
    return ShallowNet([[w]], [0.0], [1.0], SmoothActivation(1e-9))


def test_zero_net_zero_gradient():
    net = init_network(MLPArch((2, 5, 1)), 0)
    for p in net.params():
        p[...] = 0.0
    grads = backprop_grad(net, (np.ones((4, 2)), np.zeros(4)))
    assert all(not g.any() for g in grads)


def test_hand_derivative_single_unit():
    # affine net y = w x + b with w = b = 0; batch {(1, 2)}: dMSE/dw = 2 (w - 2) = -4
    net = GenericMLP((1, 1), [np.zeros((1, 1))], [np.zeros(1)])
    gW, gb = backprop_grad(net, (np.array([[1.0]]), np.array([2.0])))
    assert gW[0, 0] == -4.0 and gb[0] == -4.0


@pytest.mark.parametrize("k", range(len(GRAD_ARCHS)))
def test_gradient_matches_finite_differences(k):
    net = init_network(GRAD_ARCHS[k], 100 + k)
    rng = np.random.default_rng(200 + k)
    for p in net.params():
        p += rng.normal(0.0, 0.3, p.shape)
    X = rng.uniform(-1.0, 1.0, (16, net.input_dim))
    y = rng.normal(size=16)
    assert gradient_relative_error(backprop_grad(net, (X, y)), central_difference(net, X, y)) < 1e-5


def test_mlp_1_12_12_1_componentwise():
    net = init_network(MLPArch((1, 12, 12, 1)), 3)
    rng = np.random.default_rng(3)
    X, y = rng.uniform(-1, 1, (20, 1)), rng.normal(size=20)
    for a, n in zip(backprop_grad(net, (X, y)), central_difference(net, X, y)):
        np.testing.assert_allclose(a, n, rtol=1e-5, atol=1e-9)


def test_backprop_leaves_running_stats():
    net = init_network(MLPArch((1, 4, 4, 1), True), 0)
    before = net.running_mean[2].copy()
    backprop_grad(net, (np.random.default_rng(0).normal(size=(8, 1)), np.zeros(8)))
    np.testing.assert_array_equal(net.running_mean[2], before)


def test_nonfinite_activation_reports_layer():
    net = init_network(MLPArch((1, 4, 4, 1)), 0)
    net.weights[1][...] = np.inf
    with np.errstate(invalid="ignore"), pytest.raises(NumericalError) as exc:
        backprop_grad(net, (np.ones((3, 1)), np.zeros(3)))
    assert exc.value.layer == 2


def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(learning_rate=0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(momentum=1.0).validate()
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=100).validate(50)
    assert TrainConfig().validate(3000).batch_size == 3000


def _quadratic_problem():
    X = np.random.default_rng(0).uniform(0.5, 1.5, (40, 1))
    return X, 0.7 * X[:, 0]


def test_convex_loss_decreases_monotonically():
    X, y = _quadratic_problem()
    cfg = TrainConfig(learning_rate=0.05, momentum=0.0, batch_size=40, epochs=30)
    rep = sgd_train(linear_unit(0.0), (X, y), cfg)
    assert all(b < a for a, b in zip(rep.loss_trace, rep.loss_trace[1:]))
    assert len(rep.loss_trace) == 30


def test_identical_seeds_identical_traces():
    X, y = cos4_data({**cos4_defaults(), "n_train": 300, "n_test": 300})[0]
    cfg = TrainConfig(learning_rate=1e-3, batch_size=64, epochs=5, seed=4)
    net = init_network(MLPArch((1, 6, 6, 1), True), 1)
    a, b = sgd_train(net, (X, y), cfg), sgd_train(net, (X, y), cfg)
    assert a.loss_trace == b.loss_trace
    assert sgd_train(net, (X, y), replace(cfg, seed=5)).loss_trace != a.loss_trace


def test_sgd_does_not_mutate_input_net():
    net = init_network(ShallowArch(1, 3), 0)
    snap = [p.copy() for p in net.params()]
    X, y = _quadratic_problem()
    sgd_train(net, (X, y), TrainConfig(learning_rate=0.01, batch_size=10, epochs=2))
    for p, q in zip(net.params(), snap):
        np.testing.assert_array_equal(p, q)


def test_full_batch_zero_momentum_is_gradient_descent():
    X, y = _quadratic_problem()
    net = init_network(ShallowArch(1, 4), 2)
    lr = 0.02
    cfg = TrainConfig(learning_rate=lr, momentum=0.0, batch_size=len(y), epochs=10)
    rep = sgd_train(net, (X, y), cfg)
    gd = clone(net)
    trace = []
    for _ in range(10):
        out = gd(X)
        trace.append(float(np.mean((out - y) ** 2)))
        for p, g in zip(gd.params(), backprop_grad(gd, (X, y))):
            p -= lr * g
    assert rep.loss_trace == trace
    for p, q in zip(rep.net.params(), gd.params()):
        np.testing.assert_array_equal(p, q)


def test_divergence_aborts_with_report():
    X, y = _quadratic_problem()
    rep = sgd_train(init_network(ShallowArch(1, 4), 0), (X, 1e7 * y), TrainConfig(learning_rate=10.0, batch_size=40))
    assert rep.diverged and "epoch" in rep.message
    assert len(rep.loss_trace) < 2000


def test_all_restarts_diverged_raises():
    X, y = _quadratic_problem()
    cfg = TrainConfig(learning_rate=10.0, batch_size=40, epochs=50, restarts=2)
    with pytest.raises(DivergenceError) as exc:
        best_of_restarts(ShallowArch(1, 4), (X, 1e7 * y), cfg, (X, y))
    assert len(exc.value.reports) == 2


def test_single_restart_equals_sgd_train():
    X, y = _quadratic_problem()
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=5, restarts=1, seed=3)
    best, reports = best_of_restarts(ShallowArch(1, 3), (X, y), cfg, (X, y))
    direct = sgd_train(init_network(ShallowArch(1, 3), 3), (X, y), cfg, (X, y))
    assert len(reports) == 1
    assert best.loss_trace == direct.loss_trace and best.test_mse == direct.test_mse


def test_best_is_minimum_and_ties_go_low():
    X, y = _quadratic_problem()
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=5, restarts=4, seed=10)
    best, reports = best_of_restarts(ShallowArch(1, 3), (X, y), cfg, (X, y))
    assert [r.seed for r in reports] == [10, 11, 12, 13]
    assert all(best.test_mse <= r.test_mse for r in reports)


def test_convex_restarts_agree():
    # closed form: the least-squares slope for y = 0.7 x is 0.7 with zero loss
    X, y = _quadratic_problem()
    cfg = TrainConfig(learning_rate=0.2, momentum=0.5, batch_size=40, epochs=300)
    losses = [sgd_train(linear_unit(w0), (X, y), cfg).train_mse for w0 in (0.1, 1.5)]
    assert abs(losses[0] - losses[1]) < 1e-6
    assert max(losses) < 1e-6


def test_jsonl_and_summary():
    X, y = _quadratic_problem()
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=4, test_every=2)
    rep = sgd_train(init_network(ShallowArch(1, 2), 0), (X, y), cfg, (X, y))
    recs = [json.loads(line) for line in rep.jsonl().splitlines()]
    assert [r["epoch"] for r in recs] == [1, 2, 3, 4]
    assert "test_mse" in recs[1] and "test_mse" not in recs[0]
    assert rep.summary()["epochs_run"] == 4
    assert rep.test_rmse == pytest.approx(np.sqrt(rep.test_mse))
    assert "heavy-ball" in report_header(cfg)["momentum"]


def test_test_data_never_affects_training():
    X, y = _quadratic_problem()
    cfg = TrainConfig(learning_rate=0.01, batch_size=8, epochs=3)
    net = init_network(ShallowArch(1, 2), 0)
    a = sgd_train(net, (X, y), cfg, (X, y))
    b = sgd_train(net, (X, y), cfg, (X[:5], -y[:5]))
    assert a.loss_trace == b.loss_trace


def test_mse_matches_numpy():
    net = init_network(ShallowArch(2, 3), 0)
    X = np.random.default_rng(0).normal(size=(10, 2))
    y = np.ones(10)
    assert mse(net, (X, y)) == pytest.approx(np.mean((net(X) - 1) ** 2))


def test_cos4_reduced_shallow_beats_baseline():
    p = cos4_defaults("reduced")
    train, test = cos4_data(p)
    cfg = TrainConfig(p["learning_rate"], p["momentum"], p["batch_size"], p["epochs"], 1, 0)
    rep = sgd_train(init_network(MLPArch((1, 24, 1)), 0), train, cfg, test)
    assert rep.test_rmse < np.sqrt(0.5)


def test_staged_tree_training_fits_nodes():
    fns = {v: (lambda a, b: 0.5 * a + 0.25 * b) for v in tree_vertices(4)}
    target = build_tree_target(4, fns)
    cfg = TrainConfig(learning_rate=0.01, batch_size=50, epochs=20, restarts=1)
    net, reports = train_tree_staged(target, 4, cfg, n_samples=200)
    assert set(reports) == set(tree_vertices(4))
    assert all(r.test_mse < 0.05 for r in reports.values())
    assert net.d == 4


def test_end_to_end_tree_training_runs():
    fns = {v: (lambda a, b: a * b) for v in tree_vertices(4)}
    target = build_tree_target(4, fns)
    cfg = TrainConfig(learning_rate=0.01, batch_size=50, epochs=3, restarts=2)
    best, reports = train_tree_end_to_end(target, 3, cfg, n_samples=200)
    assert len(reports) == 2 and isinstance(best.net.node_nets, dict)
    assert param_count(best.net) == 3 * 4 * 3


def test_lsq_fit_of_square():
    t = np.linspace(0, 0.9, 301).reshape(-1, 1)
    net = fit_shallow_lsq(3, (t, t[:, 0] ** 2), restarts=2, seed=1)
    assert net.units == 3
    assert np.max(np.abs(net(t) - t[:, 0] ** 2)) < 1e-2


def test_levenberg_marquardt_linear_problem():
    # linear residual A theta - b: the minimizer is the normal-equations solution
    rng = np.random.default_rng(0)
    A, b = rng.normal(size=(30, 4)), rng.normal(size=30)
    theta, cost = levenberg_marquardt(lambda t: A @ t - b, lambda t: A, np.zeros(4))
    expected = np.linalg.lstsq(A, b, rcond=None)[0]
    # the cost is flat to second order, so ftol=1e-15 pins theta only to ~sqrt(1e-15)
    np.testing.assert_allclose(theta, expected, rtol=1e-7)
    assert cost == pytest.approx(float(np.sum((A @ expected - b) ** 2)), rel=1e-12)


def test_levenberg_marquardt_rosenbrock():
    res = lambda t: np.array([10 * (t[1] - t[0] ** 2), 1 - t[0]])  # noqa: E731
    jac = lambda t: np.array([[-20 * t[0], 10.0], [-1.0, 0.0]])  # noqa: E731
    theta, cost = levenberg_marquardt(res, jac, np.array([-1.2, 1.0]))
    np.testing.assert_allclose(theta, [1.0, 1.0], atol=1e-10)


def test_lsq_fit_independent_of_heap_layout():
    # freeing a large block and allocating odd sizes moves later temporaries around
    t = np.linspace(0, 0.9, 501).reshape(-1, 1)
    big = np.ones(4_000_000)
    del big
    keep, seen = [], set()
    for k in range(8):
        keep += [np.empty(1 + 3001 * k), np.empty(1 + 7 * k)]
        net = fit_shallow_lsq(3, (t, t[:, 0] ** 2), restarts=2, seed=1, max_nfev=300)
        seen.add(b"".join(p.tobytes() for p in net.params()))
    assert len(seen) == 1
