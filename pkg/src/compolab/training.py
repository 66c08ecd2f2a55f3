"""SGD with heavy-ball momentum, best-of-restarts selection and staged tree fitting."""

from __future__ import annotations

import json
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, DivergenceError, NumericalError
from .networks import DeepTreeNet, ShallowArch, clone, init_network
from .targets import Box, CompositionalTarget

DIVERGENCE_LIMIT = 1e12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    momentum: float = 0.9
    batch_size: int = 3000
    epochs: int = 2000
    restarts: int = 5
    seed: int = 0
    test_every: int = 0

    def validate(self, n_samples: int | None = None) -> "TrainConfig":
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 1 or self.restarts < 1:
            raise ConfigError("batch_size, epochs and restarts must be >= 1")
        if n_samples is not None and self.batch_size > n_samples:
            raise ConfigError(f"batch_size {self.batch_size} exceeds sample count {n_samples}")
        return self


@dataclass
class TrainReport:
    seed: int
    train_mse: float
    test_mse: float | None
    loss_trace: list[float]
    test_trace: list[tuple[int, float]] = field(default_factory=list)
    wall_time: float = 0.0
    diverged: bool = False
    message: str = ""
    net: object = None

    @property
    def test_rmse(self) -> float | None:
        return None if self.test_mse is None else float(np.sqrt(self.test_mse))

    def jsonl(self) -> str:
        """One JSON record per epoch; test MSE attached where it was measured."""
        tests = dict(self.test_trace)
        lines = []
        for epoch, loss in enumerate(self.loss_trace, start=1):
            rec = {"epoch": epoch, "train_mse": loss}
            if epoch in tests:
                rec["test_mse"] = tests[epoch]
            lines.append(json.dumps(rec))
        return "\n".join(lines) + ("\n" if lines else "")

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "train_mse": self.train_mse,
            "test_mse": self.test_mse,
            "epochs_run": len(self.loss_trace),
            "diverged": self.diverged,
        }


def _as_xy(samples):
    X, y = samples
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[0] != y.size or y.size == 0:
        raise ConfigError("samples must be a nonempty (X, y) pair of matching length")
    return X, y


def loss_and_grad(net, X, y, update_stats: bool = True):
    out, cache = net.forward(X, train=True, update_stats=update_stats)
    r = out - y
    loss = float(np.mean(r * r))
    grads, _ = net.backward(cache, 2.0 * r / r.size)
    return loss, grads


def backprop_grad(net, batch) -> list[np.ndarray]:
    """Gradient of the batch MSE w.r.t. ``net.params()``; running stats untouched."""
    X, y = _as_xy(batch)
    return loss_and_grad(net, X, y, update_stats=False)[1]


def mse(net, samples) -> float:
    """Inference-mode mean squared error."""
    X, y = _as_xy(samples)
    r = net(X) - y
    return float(np.mean(r * r))


def sgd_train(net, train, cfg: TrainConfig, test=None) -> TrainReport:
    """Train a private copy of ``net``; ``cfg.seed`` drives the shuffling."""
    X, y = _as_xy(train)
    n = y.size
    cfg.validate(n)
    net = clone(net)
    params = net.params()
    velocity = [np.zeros_like(p) for p in params]
    rng = np.random.default_rng(cfg.seed)
    trace: list[float] = []
    test_trace: list[tuple[int, float]] = []
    start = time.perf_counter()
    diverged, message = False, ""
    for epoch in range(1, cfg.epochs + 1):
        # one batch covers everything: order is irrelevant, keep it fixed
        order = np.arange(n) if cfg.batch_size >= n else rng.permutation(n)
        total = 0.0
        try:
            for lo in range(0, n, cfg.batch_size):
                idx = order[lo:lo + cfg.batch_size]
                loss, grads = loss_and_grad(net, X[idx], y[idx])
                if not np.isfinite(loss) or loss > DIVERGENCE_LIMIT:
                    raise NumericalError(f"batch loss {loss!r} exceeds divergence limit")
                total += loss * idx.size
                for p, v, g in zip(params, velocity, grads):
                    v *= cfg.momentum
                    v -= cfg.learning_rate * g
                    p += v
        except NumericalError as exc:
            diverged, message = True, f"epoch {epoch}: {exc}"
            break
        trace.append(total / n)
        if test is not None and cfg.test_every and epoch % cfg.test_every == 0:
            test_trace.append((epoch, mse(net, test)))
    wall = time.perf_counter() - start
    if diverged:
        return TrainReport(cfg.seed, float("inf"), None if test is None else float("inf"),
                           trace, test_trace, wall, True, message, net)
    train_mse = mse(net, (X, y))
    test_mse = None if test is None else mse(net, test)
    return TrainReport(cfg.seed, train_mse, test_mse, trace, test_trace, wall, False, "", net)


def _restart(args):
    arch, train, cfg, test, seed = args
    net = init_network(arch, seed)
    return sgd_train(net, train, replace(cfg, seed=seed), test)


def best_of_restarts(arch, train, cfg: TrainConfig, test, jobs: int = 1):
    """Run ``cfg.restarts`` seeded trainings and keep the lowest test MSE.

    Restart ``r`` uses seed ``cfg.seed + r`` for both initialization and
    shuffling.  Ties go to the lower seed.
    """
    cfg.validate()
    tasks = [(arch, train, cfg, test, cfg.seed + r) for r in range(cfg.restarts)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(_restart, tasks))
    else:
        reports = [_restart(t) for t in tasks]
    ok = [r for r in reports if not r.diverged]
    if not ok:
        raise DivergenceError(f"all {len(reports)} restarts diverged", reports)
    best = min(ok, key=lambda r: (r.test_mse, r.seed))
    return best, reports


# --- staged training of tree networks --------------------------------------


def train_tree_staged(target: CompositionalTarget, n_units: int, cfg: TrainConfig,
                      node_domains: dict | None = None, n_samples: int = 2000,
                      delta: float | None = None):
    """Fit every node of a :class:`DeepTreeNet` against its constituent function.

    Each node gets ``n_samples`` uniform samples from its input box (default
    ``[-1, 1]^2``) and the best of ``cfg.restarts`` SGD runs.  Returns the tree
    and the per-node best reports.
    """
    arch = ShallowArch(2, n_units) if delta is None else ShallowArch(2, n_units, delta)
    nodes, reports = {}, {}
    for k, v in enumerate(target.vertices):
        box = (node_domains or {}).get(v, Box.cube(-1.0, 1.0, 2))
        rng = np.random.default_rng([cfg.seed, k])
        Xtr, Xte = box.sample(n_samples, rng), box.sample(n_samples, rng)
        f = target.node_fns[v]
        train = (Xtr, f(Xtr[:, 0], Xtr[:, 1]))
        test = (Xte, f(Xte[:, 0], Xte[:, 1]))
        node_cfg = replace(cfg, batch_size=min(cfg.batch_size, n_samples), seed=cfg.seed + 1000 * k)
        best, _ = best_of_restarts(arch, train, node_cfg, test)
        nodes[v] = best.net
        reports[v] = best
    return DeepTreeNet(target.d, nodes, target.leaf_order), reports


def train_tree_end_to_end(target: CompositionalTarget, n_units: int, cfg: TrainConfig,
                          n_samples: int = 2000):
    """Fit a whole :class:`DeepTreeNet` to samples of ``target`` without node oracles."""
    from .networks import TreeArch

    box = target.domain or Box.cube(-1.0, 1.0, target.d)
    rng = np.random.default_rng([cfg.seed, 99])
    Xtr, Xte = box.sample(n_samples, rng), box.sample(n_samples, rng)
    train, test = (Xtr, target(Xtr)), (Xte, target(Xte))
    cfg = replace(cfg, batch_size=min(cfg.batch_size, n_samples))
    return best_of_restarts(TreeArch(target.d, n_units), train, cfg, test)


def report_header(cfg: TrainConfig) -> dict:
    """Choices not fixed by the original protocol, logged with every run."""
    return {
        "config": asdict(cfg),
        "init": "glorot-uniform weights, zero biases, batchnorm gamma=1 beta=0",
        "shuffle": "full permutation per epoch, short last batch kept",
        "momentum": "heavy-ball v <- mu v - lr g, theta <- theta + v",
        "batchnorm": "eps=1e-5, running-stat momentum 0.1, unbiased running variance",
    }


# --- deterministic least-squares fitting of small shallow nets --------------


def _shallow_jacobian(net, X):
    Z = X @ net.W.T + net.b
    H = net.activation(Z)
    G = net.activation.grad(Z) * net.a
    return np.hstack([(G[:, :, None] * X[:, None, :]).reshape(len(X), -1), G, H])


def levenberg_marquardt(residual, jacobian, theta0, max_nfev: int = 1000, ftol: float = 1e-15,
                        xtol: float = 1e-15):
    """Minimize ``|residual(theta)|^2`` with Levenberg-Marquardt; returns ``(theta, cost)``.

    Damping is scaled by the running maximum of ``diag(J^T J)`` and adapted
    with Nielsen's rule.  Only matrix products and a dense solve are used, which
    keeps the iterates bitwise reproducible regardless of where arrays sit in
    memory.  A step whose residual is not finite counts as rejected.
    """
    theta = np.array(theta0, dtype=np.float64)
    r = residual(theta)
    cost, nfev = float(r @ r), 1
    if not np.isfinite(cost):
        raise NumericalError("non-finite residual at the starting point")
    J = jacobian(theta)
    A, g = J.T @ J, J.T @ r
    D = np.maximum(np.diag(A), np.finfo(float).tiny)
    mu, nu = 1e-3, 2.0
    while nfev < max_nfev:
        try:
            step = np.linalg.solve(A + mu * np.diag(D), -g)
        except np.linalg.LinAlgError:
            mu, nu = mu * nu, nu * 2.0
            continue
        if np.linalg.norm(step) <= xtol * (np.linalg.norm(theta) + xtol):
            break
        trial = theta + step
        try:
            r_new = residual(trial)
            new_cost = float(r_new @ r_new)
        except NumericalError:
            new_cost = np.inf
        nfev += 1
        predicted = float(step @ (mu * D * step - g))
        rho = (cost - new_cost) / predicted if predicted > 0 else -1.0
        if rho > 0 and np.isfinite(new_cost):
            done = cost - new_cost <= ftol * cost
            theta, r, cost = trial, r_new, new_cost
            J = jacobian(theta)
            A, g = J.T @ J, J.T @ r
            D = np.maximum(D, np.diag(A))
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if done:
                break
        else:
            mu, nu = mu * nu, nu * 2.0
    return theta, cost


def fit_shallow_lsq(n_units: int, samples, restarts: int = 4, seed: int = 0, delta: float | None = None,
                    max_nfev: int = 1000):
    """Levenberg-Marquardt fit of a :class:`ShallowNet`, best of ``restarts`` starts.

    Starts put every unit in the smooth regime of the activation (weights and
    biases of order ``delta``, outer coefficients of order ``1/delta``), where a
    handful of units already resolves curved targets.  Returns the net with the
    smallest residual sum of squares.
    """
    X, y = _as_xy(samples)
    arch = ShallowArch(X.shape[1], n_units) if delta is None else ShallowArch(X.shape[1], n_units, delta)
    best, best_cost = None, np.inf
    for r in range(restarts):
        net = init_network(arch, seed + r)
        dl = net.activation.delta
        rng = np.random.default_rng([seed, r])
        net.W[...] = dl * rng.uniform(-3.0, 3.0, net.W.shape)
        net.b[...] = dl * rng.uniform(-3.0, 3.0, net.b.shape)
        net.a[...] = rng.uniform(-1.0, 1.0, net.a.shape) / dl
        params = net.params()

        def unpack(theta, params=params):
            pos = 0
            for p in params:
                p[...] = theta[pos:pos + p.size].reshape(p.shape)
                pos += p.size

        def residual(theta, net=net):
            unpack(theta)
            return net(X) - y

        def jacobian(theta, net=net):
            unpack(theta)
            return _shallow_jacobian(net, X)

        theta0 = np.concatenate([p.ravel() for p in params])
        try:
            theta, _ = levenberg_marquardt(residual, jacobian, theta0, max_nfev=max_nfev)
        except NumericalError:
            continue
        unpack(theta)
        cost = float(np.sum((net(X) - y) ** 2))
        if np.isfinite(cost) and cost < best_cost:
            best, best_cost = net, cost
    if best is None:
        raise DivergenceError(f"all {restarts} least-squares starts failed")
    return best
