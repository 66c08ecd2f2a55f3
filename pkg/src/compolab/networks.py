"""Shallow ridge networks, binary-tree networks and generic MLPs.

Every network exposes the same small protocol used by :mod:`compolab.training`:

* ``params()`` -- list of trainable arrays (mutated in place by optimizers)
* ``forward(X, train=False)`` -- returns ``(output, cache)``
* ``backward(cache, dout)`` -- gradients aligned with ``params()``
* ``__call__(X)`` -- inference-mode output of shape ``(N,)``
"""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericalError
from .targets import Vertex, children, tree_levels, tree_vertices

DEFAULT_DELTA = 0.01
BN_EPS = 1e-5
BN_MOMENTUM = 0.1
_CUTOFF = 30.0


def smooth_relu(x, delta: float = DEFAULT_DELTA):
    """``delta * log(1 + exp(x / delta))``, exactly ``x`` or ``0`` beyond |x/delta| > 30."""
    if not delta > 0:
        raise ConfigError(f"delta must be positive, got {delta!r}")
    x = np.asarray(x, dtype=np.float64)
    z = x / delta
    mid = np.clip(z, -_CUTOFF, _CUTOFF)
    out = np.where(z > _CUTOFF, x, np.where(z < -_CUTOFF, 0.0, delta * np.log1p(np.exp(mid))))
    return out if out.ndim else float(out)


def smooth_relu_grad(x, delta: float = DEFAULT_DELTA):
    z = np.asarray(x, dtype=np.float64) / delta
    mid = np.clip(z, -_CUTOFF, _CUTOFF)
    return np.where(z > _CUTOFF, 1.0, np.where(z < -_CUTOFF, 0.0, 1.0 / (1.0 + np.exp(-mid))))


@dataclass(frozen=True)
class SmoothActivation:
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        if not self.delta > 0:
            raise ConfigError(f"delta must be positive, got {self.delta!r}")

    def __call__(self, x):
        return smooth_relu(x, self.delta)

    def grad(self, x):
        return smooth_relu_grad(x, self.delta)


def _as_batch(X, d: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if X.size == d else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != d:
        raise ConfigError(f"expected input dimension {d}, got shape {np.shape(X)}")
    return X


def _check_finite(arr: np.ndarray, layer: int) -> None:
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite activations at layer {layer}", layer=layer)


class ShallowNet:
    """``x -> sum_k a_k sigma(w_k . x + b_k)``."""

    kind = "shallow"

    def __init__(self, W, b, a, activation: SmoothActivation | None = None):
        self.W = np.array(W, dtype=np.float64)
        if self.W.ndim != 2:
            self.W = self.W.reshape(len(a), -1)
        self.b = np.array(b, dtype=np.float64).reshape(-1)
        self.a = np.array(a, dtype=np.float64).reshape(-1)
        self.activation = activation or SmoothActivation()
        if not (self.W.shape[0] == self.b.size == self.a.size):
            raise ConfigError("W, b and a must agree on the number of units")

    @classmethod
    def empty(cls, d: int, activation: SmoothActivation | None = None) -> "ShallowNet":
        return cls(np.zeros((0, d)), [], [], activation)

    @property
    def input_dim(self) -> int:
        return self.W.shape[1]

    @property
    def units(self) -> int:
        return self.a.size

    def params(self) -> list[np.ndarray]:
        return [self.W, self.b, self.a]

    def forward(self, X, train: bool = False, update_stats: bool = True):
        X = _as_batch(X, self.input_dim)
        Z = X @ self.W.T + self.b
        H = self.activation(Z)
        _check_finite(H, 1)
        out = H @ self.a
        _check_finite(out, 2)
        return out, (X, Z, H)

    def backward(self, cache, dout):
        X, Z, H = cache
        da = H.T @ dout
        dZ = np.outer(dout, self.a) * self.activation.grad(Z)
        return [dZ.T @ X, dZ.sum(axis=0), da], dZ @ self.W

    def __call__(self, X) -> np.ndarray:
        return self.forward(X)[0]


def eval_shallow(net: ShallowNet, x) -> float:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != net.input_dim:
        raise ConfigError(f"expected input dimension {net.input_dim}, got {x.size}")
    return float(net(x.reshape(1, -1))[0])


class DeepTreeNet:
    """Binary-tree network whose every non-leaf vertex is a 2-input :class:`ShallowNet`."""

    kind = "tree"

    def __init__(self, d: int, node_nets: dict[Vertex, ShallowNet], leaf_order=None):
        self.d = d
        self.levels = tree_levels(d)
        if set(node_nets) != set(tree_vertices(d)):
            raise ConfigError("node_nets must cover exactly the non-leaf vertices")
        for v, net in node_nets.items():
            if net.input_dim != 2:
                raise ConfigError(f"node {v} must take 2 inputs, takes {net.input_dim}")
        self.node_nets = dict(node_nets)
        self.leaf_order = tuple(range(d)) if leaf_order is None else tuple(leaf_order)

    @property
    def input_dim(self) -> int:
        return self.d

    @property
    def vertices(self) -> list[Vertex]:
        return tree_vertices(self.d)

    def params(self) -> list[np.ndarray]:
        return [p for v in self.vertices for p in self.node_nets[v].params()]

    def forward(self, X, train: bool = False, update_stats: bool = True):
        X = _as_batch(X, self.d)
        leaves = X[:, list(self.leaf_order)]
        values = [leaves[:, k] for k in range(self.d)]
        caches, outputs = {}, {}
        for lvl in range(1, self.levels + 1):
            nxt = []
            for i in range(1, len(values) // 2 + 1):
                left, right = children((lvl, i))
                inp = np.stack([values[left - 1], values[right - 1]], axis=1)
                try:
                    out, cache = self.node_nets[(lvl, i)].forward(inp)
                except NumericalError as exc:
                    raise NumericalError(f"non-finite output at tree level {lvl}, node {i}", layer=lvl) from exc
                caches[(lvl, i)] = cache
                outputs[(lvl, i)] = out
                nxt.append(out)
            values = nxt
        return values[0], (caches, outputs)

    def evaluate(self, X, intermediates: bool = False):
        out, (_, outputs) = self.forward(X)
        return (out, outputs) if intermediates else out

    def backward(self, cache, dout):
        caches, _ = cache
        grads: dict[Vertex, list[np.ndarray]] = {}
        upstream = {(self.levels, 1): dout}
        for lvl in range(self.levels, 0, -1):
            for i in range(1, self.d // 2**lvl + 1):
                v = (lvl, i)
                g, dinp = self.node_nets[v].backward(caches[v], upstream[v])
                grads[v] = g
                if lvl > 1:
                    left, right = children(v)
                    upstream[(lvl - 1, left)] = dinp[:, 0]
                    upstream[(lvl - 1, right)] = dinp[:, 1]
        return [g for v in self.vertices for g in grads[v]], None

    def __call__(self, X) -> np.ndarray:
        return self.forward(X)[0]


def eval_deep_tree(net: DeepTreeNet, x):
    """Value at a single point plus the per-vertex intermediate outputs."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != net.d:
        raise ConfigError(f"expected input dimension {net.d}, got {x.size}")
    out, inter = net.evaluate(x.reshape(1, -1), intermediates=True)
    return float(out[0]), {v: float(val[0]) for v, val in inter.items()}


class GenericMLP:
    """Fully connected net with affine output and optional batch normalization.

    When ``batchnorm`` is set, the pre-activations of hidden layers 2..H are
    normalized, i.e. one normalization sits between every two consecutive
    hidden layers.
    """

    kind = "mlp"

    def __init__(self, layer_dims, weights, biases, activation: SmoothActivation | None = None,
                 batchnorm: bool = False):
        self.layer_dims = [int(k) for k in layer_dims]
        if len(self.layer_dims) < 2 or min(self.layer_dims) < 1 or self.layer_dims[-1] != 1:
            raise ConfigError(f"invalid layer dims {layer_dims!r}")
        self.weights = [np.array(w, dtype=np.float64) for w in weights]
        self.biases = [np.array(b, dtype=np.float64) for b in biases]
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.layer_dims[k + 1], self.layer_dims[k]) or b.shape != (self.layer_dims[k + 1],):
                raise ConfigError(f"layer {k + 1} parameter shapes do not match dims")
        self.activation = activation or SmoothActivation()
        self.batchnorm = bool(batchnorm)
        self.bn_layers = list(range(2, self.n_hidden + 1)) if self.batchnorm else []
        self.gamma = {k: np.ones(self.layer_dims[k]) for k in self.bn_layers}
        self.beta = {k: np.zeros(self.layer_dims[k]) for k in self.bn_layers}
        self.running_mean = {k: np.zeros(self.layer_dims[k]) for k in self.bn_layers}
        self.running_var = {k: np.ones(self.layer_dims[k]) for k in self.bn_layers}

    @property
    def n_hidden(self) -> int:
        return len(self.layer_dims) - 2

    @property
    def input_dim(self) -> int:
        return self.layer_dims[0]

    def params(self) -> list[np.ndarray]:
        out = []
        for k in range(1, len(self.layer_dims)):
            out += [self.weights[k - 1], self.biases[k - 1]]
            if k in self.gamma:
                out += [self.gamma[k], self.beta[k]]
        return out

    def forward(self, X, train: bool = False, update_stats: bool = True):
        H = _as_batch(X, self.input_dim)
        caches = []
        last = len(self.layer_dims) - 1
        for k in range(1, last + 1):
            W, b = self.weights[k - 1], self.biases[k - 1]
            Z = H @ W.T + b
            if k == last:
                _check_finite(Z, k)
                caches.append((H, None, None, None))
                return Z[:, 0], caches
            bn = None
            if k in self.gamma:
                if train:
                    mu = Z.mean(axis=0)
                    var = Z.var(axis=0)
                    if update_stats:
                        n = Z.shape[0]
                        unbiased = var * n / (n - 1) if n > 1 else var
                        self.running_mean[k] = (1 - BN_MOMENTUM) * self.running_mean[k] + BN_MOMENTUM * mu
                        self.running_var[k] = (1 - BN_MOMENTUM) * self.running_var[k] + BN_MOMENTUM * unbiased
                else:
                    mu, var = self.running_mean[k], self.running_var[k]
                inv = 1.0 / np.sqrt(var + BN_EPS)
                Zhat = (Z - mu) * inv
                bn = (Zhat, inv, train)
                Z = Zhat * self.gamma[k] + self.beta[k]
            A = self.activation(Z)
            _check_finite(A, k)
            caches.append((H, Z, bn, k))
            H = A

    def backward(self, caches, dout):
        grads = {}
        last = len(self.layer_dims) - 1
        dH = dout.reshape(-1, 1)
        for k in range(last, 0, -1):
            H, Z, bn, _ = caches[k - 1]
            if k == last:
                dZ = dH
            else:
                dZ = dH * self.activation.grad(Z)
                if bn is not None:
                    Zhat, inv, train = bn
                    grads[("g", k)] = (dZ * Zhat).sum(axis=0)
                    grads[("be", k)] = dZ.sum(axis=0)
                    dZhat = dZ * self.gamma[k]
                    if train:
                        n = dZhat.shape[0]
                        dZ = inv / n * (n * dZhat - dZhat.sum(axis=0) - Zhat * (dZhat * Zhat).sum(axis=0))
                    else:
                        dZ = dZhat * inv
            grads[("W", k)] = dZ.T @ H
            grads[("b", k)] = dZ.sum(axis=0)
            dH = dZ @ self.weights[k - 1]
        out = []
        for k in range(1, last + 1):
            out += [grads[("W", k)], grads[("b", k)]]
            if k in self.gamma:
                out += [grads[("g", k)], grads[("be", k)]]
        return out, dH

    def __call__(self, X) -> np.ndarray:
        return self.forward(X, train=False)[0]


Network = ShallowNet | DeepTreeNet | GenericMLP


def param_count(net: Network) -> int:
    """Number of trainable scalars (batchnorm running statistics excluded)."""
    return int(sum(p.size for p in net.params()))


# --- architecture descriptors and initialization ---------------------------


@dataclass(frozen=True)
class ShallowArch:
    d: int
    n: int
    delta: float = DEFAULT_DELTA


@dataclass(frozen=True)
class TreeArch:
    d: int
    n: int
    delta: float = DEFAULT_DELTA


@dataclass(frozen=True)
class MLPArch:
    dims: tuple[int, ...]
    batchnorm: bool = False
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(k) for k in self.dims))


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def _init_shallow(rng, d, n, act) -> ShallowNet:
    W = _glorot(rng, d, n, (n, d))
    a = _glorot(rng, n, 1, (n,))
    return ShallowNet(W, np.zeros(n), a, act)


def init_network(arch, seed: int) -> Network:
    """Glorot-uniform weights, zero biases, unit/zero batchnorm scale/shift."""
    rng = np.random.default_rng(seed)
    if isinstance(arch, ShallowArch):
        if arch.d < 1 or arch.n < 0:
            raise ConfigError(f"invalid shallow architecture {arch}")
        return _init_shallow(rng, arch.d, arch.n, SmoothActivation(arch.delta))
    if isinstance(arch, TreeArch):
        if arch.n < 1:
            raise ConfigError(f"invalid tree architecture {arch}")
        act = SmoothActivation(arch.delta)
        nodes = {v: _init_shallow(rng, 2, arch.n, act) for v in tree_vertices(arch.d)}
        return DeepTreeNet(arch.d, nodes)
    if isinstance(arch, MLPArch):
        dims = arch.dims
        if len(dims) < 2 or min(dims) < 1 or dims[-1] != 1:
            raise ConfigError(f"invalid MLP dims {dims!r}")
        weights = [_glorot(rng, dims[k], dims[k + 1], (dims[k + 1], dims[k])) for k in range(len(dims) - 1)]
        biases = [np.zeros(dims[k + 1]) for k in range(len(dims) - 1)]
        return GenericMLP(dims, weights, biases, SmoothActivation(arch.delta), arch.batchnorm)
    raise ConfigError(f"unknown architecture descriptor {arch!r}")


def clone(net: Network) -> Network:
    return copy.deepcopy(net)


# --- plain-text serialization ----------------------------------------------
#
# Line 1: "<kind> <dims...> delta=<hex>" ; then one hex-float per line in
# params() order, followed (MLP with batchnorm) by running means and variances.


def _state_arrays(net: Network) -> list[np.ndarray]:
    arrays = list(net.params())
    if isinstance(net, GenericMLP):
        for k in net.bn_layers:
            arrays += [net.running_mean[k], net.running_var[k]]
    return arrays


def dumps_network(net: Network) -> str:
    if isinstance(net, ShallowNet):
        header = f"shallow {net.input_dim} {net.units}"
        delta = net.activation.delta
    elif isinstance(net, DeepTreeNet):
        n = net.node_nets[(1, 1)].units
        order = ",".join(str(k) for k in net.leaf_order)
        header = f"tree {net.d} {n} order={order}"
        delta = net.node_nets[(1, 1)].activation.delta
    elif isinstance(net, GenericMLP):
        header = "mlp " + ",".join(str(k) for k in net.layer_dims) + f" bn={int(net.batchnorm)}"
        delta = net.activation.delta
    else:
        raise ConfigError(f"cannot serialize {type(net).__name__}")
    lines = [f"{header} delta={float(delta).hex()}"]
    for arr in _state_arrays(net):
        lines.extend(float(v).hex() for v in arr.ravel())
    return "\n".join(lines) + "\n"


def loads_network(text: str) -> Network:
    lines = text.strip().splitlines()
    head = lines[0].split()
    values = [float.fromhex(s) for s in lines[1:]]
    opts = dict(tok.split("=", 1) for tok in head if "=" in tok)
    delta = float.fromhex(opts["delta"])
    kind = head[0]
    if kind == "shallow":
        net = init_network(ShallowArch(int(head[1]), int(head[2]), delta), 0)
    elif kind == "tree":
        net = init_network(TreeArch(int(head[1]), int(head[2]), delta), 0)
        net.leaf_order = tuple(int(k) for k in opts["order"].split(","))
    elif kind == "mlp":
        dims = tuple(int(k) for k in head[1].split(","))
        net = init_network(MLPArch(dims, bool(int(opts["bn"])), delta), 0)
    else:
        raise ConfigError(f"unknown network kind {kind!r}")
    arrays = _state_arrays(net)
    if sum(a.size for a in arrays) != len(values):
        raise ConfigError("parameter count in file does not match header")
    pos = 0
    for arr in arrays:
        arr[...] = np.array(values[pos:pos + arr.size]).reshape(arr.shape)
        pos += arr.size
    return net
