"""Target functions: compositional binary trees, the Q polynomial, cos4 and friends.

Vertices of a balanced binary tree over ``d`` leaves are addressed as
``(level, index)`` with 1-based indices.  Level 1 holds the ``d/2`` nodes whose
children are leaves; the root is ``(log2 d, 1)``.  Node ``(l, i)`` has children
``(l-1, 2i-1)`` and ``(l-1, 2i)``; for ``l == 1`` those are leaf positions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import ConfigError, DomainError

Vertex = tuple[int, int]
Bivariate = Callable[[np.ndarray, np.ndarray], np.ndarray]


def _is_power_of_two(d: int) -> bool:
    return isinstance(d, (int, np.integer)) and d >= 1 and (d & (d - 1)) == 0


def tree_levels(d: int) -> int:
    if not _is_power_of_two(d) or d < 2:
        raise ConfigError(f"tree arity must be a power of 2 and >= 2, got {d!r}")
    return int(d).bit_length() - 1


def tree_vertices(d: int) -> list[Vertex]:
    """Non-leaf vertices, bottom level first, left to right."""
    levels = tree_levels(d)
    return [(lvl, i) for lvl in range(1, levels + 1) for i in range(1, d // 2**lvl + 1)]


def children(v: Vertex) -> tuple[int, int]:
    lvl, i = v
    return 2 * i - 1, 2 * i


@dataclass(frozen=True)
class Box:
    """Axis-aligned box ``[lower_j, upper_j]``."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi) or not lo:
            raise ConfigError("box bounds must be nonempty and of equal length")
        for a, b in zip(lo, hi):
            if not (np.isfinite(a) and np.isfinite(b)) or not a < b:
                raise ConfigError(f"invalid box bounds {a!r}, {b!r}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, lo: float, hi: float, d: int) -> "Box":
        return cls((lo,) * d, (hi,) * d)

    @property
    def dim(self) -> int:
        return len(self.lower)

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= np.array(self.lower)) & (X <= np.array(self.upper)), axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, self.dim))


def _check_points(X, arity: int, domain: Box | None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(1, -1) if arity > 1 or X.size == 1 else X.reshape(-1, 1)
    if X.ndim != 2 or X.shape[1] != arity:
        raise ConfigError(f"expected inputs of dimension {arity}, got shape {np.shape(X)}")
    if domain is not None:
        inside = domain.contains(X)
        if not inside.all():
            bad = X[~inside][0]
            raise DomainError(f"input {bad.tolist()} outside domain [{domain.lower}, {domain.upper}]")
    return X


@dataclass(frozen=True)
class CompositionalTarget:
    """Balanced binary-tree composition of bivariate node functions.

    ``leaf_order[k]`` is the input coordinate fed to leaf position ``k``
    (both 0-based).
    """

    d: int
    node_fns: Mapping[Vertex, Bivariate]
    leaf_order: tuple[int, ...]
    domain: Box | None = None
    label: str = "tree"

    @property
    def arity(self) -> int:
        return self.d

    @property
    def vertices(self) -> list[Vertex]:
        return tree_vertices(self.d)

    @property
    def root(self) -> Vertex:
        return (tree_levels(self.d), 1)

    def evaluate(self, X: np.ndarray, intermediates: bool = False):
        """Batched evaluation on rows of ``X``; no domain check."""
        X = np.asarray(X, dtype=np.float64)
        leaves = X[:, list(self.leaf_order)]
        values = [leaves[:, k] for k in range(self.d)]
        inter: dict[Vertex, np.ndarray] = {}
        for lvl in range(1, tree_levels(self.d) + 1):
            nxt = []
            for i in range(1, len(values) // 2 + 1):
                left, right = children((lvl, i))
                out = np.asarray(self.node_fns[(lvl, i)](values[left - 1], values[right - 1]), dtype=np.float64)
                inter[(lvl, i)] = out
                nxt.append(out)
            values = nxt
        if intermediates:
            return values[0], inter
        return values[0]

    def node_input_ranges(self, X: np.ndarray) -> dict[Vertex, tuple[np.ndarray, np.ndarray]]:
        """Realized (min, max) of each node's two inputs over the rows of ``X``."""
        X = np.asarray(X, dtype=np.float64)
        _, inter = self.evaluate(X, intermediates=True)
        leaves = X[:, list(self.leaf_order)]
        ranges = {}
        for v in self.vertices:
            lvl, _ = v
            left, right = children(v)
            if lvl == 1:
                a, b = leaves[:, left - 1], leaves[:, right - 1]
            else:
                a, b = inter[(lvl - 1, left)], inter[(lvl - 1, right)]
            ab = np.stack([a, b], axis=1)
            ranges[v] = (ab.min(axis=0), ab.max(axis=0))
        return ranges

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.evaluate(X)


@dataclass(frozen=True)
class ScalarTarget:
    """A function of ``arity`` real variables on a finite box."""

    arity: int
    func: Callable[[np.ndarray], np.ndarray]
    domain: Box
    label: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.arity < 1 or self.domain.dim != self.arity:
            raise ConfigError(f"arity {self.arity} does not match domain dimension {self.domain.dim}")

    def evaluate(self, X: np.ndarray) -> np.ndarray:
        return np.asarray(self.func(np.asarray(X, dtype=np.float64)), dtype=np.float64)

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.evaluate(X)


def build_tree_target(
    d: int,
    node_fns: Mapping[Vertex, Bivariate],
    leaf_order=None,
    domain: Box | None = None,
    label: str = "tree",
) -> CompositionalTarget:
    """Assemble a :class:`CompositionalTarget`, validating one function per vertex."""
    expected = set(tree_vertices(d))
    given = set(node_fns)
    missing = sorted(expected - given)
    extra = sorted(given - expected, key=repr)
    if missing:
        raise ConfigError(f"missing node function for vertex {missing[0]}")
    if extra:
        raise ConfigError(f"unexpected node function for vertex {extra[0]}")
    order = tuple(range(d)) if leaf_order is None else tuple(int(k) for k in leaf_order)
    if sorted(order) != list(range(d)):
        raise ConfigError(f"leaf_order must be a permutation of 0..{d - 1}")
    if domain is not None and domain.dim != d:
        raise ConfigError("domain dimension does not match tree arity")
    return CompositionalTarget(d, dict(node_fns), order, domain, label)


def eval_target(t: CompositionalTarget | ScalarTarget, x) -> float:
    """Evaluate ``t`` at a single point, checking arity and domain."""
    X = _check_points(np.asarray(x, dtype=np.float64).reshape(1, -1), t.arity, t.domain)
    return float(t.evaluate(X)[0])


# --- builtin targets -------------------------------------------------------


def cos4_fn(X: np.ndarray) -> np.ndarray:
    c = np.cos(X[:, 0])
    return 2.0 * (2.0 * c**2 - 1.0) ** 2 - 1.0


def cos4() -> ScalarTarget:
    return ScalarTarget(1, cos4_fn, Box((-2 * np.pi,), (2 * np.pi,)), "cos4")


class GaussBump:
    def __call__(self, X: np.ndarray) -> np.ndarray:
        return np.exp(-np.sum(X**2, axis=1))


# Gaussian decay makes anything beyond this box numerically zero.
GAUSS_BUMP_HALFWIDTH = 100.0


def gauss_bump(d: int = 1) -> ScalarTarget:
    return ScalarTarget(d, GaussBump(), Box.cube(-GAUSS_BUMP_HALFWIDTH, GAUSS_BUMP_HALFWIDTH, d), "gauss_bump", {"d": d})


Q_NAMES = "ABCDEFGHI"
Q_DEFAULT_COEFFS = (0.5, -0.3, 0.2, 1.0, 0.25, 0.8, -0.1, 0.15, 0.3)
Q_EXPONENT = 2**10


class QInner:
    """Range-normalized inner quadratic of Q; ``scale`` is its grid sup on [-1,1]^2."""

    def __init__(self, coeffs=Q_DEFAULT_COEFFS, grid: int = 401):
        if len(coeffs) != 9:
            raise ConfigError(f"q_poly needs 9 coefficients A..I, got {len(coeffs)}")
        self.coeffs = tuple(float(c) for c in coeffs)
        t = np.linspace(-1.0, 1.0, grid)
        xx, yy = np.meshgrid(t, t, indexing="ij")
        sup = float(np.max(np.abs(self.raw(xx.ravel(), yy.ravel()))))
        if sup == 0.0:
            raise ConfigError("q_poly inner expression vanishes identically")
        self.scale = sup

    def raw(self, x, y):
        A, B, C, D, E, F, G, H, I = self.coeffs
        return (A * x**2 * y**2 + B * x**2 * y + C * x * y**2 + D * x**2
                + 2 * E * x * y + F * y**2 + 2 * G * x + 2 * H * y + I)

    def __call__(self, x, y):
        return self.raw(x, y) / self.scale


class QPoly:
    def __init__(self, inner: QInner):
        self.inner = inner

    def __call__(self, X: np.ndarray) -> np.ndarray:
        return self.inner(X[:, 0], X[:, 1]) ** Q_EXPONENT


def q_poly(coeffs=Q_DEFAULT_COEFFS) -> ScalarTarget:
    inner = QInner(coeffs)
    params = {"coefficients": dict(zip(Q_NAMES, inner.coeffs)), "scale": inner.scale}
    return ScalarTarget(2, QPoly(inner), Box.cube(-1.0, 1.0, 2), "q_poly", params)


def _trig_frequencies(max_degree: int = 3) -> list[tuple[int, int]]:
    freqs = []
    for j in range(0, max_degree + 1):
        for k in range(-max_degree, max_degree + 1):
            if abs(j) + abs(k) <= max_degree and (j > 0 or k >= 0):
                freqs.append((j, k))
    return freqs


class TrigNode:
    """Bivariate trigonometric polynomial of total degree <= 3.

    The coefficients are divided by their l1 norm, so ``|f| <= 1`` everywhere.
    """

    def __init__(self, rng: np.random.Generator, max_degree: int = 3):
        self.freqs = np.array(_trig_frequencies(max_degree), dtype=np.float64)
        n = len(self.freqs)
        self.cos_c = rng.uniform(-1.0, 1.0, n)
        self.sin_c = rng.uniform(-1.0, 1.0, n)
        self.sin_c[(self.freqs[:, 0] == 0) & (self.freqs[:, 1] == 0)] = 0.0
        l1 = np.abs(self.cos_c).sum() + np.abs(self.sin_c).sum()
        self.cos_c /= l1
        self.sin_c /= l1

    def __call__(self, a, b):
        a = np.asarray(a, dtype=np.float64)
        b = np.asarray(b, dtype=np.float64)
        # term-by-term accumulation keeps results bitwise independent of batch shape
        out = np.zeros(np.broadcast(a, b).shape)
        for (fa, fb), cc, sc in zip(self.freqs, self.cos_c, self.sin_c):
            phase = fa * a + fb * b
            out += cc * np.cos(phase) + sc * np.sin(phase)
        return out[()]


def random_tree(d: int = 4, seed: int = 0) -> CompositionalTarget:
    rng = np.random.default_rng(seed)
    fns = {v: TrigNode(rng) for v in tree_vertices(d)}
    return build_tree_target(d, fns, domain=Box.cube(-1.0, 1.0, d), label=f"random_tree(d={d},seed={seed})")


_CATALOG = {
    "cos4": cos4,
    "gauss_bump": gauss_bump,
    "q_poly": q_poly,
    "random_tree": random_tree,
}


def builtin_targets() -> dict[str, Callable[..., ScalarTarget | CompositionalTarget]]:
    """Catalog of target factories keyed by label."""
    return dict(_CATALOG)


def get_target(label: str, **params) -> ScalarTarget | CompositionalTarget:
    try:
        factory = _CATALOG[label]
    except KeyError:
        raise ConfigError(f"unknown target {label!r}; known: {sorted(_CATALOG)}") from None
    return factory(**params)
