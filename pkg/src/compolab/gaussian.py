"""Gaussian networks on regular grid centers, fitted by ridge-regularized least squares."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial import cKDTree

from .errors import ConfigError, DegenerateInputError, ResourceError, SingularSystemError
from .targets import Box, CompositionalTarget, Vertex, children, tree_levels, tree_vertices

MAX_GRID_POINTS = 10**6
DEFAULT_LAMBDA = 1e-10
_BRUTE_FORCE_LIMIT = 4096


def _pairwise_min(P: np.ndarray) -> float:
    best = np.inf
    for i in range(len(P) - 1):
        diff = P[i + 1:] - P[i]
        best = min(best, float(np.min(np.sqrt(np.sum(diff * diff, axis=1)))))
    return best


def minimal_separation(points) -> float:
    """Smallest pairwise Euclidean distance; duplicates are rejected."""
    P = np.asarray(points, dtype=np.float64)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    if len(P) < 2:
        raise DegenerateInputError("minimal separation needs at least 2 points")
    if len(P) < _BRUTE_FORCE_LIMIT:
        sep = _pairwise_min(P)
    else:
        dist, _ = cKDTree(P).query(P, k=2)
        sep = float(dist[:, 1].min())
    if sep == 0.0:
        raise DegenerateInputError("duplicate points: minimal separation is 0")
    return sep


@dataclass(frozen=True)
class CenterSet:
    points: np.ndarray
    separation: float

    @classmethod
    def from_points(cls, points) -> "CenterSet":
        P = np.asarray(points, dtype=np.float64)
        if P.ndim == 1:
            P = P.reshape(-1, 1)
        return cls(P, minimal_separation(P))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return len(self.points)


def grid_centers(m: int, d: int, c: float = 1.0, max_points: int = MAX_GRID_POINTS) -> CenterSet:
    """Points ``j/m`` per axis for integers ``|j| <= c*m^2``, i.e. spacing 1/m on ``[-cm, cm]^d``."""
    if m < 1 or d < 1 or not c > 0:
        raise ConfigError(f"need m >= 1, d >= 1, c > 0; got m={m}, d={d}, c={c}")
    jmax = int(np.floor(c * m * m + 1e-9))
    if jmax < 1:
        raise DegenerateInputError(f"c*m^2 = {c * m * m:g} < 1 leaves a single center")
    per_axis = 2 * jmax + 1
    if per_axis**d > max_points:
        raise ResourceError(f"grid of {per_axis}^{d} points exceeds cap {max_points}")
    axis = np.arange(-jmax, jmax + 1) / m
    pts = np.array(list(itertools.product(axis, repeat=d)), dtype=np.float64).reshape(-1, d)
    return CenterSet(pts, 1.0 / m)


def gaussian_design(X: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """Matrix ``exp(-|x_i - c_k|^2)``."""
    X = np.asarray(X, dtype=np.float64)
    sq = (np.sum(X * X, axis=1)[:, None] + np.sum(centers * centers, axis=1)[None, :]
          - 2.0 * X @ centers.T)
    return np.exp(-np.maximum(sq, 0.0))


class GaussianNet:
    """``x -> sum_k a_k exp(-|x - x_k|^2)``."""

    kind = "gaussian"

    def __init__(self, centers: CenterSet, coeffs):
        self.centers = centers
        self.coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1)
        if self.coeffs.size != len(centers):
            raise ConfigError("one coefficient per center required")

    @property
    def input_dim(self) -> int:
        return self.centers.dim

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X.reshape(-1, self.input_dim)
        out = np.empty(len(X))
        # chunk rows to bound the design-matrix memory
        step = max(1, 2_000_000 // max(1, len(self.coeffs)))
        for lo in range(0, len(X), step):
            out[lo:lo + step] = gaussian_design(X[lo:lo + step], self.centers.points) @ self.coeffs
        return out


def default_samples(centers: CenterSet, oversample: int = 3) -> np.ndarray:
    """The centers plus a grid ``oversample`` times finer over their bounding box."""
    P = centers.points
    lo, hi = P.min(axis=0), P.max(axis=0)
    step = centers.separation / oversample
    axes = [np.arange(lo[j], hi[j] + step / 2, step) if hi[j] > lo[j] else np.array([lo[j]])
            for j in range(centers.dim)]
    grid = np.array(list(itertools.product(*axes)), dtype=np.float64).reshape(-1, centers.dim)
    return np.vstack([P, grid])


def fit_gaussian_coeffs(centers: CenterSet, samples, lam: float = DEFAULT_LAMBDA) -> GaussianNet:
    """Minimize ``sum (G(x_i) - y_i)^2 + lam |a|^2`` through Cholesky on the normal equations.

    The coefficients are a fixed linear map of the sample values ``y``.
    """
    X, y = samples
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if X.shape[1] != centers.dim:
        raise ConfigError(f"samples are {X.shape[1]}-dimensional, centers {centers.dim}-dimensional")
    if len(X) != y.size:
        raise ConfigError("sample points and values differ in length")
    if len(X) < len(centers):
        raise ConfigError(f"{len(X)} samples for {len(centers)} centers")
    if lam < 0:
        raise ConfigError("lambda must be >= 0")
    A = gaussian_design(X, centers.points)
    M = A.T @ A
    M[np.diag_indices_from(M)] += lam
    try:
        factor = linalg.cho_factor(M, lower=True, check_finite=True)
    except linalg.LinAlgError:
        raise SingularSystemError("normal equations are not positive definite; use lambda > 0") from None
    diag = np.abs(np.diag(factor[0]))
    if lam == 0 and diag.min() ** 2 < np.finfo(float).eps * len(M) * diag.max() ** 2:
        raise SingularSystemError("normal equations are numerically singular; use lambda > 0")
    return GaussianNet(centers, linalg.cho_solve(factor, A.T @ y))


# --- tree-structured Gaussian networks --------------------------------------


class TreeGaussianNet:
    """Binary tree of bivariate :class:`GaussianNet` nodes."""

    def __init__(self, d: int, node_nets: dict[Vertex, GaussianNet], leaf_order=None):
        self.d = d
        if set(node_nets) != set(tree_vertices(d)):
            raise ConfigError("node_nets must cover exactly the non-leaf vertices")
        self.node_nets = dict(node_nets)
        self.leaf_order = tuple(range(d)) if leaf_order is None else tuple(leaf_order)

    @property
    def vertices(self) -> list[Vertex]:
        return tree_vertices(self.d)

    def evaluate(self, X, intermediates: bool = False):
        X = np.asarray(X, dtype=np.float64)
        leaves = X[:, list(self.leaf_order)]
        values = [leaves[:, k] for k in range(self.d)]
        inter = {}
        for lvl in range(1, tree_levels(self.d) + 1):
            nxt = []
            for i in range(1, len(values) // 2 + 1):
                left, right = children((lvl, i))
                out = self.node_nets[(lvl, i)](np.stack([values[left - 1], values[right - 1]], axis=1))
                inter[(lvl, i)] = out
                nxt.append(out)
            values = nxt
        return (values[0], inter) if intermediates else values[0]

    def __call__(self, X) -> np.ndarray:
        return self.evaluate(X)


def fit_tree_gaussian(target: CompositionalTarget, centers, lam: float = DEFAULT_LAMBDA,
                      samples: dict | None = None) -> TreeGaussianNet:
    """Fit every node against its constituent function independently.

    ``centers`` is a single :class:`CenterSet` used for every node or a
    vertex-keyed mapping.  ``samples`` optionally maps vertices to 2-column
    sample arrays; the default is :func:`default_samples` of the node centers.
    """
    node_fns = getattr(target, "node_fns", None)
    if node_fns is None:
        raise ConfigError("target exposes no constituent functions; use end-to-end training instead")
    nets = {}
    for v in tree_vertices(target.d):
        if v not in node_fns:
            raise ConfigError(f"no constituent oracle for vertex {v}")
        cs = centers[v] if isinstance(centers, dict) else centers
        if cs.dim != 2:
            raise ConfigError(f"node centers must be 2-dimensional, vertex {v} has {cs.dim}")
        X = (samples or {}).get(v)
        if X is None:
            X = default_samples(cs)
        y = node_fns[v](X[:, 0], X[:, 1])
        nets[v] = fit_gaussian_coeffs(cs, (X, y), lam)
    return TreeGaussianNet(target.d, nets, target.leaf_order)


def sup_region(m: int, d: int, c: float = 1.0) -> tuple[Box, float]:
    """Box ``[-cm-3, cm+3]^d`` and grid spacing used to estimate sup norms on R^d."""
    half = c * m + 3.0
    return Box.cube(-half, half, d), min(0.05, 1.0 / (4 * m))


# --- plain-text serialization (same conventions as compolab.networks) -------


def dumps_gaussian(net: GaussianNet) -> str:
    cs = net.centers
    lines = [f"gaussian {cs.dim} {len(cs)} separation={float(cs.separation).hex()}"]
    lines.extend(float(v).hex() for v in cs.points.ravel())
    lines.extend(float(v).hex() for v in net.coeffs)
    return "\n".join(lines) + "\n"


def loads_gaussian(text: str) -> GaussianNet:
    lines = text.strip().splitlines()
    head = lines[0].split()
    if head[0] != "gaussian":
        raise ConfigError(f"not a gaussian network file: {head[0]!r}")
    d, n = int(head[1]), int(head[2])
    sep = float.fromhex(head[3].split("=", 1)[1])
    values = np.array([float.fromhex(s) for s in lines[1:]])
    if values.size != n * d + n:
        raise ConfigError("value count does not match header")
    cs = CenterSet(values[: n * d].reshape(n, d), sep)
    return GaussianNet(cs, values[n * d:])
