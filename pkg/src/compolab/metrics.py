"""Error norms, scaling-exponent fits, predicted rates and VC-dimension bounds."""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import ConfigError
from .targets import Box, Vertex, tree_vertices

MIN_RESOLUTION = 1000


class SupNormEstimate(NamedTuple):
    """Max of ``|f - g|`` over ``n_samples`` points: a lower estimate of the true sup."""

    value: float
    n_samples: int


def default_resolution(d: int) -> tuple[str, int]:
    return ("grid", 10**4) if d <= 2 else ("quasirandom", 10**5)


def sample_domain(domain: Box, method: str = "grid", resolution: int | None = None, seed: int = 0) -> np.ndarray:
    d = domain.dim
    if resolution is None:
        method, resolution = default_resolution(d)
    if resolution < MIN_RESOLUTION:
        raise ConfigError(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    lo, hi = np.array(domain.lower), np.array(domain.upper)
    if method == "grid":
        per_axis = int(np.ceil(resolution ** (1.0 / d) - 1e-9))
        axes = [np.linspace(lo[j], hi[j], per_axis) for j in range(d)]
        return np.array(list(itertools.product(*axes))) if d > 1 else axes[0].reshape(-1, 1)
    if method == "quasirandom":
        # rounded up to a power of two, where Sobol points keep their balance properties
        sob = qmc.Sobol(d, scramble=True, seed=seed)
        pts = sob.random_base2(int(np.ceil(np.log2(resolution))))
        return qmc.scale(pts, lo, hi)
    raise ConfigError(f"unknown sampling method {method!r}")


def sup_norm_error(f: Callable, g: Callable, domain: Box, method: str = "grid",
                   resolution: int | None = None, seed: int = 0) -> SupNormEstimate:
    """Largest ``|f(x) - g(x)|`` over a grid or scrambled Sobol sample of ``domain``."""
    X = sample_domain(domain, method, resolution, seed)
    diff = np.asarray(f(X), dtype=np.float64) - np.asarray(g(X), dtype=np.float64)
    if diff.shape != (len(X),):
        raise ConfigError(f"functions must map ({len(X)}, {domain.dim}) inputs to ({len(X)},) outputs")
    return SupNormEstimate(float(np.max(np.abs(diff))), len(X))


def _bivariate(fn):
    return lambda X: fn(X[:, 0], X[:, 1])


def tree_error(target, net, domains: dict[Vertex, Box] | None = None, resolution: int | None = None):
    """Sum over vertices of the per-node sup error between constituent and node net.

    Returns ``(total, per_node)``; per-node domains default to ``[-1, 1]^2``.
    """
    if getattr(net, "d", None) != target.d or set(net.node_nets) != set(target.node_fns):
        raise ConfigError("target and network topologies differ")
    per_node = {}
    for v in tree_vertices(target.d):
        box = (domains or {}).get(v, Box.cube(-1.0, 1.0, 2))
        per_node[v] = sup_norm_error(_bivariate(target.node_fns[v]), net.node_nets[v], box,
                                     resolution=resolution).value
    return float(sum(per_node.values())), per_node


# --- scaling laws -------------------------------------------------------------


def predicted_exponents(r: int, d: int) -> tuple[float, float]:
    """Rates ``-r/d`` for shallow nets and ``-r/2`` for binary-tree nets."""
    if r < 1 or d < 2:
        raise ConfigError(f"need r >= 1 and d >= 2, got r={r}, d={d}")
    return -r / d, -r / 2


@dataclass(frozen=True)
class ScalingPrediction:
    r: float
    d_eff: int
    # smoothness class under which the rate holds; recorded, never verified
    smoothness: str = "W_{r,d}"

    @property
    def predicted_exponent(self) -> float:
        return -self.r / self.d_eff


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    residual: float


def fit_scaling_exponent(pairs: Sequence[tuple[float, float]]) -> ExponentFit:
    """Least-squares line through ``(log n, log e)``; ``residual`` is the RMS misfit."""
    arr = np.asarray(pairs, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2 or len(arr) < 3:
        raise ConfigError("need at least 3 (n, error) pairs")
    if np.any(arr <= 0) or not np.all(np.isfinite(arr)):
        raise ConfigError("complexities and errors must be positive and finite")
    lx, ly = np.log(arr[:, 0]), np.log(arr[:, 1])
    xm, ym = lx.mean(), ly.mean()
    sxx = np.sum((lx - xm) ** 2)
    if sxx == 0:
        raise ConfigError("complexities must not all be equal")
    slope = float(np.sum((lx - xm) * (ly - ym)) / sxx)
    intercept = float(ym - slope * xm)
    resid = float(np.sqrt(np.mean((ly - (intercept + slope * lx)) ** 2)))
    return ExponentFit(slope, intercept, resid)


@dataclass
class ScalingRun:
    """Measured errors against complexity with the fitted and predicted exponents."""

    label: str
    complexities: list[float]
    errors: list[float]
    prediction: ScalingPrediction
    surrogates: list[str] = field(default_factory=list)
    seeds: list[int] = field(default_factory=list)

    def __post_init__(self):
        if len(self.complexities) != len(self.errors):
            raise ConfigError("complexities and errors differ in length")
        if any(b <= a for a, b in zip(self.complexities, self.complexities[1:])):
            raise ConfigError("complexities must be strictly increasing")
        if not self.surrogates:
            self.surrogates = ["unspecified"] * len(self.errors)
        if not self.seeds:
            self.seeds = [0] * len(self.errors)

    @property
    def fit(self) -> ExponentFit:
        return fit_scaling_exponent(list(zip(self.complexities, self.errors)))

    def to_csv(self) -> str:
        slope = self.fit.slope
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "error", "surrogate", "seed", "predicted_exponent", "fitted_slope"])
        for n, e, s, seed in zip(self.complexities, self.errors, self.surrogates, self.seeds):
            w.writerow([repr(float(n)), repr(float(e)), s, seed, repr(float(self.prediction.predicted_exponent)), repr(float(slope))])
        return buf.getvalue()


# --- VC dimension -------------------------------------------------------------


def vc_bounds(kind: str, d: int, n: int) -> int:
    """``(d+2) N^2`` for a shallow net with N units; ``4 n^2 (d-1)^2`` for a tree with n per node."""
    if d < 1 or n < 1:
        raise ConfigError("d and N must be positive")
    if kind == "shallow":
        return (d + 2) * n * n
    if kind == "tree":
        return 4 * n * n * (d - 1) ** 2
    raise ConfigError(f"unknown network kind {kind!r}")


# --- Lipschitz propagation through a composition ----------------------------


def _phi1(u, v):
    return np.sin(1.0 + u - v)


def _phi2(u, v):
    return np.cos(u + v)


@dataclass
class CompositionTable:
    eps: list[float]
    errors: list[float]
    slope: float | None


def composition_lipschitz_test(h, h1, h2, eps_list, perturbations=(_phi1, _phi2),
                               box: Box | None = None, per_axis: int = 25) -> CompositionTable:
    """Sup error of ``h(h1 + e p1, h2 + e p2)`` against ``h(h1, h2)`` for each ``e``.

    ``h1`` acts on ``(x1, x2)`` and ``h2`` on ``(x3, x4)``; both are sampled on
    a ``per_axis^2`` grid of ``box`` (default ``[-1,1]^2``) and combined over
    all pairs, i.e. the full 4-D product grid.  The default perturbations have
    sup norm exactly 1 on ``[-1,1]^2``.
    """
    eps_list = [float(e) for e in eps_list]
    if not eps_list:
        raise ConfigError("empty epsilon list")
    box = box or Box.cube(-1.0, 1.0, 2)
    t = [np.linspace(box.lower[j], box.upper[j], per_axis) for j in range(2)]
    U, V = (a.ravel() for a in np.meshgrid(*t, indexing="ij"))
    a0, b0 = h1(U, V), h2(U, V)
    p1, p2 = perturbations[0](U, V), perturbations[1](U, V)
    base = h(a0[:, None], b0[None, :])
    errors = []
    for e in eps_list:
        pert = h((a0 + e * p1)[:, None], (b0 + e * p2)[None, :])
        errors.append(float(np.max(np.abs(pert - base))))
    pos = [(e, err) for e, err in zip(eps_list, errors) if e > 0 and err > 0]
    slope = None
    if len(pos) >= 2:
        lx, ly = np.log([p[0] for p in pos]), np.log([p[1] for p in pos])
        slope = float(np.polyfit(lx, ly, 1)[0])
    return CompositionTable(eps_list, errors, slope)
