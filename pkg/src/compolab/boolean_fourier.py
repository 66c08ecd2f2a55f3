"""Exact Fourier expansion of functions on the Boolean cube {-1, 1}^n.

Points and subsets are both encoded as n-bit masks.  Bit ``i`` of a point
index set means ``x_{i+1} = -1``; bit ``i`` of a subset mask means variable
``i+1`` belongs to ``S``.  With this encoding the character is
``chi_S(x) = (-1)^popcount(S & x)`` and the transform is the natural-order
Walsh-Hadamard matrix.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError

MAX_VARS = 20


def fwht(values: np.ndarray) -> np.ndarray:
    """Unnormalized fast Walsh-Hadamard transform on a private copy."""
    a = np.array(values, dtype=np.float64)
    n = a.size
    if n & (n - 1):
        raise ConfigError(f"length must be a power of 2, got {n}")
    h = 1
    while h < n:
        a = a.reshape(-1, 2, h)
        a = np.stack([a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]], axis=1)
        h *= 2
    return a.reshape(n)


def cube_points(n: int) -> np.ndarray:
    """All points of {-1,1}^n as rows, ordered by their bitmask index."""
    idx = np.arange(2**n)[:, None]
    bits = (idx >> np.arange(n)[None, :]) & 1
    return 1 - 2 * bits


def subset_of(mask: int) -> tuple[int, ...]:
    return tuple(i + 1 for i in range(mask.bit_length()) if mask >> i & 1)


def mask_of(subset) -> int:
    return sum(1 << (i - 1) for i in set(subset))


@dataclass
class FourierTable:
    """Coefficients ``f^(S)`` indexed by subset bitmask."""

    n: int
    coeffs: np.ndarray

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=np.float64)
        if not 0 <= self.n <= MAX_VARS or self.coeffs.shape != (2**self.n,):
            raise ConfigError(f"table for n={self.n} needs {2**self.n} coefficients")

    def __getitem__(self, subset) -> float:
        return float(self.coeffs[mask_of(subset)])

    def degrees(self) -> np.ndarray:
        masks = np.arange(2**self.n)
        return np.array([bin(m).count("1") for m in masks])

    def squared_norm(self) -> float:
        return float(np.sum(self.coeffs**2))

    def nonzero(self, tol: float = 0.0) -> dict[tuple[int, ...], float]:
        return {subset_of(m): float(c) for m, c in enumerate(self.coeffs) if abs(c) > tol}

    def values(self) -> np.ndarray:
        """``f`` at every cube point, in bitmask order (inverse transform)."""
        return fwht(self.coeffs)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["subset_mask", "coefficient"])
        width = max(1, (self.n + 3) // 4)
        for m, c in enumerate(self.coeffs):
            w.writerow([f"0x{m:0{width}x}", repr(float(c))])
        return buf.getvalue()

    @classmethod
    def empty(cls, n: int) -> "FourierTable":
        return cls(n, np.zeros(2**n))


def fourier_expand(f: Callable[[np.ndarray], np.ndarray] | np.ndarray, n: int) -> FourierTable:
    """Expand ``f`` given as a batched function of ``(2^n, n)`` points or a truth table."""
    if not isinstance(n, (int, np.integer)) or not 0 <= n <= MAX_VARS:
        raise ConfigError(f"n must lie in [0, {MAX_VARS}], got {n!r}")
    vals = np.asarray(f if not callable(f) else f(cube_points(n)), dtype=np.float64).reshape(-1)
    if vals.size != 2**n:
        raise ConfigError(f"expected {2**n} function values, got {vals.size}")
    return FourierTable(n, fwht(vals) / 2**n)


def reconstruct(table: FourierTable, x) -> float:
    """``sum_S f^(S) prod_{i in S} x_i`` at a single point of the cube."""
    x = np.asarray(x)
    if x.shape != (table.n,) or not np.all((x == 1) | (x == -1)):
        raise ConfigError(f"point must be a length-{table.n} vector with entries in {{-1, 1}}")
    point = int(np.sum((x == -1) << np.arange(table.n))) if table.n else 0
    masks = np.arange(2**table.n)
    parity = np.array([bin(m & point).count("1") & 1 for m in masks])
    return float(np.sum(table.coeffs * (1 - 2 * parity)))


def _lex_rank(n: int) -> np.ndarray:
    """Rank of each mask when subsets are sorted as increasing tuples."""
    order = sorted(range(2**n), key=subset_of)
    rank = np.empty(2**n, dtype=np.int64)
    rank[order] = np.arange(2**n)
    return rank


def low_order_approx(table: FourierTable, k: int) -> tuple[FourierTable, float]:
    """Keep coefficients of degree <= k; error is the dropped squared mass."""
    if not 0 <= k <= table.n:
        raise ConfigError(f"degree bound must lie in [0, {table.n}], got {k}")
    keep = table.degrees() <= k
    approx = FourierTable(table.n, np.where(keep, table.coeffs, 0.0))
    return approx, float(np.sum(table.coeffs[~keep] ** 2))


def sparse_approx(table: FourierTable, t: int) -> tuple[FourierTable, float]:
    """Keep the ``t`` largest-magnitude coefficients, ties to the lexicographically first subset."""
    size = 2**table.n
    if not 1 <= t <= size:
        raise ConfigError(f"coefficient count must lie in [1, {size}], got {t}")
    order = np.lexsort((_lex_rank(table.n), -np.abs(table.coeffs)))
    keep = np.zeros(size, dtype=bool)
    keep[order[:t]] = True
    approx = FourierTable(table.n, np.where(keep, table.coeffs, 0.0))
    return approx, float(np.sum(table.coeffs[~keep] ** 2))


# --- example Boolean functions ---------------------------------------------


def parity(X: np.ndarray) -> np.ndarray:
    return np.prod(X, axis=1).astype(np.float64)


def majority(X: np.ndarray) -> np.ndarray:
    return np.sign(np.sum(X, axis=1)).astype(np.float64)


def conjunction(X: np.ndarray) -> np.ndarray:
    """+1 iff every coordinate is +1."""
    return np.where(np.all(X == 1, axis=1), 1.0, -1.0)


def random_function(n: int, seed: int) -> np.ndarray:
    """Truth table with values uniform on [-1, 1]."""
    return np.random.default_rng(seed).uniform(-1.0, 1.0, 2**n)


BOOLEAN_FUNCTIONS = {"parity": parity, "majority": majority, "and": conjunction}
