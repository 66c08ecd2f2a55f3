"""Layered operators built from one repeated bivariate block.

Each layer applies the block to adjacent disjoint pairs, halving the width, so
an operator of depth ``M`` consumes ``2**M`` inputs and performs ``2**M - 1``
block evaluations.  In the mirror variant the right half of every layer uses
the block with its arguments swapped.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ConfigError
from .targets import CompositionalTarget, build_tree_target, tree_vertices

BlockFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def apply_layer(block: BlockFn, x, mirror: bool = False) -> np.ndarray:
    """``out[i] = H(x[2i], x[2i+1])``; mirrored pairs in the right half are swapped.

    ``x`` may be a vector or a batch with the pairs along the last axis.
    """
    x = np.asarray(x, dtype=np.float64)
    w = x.shape[-1]
    if w < 2 or w % 2:
        raise ConfigError(f"layer input length must be even and >= 2, got {w}")
    left, right = x[..., 0::2], x[..., 1::2]
    if not mirror or w == 2:
        return np.asarray(block(left, right), dtype=np.float64)
    half = w // 4 if (w // 2) % 2 == 0 else None
    if half is None:
        raise ConfigError("mirror layers need an even number of blocks")
    first = block(left[..., :half], right[..., :half])
    second = block(right[..., half:], left[..., half:])
    return np.concatenate([np.asarray(first, dtype=np.float64), np.asarray(second, dtype=np.float64)], axis=-1)


@dataclass(frozen=True)
class ScalableOperator:
    block: BlockFn
    M: int
    mirror: bool = False

    @property
    def input_width(self) -> int:
        return 2**self.M

    @property
    def block_applications(self) -> int:
        return 2**self.M - 1

    def __call__(self, x) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.input_width:
            raise ConfigError(f"operator expects {self.input_width} inputs, got {x.shape[-1]}")
        for _ in range(self.M):
            x = apply_layer(self.block, x, self.mirror)
        out = x[..., 0]
        return float(out) if out.ndim == 0 else out


def build_scalable_operator(block: BlockFn, M: int, mirror: bool = False) -> ScalableOperator:
    if M < 1:
        raise ConfigError(f"depth M must be >= 1, got {M}")
    return ScalableOperator(block, int(M), bool(mirror))


@dataclass
class ShiftCheck:
    passed: bool
    counterexample: np.ndarray | None = None


def check_shift_invariance(block: BlockFn, width: int, trials: int = 100, mirror: bool = False,
                           seed: int = 0, layer: Callable | None = None) -> ShiftCheck:
    """Test ``L(x + y) == L(x) + L(y)`` (``+`` = concatenation) on random halves.

    ``layer`` defaults to :func:`apply_layer`; passing another layer function
    makes negative controls possible.  In mirror mode the right half is
    compared against the mirrored layer ``R o H`` applied to ``y``.
    """
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if width < 4 or width % 4:
        raise ConfigError(f"width must be a multiple of 4, got {width}")
    layer = layer or (lambda x: apply_layer(block, x, mirror))
    rng = np.random.default_rng(seed)
    half = width // 2
    for _ in range(trials):
        z = rng.uniform(-1.0, 1.0, width)
        x, y = z[:half], z[half:]
        whole = layer(z)
        lx = apply_layer(block, x)
        ly = apply_layer(lambda a, b: block(b, a), y) if mirror else apply_layer(block, y)
        if not np.array_equal(whole, np.concatenate([lx, ly])):
            return ShiftCheck(False, z)
    return ShiftCheck(True)


def operator_as_tree_target(op: ScalableOperator) -> CompositionalTarget:
    """The balanced-tree target computing ``op``; mirrored nodes swap their arguments."""
    d = op.input_width
    fns = {}
    for v in tree_vertices(d):
        lvl, i = v
        blocks = d // 2**lvl
        if op.mirror and blocks >= 2 and i > blocks // 2:
            fns[v] = _Swapped(op.block)
        else:
            fns[v] = op.block
    return build_tree_target(d, fns, label=f"scalable(M={op.M},mirror={op.mirror})")


class _Swapped:
    def __init__(self, block):
        self.block = block

    def __call__(self, a, b):
        return self.block(b, a)
