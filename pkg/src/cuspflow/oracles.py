"""Dimension estimates independent of the transfer-operator machinery.

Used as cross-checks: they only touch continued-fraction cylinder lengths.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import brentq


def cylinder_lengths(digits: Sequence[int], depth: int) -> np.ndarray:
    """Lengths of the depth-n cylinders [a_1, ..., a_n] of [0, 1] over the given digits.

    The cylinder has endpoints p_n/q_n and (p_n + p_{n-1})/(q_n + q_{n-1}), so
    its length is 1 / (q_n (q_n + q_{n-1})).
    """
    digits = np.asarray(list(digits), dtype=float)
    q_prev = np.array([0.0])
    q = np.array([1.0])
    for _ in range(depth):
        q_new = (digits[None, :] * q[:, None] + q_prev[:, None]).ravel()
        q_prev = np.repeat(q, digits.size)
        q = q_new
    return 1.0 / (q * (q + q_prev))


@dataclass
class CoverEstimate:
    depths: list
    estimates: list
    box_slope: float

    @property
    def delta(self) -> float:
        return self.estimates[-1]


def _cover_root(short: np.ndarray, long: np.ndarray) -> float:
    """s with sum |I|^s equal at two consecutive depths."""
    ls, ll = np.log(short), np.log(long)

    def f(s):
        return math.log(np.sum(np.exp(s * ll))) - math.log(np.sum(np.exp(s * ls)))

    return brentq(f, 1e-9, 4.0, xtol=1e-14)


def cover_dimension(digits: Sequence[int], depth: int = 16, min_depth: int = 12) -> CoverEstimate:
    """Nested-interval cover estimate: the exponent balancing cover sums at depths n and n+1.

    Also returns a plain box-counting slope from the deepest cover (slowly
    convergent; reported for reference only).
    """
    if len(digits) < 2:
        return CoverEstimate([depth], [0.0], 0.0)
    if depth < min_depth:
        raise ValueError(f"depth must be at least {min_depth}")
    lengths = {n: cylinder_lengths(digits, n) for n in range(min_depth - 1, depth + 1)}
    depths, est = [], []
    for n in range(min_depth, depth + 1):
        depths.append(n)
        est.append(_cover_root(lengths[n - 1], lengths[n]))
    deepest = lengths[depth]
    eps = np.geomspace(deepest.max() * 4, deepest.max() * 64, 5)
    counts = [_box_count(digits, depth, e) for e in eps]
    box = float(-np.polyfit(np.log(eps), np.log(counts), 1)[0])
    return CoverEstimate(depths, est, box)


def _box_count(digits, depth: int, eps: float) -> int:
    """Mesh boxes of side eps met by the depth-n cylinders."""
    digits = np.asarray(list(digits), dtype=float)
    p_prev, p = np.array([1.0]), np.array([0.0])
    q_prev, q = np.array([0.0]), np.array([1.0])
    for _ in range(depth):
        p_new = (digits[None, :] * p[:, None] + p_prev[:, None]).ravel()
        q_new = (digits[None, :] * q[:, None] + q_prev[:, None]).ravel()
        p_prev, q_prev = np.repeat(p, digits.size), np.repeat(q, digits.size)
        p, q = p_new, q_new
    a, b = p / q, (p + p_prev) / (q + q_prev)
    lo, hi = np.floor(np.minimum(a, b) / eps), np.floor(np.maximum(a, b) / eps)
    boxes = set()
    for x, y in zip(lo.astype(np.int64), hi.astype(np.int64)):
        boxes.update(range(x, y + 1))
    return len(boxes)
