"""Inverse-branch systems: the common currency of coding, spectral and flow code.

A :class:`BranchSystem` is a finite list of explicit inverse branches plus
optional parabolic *families* ``psi o tau^n`` (``tau`` a translation).  Members
of a family beyond the explicit cutoff are summed analytically through the
Hurwitz zeta function, so the Gauss system never has to be truncated.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .geometry import (Affine, Inversive, MobiusMap, PoleError, apply_many, compose,
                       deriv_many, identity, invert)

# Bernoulli numbers B_2, B_4, ..., B_20
_BERNOULLI = [1 / 6, -1 / 30, 1 / 42, -1 / 30, 5 / 66, -691 / 2730, 7 / 6, -3617 / 510,
              43867 / 798, -174611 / 330]


def hurwitz_zeta(s, q) -> np.ndarray:
    """zeta(s, q) = sum_{k>=0} (q+k)^-s for complex s != 1 and real q > 0 (vectorized in q)."""
    s = complex(s)
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise ValueError("hurwitz_zeta needs q > 0")
    if abs(s - 1) < 1e-14:
        raise ValueError("hurwitz_zeta has a pole at s = 1")
    shift = int(max(0, math.ceil(25 + abs(s) - float(q.min()))))
    out = np.zeros(q.shape, dtype=complex)
    for k in range(shift):
        out += np.exp(-s * np.log(q + k))
    Q = q + shift
    logQ = np.log(Q)
    out += np.exp((1 - s) * logQ) / (s - 1) + 0.5 * np.exp(-s * logQ)
    rising = s
    fact = 2.0
    for j, b in enumerate(_BERNOULLI, start=1):
        out += b / fact * rising * np.exp(-(s + 2 * j - 1) * logQ)
        rising *= (s + 2 * j - 1) * (s + 2 * j)
        fact *= (2 * j + 1) * (2 * j + 2)
    if s.imag == 0:
        return out.real
    return out


@dataclass(frozen=True, eq=False)
class Box:
    """Closed coordinate box ``[lo, hi]`` in R^d."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lo, dtype=float))
        hi = np.atleast_1d(np.asarray(self.hi, dtype=float))
        if lo.shape != hi.shape or np.any(hi <= lo):
            raise ValueError("box needs lo < hi coordinatewise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def contains(self, X: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.all((X >= self.lo - tol) & (X <= self.hi + tol), axis=1)

    def boundary_distance(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return np.minimum(X - self.lo, self.hi - X).min(axis=1)

    def nearest(self, x: np.ndarray) -> np.ndarray:
        return np.clip(x, self.lo, self.hi)

    def corners(self) -> np.ndarray:
        d = self.dim
        idx = np.array(np.meshgrid(*[[0, 1]] * d, indexing="ij")).reshape(d, -1).T
        return np.where(idx == 0, self.lo, self.hi)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.lo + (self.hi - self.lo) * rng.random((n, self.dim))

    def distance_to(self, x: np.ndarray) -> float:
        return float(np.linalg.norm(x - self.nearest(x)))


@dataclass(eq=False)
class Branch:
    """Inverse branch mapping domain ``source`` into a cell of domain ``target``."""

    map: MobiusMap
    word: tuple = ()
    source: int = 0
    target: int = 0
    family: int = -1
    member: int = 0


@dataclass(eq=False)
class BranchFamily:
    """The maps ``base o step^n`` for n >= ``start``; members below ``tail_from`` are explicit."""

    base: MobiusMap
    step: Affine
    start: int
    tail_from: int
    base_word: tuple = ()
    step_word: tuple = ()
    source: int = 0
    target: int = 0

    def member(self, n: int) -> MobiusMap:
        return compose(self.base, Affine.translation(n * self.step.shift))

    def member_word(self, n: int) -> tuple:
        if n >= 0:
            return tuple(self.base_word) + tuple(self.step_word) * n
        inv = tuple(-x for x in reversed(self.step_word))
        return tuple(self.base_word) + inv * (-n)

    @property
    def limit_point(self) -> np.ndarray:
        return self.base.p

    def _offsets(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, float]:
        """Write |x + n v - p'|^2 = |v|^2 ((n + c)^2 + q^2)."""
        v = self.step.shift
        v2 = float(v @ v)
        diff = X - self.base.p_inv
        c = diff @ v / v2
        q2 = np.maximum(np.einsum("ij,ij->i", diff, diff) / v2 - c ** 2, 0.0)
        return c, q2, v2

    def tail_weights(self, X: np.ndarray, exponent: complex, order: int = 3) -> np.ndarray:
        """Coefficients c_k(x) with sum_{n>=tail_from} |g_n'(x)|^a u(g_n x) ~ sum_k c_k u^(k)(p)/k!.

        Exact expansion for d = 1; for d >= 2 only the order-0 term is kept,
        with the first correction in the transverse offset.
        """
        if not isinstance(self.base, Inversive):
            raise ValueError("family base must move infinity")
        X = np.atleast_2d(X)
        c, q2, v2 = self._offsets(X)
        q = self.tail_from + c
        if np.any(q <= 0):
            raise ValueError("tail starts before the family leaves the domain")
        a = complex(exponent)
        pref = np.exp(a * (math.log(self.base.h) - math.log(v2)))
        d = X.shape[1]
        if d == 1:
            ratio = self.base.h * self.base.A[0, 0] / self.step.shift[0]
            out = np.zeros((order + 1, X.shape[0]), dtype=complex)
            for k in range(order + 1):
                out[k] = pref * ratio ** k * hurwitz_zeta(2 * a + k, q)
            return out
        z0 = hurwitz_zeta(2 * a, q) - a * q2 * hurwitz_zeta(2 * a + 2, q)
        return (pref * z0)[None, :]

    def tail_quadrature(self, X: np.ndarray, exponent: complex) -> tuple[np.ndarray, np.ndarray]:
        """Two-point rule: sum_{n>=tail_from} |g_n'(x)|^a u(g_n x) ~ sum_j W_j u(p + T_j)  (d = 1).

        Nodes come from the Gaussian rule of the real-exponent moments; weights
        match the zeroth and first moments at the actual (possibly complex) exponent.
        """
        a = complex(exponent)
        real = self.tail_weights(X, a.real, 3).real
        m0, m1, m2, m3 = real
        det = m0 * m2 - m1 ** 2
        tiny = det <= 1e-14 * np.maximum(m0 * m2, 1e-300)
        det = np.where(tiny, 1.0, det)
        alpha = (m1 * m2 - m0 * m3) / det
        beta = (m1 * m3 - m2 ** 2) / det
        disc = np.sqrt(np.maximum(alpha ** 2 / 4 - beta, 0.0))
        t1, t2 = -alpha / 2 - disc, -alpha / 2 + disc
        mean = m1 / m0
        t1 = np.where(tiny, mean, t1)
        t2 = np.where(tiny, mean, t2)
        c0, c1 = (self.tail_weights(X, a, 1) if a.imag else real[:2])
        span = np.where(np.abs(t2 - t1) > 0, t2 - t1, 1.0)
        w2 = np.where(np.abs(t2 - t1) > 0, (c1 - c0 * t1) / span, 0.0)
        w1 = c0 - w2
        return np.stack([t1, t2], axis=1), np.stack([w1, w2], axis=1)

    def tail_sup(self, box: Box, exponent: float) -> float:
        """sum_{n>=tail_from} sup_box |g_n'|^a, via the nearest box point to each pole."""
        v = self.step.shift
        v2 = float(v @ v)
        c = min(float((x - self.base.p_inv) @ v) / v2 for x in box.corners())
        q = self.tail_from + c
        if q <= 0:
            raise ValueError("tail starts before the family leaves the domain")
        return float(np.real((self.base.h / v2) ** exponent * hurwitz_zeta(2 * exponent, q)))


@dataclass(eq=False)
class BranchSystem:
    """Explicit branches plus parabolic families on one or more domains."""

    domains: list
    branches: list
    families: list = field(default_factory=list)
    name: str = "system"

    def __post_init__(self):
        if not self.domains:
            raise ValueError("at least one domain is required")
        self.domains = [d if isinstance(d, Box) else Box(*d) for d in self.domains]

    @property
    def dim(self) -> int:
        return self.domains[0].dim

    @property
    def domain(self) -> Box:
        return self.domains[0]

    def __len__(self) -> int:
        return len(self.branches)

    def sup_derivatives(self) -> np.ndarray:
        return np.array([sup_derivative(b.map, self.domains[b.source]) for b in self.branches])

    def restricted(self, keep: Sequence[int]) -> "BranchSystem":
        keep = list(keep)
        return BranchSystem(self.domains, [self.branches[i] for i in keep], [], self.name)


def sup_derivative(m: MobiusMap, box: Box) -> float:
    """sup over the box of |m'|, attained at the box point nearest the pole."""
    if isinstance(m, Affine):
        return m.scale
    dist = box.distance_to(m.p_inv)
    if dist == 0.0:
        return math.inf
    return m.h / dist ** 2


def family_system(base: MobiusMap, step: Affine, start: int, count: int, box: Box,
                  base_word: tuple = (), step_word: tuple = (), name: str = "family") -> BranchSystem:
    """System made of one family with ``count`` explicit members and an analytic tail."""
    fam = BranchFamily(base, step, start, start + count, base_word, step_word)
    branches = [Branch(fam.member(n), fam.member_word(n), family=0, member=n)
                for n in range(start, start + count)]
    return BranchSystem([box], branches, [fam], name)


def gauss_system(explicit: int = 200, start: int = 1) -> BranchSystem:
    """Branches x -> 1/(n + x), n >= start, on [0, 1]."""
    base = Inversive([0.0], [0.0], 1.0, [[1.0]])
    return family_system(base, Affine.translation([1.0]), start, explicit, Box([0.0], [1.0]),
                         name="gauss")


def alphabet_system(digits: Sequence[int]) -> BranchSystem:
    """Finite continued-fraction system with branches x -> 1/(n + x), n in digits."""
    base = Inversive([0.0], [0.0], 1.0, [[1.0]])
    branches = [Branch(compose(base, Affine.translation([float(n)])), (n,), member=n)
                for n in digits]
    return BranchSystem([Box([0.0], [1.0])], branches, [], name=f"alphabet{list(digits)}")


def similarity_system(ratio: float, shifts: Sequence, box: Box) -> BranchSystem:
    """Self-similar IFS x -> ratio * x + shift."""
    d = box.dim
    branches = [Branch(Affine(np.eye(d), np.asarray(s, float), ratio), (i + 1,))
                for i, s in enumerate(shifts)]
    return BranchSystem([box], branches, [], name="similarity")


def images(system: BranchSystem, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Arrays (branch, point, d) of images and (branch, point) of log|g'| at X."""
    X = np.atleast_2d(X)
    Y = np.empty((len(system.branches),) + X.shape)
    L = np.empty((len(system.branches), X.shape[0]))
    for j, b in enumerate(system.branches):
        Y[j] = apply_many(b.map, X)
        with np.errstate(divide="ignore"):
            L[j] = np.log(deriv_many(b.map, X))
    if not np.all(np.isfinite(L)):
        raise PoleError("a sample point is the pole of a branch")
    return Y, L


def compose_branch(outer: Branch, inner: Branch) -> Branch:
    """The branch ``outer o inner`` (inner applied first in the branch direction)."""
    return Branch(compose(outer.map, inner.map), tuple(outer.word) + tuple(inner.word),
                  source=inner.source, target=outer.target)


def expanding_map(branch: Branch) -> MobiusMap:
    return invert(branch.map)


__all__ = ["Box", "Branch", "BranchFamily", "BranchSystem", "alphabet_system",
           "compose_branch", "expanding_map", "family_system", "gauss_system", "hurwitz_zeta",
           "images", "similarity_system", "sup_derivative", "identity"]
