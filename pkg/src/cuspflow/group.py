"""Geometrically finite groups: generators, cusp charts, words, parabolic points.

Words are tuples of signed generator indices: ``k`` is generator ``k-1`` and
``-k`` its inverse.  A word acts as the composition left to right, so
``(1, 2)`` is the map ``g0 o g1``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .geometry import (INF, Affine, HalfSpacePoint, Inversive, MobiusMap, TOL, apply,
                       compose, hyperbolic_distance, identity, invert, is_inf)

log = logging.getLogger(__name__)

Word = tuple


class EnumerationBudgetError(RuntimeError):
    """The word ball exceeded the configured element cap."""


@dataclass(eq=False)
class CuspChart:
    """Chart ``g`` sending the cusp ``p`` to infinity, with its stabilizer lattice.

    In chart coordinates the fundamental domain is ``B_Y(y_radius) x Z0`` where
    the last ``rank`` coordinates carry the translation lattice and
    ``Z0 = origin + [0,1)^rank . lattice_vectors``.
    """

    p: object
    chart: MobiusMap
    rank: int
    lattice_words: tuple
    origin: np.ndarray
    y_radius: float = 0.0
    lattice: tuple = ()

    def __post_init__(self):
        d = self.chart.dim
        if not 1 <= self.rank <= d:
            raise ValueError(f"cusp rank must lie in [1, {d}]")
        self.origin = np.atleast_1d(np.asarray(self.origin, dtype=float))
        if self.origin.shape != (self.rank,):
            raise ValueError("origin must have one coordinate per lattice direction")
        if len(self.lattice_words) != self.rank:
            raise ValueError("need one lattice word per lattice direction")
        if not is_inf(apply(self.chart, self.p)):
            raise ValueError("chart must send its cusp to infinity")

    @property
    def dim(self) -> int:
        return self.chart.dim

    @property
    def vectors(self) -> np.ndarray:
        """Lattice translation vectors in Z coordinates, one per row."""
        k = self.rank
        return np.array([t.shift[-k:] for t in self.lattice])

    def split(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        k = self.rank
        return x[: self.dim - k], x[self.dim - k:]

    def lattice_coords(self, z: np.ndarray) -> np.ndarray:
        return np.linalg.solve(self.vectors.T, np.asarray(z, dtype=float) - self.origin)

    def reduce(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Integer lattice vector n with ``x - n.V`` in the fundamental cell."""
        _, z = self.split(np.asarray(x, dtype=float))
        t = self.lattice_coords(z)
        n = np.floor(t + 1e-12).astype(int)
        shifted = np.array(x, dtype=float)
        shifted[self.dim - self.rank:] = z - n @ self.vectors
        return n, shifted

    def contains(self, x, closed: bool = True) -> bool:
        """Membership of a chart-coordinate point in the fundamental box."""
        if is_inf(x):
            return False
        y, z = self.split(np.asarray(x, dtype=float))
        if y.size and np.linalg.norm(y) > self.y_radius + TOL.structural:
            return False
        t = self.lattice_coords(z)
        eps = TOL.structural
        if closed:
            return bool(np.all(t >= -eps) and np.all(t <= 1 + eps))
        return bool(np.all(t >= 0) and np.all(t < 1))

    def lattice_map(self, n) -> Affine:
        v = np.asarray(n, dtype=float) @ self.vectors
        shift = np.zeros(self.dim)
        shift[self.dim - self.rank:] = v
        return Affine.translation(shift)

    def box_corners(self) -> np.ndarray:
        """Corners of the Z-cell (with Y at the centre), chart coordinates."""
        k, d = self.rank, self.dim
        corners = []
        for bits in itertools.product([0, 1], repeat=k):
            x = np.zeros(d)
            x[d - k:] = self.origin + np.asarray(bits, dtype=float) @ self.vectors
            corners.append(x)
        return np.array(corners)


@dataclass(eq=False)
class GroupModel:
    dim: int
    generators: list
    labels: list
    cusps: list
    t0: float = 1.0
    free: bool = False
    element_cap: int = 2_000_000
    name: str = "group"
    _stab_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if len(self.generators) != len(self.labels):
            raise ValueError("one label per generator")
        for g in self.generators:
            if g.dim != self.dim:
                raise ValueError("generator dimension mismatch")
        if not self.t0 > 0:
            raise ValueError("t0 must be positive")
        if not self.cusps:
            raise ValueError("at least one cusp chart is required")
        main = self.cusps[0]
        if not is_inf(main.p):
            raise ValueError("the first cusp chart must be the cusp at infinity")
        for chart in self.cusps:
            chart.lattice = tuple(self._chart_translation(chart, w) for w in chart.lattice_words)

    def _chart_translation(self, chart: CuspChart, word) -> Affine:
        conj = compose(chart.chart, compose(self.word_map(word), invert(chart.chart)))
        if not isinstance(conj, Affine) or abs(conj.scale - 1) > 1e-8 or \
                not np.allclose(conj.linear, np.eye(self.dim), atol=1e-8):
            raise ValueError(f"lattice word {word} is not a translation in its chart")
        return Affine.translation(conj.shift)

    # -- words ---------------------------------------------------------------

    @property
    def letters(self) -> list:
        return [s * (i + 1) for i in range(len(self.generators)) for s in (1, -1)]

    def letter_map(self, letter: int) -> MobiusMap:
        g = self.generators[abs(letter) - 1]
        return g if letter > 0 else invert(g)

    def word_map(self, word: Sequence[int]) -> MobiusMap:
        m: MobiusMap = identity(self.dim)
        for letter in word:
            m = compose(m, self.letter_map(letter))
        return m

    def word_label(self, word: Sequence[int]) -> str:
        parts = []
        for letter in word:
            lab = self.labels[abs(letter) - 1]
            parts.append(lab if letter > 0 else lab + "^-1")
        return " ".join(parts) if parts else "id"

    def stabilizer_letters(self, cusp_index: int) -> set:
        if cusp_index not in self._stab_cache:
            chart = self.cusps[cusp_index]
            stab = set()
            for letter in self.letters:
                conj = compose(chart.chart, compose(self.letter_map(letter), invert(chart.chart)))
                if isinstance(conj, Affine):
                    stab.add(letter)
            self._stab_cache[cusp_index] = stab
        return self._stab_cache[cusp_index]

    @property
    def domain(self) -> CuspChart:
        return self.cusps[0]


def lattice_word(chart: CuspChart, n) -> tuple:
    word = []
    for w, k in zip(chart.lattice_words, np.asarray(n, dtype=int)):
        piece = tuple(w) if k > 0 else tuple(-x for x in reversed(w))
        word.extend(piece * abs(int(k)))
    return tuple(word)


def reduce_word(word) -> tuple:
    out: list = []
    for letter in word:
        if out and out[-1] == -letter:
            out.pop()
        else:
            out.append(letter)
    return tuple(out)


def enumerate_words(g: GroupModel, depth: int, cap: int | None = None) -> Iterator[tuple]:
    """All reduced words of length <= depth with distinct maps, shortlex order."""
    if depth < 0:
        raise ValueError("depth must be nonnegative")
    cap = g.element_cap if cap is None else cap
    seen = set()
    ident = identity(g.dim)
    seen.add(ident.key())
    yield (), ident
    count = 1
    level = [((), ident)]
    for _ in range(depth):
        nxt = []
        for word, m in level:
            for letter in g.letters:
                if word and word[-1] == -letter:
                    continue
                mm = compose(m, g.letter_map(letter))
                key = mm.key()
                if key in seen:
                    continue
                seen.add(key)
                count += 1
                if count > cap:
                    raise EnumerationBudgetError(f"word ball exceeds element cap {cap}")
                w = word + (letter,)
                nxt.append((w, mm))
                yield w, mm
        level = nxt


# ---------------------------------------------------------------------------
# parabolic points

@dataclass(frozen=True, eq=False)
class ParabolicPoint:
    p: np.ndarray
    h: float
    rank: int
    word: tuple
    cusp_index: int
    element: MobiusMap = field(repr=False)
    x_p: np.ndarray = field(repr=False)

    def key(self, resolution: float = 1e-9) -> tuple:
        return tuple(int(v) for v in np.round(self.p / resolution))


def _top_representation(g: GroupModel, cusp_index: int, word: tuple, gamma: MobiusMap):
    """Normalize gamma so the chart pole lies in the chart cell and p lies in the domain."""
    chart = g.cusps[cusp_index]
    psi = compose(gamma, invert(chart.chart))
    if not isinstance(psi, Inversive):
        return None
    n, _ = chart.reduce(psi.p_inv)
    suffix = lattice_word(chart, n)
    main = g.domain
    m, _ = main.reduce(psi.p)
    prefix = lattice_word(main, -m)
    new_word = reduce_word(prefix + tuple(word) + suffix)
    element = compose(main.lattice_map(-m), compose(gamma, g.word_map(suffix)))
    psi = compose(element, invert(chart.chart))
    if not isinstance(psi, Inversive) or not main.contains(psi.p):
        return None
    return ParabolicPoint(psi.p, psi.h / g.t0, chart.rank, new_word, cusp_index, element,
                          psi.p_inv)


def _collect(points: dict, pp: ParabolicPoint | None, floor: float) -> None:
    if pp is None or pp.h < floor:
        return
    key = pp.key()
    old = points.get(key)
    if old is None or len(pp.word) < len(old.word):
        points[key] = pp


def parabolic_points(g: GroupModel, depth: int, height_floor: float, prune: bool = True,
                     cusps: Sequence[int] | None = None) -> list:
    """Parabolic points in the domain with horoball height >= height_floor."""
    if height_floor <= 0:
        raise ValueError("height_floor must be positive")
    cusps = range(len(g.cusps)) if cusps is None else cusps
    points: dict = {}
    for ci in cusps:
        if prune:
            _parabolic_dfs(g, ci, depth, height_floor, points)
        else:
            p_i = g.cusps[ci].p
            for word, gamma in enumerate_words(g, depth):
                if is_inf(apply(gamma, p_i)):
                    continue
                _collect(points, _top_representation(g, ci, word, gamma), height_floor)
    return sorted(points.values(), key=lambda q: (-q.h, tuple(q.p)))


def _parabolic_dfs(g: GroupModel, ci: int, depth: int, floor: float, points: dict) -> None:
    chart = g.cusps[ci]
    chart_inv = invert(chart.chart)
    stab = g.stabilizer_letters(ci)
    main_stab = g.stabilizer_letters(0)
    conj = {l: compose(chart.chart, compose(g.letter_map(l), chart_inv))
            for l in g.letters if l not in stab}
    t0 = g.t0

    def children(gamma: MobiusMap, last: int) -> tuple[np.ndarray, np.ndarray]:
        """Heights of non-stabilizer children and pole gaps, per letter."""
        psi = compose(gamma, chart_inv)
        hs, gaps = [], []
        for l, c in conj.items():
            if l == -last:
                continue
            child = compose(psi, c)
            hs.append(child.h / t0 if isinstance(child, Inversive) else np.inf)
            gaps.append(float(np.linalg.norm(c.p - psi.p_inv)) if isinstance(psi, Inversive)
                        else np.inf)
        return np.array(hs), np.array(gaps)

    visited = 0
    stack = [((), identity(g.dim))]
    while stack:
        word, gamma = stack.pop()
        visited += 1
        if visited > g.element_cap:
            raise EnumerationBudgetError(f"parabolic search exceeds element cap {g.element_cap}")
        last = word[-1] if word else 0
        if word and last not in stab:
            psi = compose(gamma, chart_inv)
            if not isinstance(psi, Inversive) or psi.h / t0 < floor:
                continue
            _collect(points, _top_representation(g, ci, word, gamma), floor)
        if len(word) >= depth:
            continue
        parent_gaps = None
        for letter in g.letters:
            if letter == -last or (not word and letter in main_stab):
                continue
            child = compose(gamma, g.letter_map(letter))
            if letter in stab:
                # a stabilizer run only moves the chart pole; stop once every
                # non-stabilizer child is below the floor and drifting away
                if parent_gaps is None:
                    parent_gaps = children(gamma, last)[1]
                hs, gaps = children(child, letter)
                if hs.size and np.all(hs < floor) and gaps.shape == parent_gaps.shape \
                        and np.all(gaps > parent_gaps):
                    continue
            stack.append((word + (letter,), child))


# ---------------------------------------------------------------------------
# separation, heights, distances

@dataclass
class SeparationReport:
    ok: bool
    worst_ratio: float
    worst_pair: tuple | None
    suggested_t0: float | None


def check_separation(points: Sequence[ParabolicPoint], t0: float = 1.0) -> SeparationReport:
    """Verify d(p, p') > sqrt(h_p h_p') for every pair."""
    if len(points) < 2:
        return SeparationReport(True, np.inf, None, None)
    P = np.array([q.p for q in points])
    H = np.array([q.h for q in points])
    worst, pair = np.inf, None
    chunk = 512
    for i0 in range(0, len(points), chunk):
        blk = P[i0:i0 + chunk]
        dist = np.sqrt(((blk[:, None, :] - P[None, :, :]) ** 2).sum(-1))
        ratio = dist / np.sqrt(H[i0:i0 + chunk, None] * H[None, :])
        rows = np.arange(blk.shape[0])
        ratio[rows, i0 + rows] = np.inf
        k = np.unravel_index(np.argmin(ratio), ratio.shape)
        if ratio[k] < worst:
            worst, pair = float(ratio[k]), (i0 + int(k[0]), int(k[1]))
    ok = worst > 1.0
    suggested = None if ok else t0 / worst * 1.01
    return SeparationReport(ok, worst, None if ok else (points[pair[0]], points[pair[1]]), suggested)


def auto_rescale(g: GroupModel, depth: int, height_floor: float, max_doublings: int = 20) -> float:
    """Double t0 until the enumerated horoballs are pairwise disjoint."""
    for _ in range(max_doublings):
        pts = parabolic_points(g, depth, height_floor)
        if check_separation(pts, g.t0).ok:
            return g.t0
        g.t0 *= 2.0
    raise RuntimeError("separation still fails after rescaling")


def horoball_height(g: GroupModel, element: MobiusMap, cusp_index: int) -> float:
    """Height of the horoball element(H_{p_i}); infinite if it is based at infinity."""
    chart = g.cusps[cusp_index]
    psi = compose(element, invert(chart.chart))
    return psi.h / g.t0 if isinstance(psi, Inversive) else np.inf


def height_comparability(g: GroupModel, points: Sequence[ParabolicPoint]) -> dict:
    """Ratios h_{g_i p} / h_p over all charts and points (min, max)."""
    out = {}
    for ci, chart in enumerate(g.cusps):
        ratios = []
        for q in points:
            if q.cusp_index == ci and ci != 0:
                continue
            image = compose(chart.chart, q.element)
            hq = horoball_height(g, image, q.cusp_index)
            if np.isfinite(hq):
                ratios.append(hq / q.h)
        if ratios:
            out[ci] = (float(min(ratios)), float(max(ratios)))
    return out


def bilipschitz_constant(chart: CuspChart, samples: np.ndarray, region_lo, region_hi,
                         rng: np.random.Generator | None = None) -> float:
    """Largest distortion of distance ratios under the chart map on a box region."""
    rng = np.random.default_rng(0) if rng is None else rng
    lo, hi = np.asarray(region_lo, float), np.asarray(region_hi, float)
    X = lo + (hi - lo) * rng.random((samples, chart.dim))
    Y = lo + (hi - lo) * rng.random((samples, chart.dim))
    worst = 1.0
    for x, y in zip(X, Y):
        gx, gy = apply(chart.chart, x), apply(chart.chart, y)
        if is_inf(gx) or is_inf(gy):
            continue
        r = np.linalg.norm(gx - gy) / np.linalg.norm(x - y)
        worst = max(worst, r, 1 / r)
    return float(worst)


# ---------------------------------------------------------------------------
# orbit counting

def _hyperboloid(z: HalfSpacePoint) -> np.ndarray:
    x, t = z.base, z.height
    s = float(x @ x) + t * t
    return np.concatenate([[(1 + s) / (2 * t)], x / t, [(1 - s) / (2 * t)]])


def lorentz_matrix(m: MobiusMap) -> np.ndarray:
    """Matrix of m acting linearly on the hyperboloid model in R^{d+1,1}."""
    d = m.dim
    rng = np.random.default_rng(12345)
    pts = [HalfSpacePoint(rng.normal(size=d), 0.5 + rng.random()) for _ in range(d + 2)]
    X = np.array([_hyperboloid(z) for z in pts]).T
    Y = np.array([_hyperboloid(apply(m, z)) for z in pts]).T
    return Y @ np.linalg.inv(X)


def _minkowski(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return -X[..., 0] * Y[..., 0] + np.sum(X[..., 1:] * Y[..., 1:], axis=-1)


def orbit_distances(g: GroupModel, T: float, x: HalfSpacePoint, y: HalfSpacePoint,
                    slack: float | None = None) -> np.ndarray:
    """Distances d(x, gamma y) <= T over the group, by pruned search on reduced words.

    A word is not extended once its orbit point is farther than ``T + slack``.
    The default slack is the largest generator displacement of ``y``.  The
    search runs level by level on Lorentz matrices, so each level is one
    batched matrix product per letter.
    """
    if T <= 0:
        raise ValueError("T must be positive")
    if slack is None:
        slack = max(hyperbolic_distance(y, apply(g.letter_map(l), y)) for l in g.letters)
    limit = np.cosh(T + slack)
    X, Y = _hyperboloid(x), _hyperboloid(y)
    letters = g.letters
    L = {l: lorentz_matrix(g.letter_map(l)) for l in letters}
    mats = np.eye(Y.size)[None]
    last = np.zeros(1, dtype=int)
    seen = None if g.free else set()
    found = []
    total = 0
    while mats.shape[0]:
        c = -_minkowski(X, mats @ Y)
        keep = c <= limit
        mats, last, c = mats[keep], last[keep], c[keep]
        if seen is not None and mats.shape[0]:
            keys = np.round(mats.reshape(mats.shape[0], -1) * 1e8).astype(np.int64)
            fresh = np.zeros(mats.shape[0], dtype=bool)
            for i, row in enumerate(map(bytes, keys)):
                if row not in seen:
                    seen.add(row)
                    fresh[i] = True
            mats, last, c = mats[fresh], last[fresh], c[fresh]
        total += mats.shape[0]
        if total > g.element_cap:
            raise EnumerationBudgetError(f"orbit ball exceeds element cap {g.element_cap}")
        found.append(np.arccosh(np.maximum(c[c <= np.cosh(T) * (1 + 1e-15)], 1.0)))
        nxt, nlast = [], []
        for l in letters:
            sel = last != -l
            if np.any(sel):
                nxt.append(mats[sel] @ L[l])
                nlast.append(np.full(int(sel.sum()), l))
        if not nxt:
            break
        mats, last = np.concatenate(nxt), np.concatenate(nlast)
    dists = np.concatenate(found)
    return np.sort(dists[dists <= T])


@dataclass
class OrbitGrowth:
    radii: np.ndarray
    counts: np.ndarray
    slope: float
    intercept: float


def orbit_count(g: GroupModel, T: float, x: HalfSpacePoint, y: HalfSpacePoint,
                slack: float | None = None) -> int:
    return int(orbit_distances(g, T, x, y, slack).size)


def orbit_growth(g: GroupModel, radii: Sequence[float], x: HalfSpacePoint, y: HalfSpacePoint,
                 slack: float | None = None) -> OrbitGrowth:
    """Counts N(T) on a ladder of radii and the least-squares slope of log N."""
    radii = np.asarray(sorted(radii), dtype=float)
    dists = orbit_distances(g, float(radii[-1]), x, y, slack)
    counts = np.searchsorted(dists, radii, side="right")
    slope, intercept = np.polyfit(radii, np.log(counts), 1)
    return OrbitGrowth(radii, counts, float(slope), float(intercept))
