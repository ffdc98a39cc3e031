"""Inductive boundary coding: flowers around parabolic points, cells, residual sets.

Generation ``n+1`` removes a flower ``J_p`` around every parabolic point ``p``
with ``eta*h_p`` in ``(h_{n+1}, h_n]`` that sits well inside the residual set
``Omega_n``.  A flower is the image under the top representation of the
complement of a lattice-tiled box, so it splits into the images of the tiles
outside the box: each tile gives one cell and one inverse branch.

The residual ``Omega_n`` is kept implicitly as the domain box minus a list of
flowers; nothing is rasterized.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .branches import Box, Branch, BranchFamily, BranchSystem, compose_branch, sup_derivative
from .geometry import (Affine, INF, Inversive, MobiusMap, apply_many, compose, deriv_many,
                       grad_log_deriv, invert, is_inf)
from .group import CuspChart, GroupModel, ParabolicPoint, lattice_word, parabolic_points

log = logging.getLogger(__name__)


class ScaleError(ValueError):
    """The flower would leave the domain."""


class ContractionError(ValueError):
    """A branch is not uniformly contracting."""


class IrreducibilityError(ValueError):
    """Some domain has no path back to the base domain."""


@dataclass
class CodingParams:
    eta: float = 0.05
    max_generation: int = 12
    truncation_floor: float = 0.0
    delta_hint: float = 1.0
    explicit_per_family: int = 4
    search_depth: int = 400

    def __post_init__(self):
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.max_generation < 1:
            raise ValueError("max_generation must be at least 1")
        if self.explicit_per_family < 1:
            raise ValueError("explicit_per_family must be at least 1")

    @staticmethod
    def h(n: int) -> float:
        return math.exp(-n)


def chart_box(chart: CuspChart) -> Box:
    """Axis box of the fundamental domain ``B_Y(C) x Z0`` in chart coordinates."""
    d, k = chart.dim, chart.rank
    V = chart.vectors
    corners = chart.origin + np.array(list(itertools.product([0, 1], repeat=k))) @ V
    lo = np.concatenate([-chart.y_radius * np.ones(d - k), corners.min(0)])
    hi = np.concatenate([chart.y_radius * np.ones(d - k), corners.max(0)])
    return Box(lo, hi)


# ---------------------------------------------------------------------------
# flowers

@dataclass(eq=False)
class Flower:
    point: ParabolicPoint
    psi: Inversive
    chart: CuspChart
    eta: float
    n_lo: np.ndarray
    n_hi: np.ndarray
    y_half: float
    radius: float
    c4: float
    generation: int = 0
    interval: tuple | None = None

    @property
    def p(self) -> np.ndarray:
        return self.point.p

    def in_box(self, Z: np.ndarray) -> np.ndarray:
        """Chart points inside B_Y(2/eta) x R."""
        ch = self.chart
        d, k = ch.dim, ch.rank
        y, z = Z[:, : d - k], Z[:, d - k:]
        t = np.linalg.solve(ch.vectors.T, (z - ch.origin).T).T
        ok = np.all((t >= self.n_lo) & (t < self.n_hi), axis=1)
        if d > k:
            ok &= np.linalg.norm(y, axis=1) <= self.y_half
        return ok

    def contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        if self.interval is not None:
            return (X[:, 0] >= self.interval[0]) & (X[:, 0] <= self.interval[1])
        Z = apply_many(invert(self.psi), X)
        inside = ~np.all(np.isfinite(Z), axis=1)
        fin = ~inside
        inside[fin] = ~self.in_box(Z[fin])
        return inside

    def boundary_distance(self, X: np.ndarray) -> np.ndarray:
        """Distance to the flower boundary: exact for d = 1, outer-ball lower bound otherwise."""
        X = np.atleast_2d(X)
        if self.interval is not None:
            return np.minimum(np.abs(X[:, 0] - self.interval[0]), np.abs(X[:, 0] - self.interval[1]))
        return np.abs(np.linalg.norm(X - self.p, axis=1) - self.radius)

    def tiles(self, count: int) -> list:
        """Lattice indices of tiles outside the box, nearest rings first (rank >= 2 only)."""
        k = self.chart.rank
        out = []
        ring = 0
        while len(out) < count:
            ring += 1
            lo, hi = self.n_lo - ring, self.n_hi - 1 + ring
            for idx in itertools.product(*[range(int(a), int(b) + 1) for a, b in zip(lo, hi)]):
                m = np.array(idx)
                if np.any(m < self.n_lo) or np.any(m >= self.n_hi):
                    if np.max(np.maximum(self.n_lo - m, m - self.n_hi + 1)) == ring:
                        out.append(m)
        return out[:count]

    def families(self, explicit: int, base_word: tuple) -> list:
        """Rank one: the tiles beyond each end of R form two parabolic families."""
        ch = self.chart
        step = ch.lattice[0]
        up = BranchFamily(compose(self.psi, Affine.translation(
            int(self.n_hi[0]) * step.shift)), step, 0, explicit,
            base_word + lattice_word(ch, [int(self.n_hi[0])]), tuple(ch.lattice_words[0]))
        down_step = Affine.translation(-step.shift)
        down = BranchFamily(compose(self.psi, Affine.translation(
            (int(self.n_lo[0]) - 1) * step.shift)), down_step, 0, explicit,
            base_word + lattice_word(ch, [int(self.n_lo[0]) - 1]),
            tuple(-x for x in reversed(ch.lattice_words[0])))
        return [up, down]


def build_flower(p: ParabolicPoint, eta: float, chart: CuspChart, domain: Box,
                 t0: float = 1.0, check_domain: bool = True) -> Flower:
    """Flower J_p = psi((B_Y(2/eta) x R)^c) with R the smallest tiled box covering B(x_p, t0/eta)."""
    psi = compose(p.element, invert(chart.chart))
    if not isinstance(psi, Inversive):
        raise ValueError("parabolic point at infinity has no flower")
    d, k = chart.dim, chart.rank
    radius = eta * p.h
    if check_domain:
        bd = float(domain.boundary_distance(p.p[None, :])[0])
        if not (domain.contains(p.p[None, :])[0] and bd > radius):
            raise ScaleError(f"B(p, eta*h_p) leaves the domain at p={p.p.tolist()} "
                             f"(radius {radius:.3g}, boundary distance {bd:.3g})")
    R = t0 / eta
    x = np.asarray(psi.p_inv, float)
    z = x[d - k:]
    W = np.linalg.inv(chart.vectors.T)
    t = W @ (z - chart.origin)
    half = R * np.linalg.norm(W, axis=1)
    n_lo = np.floor(t - half + 1e-12).astype(int)
    n_hi = np.ceil(t + half - 1e-12).astype(int)
    y_half = 2.0 / eta
    # c4: J_p contains B(p, c4 eta h_p) iff the box lies in B(x_p, t0/(c4 eta))
    corners = chart.origin + np.array(list(itertools.product(*zip(n_lo, n_hi)))) @ chart.vectors
    far_z = float(np.max(np.linalg.norm(corners - z, axis=1)))
    far_y = y_half + float(np.linalg.norm(x[: d - k])) if d > k else 0.0
    c4 = R / math.hypot(far_z, far_y)
    interval = None
    if d == 1:
        v = chart.vectors[0, 0]
        ends = apply_many(psi, np.array([[chart.origin[0] + n_lo[0] * v],
                                         [chart.origin[0] + n_hi[0] * v]]))
        interval = (float(ends[:, 0].min()), float(ends[:, 0].max()))
    return Flower(p, psi, chart, eta, n_lo, n_hi, y_half, radius, c4, interval=interval)


# ---------------------------------------------------------------------------
# coding state

@dataclass(eq=False)
class CodingState:
    generation: int
    domain: Box
    params: CodingParams
    flowers: list = field(default_factory=list)
    families: list = field(default_factory=list)
    residual_measure_series: list = field(default_factory=list)
    flower_masses: list = field(default_factory=list)
    total_mass: float = 1.0

    def system(self) -> BranchSystem:
        """Explicit family members as branches, remaining members as analytic tails."""
        branches = []
        for fi, fam in enumerate(self.families):
            for n in range(fam.start, fam.tail_from):
                branches.append(Branch(fam.member(n), fam.member_word(n), family=fi, member=n))
        return BranchSystem([self.domain], branches, list(self.families), name="coding")

    def omega_contains(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        ok = self.domain.contains(X)
        for f in self.flowers:
            ok &= ~f.contains(X)
        return ok

    @property
    def cells_mass(self) -> float:
        return float(sum(self.flower_masses))


class ConformalMasses:
    """Frozen discrete conformal measure: node masses and the exponent delta."""

    def __init__(self, nodes: np.ndarray, masses: np.ndarray, delta: float):
        self.nodes = np.atleast_2d(nodes)
        self.masses = np.asarray(masses, float)
        self.delta = float(delta)

    @classmethod
    def from_report(cls, report) -> "ConformalMasses":
        return cls(report.nodes, report.left_eigenvector, report.delta_estimate)

    @property
    def total(self) -> float:
        return float(self.masses.sum())

    def image_mass(self, m: MobiusMap) -> float:
        """mu(m(Delta_0)) = integral of |m'|^delta against the node masses."""
        return float(np.sum(self.masses * deriv_many(m, self.nodes) ** self.delta))

    def family_mass(self, fam: BranchFamily) -> float:
        explicit = sum(self.image_mass(fam.member(n)) for n in range(fam.start, fam.tail_from))
        tail = fam.tail_weights(self.nodes, self.delta, 0)[0].real
        return float(explicit + np.sum(self.masses * tail))


def _candidates(points: Sequence[ParabolicPoint], eta: float, n: int) -> list:
    lo, hi = CodingParams.h(n + 1), CodingParams.h(n)
    return [q for q in points if lo < eta * q.h <= hi]


def coding_step(state: CodingState, params: CodingParams, group: GroupModel,
                points: Sequence[ParabolicPoint], measure: ConformalMasses | None = None) -> CodingState:
    """Advance the coding by one generation."""
    n = state.generation
    hn = params.h(n)
    chart = group.cusps[0]
    cands = _candidates(points, params.eta, n)
    chosen = []
    if cands:
        P = np.array([q.p for q in cands])
        dist = state.domain.boundary_distance(P)
        inside = state.domain.contains(P)
        for f in state.flowers:
            inside &= ~f.contains(P)
            dist = np.minimum(dist, f.boundary_distance(P))
        radii = np.array([params.eta * q.h for q in cands])
        ok = inside & (dist > hn / (4 * params.eta)) & (dist > radii)
        chosen = [q for q, good in zip(cands, ok) if good]
    flowers, fams, masses = [], [], []
    for q in chosen:
        f = build_flower(q, params.eta, chart, state.domain, group.t0)
        f.generation = n + 1
        flowers.append(f)
        fam = f.families(params.explicit_per_family, tuple(q.word)) if chart.rank == 1 else []
        fams.extend(fam)
        if measure is not None:
            masses.append(sum(measure.family_mass(x) for x in fam))
    series = list(state.residual_measure_series)
    last = series[-1] if series else (measure.total if measure else math.nan)
    series.append(last - sum(masses) if measure is not None else math.nan)
    return CodingState(n + 1, state.domain, params, state.flowers + flowers, state.families + fams,
                       series, state.flower_masses + masses, state.total_mass)


@dataclass(eq=False)
class CodingResult:
    state: CodingState
    slope: float
    intercept: float
    points: list

    @property
    def residual(self) -> np.ndarray:
        return np.asarray(self.state.residual_measure_series)

    @property
    def mass_gap(self) -> float:
        return float(self.state.total_mass - self.state.cells_mass)


def decay_fit(series: Sequence[float]) -> tuple[float, float]:
    """Least-squares slope and intercept of log(series) against generation."""
    y = np.asarray(series, float)
    n = np.arange(y.size)
    ok = np.isfinite(y) & (y > 0)
    if ok.sum() < 2:
        return math.nan, math.nan
    slope, icpt = np.polyfit(n[ok], np.log(y[ok]), 1)
    return float(slope), float(icpt)


def run_coding(group: GroupModel, params: CodingParams, measure: ConformalMasses | None = None,
               points: Sequence[ParabolicPoint] | None = None,
               progress: Callable | None = None) -> CodingResult:
    """Iterate coding_step to the last generation and fit the residual decay.

    Only flowers at points of the cusp at infinity are built; cells therefore
    all map back onto the base domain.
    """
    chart = group.cusps[0]
    domain = chart_box(chart)
    if points is None:
        floor = params.h(params.max_generation) / params.eta
        points = parabolic_points(group, params.search_depth, floor, cusps=[0])
    total = measure.total if measure is not None else 1.0
    state = CodingState(0, domain, params, residual_measure_series=[total], total_mass=total)
    for _ in range(params.max_generation):
        state = coding_step(state, params, group, points, measure)
        if progress:
            progress(state)
    slope, icpt = decay_fit(state.residual_measure_series)
    return CodingResult(state, slope, icpt, list(points))


# ---------------------------------------------------------------------------
# verification sweeps

def cell_overlap_count(state: CodingState, samples: int = 10_000, seed: int = 0) -> np.ndarray:
    """Number of cells (explicit members and tails) containing each random domain point."""
    rng = np.random.default_rng(seed)
    X = state.domain.sample(samples, rng)
    counts = np.zeros(samples, dtype=int)
    box = state.domain
    for f in state.flowers:
        inside = f.contains(X)
        if not inside.any():
            continue
        Z = apply_many(invert(f.psi), X[inside])
        fin = np.all(np.isfinite(Z), axis=1)
        ch = f.chart
        k = ch.rank
        t = np.linalg.solve(ch.vectors.T, (Z[fin, ch.dim - k:] - ch.origin).T).T
        m = np.floor(t).astype(int)
        outside = np.any((m < f.n_lo) | (m >= f.n_hi), axis=1)
        y_ok = np.ones(fin.sum(), bool)
        if ch.dim > k:
            y_ok = np.all(np.abs(Z[fin, : ch.dim - k]) <= ch.y_radius, axis=1)
        c = np.zeros(inside.sum(), int)
        c[fin] = (outside & y_ok).astype(int)
        counts[inside] += c
    del box
    return counts


def explicit_cell_overlaps(state: CodingState, samples: int = 10_000, seed: int = 0) -> int:
    """Samples lying in two or more explicit cells, tested by inverse-branch membership."""
    rng = np.random.default_rng(seed)
    X = state.domain.sample(samples, rng)
    counts = np.zeros(samples, dtype=int)
    lo, hi = state.domain.lo, state.domain.hi
    for b in state.system().branches:
        Y = apply_many(invert(b.map), X)
        counts += np.all((Y >= lo) & (Y < hi), axis=1)
    return int(np.sum(counts > 1))


def flower_separation(state: CodingState) -> float:
    """Smallest ratio gap / (h_n / (2 eta)) over pairs of flowers (d = 1 uses exact intervals)."""
    fl = state.flowers
    if len(fl) < 2:
        return math.inf
    worst = math.inf
    for i, f in enumerate(fl):
        for g in fl[i + 1:]:
            n = max(f.generation, g.generation) - 1
            need = CodingParams.h(n) / (2 * f.eta)
            if f.interval is not None:
                gap = max(g.interval[0] - f.interval[1], f.interval[0] - g.interval[1])
            else:
                gap = float(np.linalg.norm(f.p - g.p)) - f.radius - g.radius
            worst = min(worst, gap / need)
    return worst


def anchoring_margin(state: CodingState) -> float:
    """min over explicit branches of eta * d(Delta_0, pole); at least t0 when anchored."""
    out = math.inf
    for b in state.system().branches:
        out = min(out, state.params.eta * state.domain.distance_to(b.map.p_inv))
    return out


def flower_containment(f: Flower, samples: int = 1000, seed: int = 0) -> dict:
    """Sample check of B(p, c4 eta h_p) within J_p within B(p, eta h_p)."""
    rng = np.random.default_rng(seed)
    d = f.p.shape[0]
    u = rng.standard_normal((samples, d))
    u /= np.linalg.norm(u, axis=1)[:, None]
    r = f.radius * rng.random(samples) ** (1 / d)
    inner = f.p + (u.T * r * f.c4).T
    outer_probe = f.p + (u.T * f.radius * (1 + rng.random(samples))).T
    return {"inner_ok": bool(np.all(f.contains(inner))),
            "outer_ok": bool(not np.any(f.contains(outer_probe))), "c4": f.c4}


# ---------------------------------------------------------------------------
# multi-domain inducing

@dataclass(eq=False)
class InducedSystem:
    system: BranchSystem
    excursion_masses: np.ndarray
    truncated_mass: float
    decay_ratio: float


def induce_first_return(system: BranchSystem, cap: int = 20, floor: float = 1e-12,
                        delta: float = 1.0) -> InducedSystem:
    """First-return branches to domain 0, composed along excursions of length <= cap.

    A branch with target t and source s is the inverse of the expanding map on
    a cell of domain t onto domain s.  Excursion masses use sup|g'|^delta as
    the weight of each branch; the mass beyond the cap is extrapolated from the
    geometric decay of the excursion-length masses.
    """
    ndom = len(system.domains)
    if ndom == 1:
        return InducedSystem(system, np.array([sum(sup_derivative(b.map, system.domain) ** delta
                                                  for b in system.branches)]), 0.0, 0.0)
    weight = np.zeros((ndom, ndom))
    for b in system.branches:
        weight[b.target, b.source] += sup_derivative(b.map, system.domains[b.source]) ** delta
    reach = weight > 0
    # every domain reached from 0 must lead back to 0
    closure = reach.copy()
    for _ in range(ndom):
        closure = closure | (closure.astype(int) @ reach.astype(int) > 0)
    if not reach[0].any():
        raise IrreducibilityError("the base domain has no branches")
    for j in range(1, ndom):
        if closure[0, j] and not closure[j, 0]:
            raise IrreducibilityError(f"domain {j} is reached from the base but never returns")
    out = [b for b in system.branches if b.target == 0 and b.source == 0]
    masses = [weight[0, 0]]
    frontier = [b for b in system.branches if b.target == 0 and b.source != 0]
    by_target = {}
    for b in system.branches:
        by_target.setdefault(b.target, []).append(b)
    dropped = 0.0
    for length in range(2, cap + 1):
        nxt, mass = [], 0.0
        for head in frontier:
            for b in by_target.get(head.source, []):
                comp = compose_branch(head, b)
                w = sup_derivative(comp.map, system.domains[comp.source])
                if w < floor:
                    dropped += w ** delta
                    continue
                if comp.source == 0:
                    out.append(comp)
                    mass += w ** delta
                else:
                    nxt.append(comp)
        masses.append(mass)
        frontier = nxt
        if not frontier:
            break
    masses = np.array(masses)
    pos = masses[1:][masses[1:] > 0]
    ratio = 0.0
    if pos.size >= 2:
        ratio = float(math.exp(np.polyfit(np.arange(pos.size), np.log(pos), 1)[0]))
    pending = sum(sup_derivative(b.map, system.domains[b.source]) ** delta for b in frontier)
    trunc = (pending / (1 - ratio) if 0 < ratio < 1 else pending) + dropped
    induced = BranchSystem([system.domains[0]], out, [], name=system.name + "-induced")
    return InducedSystem(induced, masses, float(trunc), ratio)


# ---------------------------------------------------------------------------
# tail, contraction, distortion

@dataclass
class TailReport:
    exponent: float
    terms: np.ndarray
    partial_sums: np.ndarray
    tail_mass: float
    total: float
    last_block_increment: float

    def to_dict(self) -> dict:
        return {"exponent": self.exponent, "partial_sums": self.partial_sums.tolist(),
                "tail_mass": self.tail_mass, "total": self.total,
                "last_block_increment": self.last_block_increment}


def _as_system(obj) -> BranchSystem:
    if isinstance(obj, BranchSystem):
        return obj
    if isinstance(obj, CodingResult):
        return obj.state.system()
    return obj.system()


def tail_report(coding, epsilon: float, delta: float, block: int = 10) -> TailReport:
    """Partial sums of sum_j |g_j'|_inf^(delta - epsilon), explicit terms in decreasing order."""
    system = _as_system(coding)
    a = delta - epsilon
    sups = np.sort(system.sup_derivatives())[::-1]
    terms = sups ** a
    partial = np.cumsum(terms)
    tail = sum(f.tail_sup(system.domains[f.source], a) for f in system.families)
    total = float(partial[-1] + tail) if partial.size else float(tail)
    inc = float(terms[-block:].sum()) if terms.size else 0.0
    return TailReport(a, terms, partial, float(tail), total, inc)


@dataclass
class ContractionReport:
    lambda_max: float
    C1_max: float
    C1_sampled: float

    @property
    def C2(self) -> float:
        return self.C1_max / (1 - self.lambda_max) if self.lambda_max < 1 else math.inf


def contraction_distortion_report(coding, samples: int = 64, strict: bool = True) -> ContractionReport:
    """lambda_max = max sup|g'| and C1 = max |D log|g'|| with the bound 2/d(Delta_0, pole)."""
    system = _as_system(coding)
    if not system.branches:
        raise ValueError("coding has no branches")
    lam, c1, c1s = 0.0, 0.0, 0.0
    for b in system.branches:
        box = system.domains[b.source]
        lam = max(lam, sup_derivative(b.map, box))
        if isinstance(b.map, Inversive):
            dist = box.distance_to(b.map.p_inv)
            c1 = max(c1, 2.0 / dist if dist > 0 else math.inf)
            X = box.sample(samples, np.random.default_rng(0))
            X = np.vstack([X, box.corners()])
            diff = X - b.map.p_inv
            c1s = max(c1s, float(np.max(2.0 / np.linalg.norm(diff, axis=1))))
    if strict and lam >= 1:
        raise ContractionError(f"branch sup-derivative {lam:.6g} is not below 1")
    return ContractionReport(lam, c1, c1s)


# ---------------------------------------------------------------------------
# UNI search

@dataclass
class UniCertificate:
    n0: int
    pairs: list
    epsilon0: float
    radius: float
    C2_bound: float
    max_D_tau: float
    max_derivative: float

    def to_dict(self) -> dict:
        return {"n0": self.n0, "pairs": [[list(a), list(b)] for a, b in self.pairs],
                "epsilon0": self.epsilon0, "radius": self.radius, "C2_bound": self.C2_bound,
                "max_D_tau": self.max_D_tau, "max_derivative": self.max_derivative}


@dataclass
class UniFailure:
    reason: str
    epsilon0: float = 0.0

    def to_dict(self) -> dict:
        return {"failure": self.reason, "epsilon0": self.epsilon0}


def words_of_length(system: BranchSystem, n0: int, top: int = 12) -> list:
    """Compositions of n0 branches drawn from the ``top`` most expanding-inverse ones."""
    order = np.argsort(-system.sup_derivatives())[:top]
    base = [system.branches[i] for i in order]
    out = list(base)
    for _ in range(n0 - 1):
        out = [compose_branch(a, b) for a in out for b in base]
    return out


def uni_search(coding, n0: int, base_points: Sequence, radius: float, directions: int = 8,
               ball_samples: int = 65, floor: float = 1e-9, top: int = 12) -> UniCertificate | UniFailure:
    """Certify |d_e(tau_1 - tau_2)| >= eps0 on balls B(x, r) for sampled x and directions e.

    For each (x, e) the best pair is the one maximizing the minimum over the
    ball samples; eps0 is the worst case of those maxima.
    """
    system = _as_system(coding)
    box = system.domain
    d = system.dim
    words = words_of_length(system, n0, top)
    poles = [w for w in words if isinstance(w.map, Inversive)]
    if len(poles) < 2:
        return UniFailure("fewer than two branches with finite poles in H_n0")
    if d == 1:
        dirs = np.array([[1.0]])
    else:
        ang = np.pi * np.arange(directions) / directions
        dirs = np.stack([np.cos(ang), np.sin(ang)] + [np.zeros_like(ang)] * (d - 2), axis=1)
    xi = np.array([w.map.p_inv for w in poles])
    eps0 = math.inf
    chosen = []
    for x in np.atleast_2d(np.asarray(base_points, float)):
        if d == 1:
            Y = np.linspace(max(x[0] - radius, box.lo[0]), min(x[0] + radius, box.hi[0]),
                            ball_samples)[:, None]
        else:
            g = np.linspace(-radius, radius, int(math.sqrt(ball_samples)) + 1)
            Y = x + np.array(list(itertools.product(g, repeat=d)))
            Y = Y[(np.linalg.norm(Y - x, axis=1) <= radius) & box.contains(Y)]
        diff = Y[None, :, :] - xi[:, None, :]
        grad = 2 * diff / np.sum(diff ** 2, axis=2)[:, :, None]    # (word, y, d)
        for e in dirs:
            proj = grad @ e                                          # (word, y)
            gap = np.abs(proj[:, None, :] - proj[None, :, :]).min(axis=2)
            np.fill_diagonal(gap, -1.0)
            i, j = np.unravel_index(np.argmax(gap), gap.shape)
            best = float(gap[i, j])
            eps0 = min(eps0, best)
            pair = (tuple(poles[i].word), tuple(poles[j].word))
            if pair not in chosen:
                chosen.append(pair)
    if not eps0 > floor:
        return UniFailure(f"no pair reaches the floor {floor}", max(eps0, 0.0))
    lam = max(sup_derivative(w.map, box) for w in words)
    c1 = max(2.0 / box.distance_to(w.map.p_inv) for w in poles)
    c2 = c1 / (1 - lam) if lam < 1 else math.inf
    max_dtau = c1
    return UniCertificate(n0, chosen, float(eps0), float(radius), float(c2), float(max_dtau),
                          float(lam))


# ---------------------------------------------------------------------------
# serialization

def _map_to_dict(m: MobiusMap) -> dict:
    if isinstance(m, Inversive):
        return {"type": "inversive", "p": m.p.tolist(), "p_inv": m.p_inv.tolist(), "h": m.h,
                "A": m.A.tolist()}
    return {"type": "affine", "linear": m.linear.tolist(), "shift": m.shift.tolist(),
            "scale": m.scale}


def _map_from_dict(d: dict) -> MobiusMap:
    if d["type"] == "inversive":
        return Inversive(d["p"], d["p_inv"], d["h"], d["A"])
    return Affine(d["linear"], d["shift"], d["scale"])


def coding_to_dict(state: CodingState) -> dict:
    return {
        "params": dict(state.params.__dict__),
        "generation": state.generation,
        "domain": {"lo": state.domain.lo.tolist(), "hi": state.domain.hi.tolist()},
        "residual_series": [float(x) for x in state.residual_measure_series],
        "flower_masses": [float(x) for x in state.flower_masses],
        "total_mass": state.total_mass,
        "flowers": [{"p": f.p.tolist(), "h": f.point.h, "word": list(f.point.word),
                     "generation": f.generation, "n_lo": f.n_lo.tolist(), "n_hi": f.n_hi.tolist(),
                     "c4": f.c4, "interval": list(f.interval) if f.interval else None,
                     "psi": _map_to_dict(f.psi)}
                    for f in state.flowers],
        "families": [{"base": _map_to_dict(fam.base), "step": fam.step.shift.tolist(),
                      "start": fam.start, "tail_from": fam.tail_from,
                      "base_word": list(fam.base_word), "step_word": list(fam.step_word)}
                     for fam in state.families],
    }


def coding_from_dict(doc: dict, group: GroupModel | None = None) -> CodingState:
    """Rebuild a coding state; flowers are restored when the group is supplied."""
    params = CodingParams(**doc["params"])
    domain = Box(doc["domain"]["lo"], doc["domain"]["hi"])
    fams = [BranchFamily(_map_from_dict(f["base"]), Affine.translation(f["step"]), f["start"],
                         f["tail_from"], tuple(f["base_word"]), tuple(f["step_word"]))
            for f in doc["families"]]
    flowers = []
    if group is not None:
        chart = group.cusps[0]
        for f in doc["flowers"]:
            word = tuple(f["word"])
            element = group.word_map(word)
            psi = compose(element, invert(chart.chart))
            pt = ParabolicPoint(np.asarray(f["p"], float), f["h"], chart.rank, word, 0, element,
                                psi.p_inv)
            fl = build_flower(pt, params.eta, chart, domain, group.t0, check_domain=False)
            # cached values win over recomputation, so the round trip is exact
            fl.generation = f["generation"]
            fl.psi = _map_from_dict(f["psi"]) if "psi" in f else fl.psi
            fl.n_lo, fl.n_hi = np.asarray(f["n_lo"], int), np.asarray(f["n_hi"], int)
            fl.c4 = f["c4"]
            fl.interval = tuple(f["interval"]) if f["interval"] else None
            flowers.append(fl)
    return CodingState(doc["generation"], domain, params, flowers, fams,
                       list(doc["residual_series"]), list(doc["flower_masses"]), doc["total_mass"])
