"""Discretized twisted transfer operators L_s u(x) = sum |g'(x)|^(delta+s) u(g x).

Three schemes share one interface:

* ``collocation`` (d = 1): values at a graded grid, piecewise-linear interpolation;
* ``ulam`` (d = 1): bin averages on a uniform partition, a cross-check scheme;
* ``nearest`` (any d): values on a sample cloud of the attractor, nearest-node lookup.

Parabolic families contribute their analytic tail: the missing members
accumulate at the family's limit point, where ``u`` is replaced by its local
Taylor polynomial (collocation) or by its value (other schemes).
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
from scipy.spatial import cKDTree

from .branches import Box, BranchSystem, images
from .geometry import apply_many

log = logging.getLogger(__name__)


class SpectralError(RuntimeError):
    pass


class NonConvergenceError(SpectralError):
    """Power iteration did not reach its tolerance."""


class BracketError(SpectralError):
    """log lambda(a) has no sign change on the bracket."""


class TruncationError(SpectralError):
    """No branch survives the derivative floor."""


# ---------------------------------------------------------------------------
# discretization

def graded_nodes(box: Box, n: int) -> np.ndarray:
    """Chebyshev-Lobatto points on an interval, clustered at both ends."""
    if box.dim != 1:
        raise ValueError("graded grids are one-dimensional")
    t = 0.5 * (1 - np.cos(np.pi * np.arange(n) / (n - 1)))
    return (box.lo[0] + (box.hi[0] - box.lo[0]) * t)[:, None]


def attractor_cloud(system: BranchSystem, n: int, seed: int = 0, burn: int = 30) -> np.ndarray:
    """Sample points of the limit set by random iteration of the branches."""
    rng = np.random.default_rng(seed)
    box = system.domain
    sup = system.sup_derivatives()
    prob = np.minimum(sup, 1.0) ** box.dim
    prob /= prob.sum()
    X = box.sample(n, rng)
    for _ in range(burn):
        pick = rng.choice(len(system.branches), size=n, p=prob)
        Y = np.empty_like(X)
        for j in np.unique(pick):
            sel = pick == j
            Y[sel] = apply_many(system.branches[j].map, X[sel])
        X = np.clip(Y, box.lo, box.hi)
    return X


@dataclass(eq=False)
class Discretization:
    system: BranchSystem
    nodes: np.ndarray
    scheme: str
    truncation_floor: float
    truncated_mass: float
    delta_hint: float
    kept: np.ndarray
    tail_order: int = 3
    # precomputed stencils: per explicit branch, rows/cols/fractions and log-derivatives
    _rows: np.ndarray = field(default=None, repr=False)
    _cols: np.ndarray = field(default=None, repr=False)
    _frac: np.ndarray = field(default=None, repr=False)
    _logj: np.ndarray = field(default=None, repr=False)
    _qw: np.ndarray = field(default=None, repr=False)
    _tails: list = field(default_factory=list, repr=False)
    interpolation_radius: float = 0.0

    @property
    def n(self) -> int:
        return self.nodes.shape[0]

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def branch_count(self) -> int:
        return len(self.kept)


def discretize(system: BranchSystem, n_nodes: int, scheme: str = "auto",
               truncation_floor: float = 0.0, delta_hint: float = 1.0, tail_order: int = 2,
               quadrature: int = 6, seed: int = 0) -> Discretization:
    """Fix nodes, drop branches whose sup-derivative is below the floor, precompute stencils."""
    if n_nodes < 4:
        raise ValueError("need at least 4 nodes")
    if scheme == "auto":
        scheme = "collocation" if system.dim == 1 else "nearest"
    if scheme not in ("collocation", "ulam", "nearest"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme in ("collocation", "ulam") and system.dim != 1:
        raise ValueError(f"scheme {scheme!r} needs d = 1")
    box = system.domain
    sup = system.sup_derivatives()
    kept = np.flatnonzero(sup >= truncation_floor)
    if kept.size == 0:
        raise TruncationError("branch set is empty after applying the truncation floor")
    dropped = np.setdiff1d(np.arange(len(sup)), kept)
    truncated = float(np.sum(sup[dropped] ** delta_hint)) if dropped.size else 0.0
    sub = system.restricted(kept)
    sub.families = system.families

    if scheme == "collocation":
        nodes = graded_nodes(box, n_nodes)
        disc = Discretization(system, nodes, scheme, truncation_floor, truncated, delta_hint,
                              kept, tail_order)
        Y, L = images(sub, nodes)
        cols, frac = _linear_stencil(nodes[:, 0], Y[..., 0])
        rows = np.broadcast_to(np.arange(n_nodes), L.shape)
        disc._rows, disc._cols, disc._frac, disc._logj = rows.ravel(), cols.ravel(), \
            frac.ravel(), L.ravel()
        for fam in system.families:
            disc._tails.append((fam, None, nodes))
        return disc

    if scheme == "ulam":
        edges = np.linspace(box.lo[0], box.hi[0], n_nodes + 1)
        nodes = (0.5 * (edges[:-1] + edges[1:]))[:, None]
        gx, gw = np.polynomial.legendre.leggauss(quadrature)
        width = edges[1] - edges[0]
        pts = (nodes[:, 0, None] + 0.5 * width * gx[None, :]).ravel()[:, None]
        qw = np.tile(0.5 * gw, n_nodes)
        disc = Discretization(system, nodes, scheme, truncation_floor, truncated, delta_hint,
                              kept, 0)
        Y, L = images(sub, pts)
        cols = np.clip(np.searchsorted(edges, Y[..., 0], side="right") - 1, 0, n_nodes - 1)
        rows = np.broadcast_to(np.repeat(np.arange(n_nodes), quadrature), L.shape)
        disc._rows, disc._cols, disc._logj = rows.ravel(), cols.ravel(), L.ravel()
        disc._qw = np.broadcast_to(qw, L.shape).ravel()
        for fam in system.families:
            j = int(np.clip(np.searchsorted(edges, fam.limit_point[0], side="right") - 1,
                            0, n_nodes - 1))
            disc._tails.append((fam, (np.array([j]), np.ones((1, 1))), pts))
        return disc

    nodes = attractor_cloud(system, n_nodes, seed)
    disc = Discretization(system, nodes, scheme, truncation_floor, truncated, delta_hint, kept, 0)
    tree = cKDTree(nodes)
    Y, L = images(sub, nodes)
    dist, cols = tree.query(Y.reshape(-1, nodes.shape[1]))
    disc.interpolation_radius = float(dist.max())
    rows = np.broadcast_to(np.arange(n_nodes), L.shape)
    disc._rows, disc._cols, disc._logj = rows.ravel(), cols.ravel(), L.ravel()
    for fam in system.families:
        _, j = tree.query(fam.limit_point)
        disc._tails.append((fam, (np.array([int(j)]), np.ones((1, 1))), nodes))
    return disc


def _linear_stencil(x: np.ndarray, Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Left interpolation node and fractional position of each image point."""
    j = np.clip(np.searchsorted(x, Y, side="right") - 1, 0, x.size - 2)
    t = np.clip((Y - x[j]) / (x[j + 1] - x[j]), 0.0, 1.0)
    return j, t


# ---------------------------------------------------------------------------
# operator matrices

@dataclass(eq=False)
class OperatorMatrix:
    s: complex
    delta: float
    entries: np.ndarray

    @property
    def a_total(self) -> float:
        return self.delta + self.s.real


def _assemble_exponent(disc: Discretization, a: complex) -> np.ndarray:
    n = disc.n
    a = complex(a)
    real = a.imag == 0
    w = np.exp(a.real * disc._logj)
    if not real:
        w = w * np.exp(1j * a.imag * disc._logj)
    if disc.scheme == "ulam":
        w = w * disc._qw
    M = np.zeros(n * n, dtype=float if real else complex)

    def scatter(idx, vals):
        if real:
            M[:] += np.bincount(idx, vals.real if np.iscomplexobj(vals) else vals, minlength=n * n)
        else:
            M[:] += np.bincount(idx, vals.real, minlength=n * n) + \
                1j * np.bincount(idx, vals.imag, minlength=n * n)

    base = disc._rows * n + disc._cols
    if disc.scheme == "collocation":
        scatter(base, w * (1 - disc._frac))
        scatter(base + 1, w * disc._frac)
    else:
        scatter(base, w)
    x = disc.nodes[:, 0]
    for fam, stencil, pts in disc._tails:
        if stencil is None:
            T, W = fam.tail_quadrature(pts, a)
            cols, frac = _linear_stencil(x, fam.limit_point[0] + T)
            rows = np.broadcast_to(np.arange(n)[:, None], cols.shape)
            scatter((rows * n + cols).ravel(), (W * (1 - frac)).ravel())
            scatter((rows * n + cols + 1).ravel(), (W * frac).ravel())
            continue
        near, W = stencil
        C = fam.tail_weights(pts, a, 0)
        if disc.scheme == "ulam":
            # bin average of the tail weight over the quadrature points
            C = (C.reshape(C.shape[0], n, -1) * disc._qw[: pts.shape[0]].reshape(n, -1)).sum(-1)
        block = C.T @ W
        M.reshape(n, n)[:, near] += block.real if real else block
    return M.reshape(n, n)


def assemble(disc: Discretization, s: complex, delta: float | None = None) -> OperatorMatrix:
    """Operator at exponent delta + s (delta defaults to the discretization hint)."""
    delta = disc.delta_hint if delta is None else float(delta)
    s = complex(s)
    return OperatorMatrix(s, delta, _assemble_exponent(disc, delta + s))


def apply_direct(disc: Discretization, u: Callable, s: complex, delta: float | None = None,
                 X: np.ndarray | None = None) -> np.ndarray:
    """sum over kept explicit branches of |g'(x)|^(delta+s) u(g x) evaluated exactly."""
    delta = disc.delta_hint if delta is None else delta
    X = disc.nodes if X is None else X
    sub = disc.system.restricted(disc.kept)
    Y, L = images(sub, X)
    a = complex(delta + s)
    return np.sum(np.exp(a * L) * u(Y[..., 0] if X.shape[1] == 1 else Y), axis=0)


# ---------------------------------------------------------------------------
# eigen-data

@dataclass
class Spectrum:
    eigenvalue: complex
    right: np.ndarray
    left: np.ndarray
    second: complex
    gap: float
    iterations: int


def _power(A: np.ndarray, tol: float, max_iter: int, x0: np.ndarray) -> tuple[complex, np.ndarray, int]:
    x = x0 / np.linalg.norm(x0)
    lam = 0.0
    for k in range(1, max_iter + 1):
        y = A @ x
        lam = np.vdot(x, y)
        res = np.linalg.norm(y - lam * x)
        ny = np.linalg.norm(y)
        if ny == 0:
            return 0.0, x, k
        x = y / ny
        if res <= tol * max(abs(lam), 1e-300):
            return lam, x, k
    raise NonConvergenceError(f"power iteration did not converge in {max_iter} steps "
                              f"(residual {res:.3e})")


def leading_spectrum(m: OperatorMatrix | np.ndarray, tol: float = 1e-10, max_iter: int = 20000,
                     seed: int = 0, with_gap: bool = True) -> Spectrum:
    """Leading eigenvalue with right/left vectors, then the subdominant one by deflation."""
    M = m.entries if isinstance(m, OperatorMatrix) else np.asarray(m)
    n = M.shape[0]
    rng = np.random.default_rng(seed)
    start = np.ones(n) + 0.01 * rng.random(n)
    lam, r, it1 = _power(M, tol, max_iter, start.astype(M.dtype))
    lam_l, l, it2 = _power(M.T, tol, max_iter, start.astype(M.dtype))
    positive = not np.iscomplexobj(M) and np.all(M >= 0)
    if positive:
        lam = float(np.real(lam))
        r = np.abs(r)
        l = np.abs(l)
    else:
        r = r / r[np.argmax(np.abs(r))]
        l = l / l[np.argmax(np.abs(l))]
    second, gap = 0.0, 0.0
    if with_gap and n > 1:
        denom = l @ r
        D = M - lam * np.outer(r, l) / denom
        x0 = rng.standard_normal(n).astype(M.dtype)
        x0 -= r * (l @ x0) / denom
        try:
            second, _, _ = _power(D, tol * 10, max_iter, x0)
        except NonConvergenceError:
            # clustered or complex subdominant pair: dense solve
            ev = scipy.linalg.eigvals(D)
            second = ev[np.argmax(np.abs(ev))]
        if positive and abs(np.imag(second)) < 1e-12 * abs(second):
            second = float(np.real(second))
        gap = abs(second) / abs(lam)
    if positive:
        s = l.sum()
        l = l / s
    return Spectrum(lam, r, l, second, gap, max(it1, it2))


def spectral_radius(M: np.ndarray) -> float:
    return float(np.max(np.abs(scipy.linalg.eigvals(M))))


def min_singular_value(A: np.ndarray, tol: float = 1e-10, max_iter: int = 200) -> float:
    """Smallest singular value by inverse iteration on A^H A through one LU factorization."""
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
            lu = scipy.linalg.lu_factor(A, check_finite=False)
    except (ValueError, np.linalg.LinAlgError):
        return 0.0
    if np.any(np.abs(np.diag(lu[0])) == 0):
        return 0.0
    x = np.ones(A.shape[0], dtype=A.dtype) / math.sqrt(A.shape[0])
    est = None
    for _ in range(max_iter):
        y = scipy.linalg.lu_solve(lu, x, trans=2 if np.iscomplexobj(A) else 1, check_finite=False)
        z = scipy.linalg.lu_solve(lu, y, check_finite=False)
        nz = np.linalg.norm(z)
        new = 1.0 / math.sqrt(nz)
        x = z / nz
        if est is not None and abs(new - est) <= tol * new:
            return float(new)
        est = new
    return float(scipy.linalg.svdvals(A).min())


# ---------------------------------------------------------------------------
# critical exponent

@dataclass
class DeltaEstimate:
    delta: float
    bracket: tuple
    iterations: int
    truncated_mass: float
    truncation_shift: float
    history: list


def log_leading(disc: Discretization, a: float) -> float:
    if disc.system.families and 2 * a <= 1 + 1e-12:
        return math.inf
    M = _assemble_exponent(disc, a)
    lam = leading_spectrum(M, with_gap=False).eigenvalue
    if lam <= 0:
        return -math.inf
    return math.log(lam)


def default_bracket(system: BranchSystem) -> tuple:
    lo = 0.5 + 1e-9 if system.families else -1.0
    return lo, float(system.dim) + 1.0


def estimate_delta(disc: Discretization, bracket: tuple | None = None, tol: float = 1e-8) -> DeltaEstimate:
    """Root of a -> log lambda(a) by bisection; lambda is decreasing in a."""
    lo, hi = default_bracket(disc.system) if bracket is None else bracket
    f_lo, f_hi = log_leading(disc, lo), log_leading(disc, hi)
    history = [(lo, f_lo), (hi, f_hi)]
    if not (f_lo > 0 > f_hi):
        raise BracketError(f"log lambda has no sign change on [{lo}, {hi}]: "
                           f"values {f_lo:.4g}, {f_hi:.4g}")
    it = 0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        f = log_leading(disc, mid)
        history.append((mid, f))
        if f == 0:
            lo = hi = mid
            break
        if f > 0:
            lo = mid
        else:
            hi = mid
        it += 1
    delta = 0.5 * (lo + hi)
    h = 1e-4
    slope = (log_leading(disc, delta + h) - log_leading(disc, delta - h)) / (2 * h)
    tm = disc.truncated_mass
    shift = math.log1p(tm) / abs(slope) if tm and slope else 0.0
    return DeltaEstimate(delta, (lo, hi), it, tm, shift, history)


# ---------------------------------------------------------------------------
# reports

@dataclass(eq=False)
class SpectralReport:
    delta_estimate: float
    leading_eigenvalue: float
    right_eigenfunction: np.ndarray
    left_eigenvector: np.ndarray
    invariant_masses: np.ndarray
    gap: float
    second_eigenvalue: complex
    nodes: np.ndarray
    scheme: str
    truncated_mass: float
    b_norm_constant: float | None = None

    def to_dict(self) -> dict:
        return {"delta_estimate": self.delta_estimate,
                "leading_eigenvalue": self.leading_eigenvalue,
                "gap": self.gap,
                "second_eigenvalue": [float(np.real(self.second_eigenvalue)),
                                      float(np.imag(self.second_eigenvalue))],
                "scheme": self.scheme, "nodes": int(self.nodes.shape[0]),
                "truncated_mass": self.truncated_mass,
                "b_norm_constant": self.b_norm_constant}


def spectral_report(disc: Discretization, delta: float | None = None) -> SpectralReport:
    """Eigen-data at exponent delta (estimated when not given)."""
    if delta is None:
        delta = estimate_delta(disc).delta
    sp = leading_spectrum(assemble(disc, 0.0, delta))
    right = sp.right / np.dot(sp.left, sp.right)
    inv = sp.left * right
    inv = inv / inv.sum()
    return SpectralReport(float(delta), float(np.real(sp.eigenvalue)), right, sp.left, inv,
                          sp.gap, sp.second, disc.nodes, disc.scheme, disc.truncated_mass)


# ---------------------------------------------------------------------------
# measure diagnostics

class MeasureModel:
    """Ball masses of the discrete conformal measure."""

    def __init__(self, nodes: np.ndarray, masses: np.ndarray, box: Box):
        self.nodes = np.atleast_2d(nodes)
        self.masses = np.asarray(masses, dtype=float)
        self.box = box
        self.dim = self.nodes.shape[1]
        if self.dim == 1:
            x = self.nodes[:, 0]
            order = np.argsort(x)
            self.x = x[order]
            m = self.masses[order]
            edges = np.concatenate([[box.lo[0]], 0.5 * (self.x[1:] + self.x[:-1]), [box.hi[0]]])
            self.edges = edges
            self.cdf = np.concatenate([[0.0], np.cumsum(m)])
        else:
            self.tree = cKDTree(self.nodes)

    def ball(self, x, r: float) -> float:
        x = np.atleast_1d(np.asarray(x, float))
        if self.dim == 1:
            F = np.interp([x[0] - r, x[0] + r], self.edges, self.cdf)
            return float(F[1] - F[0])
        idx = self.tree.query_ball_point(x, r)
        return float(self.masses[idx].sum())

    def nodes_in_ball(self, x, r: float) -> int:
        x = np.atleast_1d(np.asarray(x, float))
        return int(np.sum(np.linalg.norm(self.nodes - x, axis=1) < r))

    def boundary_band(self, r: float) -> float:
        if self.dim == 1:
            lo, hi = self.box.lo[0], self.box.hi[0]
            F = np.interp([lo + r, hi - r], self.edges, self.cdf)
            return float(F[0] + self.cdf[-1] - F[1])
        return float(self.masses[self.box.boundary_distance(self.nodes) < r].sum())


@dataclass
class MeasureDiagnostics:
    doubling_max: float
    doubling_samples: int
    cusp_slopes: list
    boundary_ratio_sup: float
    warnings: list

    def to_dict(self) -> dict:
        return {"doubling_max": self.doubling_max, "doubling_samples": self.doubling_samples,
                "cusp_slopes": self.cusp_slopes, "boundary_ratio_sup": self.boundary_ratio_sup,
                "warnings": self.warnings}


def cusp_scaling(model: MeasureModel, p, radii: Sequence[float]) -> float:
    """Least-squares slope of log mu(B(p, r)) against log r."""
    masses = np.array([model.ball(p, r) for r in radii])
    ok = masses > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(np.asarray(radii)[ok]), np.log(masses[ok]), 1)[0])


def measure_diagnostics(report: SpectralReport, box: Box, cusps: Sequence = (),
                        samples: int = 200, min_nodes: int = 20, epsilon: float = 0.5,
                        seed: int = 0) -> MeasureDiagnostics:
    """Doubling ratios, cusp scaling slopes and boundary-band ratios of the conformal masses.

    ``cusps`` holds (p, h_p, k) triples; radii for each run from h_p down to the
    smallest ball still holding ``min_nodes`` nodes.
    """
    model = MeasureModel(report.nodes, report.left_eigenvector, box)
    warnings = []
    rng = np.random.default_rng(seed)
    masses = report.left_eigenvector
    prob = masses / masses.sum()
    centers = report.nodes[rng.choice(len(prob), size=samples, p=prob)]
    diam = float(np.linalg.norm(box.hi - box.lo))
    worst, count = 0.0, 0
    for x in centers:
        r = diam / 4
        while r > 0 and model.nodes_in_ball(x, r) >= min_nodes:
            small = model.ball(x, r)
            if small > 0:
                worst = max(worst, model.ball(x, 2 * r) / small)
                count += 1
            r /= 2
    if count == 0:
        warnings.append(f"insufficient resolution: fewer than {min_nodes} nodes in every sampled ball")
    slopes = []
    for p, h, k in cusps:
        p = np.atleast_1d(np.asarray(p, float))
        r_hi = float(h)
        r_lo = r_hi / 64
        while r_lo < r_hi and model.nodes_in_ball(p, r_lo) < min_nodes:
            r_lo *= 1.5
        if r_lo >= r_hi / 2:
            warnings.append(f"insufficient resolution near cusp point {p.tolist()}")
            continue
        radii = np.geomspace(r_lo, r_hi, 12)
        slopes.append({"p": p.tolist(), "h": float(h), "rank": int(k),
                       "slope": cusp_scaling(model, p, radii),
                       "expected": 2 * report.delta_estimate - k})
    ratios = []
    r = diam / 4
    while r > 1e-6 * diam:
        big = model.boundary_band(r)
        if big > 0 and model.boundary_band(epsilon * r) >= 0:
            ratios.append(model.boundary_band(epsilon * r) / big)
        r /= 2
    return MeasureDiagnostics(float(worst), count, slopes, float(max(ratios) if ratios else math.nan),
                              warnings)


# ---------------------------------------------------------------------------
# L2 contraction probe

@dataclass
class ContractionProbe:
    s: complex
    series: np.ndarray
    beta: float
    fit_start: int
    monotone_after: bool
    norm_proxy_sup: float

    def to_dict(self) -> dict:
        return {"s": [self.s.real, self.s.imag], "series": self.series.tolist(), "beta": self.beta,
                "fit_start": self.fit_start, "monotone_after_fit_start": self.monotone_after,
                "norm_proxy_sup": self.norm_proxy_sup}


def b_norm(u: np.ndarray, nodes: np.ndarray, b: float) -> float:
    """max(|u|_inf, Lip(u)/(1+|b|)) with the Lipschitz seminorm taken from node differences."""
    X = np.atleast_2d(nodes)
    if X.shape[1] == 1:
        order = np.argsort(X[:, 0])
        du = np.abs(np.diff(u[order]))
        dx = np.diff(X[order, 0])
        lip = float(np.max(du[dx > 0] / dx[dx > 0])) if np.any(dx > 0) else 0.0
    else:
        tree = cKDTree(X)
        dist, idx = tree.query(X, k=min(6, X.shape[0]))
        diff = np.abs(u[idx[:, 1:]] - u[:, None])
        with np.errstate(divide="ignore", invalid="ignore"):
            q = np.where(dist[:, 1:] > 0, diff / dist[:, 1:], 0.0)
        lip = float(q.max())
    return max(float(np.max(np.abs(u))), lip / (1 + abs(b)))


def l2_contraction_probe(disc: Discretization, s: complex, m_max: int, v: np.ndarray,
                         delta: float, fit_start: int = 5) -> ContractionProbe:
    """Squared L2(nu) norms of normalized operator powers applied to v, and their geometric rate."""
    s = complex(s)
    real = assemble(disc, s.real, delta)
    sp = leading_spectrum(real, with_gap=False)
    lam, f = float(np.real(sp.eigenvalue)), np.asarray(sp.right, float)
    nu = sp.left * f
    nu = nu / nu.sum()
    M = assemble(disc, s, delta).entries
    Lt = (M * f[None, :]) / (lam * f)[:, None]
    u = np.asarray(v, dtype=complex)
    norm0 = b_norm(u, disc.nodes, s.imag)
    series, proxy = [], []
    for _ in range(m_max):
        u = Lt @ u
        series.append(float(np.sum(nu * np.abs(u) ** 2)))
        proxy.append(b_norm(u, disc.nodes, s.imag) / norm0 if norm0 > 0 else 0.0)
    series = np.array(series)
    m = np.arange(1, m_max + 1)
    sel = (m > fit_start) & (series > 0)
    beta = math.nan
    if sel.sum() >= 2:
        beta = float(math.exp(np.polyfit(m[sel], np.log(series[sel]), 1)[0]))
    tail = series[fit_start:]
    monotone = bool(np.all(np.diff(tail) < 0)) if tail.size > 1 else False
    return ContractionProbe(s, series, beta, fit_start, monotone, float(max(proxy)))


# ---------------------------------------------------------------------------
# resonance scan

@dataclass
class ScanPoint:
    sigma: float
    b: float
    spectral_radius: float
    min_singular: float


@dataclass
class ResonanceScan:
    points: list
    threshold: float
    origin_cluster: list
    other_near_singular: list
    zero_free_strip: float
    note: str = "heuristic scan of I - M(s); not a certified resonance computation"

    def field(self) -> np.ndarray:
        return np.array([[p.sigma, p.b, p.spectral_radius, p.min_singular] for p in self.points])

    def to_dict(self) -> dict:
        return {"note": self.note, "threshold": self.threshold,
                "zero_free_strip": self.zero_free_strip,
                "origin_cluster": self.origin_cluster,
                "other_near_singular": self.other_near_singular,
                "points": [p.__dict__ for p in self.points]}


def resonance_scan(disc: Discretization, sigmas: Sequence[float], bs: Sequence[float],
                   delta: float, threshold: float = 1e-3, radius: bool = True) -> ResonanceScan:
    """min singular value of I - M(s) and spectral radius of M(s) on the grid sigma x b."""
    pts = []
    n = disc.n
    eye = np.eye(n)
    for sg in sigmas:
        for b in bs:
            M = assemble(disc, complex(sg, b), delta).entries
            rho = spectral_radius(M) if radius else math.nan
            pts.append(ScanPoint(float(sg), float(b), rho, min_singular_value(eye - M)))
    near = {(p.sigma, p.b) for p in pts if p.min_singular < threshold}
    grid_s, grid_b = sorted(set(sigmas)), sorted(set(bs))
    origin = None
    if grid_s and grid_b:
        s0 = min(grid_s, key=abs)
        b0 = min(grid_b, key=abs)
        origin = (float(s0), float(b0))
    cluster = set()
    if origin in near:
        stack = [origin]
        while stack:
            c = stack.pop()
            if c in cluster:
                continue
            cluster.add(c)
            i, j = grid_s.index(c[0]), grid_b.index(c[1])
            for di, dj in ((1, 0), (-1, 0), (0, 1), (0, -1)):
                ii, jj = i + di, j + dj
                if 0 <= ii < len(grid_s) and 0 <= jj < len(grid_b):
                    nb = (float(grid_s[ii]), float(grid_b[jj]))
                    if nb in near:
                        stack.append(nb)
    others = sorted(near - cluster)
    strip = min((-s for s, _ in others), default=-min(grid_s) if grid_s else 0.0)
    return ResonanceScan(pts, threshold, sorted(cluster), others, float(strip))
