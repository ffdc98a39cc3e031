"""Skew product and suspension semiflow over a coding, with the Hopf-coordinate factor map.

Arrays of phase points are evolved together.  A backward coordinate equal to
infinity is stored as a row of NaN.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .branches import BranchSystem
from .geometry import INF, Affine, HalfSpacePoint, Inversive, MobiusMap, apply, apply_many, \
    busemann, compose, deriv_many, invert


class EscapeError(RuntimeError):
    """The forward orbit left the coded region."""


@dataclass(frozen=True, eq=False)
class PhasePoint:
    x: np.ndarray
    x_minus: object
    s: float


class Suspension:
    """Expanding map T = g_j^{-1} on the cells g_j(Delta_0), its natural extension and roof.

    Parabolic families are located in closed form, so every member (not only
    the explicit ones) is a cell.
    """

    def __init__(self, system: BranchSystem, lambda_minus_radius: float = 0.0):
        if len(system.domains) != 1:
            raise ValueError("the suspension needs a single-domain coding; induce first")
        self.system = system
        self.box = system.domain
        self.lambda_minus_radius = float(lambda_minus_radius)
        self._fam = [(f, invert(f.base)) for f in system.families]
        self._explicit = [(b.map, invert(b.map)) for b in system.branches if b.family < 0]
        sups = system.sup_derivatives()
        self.lambda_max = float(sups.max()) if sups.size else 0.0

    @property
    def dim(self) -> int:
        return self.system.dim

    def _locate_family(self, k: int, X: np.ndarray):
        fam, binv = self._fam[k]
        with np.errstate(invalid="ignore", divide="ignore"):
            W = apply_many(binv, X)
        v = fam.step.shift
        v2 = float(v @ v)
        base_t = ((W - self.box.lo) @ v) / v2
        hi_t = ((W - self.box.hi) @ v) / v2
        # W - n v lies in the box along v when n sits between the two projections
        n0 = np.floor(np.minimum(base_t, hi_t) + 1e-300)
        best_n = np.full(X.shape[0], np.nan)
        for shift in (0, 1, -1, 2):
            n = n0 + shift
            with np.errstate(invalid="ignore"):
                Y = W - n[:, None] * v
            ok = np.isnan(best_n) & np.all(np.isfinite(Y), axis=1) & (n >= fam.start)
            ok &= np.all((Y >= self.box.lo) & (Y < self.box.hi), axis=1)
            best_n[ok] = n[ok]
        return best_n, W

    def step(self, X: np.ndarray, XM: np.ndarray):
        """One step of the skew product: returns (T x, T x_minus, R(x), ok)."""
        N = X.shape[0]
        Y = np.full_like(X, np.nan)
        YM = np.full_like(XM, np.nan)
        R = np.full(N, np.nan)
        done = np.zeros(N, bool)
        for k, (fam, binv) in enumerate(self._fam):
            idx = np.flatnonzero(~done)
            if not idx.size:
                break
            n, W = self._locate_family(k, X[idx])
            hit = ~np.isnan(n)
            if not hit.any():
                continue
            sel = idx[hit]
            shift = n[hit][:, None] * fam.step.shift
            Y[sel] = W[hit] - shift
            R[sel] = np.log(deriv_many(binv, X[sel]))
            YM[sel] = self._backward(binv, XM[sel]) - shift
            done[sel] = True
        for g, ginv in self._explicit:
            idx = np.flatnonzero(~done)
            if not idx.size:
                break
            Z = apply_many(ginv, X[idx])
            hit = np.all(np.isfinite(Z), axis=1) & np.all((Z >= self.box.lo) & (Z <= self.box.hi), axis=1)
            sel = idx[hit]
            Y[sel] = Z[hit]
            R[sel] = np.log(deriv_many(ginv, X[sel]))
            YM[sel] = self._backward(ginv, XM[sel])
            done[sel] = True
        return Y, YM, R, done

    @staticmethod
    def _backward(m: MobiusMap, XM: np.ndarray) -> np.ndarray:
        out = np.full_like(XM, np.nan)
        at_inf = np.any(np.isnan(XM), axis=1)
        if (~at_inf).any():
            out[~at_inf] = apply_many(m, XM[~at_inf])
        if at_inf.any() and isinstance(m, Inversive):
            out[at_inf] = m.p
        return out

    def inverse_branch(self, x: np.ndarray) -> MobiusMap:
        """The expanding map g_j^{-1} on the cell containing x."""
        x = np.atleast_2d(x)
        for k, (fam, binv) in enumerate(self._fam):
            n, _ = self._locate_family(k, x)
            if not np.isnan(n[0]):
                return compose(Affine.translation(-n[0] * fam.step.shift), binv)
        for g, ginv in self._explicit:
            z = apply_many(ginv, x)
            if np.all(np.isfinite(z)) and np.all((z >= self.box.lo) & (z <= self.box.hi)):
                return ginv
        raise EscapeError(f"no cell contains {x[0].tolist()}")

    def roof(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        return self.step(X, np.full_like(X, np.nan))[2]


@dataclass
class RoofFunction:
    suspension: Suspension

    def __call__(self, X) -> np.ndarray:
        return self.suspension.roof(np.atleast_2d(np.asarray(X, float)))

    @property
    def lower_bound(self) -> float:
        lam = self.suspension.lambda_max
        return -math.log(lam) if lam > 0 else math.inf


# ---------------------------------------------------------------------------
# sampling and evolution

@dataclass(eq=False)
class PhaseSample:
    x: np.ndarray
    x_minus: np.ndarray
    s: np.ndarray
    roof: np.ndarray
    escaped: int = 0

    def __len__(self) -> int:
        return self.s.shape[0]

    def point(self, i: int) -> PhasePoint:
        xm = INF if np.any(np.isnan(self.x_minus[i])) else self.x_minus[i].copy()
        return PhasePoint(self.x[i].copy(), xm, float(self.s[i]))


def _jitter(nodes: np.ndarray, box, idx: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw in the Voronoi cell (d = 1) or half-nearest-neighbour ball of each chosen node."""
    d = nodes.shape[1]
    if d == 1:
        order = np.argsort(nodes[:, 0])
        xs = nodes[order, 0]
        mids = np.concatenate([[box.lo[0]], (xs[1:] + xs[:-1]) / 2, [box.hi[0]]])
        rank = np.empty_like(order)
        rank[order] = np.arange(order.size)
        r = rank[idx]
        return (mids[r] + rng.random(idx.size) * (mids[r + 1] - mids[r]))[:, None]
    from scipy.spatial import cKDTree
    dist, _ = cKDTree(nodes).query(nodes, k=2)
    rad = 0.5 * dist[:, 1]
    u = rng.standard_normal((idx.size, d))
    u /= np.linalg.norm(u, axis=1)[:, None]
    out = nodes[idx] + u * (rad[idx] * rng.random(idx.size) ** (1 / d))[:, None]
    return np.clip(out, box.lo, box.hi)


def sample_base(susp: Suspension, report, n: int, seed: int = 0, burn: int = 50):
    """Draw (x, x_minus) from nu-hat: x from the invariant masses, then `burn` skew-product steps.

    Returns (X, XM, alive, rng); escaped draws are marked dead.
    """
    rng = np.random.default_rng(seed)
    masses = np.asarray(report.invariant_masses, float)
    masses = masses / masses.sum()
    idx = rng.choice(masses.size, size=n, p=masses)
    X = _jitter(np.atleast_2d(report.nodes), susp.box, idx, rng)
    XM = np.full_like(X, np.nan)
    alive = np.ones(n, bool)
    for _ in range(burn):
        X, XM, _, ok = susp.step(X, XM)
        alive &= ok
        X[~ok] = susp.box.lo
        XM[~ok] = np.nan
    return X, XM, alive, rng


def sample_phase(susp: Suspension, report, n: int, seed: int = 0, burn: int = 50) -> PhaseSample:
    """Draw from nu-hat x dt / R-bar restricted to s < R(x).

    The x-marginal is size-biased by R; it is realized by resampling the
    nu-hat draws with weights R(x), since no envelope exists when R is unbounded.
    """
    X, XM, alive, rng = sample_base(susp, report, n, seed, burn)
    with np.errstate(divide="ignore", invalid="ignore"):
        R = susp.roof(X)
    alive &= np.isfinite(R) & (R > 0)
    w = np.where(alive, R, 0.0)
    pick = rng.choice(n, size=n, p=w / w.sum())
    X, XM, R = X[pick], XM[pick], R[pick]
    S = rng.random(n) * R
    return PhaseSample(X, XM, S, R, escaped=int((~alive).sum()))


def in_lambda_minus(susp: Suspension, XM: np.ndarray) -> np.ndarray:
    """Backward coordinates at infinity or beyond the configured radius."""
    XM = np.atleast_2d(XM)
    at_inf = np.any(np.isnan(XM), axis=1)
    return at_inf | (np.linalg.norm(np.nan_to_num(XM), axis=1) >= susp.lambda_minus_radius)


def evolve_arrays(susp: Suspension, X, XM, S, t: float, R=None):
    """Advance arrays of phase points by time t >= 0; escaped points come back as NaN."""
    if t < 0:
        raise ValueError("the semiflow is defined for t >= 0")
    X, XM = X.copy(), XM.copy()
    S = np.asarray(S, float) + t
    R = susp.roof(X) if R is None else R.copy()
    live = np.isfinite(R)
    while True:
        move = live & (S >= R)
        if not move.any():
            break
        idx = np.flatnonzero(move)
        S[idx] -= R[idx]
        Y, YM, _, ok = susp.step(X[idx], XM[idx])
        X[idx], XM[idx] = Y, YM
        Rn = np.full(idx.size, np.nan)
        if ok.any():
            Rn[ok] = susp.roof(Y[ok])
        R[idx] = Rn
        live[idx] = ok & np.isfinite(Rn)
    X[~live] = np.nan
    S[~live] = np.nan
    return X, XM, S, R


def evolve_path(susp: Suspension, p: PhasePoint, t: float):
    """Scalar evolution recording the expanding maps used; returns (point, maps, roof values)."""
    if t < 0:
        raise ValueError("the semiflow is defined for t >= 0")
    x = np.asarray(p.x, float)
    xm = p.x_minus
    s = p.s + t
    maps, roofs = [], []
    while True:
        g = susp.inverse_branch(x)
        r = float(np.log(deriv_many(g, x[None, :]))[0])
        if s < r:
            break
        s -= r
        maps.append(g)
        roofs.append(r)
        xm = g.p if (xm is INF and isinstance(g, Inversive)) else (xm if xm is INF else apply(g, xm))
        x = apply(g, x)
    return PhasePoint(x, xm, s), maps, roofs


def evolve(susp: Suspension, p: PhasePoint, t: float) -> PhasePoint:
    return evolve_path(susp, p, t)[0]


# ---------------------------------------------------------------------------
# factor map

def hopf_time(x: np.ndarray, s) -> np.ndarray:
    """Time change s + log(1 + |x|^2) to the Hopf coordinate beta_x(o, v_*)."""
    x = np.atleast_2d(x)
    return np.asarray(s) + np.log1p(np.sum(x * x, axis=1))


def factor_project(p: PhasePoint) -> tuple:
    return p.x, p.x_minus, float(hopf_time(p.x, p.s)[0])


def lift(x: np.ndarray, r: float) -> HalfSpacePoint:
    """Base point of the vector from infinity down to x with Hopf time r."""
    x = np.asarray(x, float)
    return HalfSpacePoint(x, (1.0 + float(x @ x)) * math.exp(-r))


def semiconjugacy_residual(susp: Suspension, p: PhasePoint, t: float) -> float:
    """|r(Phi T_t p) - (r(Phi p) + t - beta_x(o, gamma o))| with gamma^{-1} the composed expanding map."""
    q, maps, _ = evolve_path(susp, p, t)
    d = susp.dim
    g_inv = None
    for m in maps:
        g_inv = m if g_inv is None else compose(m, g_inv)
    cocycle = 0.0
    if g_inv is not None:
        gamma = invert(g_inv)
        o = HalfSpacePoint.origin(d)
        cocycle = busemann(np.asarray(p.x, float), o, apply(gamma, o))
    lhs = factor_project(q)[2]
    rhs = factor_project(p)[2] + t - cocycle
    return abs(lhs - rhs)


# ---------------------------------------------------------------------------
# correlations

Observable = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


def observable(name) -> Observable:
    """'x', 'x0', 'x1', ... (a boundary coordinate), 'constant', 's', or a callable."""
    if callable(name):
        return name
    if name == "constant":
        return lambda X, XM, S: np.ones(X.shape[0])
    if name == "s":
        return lambda X, XM, S: S
    if isinstance(name, str) and name.startswith("x"):
        k = int(name[1:] or 0)
        return lambda X, XM, S: X[:, k]
    raise ValueError(f"unknown observable {name!r}")


@dataclass
class CorrelationSeries:
    times: np.ndarray
    rho: np.ndarray
    stderr: np.ndarray
    fitted_eta: float
    fit_quality: float
    sample_count: int
    window: tuple
    noise_floor: float
    escaped: int = 0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return {"fitted_eta": self.fitted_eta, "fit_quality": self.fit_quality,
                "window": list(self.window), "noise_floor": self.noise_floor,
                "sample_count": self.sample_count, "escaped": self.escaped,
                "degenerate": self.degenerate, "times": self.times.tolist(),
                "rho": self.rho.tolist(), "stderr": self.stderr.tolist()}

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "rho", "stderr"])
            for row in zip(self.times, self.rho, self.stderr):
                w.writerow([repr(float(v)) for v in row])

    def write_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump({k: v for k, v in self.to_dict().items() if k not in ("times", "rho", "stderr")},
                      fh, indent=2)


def fit_decay(times: np.ndarray, rho: np.ndarray, stderr: np.ndarray, k: float = 3.0):
    """Fit log|rho| = c - eta t on the initial run where |rho| > k * stderr."""
    sig = np.abs(rho) > k * stderr
    end = int(np.argmin(sig)) if not sig.all() else sig.size
    if end < 3:
        return math.nan, math.nan, (0, end)
    t, y = times[:end], np.log(np.abs(rho[:end]))
    slope, icpt = np.polyfit(t, y, 1)
    pred = icpt + slope * t
    ss = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss if ss > 0 else 0.0
    return float(-slope), r2, (0, end)


def correlation(susp: Suspension, report, phi, psi, times: Sequence[float], n_samples: int = 10**6,
                seed: int = 0, batches: int = 20, chunk: int = 250_000) -> CorrelationSeries:
    """Monte-Carlo rho(t) = E[phi . psi o T_t] - E phi E psi with batch-means error bars."""
    times = np.asarray(sorted(times), float)
    if np.any(times < 0) or np.any(np.diff(times) <= 0):
        raise ValueError("times must be nonnegative and strictly increasing")
    phi, psi = observable(phi), observable(psi)
    batch_of = np.arange(n_samples) * batches // n_samples
    sums = np.zeros((times.size, batches, 3))       # phi*psi_t, phi, psi_t
    counts = np.zeros((times.size, batches))
    escaped = 0
    rng = np.random.default_rng(seed)
    seeds = rng.integers(0, 2**63 - 1, size=(n_samples + chunk - 1) // chunk)
    for c, start in enumerate(range(0, n_samples, chunk)):
        m = min(chunk, n_samples - start)
        sample = sample_phase(susp, report, m, seed=int(seeds[c]))
        escaped += sample.escaped
        X, XM, S, R = sample.x, sample.x_minus, sample.s, sample.roof
        f0 = phi(X, XM, S)
        b = batch_of[start:start + m]
        prev = 0.0
        for i, t in enumerate(times):
            X, XM, S, R = evolve_arrays(susp, X, XM, S, t - prev, R)
            prev = t
            ok = np.isfinite(S)
            g = np.where(ok, psi(np.nan_to_num(X), XM, np.nan_to_num(S)), 0.0)
            sums[i, :, 0] += np.bincount(b[ok], (f0 * g)[ok], batches)
            sums[i, :, 1] += np.bincount(b[ok], f0[ok], batches)
            sums[i, :, 2] += np.bincount(b[ok], g[ok], batches)
            counts[i] += np.bincount(b[ok], minlength=batches)
        escaped += int((~np.isfinite(S)).sum())
    with np.errstate(invalid="ignore", divide="ignore"):
        means = sums / counts[:, :, None]
    per_batch = means[:, :, 0] - means[:, :, 1] * means[:, :, 2]
    tot = sums.sum(axis=1) / counts.sum(axis=1)[:, None]
    rho = tot[:, 0] - tot[:, 1] * tot[:, 2]
    stderr = per_batch.std(axis=1, ddof=1) / math.sqrt(batches)
    eta, r2, window = fit_decay(times, rho, stderr)
    floor = float(np.median(stderr))
    return CorrelationSeries(times, rho, stderr, eta, r2, n_samples, window, floor, escaped,
                             degenerate=not math.isfinite(eta))
