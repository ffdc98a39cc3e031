"""Mobius geometry on the boundary R^d u {inf} and on upper half-space.

Boundary points are numpy vectors of length ``d`` or the singleton :data:`INF`.
Maps come in two normal forms:

* :class:`Inversive` -- ``x -> h * A (x - p_inv) / |x - p_inv|^2 + p``, the
  Bruhat form of an isometry that moves infinity (``p = m(inf)``,
  ``p_inv = m^{-1}(inf)``);
* :class:`Affine` -- ``x -> scale * linear @ x + shift``, maps fixing infinity.

``A`` and ``linear`` are orthogonal but not necessarily orientation preserving:
for ``d = 1`` the map ``x -> -1/(x+2)`` needs ``A = -1``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Union

import numpy as np


class _Infinity:
    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "INF"

    def __reduce__(self):
        return (_Infinity, ())


INF = _Infinity()

BoundaryPoint = Union[np.ndarray, _Infinity]


@dataclass
class Tolerances:
    structural: float = 1e-10
    analytic: float = 1e-8
    finite_difference: float = 1e-6


TOL = Tolerances()


def set_tolerances(**kwargs: float) -> None:
    for key, value in kwargs.items():
        if not hasattr(TOL, key):
            raise KeyError(f"unknown tolerance {key!r}")
        setattr(TOL, key, float(value))


class GeometryError(ValueError):
    pass


class PoleError(GeometryError):
    """Euclidean distortion requested at the pole of a map."""


class DimensionError(GeometryError):
    pass


def is_inf(x) -> bool:
    return x is INF


def point(x, d: int | None = None) -> BoundaryPoint:
    if x is INF:
        return INF
    arr = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    if arr.ndim != 1:
        raise GeometryError("boundary point must be a vector")
    if d is not None and arr.shape[0] != d:
        raise DimensionError(f"expected dimension {d}, got {arr.shape[0]}")
    if not np.all(np.isfinite(arr)):
        raise GeometryError("finite boundary point has non-finite coordinates")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class HalfSpacePoint:
    base: np.ndarray
    height: float

    def __post_init__(self):
        base = np.atleast_1d(np.asarray(self.base, dtype=float)).copy()
        base.setflags(write=False)
        object.__setattr__(self, "base", base)
        object.__setattr__(self, "height", float(self.height))
        if not self.height > 0:
            raise GeometryError("half-space point needs positive height")

    @property
    def dim(self) -> int:
        return self.base.shape[0]

    @classmethod
    def origin(cls, d: int) -> "HalfSpacePoint":
        return cls(np.zeros(d), 1.0)


def _orthogonal(M, size: int, name: str) -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=float)).copy()
    if M.shape != (size, size):
        raise DimensionError(f"{name} must be {size}x{size}, got {M.shape}")
    if not np.allclose(M.T @ M, np.eye(size), atol=TOL.structural * 10 * max(size, 1)):
        raise GeometryError(f"{name} is not orthogonal")
    M.setflags(write=False)
    return M


def _polar(M: np.ndarray) -> np.ndarray:
    u, _, vt = np.linalg.svd(M)
    return u @ vt


class MobiusMap:
    """Common interface of the two normal forms."""

    dim: int

    def __call__(self, x):
        return apply(self, x)

    def key(self, resolution: float = 1e-9) -> tuple:
        raise NotImplementedError


def _rounded(values, resolution: float) -> tuple:
    arr = np.round(np.asarray(values, dtype=float).ravel() / resolution)
    return tuple(int(v) for v in arr)


@dataclass(frozen=True, eq=False)
class Inversive(MobiusMap):
    p: np.ndarray
    p_inv: np.ndarray
    h: float
    A: np.ndarray

    def __post_init__(self):
        p = point(self.p)
        d = p.shape[0]
        object.__setattr__(self, "p", p)
        object.__setattr__(self, "p_inv", point(self.p_inv, d))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "A", _orthogonal(self.A, d, "A"))
        if not self.h > 0:
            raise GeometryError("Inversive map needs h > 0")

    @property
    def dim(self) -> int:
        return self.p.shape[0]

    @property
    def orientation(self) -> int:
        # the inversion itself reverses orientation
        return -int(np.sign(np.linalg.det(self.A)))

    def key(self, resolution: float = 1e-9) -> tuple:
        return ("I",) + _rounded(self.p, resolution) + _rounded(self.p_inv, resolution) + \
            _rounded([self.h], resolution) + _rounded(self.A, resolution)

    def __repr__(self) -> str:
        return f"Inversive(p={self.p.tolist()}, p_inv={self.p_inv.tolist()}, h={self.h!r}, A={self.A.tolist()})"


@dataclass(frozen=True, eq=False)
class Affine(MobiusMap):
    linear: np.ndarray
    shift: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        shift = point(self.shift)
        d = shift.shape[0]
        object.__setattr__(self, "shift", shift)
        object.__setattr__(self, "linear", _orthogonal(self.linear, d, "linear"))
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise GeometryError("Affine map needs scale > 0")

    @property
    def dim(self) -> int:
        return self.shift.shape[0]

    @classmethod
    def identity(cls, d: int) -> "Affine":
        return cls(np.eye(d), np.zeros(d))

    @classmethod
    def translation(cls, v) -> "Affine":
        v = np.atleast_1d(np.asarray(v, dtype=float))
        return cls(np.eye(v.shape[0]), v)

    @classmethod
    def from_blocks(cls, A, R, b) -> "Affine":
        """Cusp-stabilizer element ``(y, z) -> (A y, R z + b)`` on ``Y x Z``."""
        A = np.atleast_2d(np.asarray(A, dtype=float)) if np.size(A) else np.zeros((0, 0))
        R = np.atleast_2d(np.asarray(R, dtype=float))
        b = np.atleast_1d(np.asarray(b, dtype=float))
        m, k = A.shape[0], R.shape[0]
        lin = np.zeros((m + k, m + k))
        lin[:m, :m] = A
        lin[m:, m:] = R
        return cls(lin, np.concatenate([np.zeros(m), b]))

    def is_identity(self, tol: float | None = None) -> bool:
        tol = TOL.structural if tol is None else tol
        return (abs(self.scale - 1) <= tol and np.allclose(self.linear, np.eye(self.dim), atol=tol)
                and np.allclose(self.shift, 0, atol=tol))

    def key(self, resolution: float = 1e-9) -> tuple:
        return ("A",) + _rounded(self.shift, resolution) + _rounded([self.scale], resolution) + \
            _rounded(self.linear, resolution)

    def __repr__(self) -> str:
        return f"Affine(linear={self.linear.tolist()}, shift={self.shift.tolist()}, scale={self.scale!r})"


def identity(d: int) -> Affine:
    return Affine.identity(d)


# ---------------------------------------------------------------------------
# action

def apply(m: MobiusMap, x):
    if isinstance(x, HalfSpacePoint):
        return _apply_half_space(m, x)
    if x is INF:
        return INF if isinstance(m, Affine) else m.p
    x = np.asarray(x, dtype=float)
    if x.shape != (m.dim,):
        raise DimensionError(f"point of shape {x.shape} for map of dimension {m.dim}")
    if isinstance(m, Affine):
        return point(m.scale * (m.linear @ x) + m.shift)
    y = x - m.p_inv
    r2 = float(y @ y)
    if r2 == 0.0:
        return INF
    return point(m.h * (m.A @ y) / r2 + m.p)


def _apply_half_space(m: MobiusMap, z: HalfSpacePoint) -> HalfSpacePoint:
    if isinstance(m, Affine):
        return HalfSpacePoint(m.scale * (m.linear @ z.base) + m.shift, m.scale * z.height)
    y = z.base - m.p_inv
    r2 = float(y @ y) + z.height ** 2
    return HalfSpacePoint(m.h * (m.A @ y) / r2 + m.p, m.h * z.height / r2)


def apply_many(m: MobiusMap, X: np.ndarray) -> np.ndarray:
    """Vectorized action on finite points, shape (n, d); poles map to inf rows."""
    X = np.asarray(X, dtype=float)
    if isinstance(m, Affine):
        return m.scale * X @ m.linear.T + m.shift
    Y = X - m.p_inv
    r2 = np.einsum("ij,ij->i", Y, Y)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = m.h * (Y @ m.A.T) / r2[:, None] + m.p
    out[r2 == 0] = np.inf
    return out


def deriv(m: MobiusMap, x, metric: str = "euclidean") -> float:
    """Linear distortion |m'(x)| in the euclidean or spherical metric."""
    if metric not in ("euclidean", "spherical"):
        raise ValueError(f"unknown metric {metric!r}")
    if isinstance(m, Affine):
        if metric == "euclidean":
            if x is INF:
                raise PoleError("euclidean distortion at infinity")
            return m.scale
        if x is INF:
            return 1.0 / m.scale
        gx = apply(m, x)
        return (1 + float(x @ x)) / (1 + float(gx @ gx)) * m.scale
    if x is INF:
        if metric == "euclidean":
            raise PoleError("euclidean distortion at infinity")
        return m.h / (1 + float(m.p @ m.p))
    x = np.asarray(x, dtype=float)
    y = x - m.p_inv
    r2 = float(y @ y)
    if r2 == 0.0:
        if metric == "euclidean":
            raise PoleError("x is the pole of the map")
        return (1 + float(x @ x)) / m.h
    e = m.h / r2
    if metric == "euclidean":
        return e
    gx = m.h * (m.A @ y) / r2 + m.p
    return (1 + float(x @ x)) / (1 + float(gx @ gx)) * e


def deriv_many(m: MobiusMap, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if isinstance(m, Affine):
        return np.full(X.shape[0], m.scale)
    Y = X - m.p_inv
    with np.errstate(divide="ignore"):
        return m.h / np.einsum("ij,ij->i", Y, Y)


def jacobian(m: MobiusMap, x) -> np.ndarray:
    if isinstance(m, Affine):
        return m.scale * m.linear
    y = np.asarray(x, dtype=float) - m.p_inv
    r2 = float(y @ y)
    if r2 == 0.0:
        raise PoleError("jacobian at the pole")
    u = y / np.sqrt(r2)
    return m.h / r2 * m.A @ (np.eye(m.dim) - 2 * np.outer(u, u))


def grad_log_deriv(m: MobiusMap, x, e) -> float:
    """Directional derivative of log|m'| at x along the unit vector e."""
    if isinstance(m, Affine):
        return 0.0
    y = np.asarray(x, dtype=float) - m.p_inv
    r2 = float(y @ y)
    if r2 == 0.0:
        raise PoleError("x is the pole of the map")
    return -2.0 * float(y @ np.atleast_1d(np.asarray(e, dtype=float))) / r2


# ---------------------------------------------------------------------------
# group operations

def invert(m: MobiusMap) -> MobiusMap:
    if isinstance(m, Affine):
        lin = m.linear.T
        return Affine(lin, -(lin @ m.shift) / m.scale, 1.0 / m.scale)
    return Inversive(m.p_inv, m.p, m.h, m.A.T)


def _close(a: np.ndarray, b: np.ndarray) -> bool:
    scale = max(1.0, float(np.max(np.abs(a))), float(np.max(np.abs(b))))
    return float(np.max(np.abs(a - b))) <= TOL.structural * scale


def compose(m1: MobiusMap, m2: MobiusMap) -> MobiusMap:
    """The map ``x -> m1(m2(x))`` in normal form."""
    if m1.dim != m2.dim:
        raise DimensionError(f"cannot compose dimensions {m1.dim} and {m2.dim}")
    if isinstance(m1, Affine) and isinstance(m2, Affine):
        return Affine(_polar(m1.linear @ m2.linear),
                      m1.scale * (m1.linear @ m2.shift) + m1.shift,
                      m1.scale * m2.scale)
    if isinstance(m1, Affine):
        return Inversive(m1.scale * (m1.linear @ m2.p) + m1.shift, m2.p_inv,
                         m1.scale * m2.h, _polar(m1.linear @ m2.A))
    if isinstance(m2, Affine):
        pole = m2.linear.T @ (m1.p_inv - m2.shift) / m2.scale
        return Inversive(m1.p, pole, m1.h / m2.scale, _polar(m1.A @ m2.linear))
    if _close(m2.p, m1.p_inv):
        ratio = m1.h / m2.h
        lin = _polar(m1.A @ m2.A)
        return Affine(lin, m1.p - ratio * (lin @ m2.p_inv), ratio)
    p = apply(m1, m2.p)
    p_inv = apply(invert(m2), m1.p_inv)
    diff = m2.p - m1.p_inv
    h = m1.h * m2.h / float(diff @ diff)
    # recover A from the jacobian at a point away from both poles
    d = m1.dim
    for direction in np.eye(d) if d > 0 else []:
        x = p_inv + direction
        if np.linalg.norm(x - m2.p_inv) > 1e-3:
            break
    else:
        x = p_inv + 0.5 * np.ones(d)
    J = jacobian(m1, apply(m2, x)) @ jacobian(m2, x)
    y = x - p_inv
    r2 = float(y @ y)
    u = y / np.sqrt(r2)
    A = _polar(J * r2 / h @ (np.eye(d) - 2 * np.outer(u, u)))
    return Inversive(p, p_inv, h, A)


def compose_all(maps, d: int) -> MobiusMap:
    out: MobiusMap = identity(d)
    for m in maps:
        out = compose(out, m)
    return out


def maps_close(m1: MobiusMap, m2: MobiusMap, tol: float | None = None) -> bool:
    tol = TOL.structural * 10 if tol is None else tol
    if type(m1) is not type(m2) or m1.dim != m2.dim:
        return False
    if isinstance(m1, Affine):
        return (abs(m1.scale - m2.scale) <= tol and np.allclose(m1.linear, m2.linear, atol=tol)
                and np.allclose(m1.shift, m2.shift, atol=tol))
    return (abs(m1.h - m2.h) <= tol * max(1, m1.h) and np.allclose(m1.p, m2.p, atol=tol)
            and np.allclose(m1.p_inv, m2.p_inv, atol=tol) and np.allclose(m1.A, m2.A, atol=tol))


# ---------------------------------------------------------------------------
# matrix forms

def from_matrix(M, dim: int | None = None) -> MobiusMap:
    """Mobius map of a 2x2 matrix: real entries give d = 1, complex give d = 2.

    Pass ``dim=2`` to read a real matrix as acting on the plane.
    """
    M = np.asarray(M)
    if M.shape != (2, 2):
        raise DimensionError("expected a 2x2 matrix")
    if dim not in (None, 1, 2):
        raise DimensionError("matrix forms exist for d = 1 and d = 2 only")
    if dim == 1 and np.iscomplexobj(M) and np.any(np.imag(M) != 0):
        raise DimensionError("complex entries need d = 2")
    if dim == 2 or (dim is None and np.iscomplexobj(M) and np.any(np.imag(M) != 0)):
        return _from_complex(M.astype(complex))
    a, b, c, d = (float(v) for v in np.real(M).ravel())
    det = a * d - b * c
    if det == 0:
        raise GeometryError("singular matrix")
    if c == 0:
        return Affine(np.array([[np.sign(a / d)]]), [b / d], abs(a / d))
    return Inversive([a / c], [-d / c], abs(det) / c ** 2, [[-np.sign(det)]])


def _from_complex(M: np.ndarray) -> MobiusMap:
    a, b, c, d = M.ravel()
    det = a * d - b * c
    if det == 0:
        raise GeometryError("singular matrix")
    if c == 0:
        w = a / d
        rot = np.array([[w.real, -w.imag], [w.imag, w.real]]) / abs(w)
        t = b / d
        return Affine(rot, [t.real, t.imag], abs(w))
    p, p_inv = a / c, -d / c
    w = -det / c ** 2
    # z -> w / (z - p_inv) = w * conj(z - p_inv) / |z - p_inv|^2
    rot = np.array([[w.real, -w.imag], [w.imag, w.real]]) / abs(w)
    A = rot @ np.diag([1.0, -1.0])
    return Inversive([p.real, p.imag], [p_inv.real, p_inv.imag], abs(w), A)


def to_matrix(m: MobiusMap) -> np.ndarray:
    """2x2 real matrix of a d = 1 map (determinant +-1)."""
    if m.dim != 1:
        raise DimensionError("to_matrix is defined for d = 1")
    if isinstance(m, Affine):
        a = m.scale * m.linear[0, 0]
        s = np.sqrt(abs(a))
        return np.array([[a / s, m.shift[0] / s], [0.0, 1.0 / s]])
    # x -> p + hA / (x - p_inv):  [[p, hA - p p_inv], [1, -p_inv]] / sqrt(h)
    p, q, hA = m.p[0], m.p_inv[0], m.h * m.A[0, 0]
    s = np.sqrt(m.h)
    return np.array([[p, hA - p * q], [1.0, -q]]) / s


# ---------------------------------------------------------------------------
# hyperbolic quantities

def hyperbolic_distance(x: HalfSpacePoint, y: HalfSpacePoint) -> float:
    diff = np.concatenate([x.base - y.base, [x.height - y.height]])
    return 2.0 * float(np.arcsinh(np.linalg.norm(diff) / (2.0 * np.sqrt(x.height * y.height))))


def busemann(x, z: HalfSpacePoint, z2: HalfSpacePoint) -> float:
    """beta_x(z, z2) = lim d(z, x_t) - d(z2, x_t) along a ray tending to x."""
    if x is INF:
        return float(np.log(z2.height / z.height))
    d = z.dim
    to_inf = Inversive(np.zeros(d), x, 1.0, np.eye(d))
    return busemann(INF, apply(to_inf, z), apply(to_inf, z2))
