import math

import numpy as np
import pytest

from cuspflow.geometry import (INF, Affine, DimensionError, HalfSpacePoint, Inversive, PoleError,
                               apply, busemann, compose, deriv, from_matrix, grad_log_deriv,
                               hyperbolic_distance, identity, invert, maps_close, to_matrix)


def random_map(rng, d):
    if rng.random() < 0.3:
        q, _ = np.linalg.qr(rng.standard_normal((d, d)))
        return Affine(q, rng.standard_normal(d), rng.uniform(0.5, 2))
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return Inversive(rng.standard_normal(d), rng.standard_normal(d), rng.uniform(0.2, 3), q)


def fd_deriv(m, x, h=1e-6):
    """Finite-difference distortion along the first axis."""
    e = np.zeros_like(x)
    e[0] = h
    return np.linalg.norm(apply(m, x + e) - apply(m, x - e)) / (2 * h)


def test_identity_and_pole():
    x = np.array([0.3])
    assert np.allclose(apply(identity(1), x), x)
    m = Inversive([0.0], [-2.0], 1.0, [[-1.0]])
    assert apply(m, np.array([-2.0])) is INF
    assert np.allclose(apply(m, INF), [0.0])


def test_matrix_form_value():
    m = from_matrix([[0, -1], [1, 2]])          # x -> -1/(x+2)
    assert apply(m, np.array([0.0]))[0] == pytest.approx(-0.5, abs=1e-15)


def test_deriv_examples():
    x = np.array([0.0])
    m = Inversive([0.0], [-2.0], 1.0, [[-1.0]])
    assert deriv(m, x) == pytest.approx(0.25, abs=1e-12)
    assert deriv(m, x) == pytest.approx(fd_deriv(m, x), rel=1e-6)
    assert deriv(identity(1), x, "spherical") == 1.0
    with pytest.raises(PoleError):
        deriv(m, np.array([-2.0]))


@pytest.mark.parametrize("d", [1, 2])
def test_chain_rule_and_composition(d):
    rng = np.random.default_rng(d)
    worst = 0.0
    for _ in range(100):
        m1, m2 = random_map(rng, d), random_map(rng, d)
        x = rng.standard_normal(d) * 3
        c = compose(m1, m2)
        assert np.allclose(apply(c, x), apply(m1, apply(m2, x)), atol=1e-9, rtol=1e-9)
        lhs = deriv(c, x)
        rhs = deriv(m1, apply(m2, x)) * deriv(m2, x)
        worst = max(worst, abs(lhs - rhs) / rhs)
    assert worst < 1e-8


def test_compose_matrix_oracle():
    t = from_matrix([[1, 2], [0, 1]])
    s = from_matrix([[0, -1], [1, 2]])
    prod = from_matrix(np.array([[1, 2], [0, 1]]) @ np.array([[0, -1], [1, 2]]))
    for x in np.linspace(-5, 5, 50):
        if abs(x + 2) < 1e-9:
            continue
        a = apply(compose(t, s), np.array([x]))
        assert a[0] == pytest.approx(apply(prod, np.array([x]))[0], abs=1e-12)


@pytest.mark.parametrize("d", [1, 2])
def test_inverse_round_trip(d):
    rng = np.random.default_rng(10 + d)
    for _ in range(100):
        m = random_map(rng, d)
        mm = invert(invert(m))
        assert maps_close(m, mm, 1e-10)
        c = compose(m, invert(m))
        assert isinstance(c, Affine) and c.is_identity(1e-9)
    m = Inversive([1.0, 2.0], [3.0, -1.0], 2.0, np.eye(2))
    mi = invert(m)
    assert np.allclose(mi.p, m.p_inv) and np.allclose(mi.p_inv, m.p) and mi.h == m.h
    assert invert(identity(2)).is_identity()


def test_associativity():
    rng = np.random.default_rng(3)
    for _ in range(30):
        a, b, c = (random_map(rng, 2) for _ in range(3))
        assert maps_close(compose(compose(a, b), c), compose(a, compose(b, c)), 1e-9)


def test_conformality_d2():
    rng = np.random.default_rng(4)
    for _ in range(20):
        m = random_map(rng, 2)
        x = rng.standard_normal(2)
        h = 1e-6
        dx = np.linalg.norm(apply(m, x + [h, 0]) - apply(m, x - [h, 0])) / (2 * h)
        dy = np.linalg.norm(apply(m, x + [0, h]) - apply(m, x - [0, h])) / (2 * h)
        assert dx == pytest.approx(dy, rel=1e-6)


def test_derivative_formula_and_spherical():
    rng = np.random.default_rng(5)
    for _ in range(1000):
        m = Inversive(rng.standard_normal(2), rng.standard_normal(2), rng.uniform(0.1, 3), np.eye(2))
        x = rng.standard_normal(2) * 2
        gi = invert(m)
        assert deriv(gi, x) * np.sum((x - m.p) ** 2) == pytest.approx(m.h, rel=1e-10)
        gx = apply(m, x)
        sph = (1 + x @ x) / (1 + gx @ gx) * deriv(m, x)
        assert deriv(m, x, "spherical") == pytest.approx(sph, rel=1e-10)


def test_busemann():
    o = HalfSpacePoint.origin(1)
    assert busemann(INF, o, o) == 0.0
    assert busemann(INF, o, HalfSpacePoint([0.0], 3.0)) == pytest.approx(math.log(3.0))
    rng = np.random.default_rng(6)
    worst = 0.0
    for _ in range(1000):
        x = rng.standard_normal(2)
        z1, z2, z3 = (HalfSpacePoint(rng.standard_normal(2), rng.uniform(0.1, 3)) for _ in range(3))
        r = busemann(x, z1, z2) + busemann(x, z2, z3) - busemann(x, z1, z3)
        worst = max(worst, abs(r))
        assert busemann(x, z1, z2) == pytest.approx(-busemann(x, z2, z1), abs=1e-12)
    assert worst < 1e-8
    # limit along a truncated ray towards x
    x = np.array([0.7])
    z1, z2 = HalfSpacePoint([0.1], 0.5), HalfSpacePoint([-1.0], 2.0)
    w = HalfSpacePoint(x, 1e-7)
    approx = hyperbolic_distance(z1, w) - hyperbolic_distance(z2, w)
    assert busemann(x, z1, z2) == pytest.approx(approx, abs=1e-6)


def test_grad_log_deriv():
    m = from_matrix([[0, -1], [1, 2]])
    assert grad_log_deriv(m, np.array([0.0]), np.array([1.0])) == pytest.approx(-1.0)
    m2 = Inversive([0.0, 0.0], [1.0, 0.0], 1.0, np.eye(2))
    assert grad_log_deriv(m2, np.array([0.0, 0.0]), np.array([0.0, 1.0])) == pytest.approx(0.0)
    rng = np.random.default_rng(7)
    for _ in range(1000):
        m = Inversive(rng.standard_normal(2), rng.standard_normal(2), 1.0, np.eye(2))
        x = rng.standard_normal(2)
        e = rng.standard_normal(2)
        e /= np.linalg.norm(e)
        assert abs(grad_log_deriv(m, x, e)) <= 2 / np.linalg.norm(x - m.p_inv) + 1e-12


def test_hyperbolic_distance():
    o = HalfSpacePoint.origin(1)
    assert hyperbolic_distance(o, o) == 0.0
    assert hyperbolic_distance(o, HalfSpacePoint([0.0], math.e)) == pytest.approx(1.0)
    rng = np.random.default_rng(8)
    for _ in range(500):
        g = random_map(rng, 2)
        x = HalfSpacePoint(rng.standard_normal(2), rng.uniform(0.2, 2))
        y = HalfSpacePoint(rng.standard_normal(2), rng.uniform(0.2, 2))
        assert hyperbolic_distance(apply(g, x), apply(g, y)) == pytest.approx(
            hyperbolic_distance(x, y), abs=1e-8)


def test_matrix_round_trip_and_dim_errors():
    m = from_matrix([[2, 1], [1, 1]])
    assert maps_close(from_matrix(to_matrix(m)), m, 1e-10)
    assert from_matrix([[1, 0], [2, 1]], dim=2).dim == 2
    with pytest.raises(DimensionError):
        compose(identity(1), identity(2))
    with pytest.raises(DimensionError):
        from_matrix(np.array([[1, 1j], [0, 1]]), dim=1)
