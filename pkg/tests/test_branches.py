import numpy as np
import pytest
from scipy.special import zeta

from cuspflow.branches import (Box, Branch, alphabet_system, compose_branch, expanding_map,
                               gauss_system, hurwitz_zeta, images, sup_derivative)
from cuspflow.geometry import Affine, Inversive, apply, deriv
from cuspflow.examples import gamma2_measure_system


@pytest.mark.parametrize("s", [1.2, 2.0, 2.5, 7.0])
@pytest.mark.parametrize("q", [0.3, 1.0, 4.7, 250.0])
def test_hurwitz_matches_scipy(s, q):
    assert hurwitz_zeta(s, q) == pytest.approx(zeta(s, q), rel=1e-12)


def test_hurwitz_complex_against_direct_sum():
    s, q = complex(2.0, 5.0), 1.5
    k = np.arange(0, 2_000_000)
    direct = np.sum(np.exp(-s * np.log(q + k)))
    tail = np.exp((1 - s) * np.log(q + k.size)) / (s - 1)      # integral of the rest
    assert abs(hurwitz_zeta(s, q) - (direct + tail)) < 1e-9
    with pytest.raises(ValueError):
        hurwitz_zeta(1.0, 1.0)
    with pytest.raises(ValueError):
        hurwitz_zeta(2.0, -1.0)


def test_box():
    b = Box([0, 0], [1, 2])
    assert b.contains(np.array([[0.5, 1.0], [1.5, 0]])).tolist() == [True, False]
    assert b.boundary_distance(np.array([[0.5, 0.5]]))[0] == pytest.approx(0.5)
    assert len(b.corners()) == 4
    with pytest.raises(ValueError):
        Box([1.0], [0.0])


def test_gauss_branches_and_words():
    sysg = gauss_system(10)
    assert len(sysg) == 10 and len(sysg.families) == 1
    x = np.array([0.25])
    for b in sysg.branches:
        n = b.member
        assert apply(b.map, x)[0] == pytest.approx(1 / (n + 0.25))
        assert deriv(b.map, x) == pytest.approx(1 / (n + 0.25) ** 2)
    assert sysg.sup_derivatives()[0] == pytest.approx(1.0)


def test_family_tail_weights_against_direct_sum():
    sysg = gauss_system(5)
    fam = sysg.families[0]
    X = np.array([[0.0], [0.4], [1.0]])
    a = 1.1
    c = fam.tail_weights(X, a, 3).real
    top = 400_000
    n = np.arange(fam.tail_from, top)[:, None]
    g = 1 / (n + X[:, 0])                            # images, limit point 0
    w = g ** (2 * a)
    for k in range(4):
        e = 2 * a + k
        rest = (top + X[:, 0] - 0.5) ** (1 - e) / (e - 1)      # midpoint integral of the remainder
        direct = np.sum(w * g ** k, axis=0) + rest
        assert np.allclose(c[k], direct, rtol=1e-6), k


def test_tail_quadrature_moments():
    fam = gauss_system(20).families[0]
    X = np.linspace(0, 1, 7)[:, None]
    T, W = fam.tail_quadrature(X, 1.0)
    m = fam.tail_weights(X, 1.0, 3).real
    for k in range(4):
        assert np.allclose((W.real * T ** k).sum(1), m[k], rtol=1e-8, atol=1e-14)


def test_tail_sup():
    fam = gauss_system(10).families[0]
    assert fam.tail_sup(Box([0.0], [1.0]), 1.0) == pytest.approx(zeta(2.0, 11), rel=1e-12)


def test_compose_branch_chain_rule():
    sysg = alphabet_system([1, 2, 3])
    x = np.array([0.37])
    for outer in sysg.branches:
        for inner in sysg.branches:
            c = compose_branch(outer, inner)
            lhs = deriv(c.map, x)
            rhs = deriv(outer.map, apply(inner.map, x)) * deriv(inner.map, x)
            assert lhs == pytest.approx(rhs, rel=1e-12)
            assert c.word == outer.word + inner.word
            # inverse branch undoes the expanding map
            y = apply(c.map, x)
            assert apply(expanding_map(c), y)[0] == pytest.approx(x[0], abs=1e-12)


def test_images_and_sup_derivative():
    sysg = alphabet_system([1, 2])
    Y, L = images(sysg, np.array([[0.0], [1.0]]))
    assert Y.shape == (2, 2, 1)
    assert np.allclose(np.exp(L[:, 0]), [1.0, 0.25])
    assert sup_derivative(Affine(np.eye(1), [0.0], 0.3), Box([0.0], [1.0])) == 0.3
    m = Inversive([0.0], [-1.0], 1.0, [[1.0]])
    assert sup_derivative(m, Box([0.0], [1.0])) == pytest.approx(1.0)


def test_gamma2_measure_system_cells():
    sysm = gamma2_measure_system(50)
    lengths = []
    for b in sysm.branches:
        a, c = apply(b.map, np.array([0.0]))[0], apply(b.map, np.array([2.0]))[0]
        lengths.append(abs(a - c))
        assert 0 < min(a, c) <= max(a, c) <= 2
    # cells 4/(2n+2) .. 4/(2n) tile (0, 2]; total length telescopes
    assert sum(lengths) == pytest.approx(2 - 4 / (2 * 50 + 2), rel=1e-12)
    restricted = sysm.restricted([0, 1])
    assert len(restricted) == 2 and not restricted.families
    assert isinstance(sysm.branches[0], Branch)
