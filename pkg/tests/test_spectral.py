import math

import numpy as np
import pytest

from cuspflow.branches import Box, alphabet_system, gauss_system
from cuspflow.examples import SIMILARITY_DIMENSION, gamma2_measure_system, sierpinski_carpet_like
from cuspflow.spectral import (BracketError, TruncationError, apply_direct, assemble, b_norm,
                               discretize, estimate_delta, l2_contraction_probe, leading_spectrum,
                               log_leading, measure_diagnostics, min_singular_value,
                               resonance_scan, spectral_report)


@pytest.fixture(scope="module")
def gauss400():
    return discretize(gauss_system(200), 400)


def test_gauss_density_is_fixed(gauss400):
    x = gauss400.nodes[:, 0]
    u = 1 / (1 + x)
    M = assemble(gauss400, 0.0, 1.0).entries
    assert np.max(np.abs(M @ u - u)) < 1e-6


def test_constant_at_exponent_zero_alphabet():
    # sum_n |g_n'|^0 = number of branches, exactly
    d = discretize(alphabet_system([1, 2, 5]), 100)
    M = assemble(d, 0.0, 0.0).entries
    assert np.max(np.abs(M @ np.ones(100) - 3.0)) < 1e-12


def test_direct_application_agrees(gauss400):
    d = discretize(alphabet_system([1, 2]), 300)
    M = assemble(d, 0.0, 0.7).entries
    u = lambda y: np.cos(y)
    direct = apply_direct(d, u, 0.0, 0.7)
    assert np.max(np.abs(M @ u(d.nodes[:, 0]) - direct)) < 1e-5


def test_conjugate_symmetry(gauss400):
    a = assemble(gauss400, complex(0.1, 3.0), 1.0).entries
    b = assemble(gauss400, complex(0.1, -3.0), 1.0).entries
    assert np.allclose(a, np.conj(b), atol=1e-14)


def test_single_branch_eigenvalue():
    # x -> 1/(1+x) has fixed point the golden-ratio conjugate; the eigenvalue is |g'(x*)|^a
    d = discretize(alphabet_system([1]), 4000)
    a = 1.3
    lam = leading_spectrum(assemble(d, 0.0, a), with_gap=False).eigenvalue
    xs = (math.sqrt(5) - 1) / 2
    assert lam == pytest.approx((1 / (1 + xs) ** 2) ** a, abs=1e-8)


def test_delta_values(gauss400):
    assert estimate_delta(gauss400, (0.6, 2.0)).delta == pytest.approx(1.0, abs=1e-4)
    d = discretize(alphabet_system([1, 2]), 300)
    assert estimate_delta(d, (0.0, 2.0)).delta == pytest.approx(0.5313, abs=1e-3)
    sim = discretize(sierpinski_carpet_like(), 1500)
    assert estimate_delta(sim, (0.5, 3.0)).delta == pytest.approx(SIMILARITY_DIMENSION, abs=0.02)
    with pytest.raises(BracketError):
        estimate_delta(gauss400, (1.5, 2.0))


def test_leading_eigenvalue_decreasing(gauss400):
    vals = [log_leading(gauss400, a) for a in (0.8, 0.9, 1.0, 1.1, 1.3)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert log_leading(gauss400, 0.5) == math.inf       # family sum diverges


def test_mesh_convergence():
    lam = []
    for n in (200, 400, 800):
        d = discretize(gauss_system(200), n)
        lam.append(leading_spectrum(assemble(d, 0.0, 1.0)).second)
    assert abs(lam[2] - lam[1]) < 1e-5 and abs(lam[1] - lam[0]) < 1e-5
    assert abs(lam[2]) == pytest.approx(0.3037, abs=1e-3)


def test_duality_left_right(gauss400):
    sp = leading_spectrum(assemble(gauss400, 0.0, 1.0))
    M = assemble(gauss400, 0.0, 1.0).entries
    assert np.allclose(sp.left @ M, sp.eigenvalue * sp.left, atol=1e-9)
    assert np.allclose(M @ sp.right, sp.eigenvalue * sp.right, atol=1e-9)
    rep = spectral_report(gauss400, 1.0)
    assert rep.invariant_masses.sum() == pytest.approx(1.0)
    assert np.all(rep.invariant_masses >= 0)


def test_ulam_cross_check():
    d = discretize(gauss_system(200), 1000, "ulam")
    assert estimate_delta(d, (0.6, 2.0)).delta == pytest.approx(1.0, abs=1e-3)


def test_truncation():
    sysg = gauss_system(200)
    d = discretize(sysg, 200, truncation_floor=1e-3)
    assert d.branch_count < 200 and d.truncated_mass > 0
    with pytest.raises(TruncationError):
        discretize(sysg, 200, truncation_floor=10.0)


def test_measure_diagnostics_gamma2():
    d = discretize(gamma2_measure_system(200), 3000)
    rep = spectral_report(d, 1.0)
    diag = measure_diagnostics(rep, d.system.domain, [(0.5, 0.25, 1)], samples=50)
    assert diag.doubling_max < 4
    assert diag.cusp_slopes[0]["slope"] == pytest.approx(1.0, abs=0.1)
    coarse = measure_diagnostics(rep, d.system.domain, [(0.5, 0.25, 1)], samples=10,
                                 min_nodes=10 ** 6)
    assert any("insufficient resolution" in w for w in coarse.warnings)


def test_b_norm():
    x = np.linspace(0, 1, 11)[:, None]
    assert b_norm(x[:, 0], x, 0.0) == pytest.approx(1.0)
    assert b_norm(x[:, 0] * 10, x, 9.0) == pytest.approx(10.0)


def test_l2_probe(gauss400):
    x = gauss400.nodes[:, 0]
    p = l2_contraction_probe(gauss400, complex(0, 20), 40, np.cos(3 * x) + 0j, 1.0)
    assert p.beta < 1 and p.monotone_after
    ctrl = l2_contraction_probe(gauss400, 0j, 40, np.ones_like(x) + 0j, 1.0)
    assert ctrl.beta == pytest.approx(1.0, abs=1e-6)


def test_min_singular_value():
    rng = np.random.default_rng(1)
    A = rng.standard_normal((30, 30))
    assert min_singular_value(A) == pytest.approx(np.linalg.svd(A, compute_uv=False).min(), rel=1e-6)
    assert min_singular_value(np.zeros((3, 3))) == 0.0


def test_resonance_scan_small():
    d = discretize(gauss_system(200), 150)
    sc = resonance_scan(d, [-0.05, 0.0], [-2.0, -1.0, 0.0, 1.0, 2.0], 1.0)
    assert (0.0, 0.0) in sc.origin_cluster
    assert not sc.other_near_singular
    assert sc.field().shape == (10, 4)


def test_collocation_needs_1d():
    with pytest.raises(ValueError):
        discretize(sierpinski_carpet_like(), 100, "collocation")
    assert Box([0, 0], [1, 1]).dim == 2
