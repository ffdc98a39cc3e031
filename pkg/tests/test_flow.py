import math

import numpy as np
import pytest
from scipy.stats import ks_2samp

from cuspflow.branches import alphabet_system, gauss_system
from cuspflow.flow import (EscapeError, PhasePoint, RoofFunction, Suspension, busemann,
                           correlation, evolve, evolve_arrays, evolve_path, factor_project,
                           fit_decay, hopf_time, in_lambda_minus, lift, observable, sample_base,
                           sample_phase, semiconjugacy_residual)
from cuspflow.geometry import INF, HalfSpacePoint
from cuspflow.spectral import discretize, spectral_report

LN2 = math.log(2)


@pytest.fixture(scope="module")
def gauss():
    system = gauss_system(200)
    rep = spectral_report(discretize(system, 400), 1.0)
    return Suspension(system), rep


def test_sampling_is_deterministic_and_in_range(gauss):
    susp, rep = gauss
    a = sample_phase(susp, rep, 2000, seed=5)
    b = sample_phase(susp, rep, 2000, seed=5)
    for f in ("x", "s", "roof"):
        assert np.array_equal(getattr(a, f), getattr(b, f))
    assert np.array_equal(np.isnan(a.x_minus), np.isnan(b.x_minus))
    assert np.all(a.s >= 0) and np.all(a.s < a.roof)
    assert np.all(susp.box.contains(a.x))
    c = sample_phase(susp, rep, 2000, seed=6)
    assert not np.array_equal(a.x, c.x)


def test_mean_roof_matches_quadrature(gauss):
    susp, rep = gauss
    X, _, alive, _ = sample_base(susp, rep, 200_000, seed=1)
    R = susp.roof(X[alive])
    exact = math.pi ** 2 / (6 * LN2)
    quad = float(np.sum(rep.invariant_masses * -2 * np.log(np.maximum(rep.nodes[:, 0], 1e-300))))
    se = R.std() / math.sqrt(R.size)
    assert abs(R.mean() - exact) < 2 * se
    assert quad == pytest.approx(exact, rel=0.02)


def test_roof_positive(gauss):
    susp, rep = gauss
    X = np.random.default_rng(0).random((5000, 1))
    R = susp.roof(X)
    assert np.all(R > 0) and np.all(R >= RoofFunction(susp).lower_bound)
    assert np.allclose(R, -2 * np.log(X[:, 0]))          # log|T'(x)| = -2 log x
    strict = Suspension(gauss_system(50, start=2))
    assert RoofFunction(strict).lower_bound == pytest.approx(math.log(4))


def test_backward_coordinate_region(gauss):
    susp, rep = gauss
    X, XM, alive, _ = sample_base(susp, rep, 5000, seed=2)
    fin = ~np.isnan(XM[:, 0]) & alive
    assert np.all(XM[fin, 0] <= -1 + 1e-12)
    assert np.all(in_lambda_minus(Suspension(gauss_system(200), 1.0), XM[alive]))


def test_zero_time_and_additivity(gauss):
    susp, rep = gauss
    smp = sample_phase(susp, rep, 200, seed=3)
    rng = np.random.default_rng(4)
    worst = 0.0
    for i in range(200):
        p = smp.point(i)
        q = evolve(susp, p, 0.0)
        assert np.array_equal(q.x, p.x) and q.s == p.s
        t, u = rng.uniform(0, 5, 2)
        a = evolve(susp, evolve(susp, p, t), u)
        b = evolve(susp, p, t + u)
        worst = max(worst, float(np.abs(a.x - b.x).max()), abs(a.s - b.s))
    assert worst < 1e-9
    with pytest.raises(ValueError):
        evolve(susp, smp.point(0), -1.0)


def test_array_and_scalar_evolution_agree(gauss):
    susp, rep = gauss
    smp = sample_phase(susp, rep, 100, seed=8)
    X, XM, S, _ = evolve_arrays(susp, smp.x, smp.x_minus, smp.s, 2.5, smp.roof)
    for i in range(100):
        q = evolve(susp, smp.point(i), 2.5)
        assert q.x[0] == pytest.approx(X[i, 0], abs=1e-12)
        assert q.s == pytest.approx(S[i], abs=1e-12)


def test_semiconjugacy(gauss):
    susp, rep = gauss
    smp = sample_phase(susp, rep, 300, seed=9)
    ts = np.random.default_rng(10).uniform(0, 8, 300)
    worst = max(semiconjugacy_residual(susp, smp.point(i), float(ts[i])) for i in range(300))
    assert worst < 1e-8


def test_factor_map_examples():
    assert hopf_time(np.zeros(1), 0.7)[0] == 0.7           # log 1 = 0
    o = HalfSpacePoint.origin(1)
    for x in (0.0, 0.3, 0.9):
        p = PhasePoint(np.array([x]), INF, 0.0)
        z = lift(p.x, factor_project(p)[2])
        # unstable horosphere based at infinity through the origin point
        assert z.height == pytest.approx(1.0)
        assert busemann(INF, o, z) == pytest.approx(0.0, abs=1e-14)


def test_escape_under_truncation():
    susp = Suspension(alphabet_system([1, 2]))
    X = np.array([[0.2]])                                  # 1/0.2 = 5: digit 5 is not coded
    _, _, _, ok = susp.step(X, np.full_like(X, np.nan))
    assert not ok[0]
    with pytest.raises(EscapeError):
        susp.inverse_branch(X)
    fracs = []
    for floor_n in (5, 50):
        s = Suspension(alphabet_system(range(1, floor_n + 1)))
        Y = np.random.default_rng(0).random((20000, 1))
        fracs.append(1 - s.step(Y, np.full_like(Y, np.nan))[3].mean())
    assert fracs[1] < fracs[0]


def test_measure_invariance(gauss):
    susp, rep = gauss
    a = sample_phase(susp, rep, 40_000, seed=11)
    b = sample_phase(susp, rep, 40_000, seed=12)
    X, _, _, _ = evolve_arrays(susp, b.x, b.x_minus, b.s, 3.0, b.roof)
    ok = np.isfinite(X[:, 0])
    assert ks_2samp(a.x[:, 0], X[ok, 0]).pvalue > 0.001


def test_birkhoff_average(gauss):
    susp, rep = gauss
    X, XM, _, _ = sample_base(susp, rep, 1, seed=13)
    vals = []
    for _ in range(20_000):
        vals.append(X[0, 0])
        X, XM, _, ok = susp.step(X, XM)
        assert ok[0]
    vals = np.array(vals).reshape(20, -1).mean(axis=1)           # batch means
    exact = (1 - LN2) / LN2
    assert abs(vals.mean() - exact) < 3 * vals.std(ddof=1) / math.sqrt(20)


def test_correlation_constant_and_zero_time(gauss):
    susp, rep = gauss
    c = correlation(susp, rep, "constant", "x", [0.0, 1.0, 2.0], n_samples=20_000, seed=3,
                    chunk=20_000)
    assert np.all(np.abs(c.rho) < 1e-12) and c.degenerate
    d = correlation(susp, rep, "x", "x", [0.0], n_samples=20_000, seed=3, chunk=20_000)
    seed = int(np.random.default_rng(3).integers(0, 2 ** 63 - 1, size=1)[0])
    smp = sample_phase(susp, rep, 20_000, seed=seed)
    assert d.rho[0] == pytest.approx(np.var(smp.x[:, 0]), rel=1e-10)


def test_fit_decay():
    t = np.arange(10.0)
    rho = 0.5 * np.exp(-0.7 * t)
    eta, r2, window = fit_decay(t, rho, np.full(10, 1e-6))
    assert eta == pytest.approx(0.7) and r2 == pytest.approx(1.0) and window == (0, 10)
    eta, _, _ = fit_decay(t, rho * 1e-9, np.full(10, 1e-6))
    assert math.isnan(eta)


def test_observables():
    X, S = np.array([[0.1, 0.2]]), np.array([0.3])
    assert observable("x1")(X, None, S)[0] == 0.2
    assert observable("s")(X, None, S)[0] == 0.3
    with pytest.raises(ValueError):
        observable("bogus")


def test_evolve_path_records_roofs(gauss):
    susp, _ = gauss
    p = PhasePoint(np.array([0.3]), INF, 0.0)
    q, maps, roofs = evolve_path(susp, p, 10.0)
    assert q.s == pytest.approx(10.0 - sum(roofs))
    assert len(maps) == len(roofs) and all(r > 0 for r in roofs)
    assert q.x_minus is not INF
