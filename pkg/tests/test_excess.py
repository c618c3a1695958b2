import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticehom import excess as X
from latticehom.correctors import correctors, corrected_coordinates, torus_to_box
from latticehom.elliptic import harmonic_extension
from latticehom.environment import box, homogeneous, layered, make_environment, torus
from latticehom.lattice import build_box


def _x(R, i, d=2):
    g = build_box(d, R)
    return g.coords[:, i].reshape(g.shape).astype(float)


def test_cutoff_profile():
    R, rho = 16, 4
    eta = X.cutoff(R, rho).eta
    g = build_box(2, R)
    sup = np.abs(g.coords).max(axis=1).reshape(g.shape)
    assert np.all(eta[sup <= R - 2 * rho] == 1)
    assert np.all(eta[sup >= R - rho] == 0)
    assert np.all(eta[sup == R - 3 * rho // 2] == 0.5)
    for i in range(2):
        assert np.abs(np.diff(eta, axis=i)).max() <= 1 / rho + 1e-15
    for bad in (0, 5):
        with pytest.raises(ValueError):
            X.cutoff(R, bad)


def test_homogenization_error_examples():
    R = 6
    rng = np.random.default_rng(0)
    u = rng.standard_normal((13, 13))
    v = rng.standard_normal((13, 13))
    phi = rng.standard_normal((2, 13, 13))
    assert np.all(X.homogenization_error(u, u, phi, np.zeros((13, 13))) == 0)
    np.testing.assert_array_equal(X.homogenization_error(u, v, np.zeros_like(phi), X.cutoff(R, 1).eta), u - v)
    eta = X.cutoff(R, 1).eta
    w = X.homogenization_error(u, v, phi, eta)
    for x in [(3, 4), (6, 6), (8, 2)]:
        gv = [v[x[0] + 1, x[1]] - v[x], v[x[0], x[1] + 1] - v[x]]
        ref = u[x] - v[x] - eta[x] * (phi[0][x] * gv[0] + phi[1][x] * gv[1])
        assert w[x] == pytest.approx(ref, abs=1e-14)
    with pytest.raises(ValueError):
        X.homogenization_error(u, v[:-1, :-1], phi, eta)


def test_identity_trivial_zero():
    R = 6
    env = homogeneous(1.0, box(2, R))
    z1, z3 = np.zeros((2, 13, 13)), np.zeros((2, 2, 2, 13, 13))
    x1 = _x(R, 0)
    rep = X.energy_identity_check(env, np.ones(2), x1, x1, z1, z3, X.cutoff(R, 1).eta)
    assert rep.lhs == rep.rhs == 0 and rep.residual == 0


def test_identity_polynomials_exact():
    R = 6
    env = homogeneous(1.0, box(2, R))
    z1, z3 = np.zeros((2, 13, 13)), np.zeros((2, 2, 2, 13, 13))
    u, v = _x(R, 0), _x(R, 0) * _x(R, 1)
    rep = X.energy_identity_check(env, np.ones(2), u, v, z1, z3, X.cutoff(R, 1).eta)
    assert rep.lhs > 0 and rep.residual <= 1e-12


@pytest.mark.parametrize("law", ["layered:1,4", "lognormal:0,0.7", "two_point:3"])
def test_identity_with_correctors(law):
    R = 16
    env = make_environment(law, torus(2, 2 * R + 8), 2)
    rep = X.energy_identity_check(*X.identity_setup(env, R, 4, seed=3))
    assert rep.hypotheses_ok
    assert rep.residual <= 1e-10
    assert rep.boundary_sum == 0  # shared trace: u = v on the boundary


def test_identity_needs_offdiagonal_mean_on_finite_torus():
    R = 16
    env = make_environment("lognormal:0,1", torus(2, 2 * R + 8), 5)
    setup = X.identity_setup(env, R, 4, seed=1)
    assert np.abs(setup[-1][0, 1]) > 0
    assert X.energy_identity_check(*setup[:7]).residual > 1e3 * X.energy_identity_check(*setup).residual


def test_identity_three_dimensions():
    R = 16
    env = make_environment("gff", torus(3, 2 * R + 8), 0)
    rep = X.energy_identity_check(*X.identity_setup(env, R, 4, seed=0))
    assert rep.hypotheses_ok and rep.residual <= 1e-10


def test_identity_reports_violations():
    R = 16
    env = make_environment("lognormal:0,0.7", torus(2, 2 * R + 8), 1)
    e, ah, u, v, phi, sigma, eta, m = X.identity_setup(env, R, 4, seed=0)
    rep = X.energy_identity_check(e, ah, u + np.random.default_rng(0).standard_normal(u.shape), v, phi, sigma, eta, m)
    assert not rep.hypotheses_ok
    rep = X.energy_identity_check(e, ah, u, v, phi, sigma, X.cutoff(R, 2).eta, m)
    assert not rep.cutoff_support_ok and not rep.hypotheses_ok


def test_identity_orientation_convention():
    # the base-point cutoff closes the identity; the tail-weighted variant generally does not
    R = 16
    env = make_environment("lognormal:0,1", torus(2, 2 * R + 8), 5)
    rep = X.energy_identity_check(*X.identity_setup(env, R, 4, seed=1))
    assert rep.residual <= 1e-8
    tail_rhs = rep.tail_eta_coefficient_term + rep.boundary_sum + rep.corrector_term
    assert abs(tail_rhs - rep.lhs) > 1e3 * abs(rep.rhs - rep.lhs)


def test_excess_examples():
    R = 4
    env = homogeneous(1.0, box(2, R))
    zero = np.zeros((2, 9, 9))
    rec = X.excess(env, 3 * _x(R, 0) - _x(R, 1), zero)
    np.testing.assert_allclose(rec.xi, [3, -1], atol=1e-12)
    assert rec.value < 1e-20
    u = _x(R, 0) * _x(R, 1)
    rec = X.excess(env, u, zero)
    grid = np.linspace(-2, 2, 201)
    idx = build_box(2, R).vertices("open")
    gu = [(np.roll(u, -1, axis=i) - u).reshape(-1)[idx] for i in range(2)]
    best = min(np.mean((gu[0] - a) ** 2 + (gu[1] - b) ** 2) for a in grid for b in grid)
    assert rec.value <= best + 1e-12
    assert best - rec.value < 1e-3
    assert rec.gradient_norm < 1e-10


def test_excess_of_corrected_coordinate():
    R = 10
    envt = layered(1.0, 4.0, torus(2, 2 * R + 8))
    cs = correctors(envt, with_sigma=False)
    env = envt.restrict_to_box(R)
    phi = torus_to_box(cs.phi, R, lead=1)
    u = corrected_coordinates(cs, R)[0]
    rec = X.excess(env, u, phi)
    np.testing.assert_allclose(rec.xi, [1, 0], atol=1e-8)
    assert rec.value < 1e-16


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.floats(-3, 3), st.floats(-3, 3))
def test_excess_tilt_invariance(seed, a, b):
    R = 8
    envt = make_environment("lognormal:0,0.5", torus(2, 2 * R + 8), seed)
    cs = correctors(envt, with_sigma=False)
    env = envt.restrict_to_box(R)
    phi = torus_to_box(cs.phi, R, lead=1)
    u, _ = harmonic_extension(env, np.random.default_rng(seed).standard_normal(env.topology.shape))
    xs = corrected_coordinates(cs, R)
    base = X.excess(env, u, phi, 6)
    tilted = X.excess(env, u + a * xs[0] + b * xs[1], phi, 6)
    assert tilted.value == pytest.approx(base.value, rel=1e-8, abs=1e-12)
    np.testing.assert_allclose(tilted.xi - base.xi, [a, b], atol=1e-8)


def test_excess_singular_family():
    env = homogeneous(1.0, box(2, 3))
    phi = np.zeros((2, 7, 7))
    phi[0] = -_x(3, 0)  # kills the first corrected gradient
    with pytest.raises(np.linalg.LinAlgError):
        X.excess(env, _x(3, 1), phi)


def test_decay_homogeneous_and_full_radius():
    tab = X.excess_decay_experiment("constant:1", 16, [4, 8], range(3))
    for row in tab.rows:
        if row["r"] == 16:
            assert row["ratio"] == 1.0
        else:
            assert row["ratio"] <= 1.0
    # with phi = 0 on a constant environment both variants coincide
    c = [r["exc"] for r in tab.rows if r["variant"] == "corrected"]
    z = [r["exc"] for r in tab.rows if r["variant"] == "uncorrected"]
    np.testing.assert_allclose(c, z)


def test_decay_corrector_necessity(tmp_path):
    tab = X.excess_decay_experiment("layered:1,9", 16, [4, 8], range(4))
    for r in (4, 8):
        assert tab.median_ratio(r, "uncorrected") > tab.median_ratio(r, "corrected")
    assert tab.median_alpha("corrected") > 0
    tab.write_csv(tmp_path / "t.csv", comment="# test")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "# test"
    assert lines[1].split(",")[:6] == ["seed", "variant", "R", "r", "exc", "ratio"]
    assert len(lines) == 2 + len(tab.rows)


def test_decay_deterministic_and_threaded():
    a = X.excess_decay_experiment("two_point:2", 12, [3, 6], range(3))
    b = X.excess_decay_experiment("two_point:2", 12, [3, 6], range(3), threads=3)
    assert [r["exc"] for r in a.rows] == [r["exc"] for r in b.rows]


def test_moment_filter():
    env = make_environment("lognormal:0,1", torus(2, 40), 0).restrict_to_box(16)
    assert X.moment_filter(env, 2, 2, None, 4, 16)
    assert not X.moment_filter(env, 2, 2, 0.5, 4, 16)
    tab = X.excess_decay_experiment("lognormal:0,1", 12, [3, 6], range(2), Lambda=0.5)
    assert all(s["filtered"] for s in tab.per_seed)


def test_liouville_homogeneous_and_layered():
    cs = correctors(homogeneous(1.0, torus(2, 32)), with_sigma=False)
    rep = X.liouville_dimension(cs, 12, n_samples=5)
    assert rep.rank == 3
    d = np.array(rep.distances)
    assert np.all(d[:, 0] <= d[:, 1] + 1e-12)
    cs = correctors(layered(1.0, 4.0, torus(2, 32)), with_sigma=False)
    rep = X.liouville_dimension(cs, 12, n_samples=3)
    assert min(rep.gram_eigenvalues) > 0 and rep.rank == 3


def test_corrected_affine_distance_zero():
    R = 10
    envt = make_environment("two_point:3", torus(2, 2 * R + 8), 1)
    cs = correctors(envt, with_sigma=False)
    env = envt.restrict_to_box(R)
    phi = torus_to_box(cs.phi, R, lead=1)
    u = 2.0 + corrected_coordinates(cs, R)[0] - 0.5 * corrected_coordinates(cs, R)[1]
    for r in (3, 5, 10):
        assert X.excess(env, u, phi, r).value / X._dirichlet_energy(env, u, r) < 1e-14


def test_error_budget_soft_bound():
    R = 16
    env = make_environment("layered_noise:1,4,0.5", torus(2, 2 * R + 8), 1)
    cs = correctors(env)
    ratios = [X.error_budget(env, R, 0.25, 0.125, s, cs=cs).ratio for s in range(3)]
    assert all(0 < r < 1 for r in ratios)
    assert max(ratios) / min(ratios) < 10
