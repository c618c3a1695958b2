import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticehom import correctors as C
from latticehom.elliptic import EllipticProblem, apply, dense_solve
from latticehom.environment import homogeneous, layered, make_environment, shift, torus


def test_homogeneous_correctors_vanish():
    cs = C.correctors(homogeneous(2.5, torus(2, 8)))
    assert np.all(cs.phi == 0)
    assert np.array_equal(cs.a_h, 2.5 * np.eye(2))
    assert np.all(cs.q == 0) and np.all(cs.sigma == 0)
    R = 3
    xs = C.corrected_coordinates(cs, R)
    np.testing.assert_array_equal(xs[0][:, 0], np.arange(-R, R + 1))


def test_layered_closed_form():
    cs = C.correctors(layered(1.0, 4.0, torus(2, 16)))
    g1 = C.fwd(cs.phi[0], 0)
    np.testing.assert_allclose(g1[0::2], 0.6, atol=1e-9)  # conductance-1 columns
    np.testing.assert_allclose(g1[1::2], -0.6, atol=1e-9)
    assert np.abs(cs.phi[1]).max() < 1e-12
    np.testing.assert_allclose(np.diag(cs.a_h), [1.6, 2.5], atol=1e-9)
    assert max(cs.residuals.values()) <= 1e-9


def test_dense_oracle_small_torus():
    env = make_environment("lognormal:0,1", torus(2, 4), 7)
    cs = C.correctors(env, tol=1e-12)
    for i in range(2):
        rhs = env.mu[i] - np.roll(env.mu[i], 1, axis=i)
        ref = dense_solve(EllipticProblem(env, "periodic", rhs=rhs))
        np.testing.assert_allclose(cs.phi[i], ref, atol=1e-8)
    assert C.harmonic_coordinate_residual(cs).max() <= 1e-8


@pytest.mark.parametrize("d,L", [(2, 16), (3, 8)])
def test_residual_invariants(d, L):
    cs = C.correctors(make_environment("lognormal:0,1", torus(d, L), 1))
    assert all(v <= 1e-9 for v in cs.residuals.values()), cs.residuals
    assert np.abs(cs.q.mean(axis=tuple(range(2, 2 + d)))).max() < 1e-12
    # antisymmetry stored exactly
    np.testing.assert_array_equal(cs.sigma, -np.swapaxes(cs.sigma, 1, 2))


def test_flux_corrector_identity():
    cs = C.correctors(make_environment("two_point:4", torus(2, 16), 3))
    for i in range(2):
        for j in range(2):
            lhs = -sum(C.bwd(cs.sigma[i, j, k], k) for k in range(2))
            assert np.abs(lhs - cs.q[i, j]).max() < 1e-8


def test_poisson_fft_exact():
    rng = np.random.default_rng(0)
    f = rng.standard_normal((8, 8))
    u = C.poisson_fft(f)
    lap = -sum(C.fwd(u, i) + C.bwd(u, i) for i in range(2))
    np.testing.assert_allclose(lap, f - f.mean(), atol=1e-12)
    assert abs(u.mean()) < 1e-14


def test_shift_covariance():
    env = make_environment("lognormal:0,1", torus(2, 12), 4)
    a = (3, 5)
    phi = C.correctors(env, with_sigma=False).phi
    phi_s = C.correctors(shift(env, a), with_sigma=False).phi
    np.testing.assert_allclose(phi_s, np.roll(phi, (-3, -5), axis=(1, 2)), atol=1e-8)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000))
def test_voigt_reuss_bracketing(seed):
    env = make_environment("lognormal:0,1", torus(2, 8), seed)
    ah = C.homogenize(env)
    for i in range(2):
        mu = env.mu[i]
        assert 1 / np.mean(1 / mu) - 1e-9 <= ah[i, i] <= np.mean(mu) + 1e-9


def test_corrected_coordinates_harmonic():
    env = make_environment("lognormal:0,1", torus(2, 4), 9)
    cs = C.correctors(env, tol=1e-12)
    xs = C.corrected_coordinates(cs, 1)
    assert xs.shape == (2, 3, 3)
    # on the torus, x_i + phi_i is a-harmonic: apply to phi equals -div(a e_i)
    for i in range(2):
        assert np.abs(apply(env, cs.phi[i]) - (env.mu[i] - np.roll(env.mu[i], 1, axis=i))).max() < 1e-8


def test_torus_to_box_indexing():
    a = np.arange(36.0).reshape(6, 6)
    b = C.torus_to_box(a, 2)
    assert b[2, 2] == a[0, 0] and b[0, 0] == a[4, 4] and b[4, 3] == a[2, 1]
    with pytest.raises(ValueError):
        C.torus_to_box(a, 3)


def test_sublinearity_homogeneous_zero():
    rows, med = C.sublinearity_scan("constant:2", [8, 16], 4, 4, [0])
    assert all(r.phi_ratio == 0 and r.sigma_ratio == 0 for r in rows)


def test_summary_serializable():
    import json
    cs = C.correctors(make_environment("lognormal:0,1", torus(2, 8), 0))
    text = json.dumps(cs.summary())
    assert "a_h" in json.loads(text)
