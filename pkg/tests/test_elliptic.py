import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings, strategies as st

from latticehom import elliptic as el
from latticehom.elliptic import EllipticProblem, IncompatibleRHS, SolverError, apply, solve
from latticehom.environment import box, homogeneous, make_environment, torus
from latticehom.lattice import build_box


def _coord(R, i, d=2):
    g = build_box(d, R)
    return g.coords[:, i].reshape(g.shape).astype(float)


def test_apply_examples():
    x1 = _coord(4, 0)
    out = apply(homogeneous(1.0, box(2, 4)), x1**2)
    interior = build_box(2, 4).vertices("open")
    assert np.all(out.reshape(-1)[interior] == -2)
    assert np.isnan(out.reshape(-1)[build_box(2, 4).vertices("boundary")]).all()
    env = make_environment("lognormal:0,1", torus(2, 5), 0)
    assert np.allclose(apply(env, np.full((5, 5), 3.0)), 0)


def test_apply_matches_dense_matrix():
    env = make_environment("lognormal:0,1", torus(2, 4), 1)
    u = np.zeros((4, 4))
    u[0, 0] = 1.0
    # hand-built dense Laplacian
    K = np.zeros((16, 16))
    for i in range(2):
        for x0 in range(4):
            for x1 in range(4):
                x = (x0, x1)
                y = list(x)
                y[i] = (y[i] + 1) % 4
                a, b = x0 * 4 + x1, y[0] * 4 + y[1]
                w = env.mu[i][x]
                K[a, a] += w
                K[b, b] += w
                K[a, b] -= w
                K[b, a] -= w
    np.testing.assert_allclose(apply(env, u).reshape(-1), K @ u.reshape(-1), atol=1e-14)
    np.testing.assert_allclose(el.operator_matrix(env).toarray(), K, atol=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 7))
def test_operator_symmetric_psd(seed, L):
    env = make_environment("lognormal:0,1", torus(2, L), seed)
    K = el.operator_matrix(env)
    assert abs(K - K.T).max() < 1e-14
    u = np.random.default_rng(seed).standard_normal(L * L)
    assert u @ (K @ u) >= -1e-12
    np.testing.assert_allclose(K @ np.ones(L * L), 0, atol=1e-12)


def test_dirichlet_affine():
    env = homogeneous(1.0, box(2, 6))
    x1 = _coord(6, 0)
    u, rep = solve(EllipticProblem(env, "dirichlet", boundary=x1))
    assert np.abs(u - x1).max() < 1e-10 and rep.converged


def test_periodic_dipole():
    env = homogeneous(1.0, torus(2, 8))
    f = np.zeros((8, 8))
    f[0, 0], f[1, 0] = 1.0, -1.0
    prob = EllipticProblem(env, "periodic", rhs=f)
    u, rep = solve(prob)
    assert abs(u.mean()) < 1e-14
    assert np.abs(apply(env, u) - f).max() < 1e-9
    assert el.residual(prob, u) <= 1e-9


def test_periodic_incompatible_rhs():
    env = homogeneous(1.0, torus(2, 6))
    with pytest.raises(IncompatibleRHS):
        solve(EllipticProblem(env, "periodic", rhs=np.ones((6, 6))))


def test_neumann_affine():
    R = 5
    env = homogeneous(1.0, box(2, R))
    g = build_box(2, R)
    x1 = _coord(R, 0)
    ib = g.vertices("inner_boundary")
    tails = g.normal_map()
    flux = x1.reshape(-1)[ib] - x1.reshape(-1)[tails]
    prob = EllipticProblem(env, "neumann", flux=flux - flux.mean(), normalization=float(x1.reshape(-1)[ib].sum()))
    u, _ = solve(prob)
    keep = np.union1d(g.vertices("open"), ib)
    assert np.abs(u.reshape(-1)[keep] - x1.reshape(-1)[keep]).max() < 1e-10
    assert el.residual(prob, u) < 1e-9


def test_dense_oracle_random():
    env = make_environment("lognormal:0,1", torus(2, 4), 2)
    f = np.random.default_rng(0).standard_normal((4, 4))
    f -= f.mean()
    prob = EllipticProblem(env, "periodic", rhs=f, tol=1e-12)
    u, _ = solve(prob)
    np.testing.assert_allclose(u, el.dense_solve(prob), atol=1e-9)
    benv = make_environment("lognormal:0,1", torus(2, 12), 3).restrict_to_box(4)
    bd = np.random.default_rng(1).standard_normal((9, 9))
    prob = EllipticProblem(benv, "dirichlet", boundary=bd, tol=1e-12)
    u, _ = solve(prob)
    np.testing.assert_allclose(u, el.dense_solve(prob), atol=1e-9)


def test_pcg_matches_scipy():
    env = make_environment("lognormal:0,1", torus(2, 12), 4).restrict_to_box(5)
    g = build_box(2, 5)
    K = el.operator_matrix(env)
    I = g.vertices("open")
    A = K[I][:, I].tocsr()
    b = np.random.default_rng(0).standard_normal(I.size)
    x, rep = el.pcg(A, b, A.diagonal(), tol=1e-12)
    ref = spla.spsolve(A.tocsc(), b)
    np.testing.assert_allclose(x, ref, atol=1e-9)
    assert rep.converged and rep.residual <= 1e-12


def test_residual_positive_for_perturbed():
    env = homogeneous(1.0, box(2, 4))
    x1 = _coord(4, 0)
    prob = EllipticProblem(env, "dirichlet", boundary=x1)
    assert el.residual(prob, x1) < 1e-14
    pert = x1.copy()
    pert[4, 4] += 0.1
    assert el.residual(prob, pert) > 0


def test_solver_failure_is_reported():
    env = make_environment("lognormal:0,2", torus(2, 16), 0)
    f = np.random.default_rng(0).standard_normal((16, 16))
    f -= f.mean()
    with pytest.raises(SolverError) as info:
        solve(EllipticProblem(env, "periodic", rhs=f, tol=1e-14, maxiter=3))
    assert info.value.report is not None and not info.value.report.converged


def test_problem_validation():
    with pytest.raises(ValueError):
        EllipticProblem(homogeneous(1.0, torus(2, 4)), "dirichlet", boundary=np.zeros((4, 4)))
    with pytest.raises(ValueError):
        EllipticProblem(homogeneous(1.0, box(2, 2)), "neumann", flux=np.zeros(3))
    bd = np.zeros((5, 5))
    bd[0, 0] = np.nan
    with pytest.raises(ValueError):
        EllipticProblem(homogeneous(1.0, box(2, 2)), "dirichlet", boundary=bd)


def test_harmonic_extension_maximum_principle():
    env = make_environment("lognormal:0,1", torus(2, 20), 5).restrict_to_box(8)
    bd = np.random.default_rng(2).standard_normal((17, 17))
    u, _ = el.harmonic_extension(env, bd)
    b = build_box(2, 8).vertices("boundary")
    assert u.max() <= bd.reshape(-1)[b].max() + 1e-12
    assert u.min() >= bd.reshape(-1)[b].min() - 1e-12


def test_residual_of_harmonic_function_is_small():
    # a harmonic u has K u ~ 0, so the residual must be scaled by the size of the summands
    env = make_environment("lognormal:0,1", torus(2, 20), 5).restrict_to_box(8)
    bd = np.random.default_rng(3).standard_normal((17, 17))
    u, _ = el.harmonic_extension(env, bd)
    assert el.residual(el.EllipticProblem(env, "dirichlet", boundary=bd), u) < 1e-9
    assert el.residual(el.EllipticProblem(env, "dirichlet", boundary=bd), u + 1e-3) > 1e-4
