"""Solvers for the divergence-form operator grad*. a grad on tori and boxes.

With the conventions of :mod:`latticehom.lattice`, grad* is the adjoint of
grad, so ``K = grad* . a grad`` is the weighted graph Laplacian
``(K u)(x) = sum_y mu_xy (u(x) - u(y))``: symmetric positive semidefinite.
All solves are of the form ``K u = f`` plus boundary conditions.

Solutions are returned as arrays on the environment's grid (torus or box,
see :mod:`latticehom.environment`).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .environment import Environment, _edge_mask
from .lattice import build_box, corner_sources, shift


class SolverError(RuntimeError):
    def __init__(self, message, report=None):
        super().__init__(message)
        self.report = report


class IncompatibleRHS(ValueError):
    """Singular problem whose data is not orthogonal to constants."""


@dataclass
class SolveReport:
    iterations: int
    residual: float
    wall_time: float
    converged: bool = True

    def as_dict(self):
        return {"iterations": self.iterations, "residual": self.residual,
                "wall_time": self.wall_time, "converged": self.converged}


# ----------------------------------------------------------------------------
# Operator
# ----------------------------------------------------------------------------


def edge_list(env: Environment):
    """Undirected edges (x, x+e_i) of the environment as flat-index arrays plus weights."""
    top = env.topology
    shape = top.shape
    n = int(np.prod(shape))
    mask = _edge_mask(top)
    flat = np.arange(n).reshape(shape)
    tails, heads, w = [], [], []
    for i in range(top.d):
        nb = np.roll(flat, -1, axis=i)
        m = mask[i]
        tails.append(flat[m])
        heads.append(nb[m])
        w.append(env.mu[i][m])
    return np.concatenate(tails), np.concatenate(heads), np.concatenate(w)


def laplacian_matrix(tails, heads, weights, n) -> sp.csr_matrix:
    """Weighted graph Laplacian sum_y w_xy (u(x) - u(y)) as CSR."""
    rows = np.concatenate([tails, heads, tails, heads])
    cols = np.concatenate([heads, tails, tails, heads])
    vals = np.concatenate([-weights, -weights, weights, weights])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def operator_matrix(env: Environment) -> sp.csr_matrix:
    """Matrix of grad*. a grad on the full grid of ``env`` (box rows on the boundary are partial)."""
    if "K" not in env._cache:
        t, h, w = edge_list(env)
        n = int(np.prod(env.topology.shape))
        env._cache["K"] = laplacian_matrix(t, h, w, n)
    return env._cache["K"]


def apply(env: Environment, u) -> np.ndarray:
    """(grad* . a grad u)(x) by stencil; on a box, boundary vertices get NaN."""
    u = np.asarray(u, dtype=float)
    top = env.topology
    if u.shape != top.shape:
        raise ValueError(f"field shape {u.shape} does not match {top.shape}")
    per = top.periodic
    out = np.zeros(top.shape)
    for i in range(top.d):
        mu = env.mu[i]
        flux = mu * (shift(u, i, 1, per) - u)  # (a grad u)_i(x)
        flux_back = shift(flux, i, -1, per)  # (a grad u)_i(x - e_i)
        out += flux_back - flux
    if not per:
        geom = build_box(top.d, top.size)
        out = out.reshape(-1)
        out[geom.vertices("boundary")] = np.nan
        out = out.reshape(top.shape)
    return out


# ----------------------------------------------------------------------------
# Preconditioned conjugate gradients
# ----------------------------------------------------------------------------


def pcg(A, b, diag, tol=1e-10, maxiter=None, project=False, x0=None):
    """Jacobi-preconditioned CG for SPD ``A``.

    With ``project`` the constant mode is removed from the right-hand side,
    the iterates and the residuals, so singular Laplacians stay definite on
    the complement of constants.  Returns ``(x, SolveReport)``.
    """
    t0 = time.perf_counter()
    n = b.size
    maxiter = maxiter or max(1000, 10 * int(np.sqrt(n)) * 20)
    inv = 1.0 / diag

    def proj(v):
        return v - v.mean() if project else v

    b = proj(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return np.zeros(n), SolveReport(0, 0.0, time.perf_counter() - t0)
    x = np.zeros(n) if x0 is None else proj(np.array(x0, dtype=float))
    r = b - A @ x
    r = proj(r)
    z = proj(inv * r)
    p = z.copy()
    rz = r @ z
    it = 0
    res = np.linalg.norm(r) / bnorm
    while res > tol and it < maxiter:
        Ap = A @ p
        alpha = rz / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        r = proj(r)
        it += 1
        if it % 50 == 0:
            r = proj(b - A @ x)  # limit drift of the recursive residual
        res = np.linalg.norm(r) / bnorm
        z = proj(inv * r)
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    x = proj(x)
    true_res = np.linalg.norm(proj(b - A @ x)) / bnorm
    report = SolveReport(it, float(true_res), time.perf_counter() - t0, bool(true_res <= tol))
    if true_res > tol:
        # The recursive residual may stop a hair early; polish once from the true residual.
        if res <= tol and it < maxiter:
            return pcg(A, b, diag, tol, maxiter - it, project, x0=x)
        raise SolverError(f"CG did not reach tolerance {tol:g} (residual {true_res:.3g})", report)
    return x, report


def _check_compatible(b, tol):
    scale = np.abs(b).sum()
    if scale > 0 and abs(b.sum()) > max(10 * tol, 1e-12) * scale:
        raise IncompatibleRHS(f"data not orthogonal to constants (sum {b.sum():.3g})")


# ----------------------------------------------------------------------------
# Problems
# ----------------------------------------------------------------------------


@dataclass
class EllipticProblem:
    """K u = rhs with one of three side conditions.

    * ``periodic``: torus; returned u has mean ``normalization``.
    * ``dirichlet``: box; u equals ``boundary`` on the box boundary.
    * ``neumann``: box; unknowns live on D_R and the inner boundary.  At each
      inner-boundary vertex y with normal edge (x, y) the flux
      mu_xy (u(y) - u(x)) equals ``flux[k]`` (k indexes the sorted inner
      boundary).  The constant is fixed by sum over the inner boundary of u
      equal to ``normalization``.  Corner vertices copy their assigned
      inner-boundary neighbour.
    """

    env: Environment
    condition: str
    rhs: np.ndarray | None = None
    boundary: np.ndarray | None = None
    flux: np.ndarray | None = None
    normalization: float = 0.0
    tol: float = 1e-10
    maxiter: int | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        top = self.env.topology
        if self.condition not in ("periodic", "dirichlet", "neumann"):
            raise ValueError("condition must be periodic, dirichlet or neumann")
        if (self.condition == "periodic") != top.periodic:
            raise ValueError("periodic problems live on tori, the others on boxes")
        if self.rhs is not None and np.shape(self.rhs) != top.shape:
            raise ValueError("rhs must be a grid array")
        if self.condition == "dirichlet":
            if self.boundary is None or np.shape(self.boundary) != top.shape:
                raise ValueError("dirichlet data must be a grid array covering the boundary")
            geom = build_box(top.d, top.size)
            if not np.all(np.isfinite(np.asarray(self.boundary).reshape(-1)[geom.vertices("boundary")])):
                raise ValueError("dirichlet data must be defined on all of the boundary")
        if self.condition == "neumann":
            geom = build_box(top.d, top.size)
            if self.flux is None or np.shape(self.flux) != (geom.count("inner_boundary"),):
                raise ValueError("neumann flux must have one value per inner-boundary vertex")


def _neumann_system(env: Environment):
    if "neumann" not in env._cache:
        top = env.topology
        geom = build_box(top.d, top.size)
        t, h, a = geom.edges("E")
        keep = t < h
        t, h, a = t[keep], h[keep], a[keep]
        base = np.minimum(t, h)
        w = env.mu.reshape(top.d, -1)[a, base]
        nodes = np.union1d(geom.vertices("open"), geom.vertices("inner_boundary"))
        loc = np.full(geom.size, -1)
        loc[nodes] = np.arange(nodes.size)
        K = laplacian_matrix(loc[t], loc[h], w, nodes.size)
        env._cache["neumann"] = (nodes, loc, K)
    return env._cache["neumann"]


def solve(problem: EllipticProblem):
    """Solve and return ``(u, SolveReport)`` with u a grid array."""
    env = problem.env
    top = env.topology
    n = int(np.prod(top.shape))
    f = np.zeros(n) if problem.rhs is None else np.asarray(problem.rhs, dtype=float).reshape(-1)

    if problem.condition == "periodic":
        K = operator_matrix(env)
        _check_compatible(f, problem.tol)
        u, rep = pcg(K, f, K.diagonal(), problem.tol, problem.maxiter, project=True)
        u = u + problem.normalization
        return u.reshape(top.shape), rep

    geom = build_box(top.d, top.size)
    if problem.condition == "dirichlet":
        K = operator_matrix(env)
        interior = geom.vertices("open")
        bnd = geom.vertices("boundary")
        g = np.asarray(problem.boundary, dtype=float).reshape(-1)
        u = np.zeros(n)
        u[bnd] = g[bnd]
        if "dirichlet" not in env._cache:
            env._cache["dirichlet"] = (K[interior][:, interior].tocsr(), K[interior][:, bnd].tocsr())
        KII, KIB = env._cache["dirichlet"]
        b = f[interior] - KIB @ u[bnd]
        x, rep = pcg(KII, b, KII.diagonal(), problem.tol, problem.maxiter)
        u[interior] = x
        return u.reshape(top.shape), rep

    nodes, loc, K = _neumann_system(env)
    ib = geom.vertices("inner_boundary")
    b = np.zeros(nodes.size)
    interior = geom.vertices("open")
    b[loc[interior]] = f[interior]
    b[loc[ib]] = problem.flux
    _check_compatible(b, problem.tol)
    x, rep = pcg(K, b, K.diagonal(), problem.tol, problem.maxiter, project=True)
    x += (problem.normalization - x[loc[ib]].sum()) / ib.size
    u = np.full(n, np.nan)
    u[nodes] = x
    corners, src = corner_sources(geom)
    u[corners] = u[src]
    return u.reshape(top.shape), rep


def _term_scale(K, u, f) -> float:
    # size of the individual summands, so a harmonic u is not measured against ||K u|| ~ 0
    return max(np.linalg.norm(f), np.linalg.norm(abs(K) @ np.abs(u)), 1e-300)


def residual(problem: EllipticProblem, u) -> float:
    """Relative l2 residual of the equations plus the side-condition violation."""
    env = problem.env
    top = env.topology
    u = np.asarray(u, dtype=float).reshape(-1)
    n = u.size
    f = np.zeros(n) if problem.rhs is None else np.asarray(problem.rhs, dtype=float).reshape(-1)
    if problem.condition == "periodic":
        K = operator_matrix(env)
        fp = f - f.mean()
        r = K @ u - fp
        scale = _term_scale(K, u, fp)
        return float(np.linalg.norm(r) / scale + abs(u.mean() - problem.normalization))
    geom = build_box(top.d, top.size)
    if problem.condition == "dirichlet":
        K = operator_matrix(env)
        interior = geom.vertices("open")
        bnd = geom.vertices("boundary")
        r = (K @ u)[interior] - f[interior]
        scale = _term_scale(K[interior], u, f[interior])
        g = np.asarray(problem.boundary, dtype=float).reshape(-1)
        return float(np.linalg.norm(r) / scale + np.abs(u[bnd] - g[bnd]).max())
    nodes, loc, K = _neumann_system(env)
    ib = geom.vertices("inner_boundary")
    interior = geom.vertices("open")
    b = np.zeros(nodes.size)
    b[loc[interior]] = f[interior]
    b[loc[ib]] = problem.flux
    x = u[nodes]
    r = K @ x - b
    scale = _term_scale(K, x, b)
    return float(np.linalg.norm(r) / scale + abs(x[loc[ib]].sum() - problem.normalization) / ib.size)


def dense_solve(problem: EllipticProblem) -> np.ndarray:
    """Direct dense solve used as an oracle on small problems."""
    env = problem.env
    top = env.topology
    n = int(np.prod(top.shape))
    f = np.zeros(n) if problem.rhs is None else np.asarray(problem.rhs, dtype=float).reshape(-1)
    K = operator_matrix(env).toarray()
    if problem.condition == "periodic":
        u = np.linalg.lstsq(K, f - f.mean(), rcond=None)[0]
        return (u - u.mean() + problem.normalization).reshape(top.shape)
    geom = build_box(top.d, top.size)
    if problem.condition == "dirichlet":
        I, B = geom.vertices("open"), geom.vertices("boundary")
        g = np.asarray(problem.boundary, dtype=float).reshape(-1)
        u = np.zeros(n)
        u[B] = g[B]
        u[I] = np.linalg.solve(K[np.ix_(I, I)], f[I] - K[np.ix_(I, B)] @ g[B])
        return u.reshape(top.shape)
    raise NotImplementedError("dense oracle covers periodic and dirichlet problems")


def harmonic_extension(env: Environment, boundary, tol=1e-10):
    """Convenience: a-harmonic function on the box with the given boundary values."""
    return solve(EllipticProblem(env, "dirichlet", boundary=boundary, tol=tol))
