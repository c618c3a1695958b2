"""Functions on the boundary of a box: interpolation, projection, smoothing.

Boundary vertices of D̄_R are numbered by their position in the sorted list
``geom.vertices("boundary")``; inner-boundary vertices likewise.  Functions on
the boundary are plain vectors in that numbering.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .lattice import BoxGeometry, build_box, corner_sources, write_triplets

GRAM_1D = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
DUAL_1D = np.array([[4.0, -2.0], [-2.0, 4.0]])  # inverse of GRAM_1D


def _kron_power(m, k):
    out = np.ones((1, 1))
    for _ in range(k):
        out = np.kron(out, m)
    return out


def steps_for(eps: float, R: int) -> int:
    """Number of lazy averaging steps at relative scale eps: ceil((eps R)^2)."""
    if eps < 0:
        raise ValueError("smoothing scale must be nonnegative")
    return int(math.ceil((eps * R) ** 2 - 1e-12))


class SurfaceMesh:
    """Unit (d-1)-faces of the surface of the cube [-R, R]^d.

    A face is (normal axis j, side s = +-1, lower corner a) with a_j = s R and
    the other coordinates of a in [-R, R-1].  Its corners are a + sum of a
    subset of the tangential unit vectors, enumerated in binary order of the
    tangential axes (ascending).
    """

    def __init__(self, d: int, R: int):
        self.geom: BoxGeometry = build_box(d, R)
        self.d, self.R = d, R
        normals, sides, lows = [], [], []
        rng = range(-R, R)
        for j in range(d):
            for s in (-1, 1):
                for rest in itertools.product(rng, repeat=d - 1):
                    a = list(rest)
                    a.insert(j, s * R)
                    normals.append(j)
                    sides.append(s)
                    lows.append(a)
        self.normal = np.array(normals)
        self.side = np.array(sides)
        self.low = np.array(lows, dtype=np.int64)
        self.bnd = self.geom.vertices("boundary")
        self.bpos = np.full(self.geom.size, -1)
        self.bpos[self.bnd] = np.arange(self.bnd.size)
        offs = np.array(list(itertools.product((0, 1), repeat=d - 1)), dtype=np.int64)
        self.local_offsets = offs
        corners = np.empty((len(lows), 2 ** (d - 1)), dtype=np.int64)
        for f in range(len(lows)):
            tang = [k for k in range(d) if k != self.normal[f]]
            pts = np.repeat(self.low[f][None, :], offs.shape[0], axis=0)
            pts[:, tang] += offs
            corners[f] = self.bpos[self.geom.index(pts)]
        self.corners = corners  # boundary positions of each face's corners

    @property
    def n_faces(self):
        return self.low.shape[0]

    @cached_property
    def assignment(self):
        """(face index, local corner index) of Gamma_x for every boundary vertex x.

        Gamma_x is the incident face whose key (normal axis, side, lower corner)
        is lexicographically least; faces are generated in that order, so it is
        the first incident face.
        """
        face = np.full(self.bnd.size, -1)
        local = np.full(self.bnd.size, -1)
        for f in range(self.n_faces):
            for c, b in enumerate(self.corners[f]):
                if face[b] < 0:
                    face[b] = f
                    local[b] = c
        assert (face >= 0).all()
        return face, local

    def locate(self, points, atol=1e-9):
        """Face index and tangential local coordinates in [0,1]^(d-1) of surface points."""
        P = np.atleast_2d(np.asarray(points, dtype=float))
        R, d = self.R, self.d
        ap = np.abs(P)
        if np.any(ap > R + atol) or np.any(np.abs(ap.max(axis=1) - R) > atol):
            raise ValueError("point is off the box surface")
        j = np.argmax(ap >= R - atol, axis=1)
        s = np.where(P[np.arange(len(P)), j] > 0, 1, -1)
        low = np.clip(np.floor(P + atol), -R, R - 1).astype(np.int64)
        low[np.arange(len(P)), j] = s * R
        t = P - low
        # faces are enumerated by (j, side, remaining coordinates + R) in mixed radix
        rest = np.array([np.delete(low[k], j[k]) for k in range(len(P))]) + R
        flat = np.zeros(len(P), dtype=np.int64)
        for c in range(d - 1):
            flat = flat * (2 * R) + rest[:, c]
        per_face = (2 * R) ** (d - 1)
        fidx = (j * 2 + (s > 0)) * per_face + flat
        tloc = np.array([np.delete(t[k], j[k]) for k in range(len(P))])
        return fidx, np.clip(tloc, 0.0, 1.0)

    def basis(self, tloc):
        """Values of the 2^(d-1) corner hat functions at local coordinates (m, d-1)."""
        t = np.atleast_2d(tloc)
        vals = np.ones((t.shape[0], self.local_offsets.shape[0]))
        for c, off in enumerate(self.local_offsets):
            for k, o in enumerate(off):
                vals[:, c] *= t[:, k] if o else 1 - t[:, k]
        return vals


def interpolate(mesh: SurfaceMesh, u, points) -> np.ndarray:
    """Multilinear interpolation T_R u evaluated at surface points."""
    u = np.asarray(u, dtype=float)
    f, t = mesh.locate(points)
    return (mesh.basis(t) * u[mesh.corners[f]]).sum(axis=1)


def gram(d: int) -> np.ndarray:
    """Gram matrix of the corner hat functions on the unit (d-1)-cube."""
    return _kron_power(GRAM_1D, d - 1)


def dual_weights(d: int) -> np.ndarray:
    """Row x holds the coefficients of psi_x in the hat basis (inverse Gram matrix)."""
    return _kron_power(DUAL_1D, d - 1)


def scott_zhang(mesh: SurfaceMesh, u) -> np.ndarray:
    """Pi(T_R u) with exact integration of hat times multilinear data on each Gamma_x."""
    u = np.asarray(u, dtype=float)
    face, local = mesh.assignment
    moments = u[mesh.corners[face]] @ gram(mesh.d).T  # integral of phi_z T u over Gamma_x
    W = dual_weights(mesh.d)
    return np.einsum("nz,nz->n", W[local], moments)


def _gauss(d: int, order: int):
    x, w = np.polynomial.legendre.leggauss(order)
    x = (x + 1) / 2
    w = w / 2
    pts = np.array(list(itertools.product(x, repeat=d - 1)))
    wts = np.prod(np.array(list(itertools.product(w, repeat=d - 1))), axis=1)
    return pts, wts


def face_points(mesh: SurfaceMesh, f: int, tloc):
    j = mesh.normal[f]
    tang = [k for k in range(mesh.d) if k != j]
    P = np.repeat(mesh.low[f][None, :].astype(float), len(tloc), axis=0)
    P[:, tang] += tloc
    return P


def scott_zhang_function(mesh: SurfaceMesh, f, order: int = 4) -> np.ndarray:
    """Pi f for a callable f on surface points, by tensor Gauss-Legendre quadrature per face."""
    face, local = mesh.assignment
    pts, wts = _gauss(mesh.d, order)
    B = mesh.basis(pts)
    W = dual_weights(mesh.d)
    out = np.empty(face.size)
    for x in range(face.size):
        vals = np.asarray(f(face_points(mesh, face[x], pts)), dtype=float)
        out[x] = W[local[x]] @ (B.T @ (wts * vals))
    return out


def biorthogonality_matrix(d: int, order: int = 3) -> np.ndarray:
    """Quadrature values of integral psi_x phi_z over the reference face; should be I."""
    mesh_basis = SurfaceMesh.__new__(SurfaceMesh)
    mesh_basis.local_offsets = np.array(list(itertools.product((0, 1), repeat=d - 1)))
    pts, wts = _gauss(d, order)
    B = SurfaceMesh.basis(mesh_basis, pts)
    psi = B @ dual_weights(d).T
    return psi.T @ (wts[:, None] * B)


def surface_norm(mesh: SurfaceMesh, u, p: float, order: int = 4) -> float:
    """Plain L^p norm of T_R u over the continuum surface."""
    pts, wts = _gauss(mesh.d, max(order, 2))
    B = mesh.basis(pts)
    vals = np.abs(np.asarray(u)[mesh.corners] @ B.T)
    if p == np.inf:
        return float(np.abs(u).max())
    return float((vals**p @ wts).sum() ** (1 / p))


# ----------------------------------------------------------------------------
# Smoothing, modifier and dual
# ----------------------------------------------------------------------------


class SmoothingStack:
    """Operators T_R, Pi, S, Z and S* for one box radius and step count."""

    def __init__(self, d: int, R: int, eps: float | None = None, m: int | None = None):
        if (eps is None) == (m is None):
            raise ValueError("give exactly one of eps or m")
        self.d, self.R = d, R
        self.m = steps_for(eps, R) if m is None else int(m)
        if self.m < 0:
            raise ValueError("step count must be nonnegative")
        self.eps = eps
        self.geom = build_box(d, R)
        self.mesh = SurfaceMesh(d, R)
        g = self.geom
        self.bnd = g.vertices("boundary")
        self.ib = g.vertices("inner_boundary")
        bpos = self.mesh.bpos
        t, h, _ = g.edges("tan")
        n = self.bnd.size
        A = sp.csr_matrix((np.ones(t.size), (bpos[t], bpos[h])), shape=(n, n))
        deg = np.asarray(A.sum(axis=1)).ravel()
        self.P = (0.5 * sp.identity(n) + 0.5 * sp.diags(1.0 / deg) @ A).tocsr()
        self.ib_pos = bpos[self.ib]  # where inner-boundary vertices sit in the boundary numbering
        corners, src = corner_sources(g)
        ibloc = np.full(g.size, -1)
        ibloc[self.ib] = np.arange(self.ib.size)
        rows = np.concatenate([self.ib_pos, bpos[corners]])
        cols = np.concatenate([np.arange(self.ib.size), ibloc[src]])
        self.Z = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(n, self.ib.size))

    # T_R and Pi -------------------------------------------------------------
    def interpolate(self, u, points):
        return interpolate(self.mesh, u, points)

    def project(self, u):
        return scott_zhang(self.mesh, u)

    # S, Z, S* --------------------------------------------------------------
    def smooth(self, u):
        v = np.asarray(u, dtype=float)
        for _ in range(self.m):
            v = self.P @ v
        return v

    def modify(self, h):
        """Z: inner-boundary values to boundary values, corners copied."""
        return self.Z @ np.asarray(h, dtype=float)

    def restrict(self, u):
        """Boundary vector to its inner-boundary entries."""
        return np.asarray(u)[self.ib_pos]

    def dual_smooth(self, h):
        """S* h (x) = sum_y h(y) (S Z 1_x)(y), sums over the inner boundary."""
        v = np.zeros(self.bnd.size)
        v[self.ib_pos] = h
        for _ in range(self.m):
            v = self.P.T @ v
        return self.Z.T @ v

    def smooth_matrix(self):
        M = sp.identity(self.bnd.size, format="csr")
        for _ in range(self.m):
            M = (self.P @ M).tocsr()
        return M

    def export(self, path_prefix):
        """Write P, S and Z as CSV triplet files."""
        write_triplets(self.P, f"{path_prefix}_P.csv")
        write_triplets(self.smooth_matrix(), f"{path_prefix}_S.csv")
        write_triplets(self.Z, f"{path_prefix}_Z.csv")

    # helpers ---------------------------------------------------------------
    def tangential_gradient(self, u):
        """u(head) - u(tail) on the oriented tangential edges."""
        t, h, _ = self.geom.edges("tan")
        u = np.asarray(u)
        return u[self.mesh.bpos[h]] - u[self.mesh.bpos[t]]

    def inner_tangential_gradient(self, h_vals):
        """Gradient on tangential edges joining two inner-boundary vertices."""
        t, h, _ = self.geom.edges("tan")
        loc = np.full(self.geom.size, -1)
        loc[self.ib] = np.arange(self.ib.size)
        keep = (loc[t] >= 0) & (loc[h] >= 0)
        hv = np.asarray(h_vals)
        return hv[loc[h[keep]]] - hv[loc[t[keep]]]


# ----------------------------------------------------------------------------
# Contract measurements
# ----------------------------------------------------------------------------


def _test_family(stack: SmoothingStack, rng: np.random.Generator, n_random: int):
    n = stack.bnd.size
    fam = []
    coords = stack.geom.coords[stack.bnd]
    for target in (np.zeros(stack.d, int), None):
        if target is None:
            k = 0
        else:
            t = target.copy()
            t[0] = stack.R
            k = int(np.flatnonzero((coords == t).all(axis=1))[0])
        e = np.zeros(n)
        e[k] = 1.0
        fam.append(e)
    half = (coords[:, 1] >= 0).astype(float) if stack.d >= 2 else None
    fam.append(half)
    fam.append((coords[:, 0] > 0).astype(float))
    for _ in range(n_random):
        fam.append(rng.standard_normal(n))
        w = rng.standard_normal(stack.d)
        fam.append(np.sin(coords @ w / max(1.0, stack.R / 4)))
    return fam


def _av(v, p):
    v = np.abs(v)
    return float(v.max()) if p == np.inf else float((np.mean(v**p)) ** (1 / p))


@dataclass
class SmoothingConstants:
    R: int
    eps: float
    m: int
    s: float
    r: float
    c_value: float
    c_gradient: float
    c_approx: float


def smoothing_constants(d: int, R: int, eps: float, s: float, r: float,
                        n_random: int = 8, seed: int = 0) -> SmoothingConstants:
    """Largest observed ratios in the three smoothing inequalities over a test family.

    c_value: avnorm(Su, r) / (eps^-(d-1)(1/s-1/r) avnorm(u, s))
    c_gradient: the same for tangential gradients
    c_approx: avnorm(u - Su, s) / (eps R avnorm(grad u, s, tangential))
    """
    st = SmoothingStack(d, R, eps=eps)
    rng = np.random.default_rng(seed)
    gain = eps ** (-(d - 1) * (1 / s - (0 if r == np.inf else 1 / r)))
    k_value = k_gradient = k_approx = 0.0
    for u in _test_family(st, rng, n_random):
        Su = st.smooth(u)
        nu = _av(u, s)
        if nu > 0:
            k_value = max(k_value, _av(Su, r) / (gain * nu))
        gu = st.tangential_gradient(u)
        ng = _av(gu, s)
        if ng > 0:
            k_gradient = max(k_gradient, _av(st.tangential_gradient(Su), r) / (gain * ng))
            k_approx = max(k_approx, _av(u - Su, s) / (eps * R * ng))
    return SmoothingConstants(R, eps, st.m, s, r, k_value, k_gradient, k_approx)
