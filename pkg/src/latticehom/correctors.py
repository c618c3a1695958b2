"""Periodic correctors, homogenized coefficients and flux correctors.

Everything lives on a torus of side L.  Arrays are indexed
``phi[i][x]``, ``q[i][j][x]`` (component j of q_i) and ``sigma[i][j][k][x]``.
The torus average stands in for the expectation over the environment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .elliptic import EllipticProblem, solve
from .environment import Environment, make_environment, torus, torus_laplacian_symbol
from .lattice import avnorm


def fwd(a, i):
    """Periodic forward difference a(x+e_i) - a(x)."""
    return np.roll(a, -1, axis=i) - a


def bwd(a, i):
    """Periodic backward difference a(x-e_i) - a(x)."""
    return np.roll(a, 1, axis=i) - a


def div_star(F):
    """sum_i F_i(x-e_i) - F_i(x) for F of shape (d, *torus)."""
    return sum(bwd(F[i], i) for i in range(F.shape[0]))


def poisson_fft(f: np.ndarray) -> np.ndarray:
    """Mean-zero solution of grad*.grad u = f - mean(f) on the torus (exact up to rounding)."""
    d, L = f.ndim, f.shape[0]
    lam = torus_laplacian_symbol(d, L)
    fh = np.fft.fftn(f)
    lam[(0,) * d] = 1.0
    uh = fh / lam
    uh[(0,) * d] = 0.0
    return np.real(np.fft.ifftn(uh))


@dataclass
class CorrectorSet:
    L: int
    env: Environment
    phi: np.ndarray
    a_h: np.ndarray
    mean_flux: np.ndarray
    q: np.ndarray
    sigma: np.ndarray | None = None
    tol: float = 1e-10
    residuals: dict = field(default_factory=dict)
    reports: list = field(default_factory=list)

    @property
    def d(self):
        return self.env.d

    def summary(self) -> dict:
        return {
            "L": self.L,
            "d": self.d,
            "a_h": np.diag(self.a_h).tolist(),
            "mean_flux": self.mean_flux.tolist(),
            "residuals": {k: float(v) for k, v in self.residuals.items()},
            "tol": self.tol,
            "solves": [r.as_dict() for r in self.reports],
            "environment": self.env.provenance,
        }


def compute_phi(env: Environment, tol: float = 1e-10):
    """Mean-zero phi_i with grad*.a grad phi_i = -grad*.(a e_i); returns (phi, reports)."""
    if not env.topology.periodic:
        raise ValueError("correctors are computed on a torus")
    d = env.d
    phi = np.empty((d,) + env.topology.shape)
    reports = []
    for i in range(d):
        rhs = env.mu[i] - np.roll(env.mu[i], 1, axis=i)
        phi[i], rep = solve(EllipticProblem(env, "periodic", rhs=rhs, tol=tol))
        reports.append(rep)
    return phi, reports


def corrected_flux(env: Environment, phi: np.ndarray) -> np.ndarray:
    """F[i][j] = component j of a(grad phi_i + e_i)."""
    d = env.d
    F = np.empty((d, d) + env.topology.shape)
    for i in range(d):
        for j in range(d):
            F[i, j] = env.mu[j] * ((1.0 if i == j else 0.0) + fwd(phi[i], j))
    return F


def compute_ahom(env: Environment, phi: np.ndarray):
    """Return (a_h, q, mean_flux).

    ``mean_flux[i, j]`` is the torus mean of component j of a(grad phi_i + e_i);
    a_h is its diagonal.  q_i subtracts the whole mean vector so it has mean
    zero exactly; off-diagonal means are returned for inspection.
    """
    F = corrected_flux(env, phi)
    axes = tuple(range(2, F.ndim))
    mean = F.mean(axis=axes)
    q = F - mean.reshape(mean.shape + (1,) * env.d)
    return np.diag(np.diag(mean)), q, mean


def compute_sigma(q: np.ndarray) -> np.ndarray:
    """sigma[i,j,k] with grad*.grad sigma_ijk = grad_j q_ik - grad_k q_ij, j < k, filled antisymmetrically."""
    d = q.shape[0]
    sigma = np.zeros((d, d, d) + q.shape[2:])
    for i in range(d):
        for j in range(d):
            for k in range(j + 1, d):
                s = poisson_fft(fwd(q[i, k], j) - fwd(q[i, j], k))
                sigma[i, j, k] = s
                sigma[i, k, j] = -s
    return sigma


def _rel(num, den):
    den = float(np.linalg.norm(den))
    num = float(np.linalg.norm(num))
    return num / den if den > 0 else num


def corrector_residuals(env, phi, q, sigma=None, spot_checks=None) -> dict:
    """Relative l2 residuals of the corrector system."""
    d = env.d
    mean_flux = corrected_flux(env, phi).mean(axis=tuple(range(2, 2 + d)))
    out = {}
    for i in range(d):
        rhs = env.mu[i] - np.roll(env.mu[i], 1, axis=i)
        out[f"div_q_{i + 1}"] = _rel(div_star(q[i]), rhs)
    if sigma is not None:
        for i in range(d):
            lhs = np.stack([-sum(bwd(sigma[i, j, k], k) for k in range(d)) for j in range(d)])
            # scaled by the full corrected flux: q_i itself may vanish (layered media)
            out[f"sigma_q_{i + 1}"] = _rel(lhs - q[i], q[i] + mean_flux[i].reshape((d,) + (1,) * d))
        triples = spot_checks
        if triples is None:
            triples = [(i, j, k) for i in range(d) for j in range(d) for k in range(d) if j > k][:3]
        for (i, j, k) in triples:
            free = poisson_fft(fwd(q[i, k], j) - fwd(q[i, j], k))
            out[f"antisym_{i + 1}{j + 1}{k + 1}"] = _rel(free + sigma[i, k, j], sigma[i, k, j])
    return out


def correctors(env: Environment, tol: float = 1e-10, with_sigma: bool = True) -> CorrectorSet:
    """Full corrector pipeline on a periodic environment."""
    phi, reports = compute_phi(env, tol)
    a_h, q, mean = compute_ahom(env, phi)
    sigma = compute_sigma(q) if with_sigma else None
    res = corrector_residuals(env, phi, q, sigma)
    return CorrectorSet(env.topology.size, env, phi, a_h, mean, q, sigma, tol, res, reports)


def homogenize(env: Environment, tol: float = 1e-10) -> np.ndarray:
    """Homogenized diagonal matrix of a periodic environment."""
    return correctors(env, tol, with_sigma=False).a_h


def corrected_gradients(cs: CorrectorSet) -> np.ndarray:
    """G[i][j] = delta_ij + grad_j phi_i on the torus."""
    d = cs.d
    G = np.empty((d, d) + cs.phi.shape[1:])
    for i in range(d):
        for j in range(d):
            G[i, j] = (1.0 if i == j else 0.0) + fwd(cs.phi[i], j)
    return G


def harmonic_coordinate_residual(cs: CorrectorSet) -> np.ndarray:
    """Relative residual of grad*. a (e_i + grad phi_i) = 0 for each i."""
    F = corrected_flux(cs.env, cs.phi)
    return np.array([_rel(div_star(F[i]), cs.env.mu[i] - np.roll(cs.env.mu[i], 1, axis=i))
                     for i in range(cs.d)])


def torus_to_box(a: np.ndarray, R: int, lead: int = 0) -> np.ndarray:
    """Read a torus array on D̄_R (origin at index 0); ``lead`` leading axes are kept."""
    L = a.shape[lead]
    idx = np.arange(-R, R + 1) % L
    if 2 * R + 1 > a.shape[-1]:
        raise ValueError("box does not fit in the torus")
    d = a.ndim - lead
    return a[(Ellipsis,) + np.ix_(*([idx] * d))] if lead else a[np.ix_(*([idx] * d))]


def corrected_coordinates(cs: CorrectorSet, R: int) -> np.ndarray:
    """x_i + phi_i(x) on D̄_R as an array (d, *box shape)."""
    d = cs.d
    phi = torus_to_box(cs.phi, R, lead=1)
    n = 2 * R + 1
    out = np.empty_like(phi)
    for i in range(d):
        shape = [1] * d
        shape[i] = n
        out[i] = phi[i] + np.arange(-R, R + 1).reshape(shape)
    return out


# ----------------------------------------------------------------------------
# Sublinearity
# ----------------------------------------------------------------------------


@dataclass
class SublinearityRow:
    L: int
    seed: int
    phi_ratio: float
    sigma_ratio: float


def sublinearity_ratios(cs: CorrectorSet, p: float, q: float):
    """avnorm(|phi|, 2p/(p-1), D_R)/R and avnorm(|sigma|, 2q/(q-1), D_R)/R with R = L/2."""
    R = cs.L // 2
    rp = 2 * p / (p - 1) if np.isfinite(p) else 2.0
    rq = 2 * q / (q - 1) if np.isfinite(q) else 2.0
    phi = torus_to_box(cs.phi, R - 1, lead=1)
    mag_phi = np.sqrt((phi**2).sum(axis=0))
    out = [avnorm(mag_phi, rp) / R]
    if cs.sigma is not None:
        sig = torus_to_box(cs.sigma.reshape((-1,) + cs.sigma.shape[3:]), R - 1, lead=1)
        out.append(avnorm(np.sqrt((sig**2).sum(axis=0)), rq) / R)
    else:
        out.append(np.nan)
    return tuple(out)


def sublinearity_scan(law: str, L_list, p: float, q: float, seeds, d: int = 2, tol: float = 1e-10):
    """Per-seed ratios and per-L medians for the corrector growth diagnostic."""
    rows = []
    for L in L_list:
        for s in seeds:
            env = make_environment(law, torus(d, L), s)
            cs = correctors(env, tol)
            a, b = sublinearity_ratios(cs, p, q)
            rows.append(SublinearityRow(int(L), int(s), a, b))
    med = {}
    for L in L_list:
        sel = [r for r in rows if r.L == L]
        med[int(L)] = (float(np.median([r.phi_ratio for r in sel])),
                       float(np.median([r.sigma_ratio for r in sel])))
    return rows, med
