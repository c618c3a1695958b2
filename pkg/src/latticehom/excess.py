"""Homogenization error, its energy identity, the excess and its decay.

Box functions are grid arrays of shape ``(2R+1,)*d``.  Correctors come from
a torus of side L >= 2R+3 and are read on the box with
:func:`latticehom.correctors.torus_to_box`.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .correctors import CorrectorSet, correctors, torus_to_box
from .elliptic import apply, harmonic_extension
from .environment import Environment, box, diagonal, make_environment, stream, torus
from .extension import boundary_term, edge_gradient, edge_weights, lambda_bar, moment_sum
from .lattice import avnorm, build_box, shift


def _check_grid(a, geom):
    a = np.asarray(a, dtype=float)
    if a.shape != geom.shape:
        raise ValueError(f"expected grid shape {geom.shape}, got {a.shape}")
    return a


# ----------------------------------------------------------------------------
# Cutoff and homogenization error
# ----------------------------------------------------------------------------


@dataclass
class CutoffProfile:
    R: int
    rho: int
    eta: np.ndarray


def cutoff(R: int, rho: int, d: int = 2) -> CutoffProfile:
    """eta(x) = clamp((R - rho - |x|_inf) / rho, 0, 1) on D̄_R."""
    if not (1 <= rho <= R / 4):
        raise ValueError("rho must lie in [1, R/4]")
    geom = build_box(d, R)
    sup = np.abs(geom.coords).max(axis=1)
    eta = np.clip((R - rho - sup) / rho, 0.0, 1.0).reshape(geom.shape)
    return CutoffProfile(R, rho, eta)


def _grad_box(v, i):
    """Forward difference along i with zero where x + e_i leaves the box."""
    return np.nan_to_num(shift(v, i, 1) - v, nan=0.0)


def homogenization_error(u, v, phi, eta) -> np.ndarray:
    """w = u - v - eta sum_i phi_i grad_i v on the box."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    eta = np.asarray(eta, dtype=float)
    if not (u.shape == v.shape == eta.shape == phi.shape[1:]):
        raise ValueError("u, v, eta and phi must share the box grid")
    corr = sum(phi[i] * _grad_box(v, i) for i in range(u.ndim))
    return u - v - eta * corr


# ----------------------------------------------------------------------------
# Energy identity
# ----------------------------------------------------------------------------


@dataclass
class IdentityReport:
    lhs: float
    volume_coefficient_term: float
    boundary_sum: float
    corrector_term: float
    rhs: float
    residual: float
    tail_eta_coefficient_term: float
    harmonic_residual_u: float
    harmonic_residual_v: float
    cutoff_support_ok: bool
    hypotheses_ok: bool

    def as_dict(self):
        return asdict(self)


def _harmonic_residual(env: Environment, u, geom):
    """max |grad*.a grad u| on D_R relative to 2d max(a) max|u|."""
    r = apply(env, u).reshape(-1)[geom.vertices("open")]
    scale = float(np.nanmax(env.mu)) * 2 * geom.d * max(float(np.abs(u).max()), 1e-300)
    return float(np.abs(r).max() / scale)


def energy_identity_check(env: Environment, a_h, u, v, phi, sigma, eta, mean_flux=None,
                          tol: float = 1e-10) -> IdentityReport:
    """Evaluate the four sums of the homogenization-error energy identity.

    LHS  = sum over oriented E_R of omega (grad w)^2
    T1   = -2 sum over (x, x+e_i) in E_R of (1 - eta(x)) (omega - omega_h) grad_i v grad_i w
    T2   = 2 sum over inner-boundary y of (u - v)(y) (omega grad u - omega_h grad v)(n(y))
    T3   = -2 sum over D_R of [(sigma_i . grad*)(eta grad_i v) + a (phi_i grad)(eta grad_i v)] . grad w

    The coefficient term weights each undirected edge by the cutoff at its
    base point x, which keeps the edge summand antisymmetric.  The variant
    weighting every oriented edge by its own tail is reported alongside.

    On a finite torus the mean flux matrix M can have off-diagonal entries
    while a_h keeps only its diagonal; pass ``mean_flux`` to fold the
    remainder (M - a_h) xi . grad w into T3.
    """
    d = env.d
    R = env.topology.size
    geom = build_box(d, R)
    a_h = np.asarray(a_h, dtype=float)
    u, v, eta = (_check_grid(x, geom) for x in (u, v, eta))
    mu = env.mu
    w = homogenization_error(u, v, phi, eta)
    t, h, ax = geom.edges("E")
    wf, vf, ef = w.reshape(-1), v.reshape(-1), eta.reshape(-1)
    om = edge_weights(env, geom, "E")
    gw = wf[h] - wf[t]
    gv = vf[h] - vf[t]
    lhs = float(np.sum(om * gw**2))

    pos = h > t  # (x, x + e_i) orientation
    dom = om - a_h[ax]
    t1 = -2.0 * float(np.sum(((1 - ef[t]) * dom * gv * gw)[pos]))
    t1_tail = -float(np.sum((1 - ef[t]) * dom * gv * gw))

    n_ib = geom.count("inner_boundary")
    t2 = 2.0 * n_ib * boundary_term(env, a_h, u, v)

    xi = np.stack([eta * _grad_box(v, i) for i in range(d)])
    interior = geom.vertices("open")
    total = np.zeros(geom.size)
    for j in range(d):
        Aj = np.zeros(geom.shape)
        Bj = np.zeros(geom.shape)
        for i in range(d):
            for k in range(d):
                Aj += shift(sigma[i, j, k], k, -1) * (shift(xi[i], k, -1) - xi[i])
            Bj += shift(phi[i], j, 1) * (shift(xi[i], j, 1) - xi[i])
            if mean_flux is not None:
                Aj += (mean_flux[i, j] - (a_h[i] if i == j else 0.0)) * xi[i]
        Bj = np.nan_to_num(mu[j]) * Bj
        gwj = shift(w, j, 1) - w
        total += ((Aj + Bj) * gwj).reshape(-1)
    t3 = -2.0 * float(np.sum(total[interior]))

    rhs = t1 + t2 + t3
    resid = abs(lhs - rhs) / (abs(lhs) + abs(rhs) + 1.0)
    hu = _harmonic_residual(env, u, geom)
    hv = _harmonic_residual(diagonal(a_h, box(d, R)), v, geom)
    support_ok = bool(np.all(eta.reshape(-1)[np.abs(geom.coords).max(axis=1) >= R - 4] == 0))
    ok = support_ok and hu <= 10 * tol and hv <= 10 * tol
    return IdentityReport(lhs, t1, t2, t3, rhs, resid, t1_tail, hu, hv, support_ok, ok)


def identity_setup(env_torus: Environment, R: int, rho: int, seed: int, tol: float = 1e-10,
                   cs: CorrectorSet | None = None):
    """Correctors on the torus, u a-harmonic and v a_h-harmonic on D̄_R with shared random trace."""
    cs = cs or correctors(env_torus, tol)
    d = env_torus.d
    env = env_torus.restrict_to_box(R)
    geom = build_box(d, R)
    data = stream(seed, "boundary").standard_normal(geom.shape)
    u, _ = harmonic_extension(env, data, tol)
    ah = np.diag(cs.a_h)
    v, _ = harmonic_extension(diagonal(ah, box(d, R)), data, tol)
    phi = torus_to_box(cs.phi, R, lead=1)
    sigma = torus_to_box(cs.sigma, R, lead=3)
    eta = cutoff(R, rho, d).eta
    return env, ah, u, v, phi, sigma, eta, np.asarray(cs.mean_flux, dtype=float)


# ----------------------------------------------------------------------------
# Excess
# ----------------------------------------------------------------------------


@dataclass
class ExcessRecord:
    radius: int
    xi: np.ndarray
    value: float
    condition: float
    gradient_norm: float


def corrected_box_gradients(phi) -> np.ndarray:
    """G[i][j](x) = delta_ij + grad_j phi_i(x), NaN where x + e_j leaves the box."""
    d = phi.shape[0]
    G = np.empty((d, d) + phi.shape[1:])
    for i in range(d):
        for j in range(d):
            G[i, j] = (1.0 if i == j else 0.0) + shift(phi[i], j, 1) - phi[i]
    return G


def excess(env: Environment, u, phi, r: int | None = None) -> ExcessRecord:
    """inf over xi of the mean over D_r of a (grad u - xi_i G_i) . (grad u - xi_i G_i)."""
    d = env.d
    R = env.topology.size
    r = R if r is None else int(r)
    geom = build_box(d, R)
    u = _check_grid(u, geom)
    idx = geom.vertices("open", r)
    mu = env.mu.reshape(d, -1)[:, idx]  # (d, n)
    gu = np.stack([(shift(u, j, 1) - u).reshape(-1)[idx] for j in range(d)])
    G = corrected_box_gradients(phi).reshape(d, d, -1)[:, :, idx]
    M = np.einsum("jn,ijn,kjn->ik", mu, G, G) / idx.size
    b = np.einsum("jn,ijn,jn->i", mu, G, gu) / idx.size
    cond = float(np.linalg.cond(M))
    if not np.isfinite(cond) or cond > 1e14:
        raise np.linalg.LinAlgError("normal-equation matrix is singular")
    xi = np.linalg.solve(M, b)
    res = gu - np.einsum("i,ijn->jn", xi, G)
    val = float(np.sum(mu * res**2) / idx.size)
    grad = float(np.linalg.norm(2 * (M @ xi - b)))
    return ExcessRecord(r, xi, max(val, 0.0), cond, grad)


# ----------------------------------------------------------------------------
# Experiments
# ----------------------------------------------------------------------------


def _fit_slope(x, y):
    x, y = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    A = np.column_stack([x, np.ones_like(x)])
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = float(np.sqrt(res[0] / len(x))) if res.size else 0.0
    return float(coef[0]), resid


@dataclass
class DecayTable:
    R: int
    radii: list
    rows: list = field(default_factory=list)  # dicts per (seed, r)
    per_seed: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def median_ratio(self, r, variant="corrected"):
        vals = [row["ratio"] for row in self.rows if row["r"] == r and row["variant"] == variant
                and not row["filtered"]]
        return float(np.median(vals)) if vals else math.nan

    def median_alpha(self, variant="corrected"):
        vals = [s[f"alpha_hat_{variant}"] for s in self.per_seed if not s["filtered"]]
        return float(np.median(vals)) if vals else math.nan

    def pooled_alpha(self, variant="corrected"):
        rs = list(self.radii) + [self.R]
        med = [self.median_ratio(r, variant) for r in rs]
        return _fit_slope(np.array(rs) / self.R, med)[0]

    CSV_FIELDS = ["seed", "variant", "R", "r", "exc", "ratio"]

    def write_csv(self, path, comment: str | None = None):
        d = len(self.rows[0]["xi"]) if self.rows else 0
        header = self.CSV_FIELDS + [f"xi_{i + 1}" for i in range(d)] + ["lambda", "lambda_bar", "alpha_hat", "filtered"]
        with open(path, "w", newline="") as fh:
            if comment:
                fh.write(comment + "\n")
            wr = csv.writer(fh)
            wr.writerow(header)
            for row in self.rows:
                wr.writerow([row["seed"], row["variant"], row["R"], row["r"], repr(row["exc"]), repr(row["ratio"])]
                            + [repr(float(x)) for x in row["xi"]]
                            + [repr(row["lambda"]), repr(row["lambda_bar"]), repr(row["alpha_hat"]), int(row["filtered"])])


def moment_filter(env: Environment, p, q, Lambda, r_min: int, R: int) -> bool:
    """True if avnorm(omega,p,E_rho) + avnorm(1/omega,q,E_rho) < Lambda for every rho in [r_min, R]."""
    if Lambda is None:
        return True
    return all(moment_sum(env, p, q, rho) < Lambda for rho in range(max(1, r_min), R + 1))


def decay_for_seed(env_torus: Environment, R: int, radii, seed: int, p=4.0, q=4.0, Lambda=None,
                   tol=1e-10, variants=("corrected", "uncorrected")):
    """Excess at each radius for one environment and one random a-harmonic u."""
    cs = correctors(env_torus, tol, with_sigma=False)
    env = env_torus.restrict_to_box(R)
    geom = build_box(env.d, R)
    data = stream(seed, "boundary").standard_normal(geom.shape)
    u, _ = harmonic_extension(env, data, tol)
    phi = torus_to_box(cs.phi, R, lead=1)
    lam = float(moment_sum(env, p, q))
    lb = float(lambda_bar(env, u, p, q))
    ok = moment_filter(env, p, q, Lambda, min(radii), R)
    rows, summary = [], {"seed": seed, "filtered": not ok, "a_h": np.diag(cs.a_h).tolist()}
    for variant in variants:
        ph = phi if variant == "corrected" else np.zeros_like(phi)
        full = excess(env, u, ph, R)
        ratios = []
        for r in list(radii) + [R]:
            rec = excess(env, u, ph, r) if r != R else full
            ratio = rec.value / full.value if full.value > 0 else math.nan
            ratios.append(ratio)
            rows.append({"seed": seed, "variant": variant, "R": R, "r": r, "exc": rec.value, "ratio": ratio,
                         "xi": rec.xi.tolist(), "lambda": lam, "lambda_bar": lb, "filtered": not ok})
        alpha_hat, fit_res = _fit_slope(np.array(list(radii) + [R]) / R, ratios)
        for row in rows:
            if row["variant"] == variant:
                row["alpha_hat"] = alpha_hat
        summary[f"alpha_hat_{variant}"] = alpha_hat
        summary[f"fit_residual_{variant}"] = fit_res
    return rows, summary


def excess_decay_experiment(law: str, R: int, radii, seeds, d: int = 2, p=4.0, q=4.0, Lambda=None,
                            tol=1e-10, L: int | None = None, threads: int = 1) -> DecayTable:
    """Run the decay measurement over seeds; environments on tori of side 2R+8 by default."""
    L = L or 2 * R + 8
    radii = sorted(int(r) for r in radii)
    table = DecayTable(R, radii, config={"law": law, "R": R, "radii": radii, "d": d, "p": p, "q": q,
                                         "Lambda": Lambda, "L": L, "tol": tol, "seeds": list(seeds)})

    def one(s):
        env = make_environment(law, torus(d, L), s)
        return decay_for_seed(env, R, radii, s, p, q, Lambda, tol)

    results = _map(one, list(seeds), threads)
    for rows, summ in results:
        table.rows.extend(rows)
        table.per_seed.append(summ)
    return table


def _map(fn, items, threads):
    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, items))  # map preserves input order
    return [fn(x) for x in items]


# ----------------------------------------------------------------------------
# Liouville dimension
# ----------------------------------------------------------------------------


@dataclass
class LiouvilleReport:
    R: int
    r: int
    gram_eigenvalues: list
    radii: list
    distances: list  # per sample, one value per radius

    @property
    def rank(self):
        ev = np.asarray(self.gram_eigenvalues)
        return int(np.sum(ev > 1e-10 * ev.max()))


def affine_gram(cs: CorrectorSet, r: int) -> np.ndarray:
    """Gram matrix of {1, x_i + phi_i} on D̄_r for mean(fg)/r^2 + mean over E_r of omega grad f grad g."""
    from .correctors import corrected_coordinates
    d = cs.d
    env = cs.env.restrict_to_box(r)
    geom = build_box(d, r)
    fam = [np.ones(geom.shape)] + list(corrected_coordinates(cs, r))
    closed = geom.vertices("closed")
    om = edge_weights(env, geom, "E")
    n = len(fam)
    G = np.empty((n, n))
    grads = [edge_gradient(f, geom, "E") for f in fam]
    for a in range(n):
        for b in range(n):
            l2 = np.mean(fam[a].reshape(-1)[closed] * fam[b].reshape(-1)[closed]) / r**2
            G[a, b] = l2 + np.mean(om * grads[a] * grads[b])
    return G


def liouville_dimension(cs: CorrectorSet, R: int, r: int | None = None, n_samples: int = 10,
                        seed: int = 0, radii=None, tol: float = 1e-10) -> LiouvilleReport:
    """Rank of the corrected affine family and relative excess of random a-harmonic functions."""
    r = R if r is None else r
    ev = np.linalg.eigvalsh(affine_gram(cs, r))
    radii = sorted(set(radii or [max(1, R // 4), max(1, R // 2), R]))
    env = cs.env.restrict_to_box(R)
    geom = build_box(cs.d, R)
    phi = torus_to_box(cs.phi, R, lead=1)
    dists = []
    for k in range(n_samples):
        data = stream(seed + k, "boundary").standard_normal(geom.shape)
        u, _ = harmonic_extension(env, data, tol)
        row = []
        for rr in radii:
            e_u = _dirichlet_energy(env, u, rr)
            rec = excess(env, u, phi, rr)
            row.append(rec.value / e_u if e_u > 0 else 0.0)
        dists.append(row)
    return LiouvilleReport(R, r, ev.tolist(), radii, dists)


def _dirichlet_energy(env: Environment, u, r: int) -> float:
    d = env.d
    geom = build_box(d, env.topology.size)
    idx = geom.vertices("open", r)
    mu = env.mu.reshape(d, -1)[:, idx]
    gu = np.stack([(shift(u, j, 1) - u).reshape(-1)[idx] for j in range(d)])
    return float(np.sum(mu * gu**2) / idx.size)


def manifest(config: dict, extra: dict | None = None) -> str:
    return json.dumps({"config": config, **(extra or {})}, sort_keys=True, default=float)


# ----------------------------------------------------------------------------
# Error-energy budget (soft check, constants unknown)
# ----------------------------------------------------------------------------


@dataclass
class ErrorBudget:
    energy: float
    smoothing_term: float
    annulus_term: float
    sublinearity_term: float

    @property
    def ratio(self) -> float:
        total = self.smoothing_term + self.annulus_term + self.sublinearity_term
        return self.energy / total if total > 0 else math.inf


def error_budget(env_torus: Environment, R: int, eps: float, gamma: float, seed: int, p=4.0, q=4.0,
                 tol: float = 1e-10, cs: CorrectorSet | None = None) -> ErrorBudget:
    """Energy of w against the three summands of its a priori bound.

    v is the a_h-harmonic Dirichlet extension of the smoothed trace of u and
    the cutoff width is rho = max(1, round(gamma R)).
    """
    from .extension import ExtensionProblem, dirichlet_extend, theta
    cs = cs or correctors(env_torus, tol)
    d = env_torus.d
    env = env_torus.restrict_to_box(R)
    geom = build_box(d, R)
    u, _ = harmonic_extension(env, stream(seed, "boundary").standard_normal(geom.shape), tol)
    ah = np.diag(cs.a_h)
    v, _ = dirichlet_extend(ExtensionProblem(env, ah, p, q, eps=eps, tol=tol), u)
    rho = max(1, int(round(gamma * R)))
    phi = torus_to_box(cs.phi, R, lead=1)
    eta = np.clip((R - rho - np.abs(geom.coords).max(axis=1)) / rho, 0.0, 1.0).reshape(geom.shape)
    w = homogenization_error(u, v, phi, eta)
    om = edge_weights(env, geom, "E")
    en = float(np.mean(om * edge_gradient(w, geom, "E") ** 2))
    lam, lb = moment_sum(env, p, q), lambda_bar(env, u, p, q)
    th = float(theta(p, q, d))
    g_exp = min((p - 1) / (2 * p), (q - 1) / (2 * q))
    e_exp = -(d - 1) * min((p + 1) / p, (q + 1) / q)
    rp, rq = 2 * p / (p - 1), 2 * q / (q - 1)
    sig = torus_to_box(cs.sigma.reshape((-1,) + cs.sigma.shape[3:]), R, lead=1)
    sub = (avnorm(np.sqrt((phi**2).sum(0)), rp) + avnorm(np.sqrt((sig**2).sum(0)), rq)) ** 2 / R**2
    return ErrorBudget(en, float(eps**th * lb), float(gamma**g_exp * eps**e_exp * lam * lb),
                       float(sub * gamma ** (-(d + 2)) * lam * lb))
