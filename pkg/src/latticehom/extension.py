"""Harmonic extensions of boundary data, the boundary term and its diagnostics.

Functions on the box are grid arrays of shape ``(2R+1,)*d`` (index x + R).
``a_h`` is the vector of diagonal homogenized conductances.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .elliptic import EllipticProblem, solve
from .environment import Environment, box, diagonal
from .lattice import avnorm, build_box
from .surface import SmoothingStack


# ----------------------------------------------------------------------------
# Exponents
# ----------------------------------------------------------------------------


def _inv(r):
    return 0 if r == math.inf else 1 / (Fraction(r) if isinstance(r, (int, Fraction)) else r)


def theta(r, s, d: int):
    """Interpolation exponent: 1 - (d-1)(1/(2r) + 1/(2s)) for d > 2, (s-1) r / (s (r+1)) for d = 2.

    Exact for integer or Fraction inputs.
    """
    if d < 2:
        raise ValueError("d must be at least 2")
    if d == 2:
        if r == math.inf:
            return 1 - _inv(s)
        r_ = Fraction(r) if isinstance(r, int) else r
        return (1 - _inv(s)) * r_ / (r_ + 1)
    return 1 - (d - 1) * (_inv(r) + _inv(s)) / 2


def alpha(r, d: int):
    """Sobolev exponent on the box surface: 1/alpha = (r-1)/(2r) + 1/(d-1) for d >= 3, and 1 for d = 2."""
    if d == 2:
        return 1
    inv_alpha = (1 - _inv(r)) / 2 + Fraction(1, d - 1)
    return 1 / inv_alpha


def annulus_exponent(p, q):
    return min((1 - _inv(p)) / 2, (1 - _inv(q)) / 2)


def _dual(r):
    """2r/(r+1) with the r = inf limit 2."""
    return 2.0 if r == math.inf else 2 * r / (r + 1)


# ----------------------------------------------------------------------------
# Edge helpers
# ----------------------------------------------------------------------------


def _flat(u, geom):
    u = np.asarray(u, dtype=float)
    if u.shape != geom.shape:
        raise ValueError(f"expected a grid array of shape {geom.shape}")
    return u.reshape(-1)


def edge_weights(w, geom, kind: str, r: int | None = None) -> np.ndarray:
    """Conductance of each oriented edge; ``w`` is a box Environment or a diagonal vector."""
    t, h, a = geom.edges(kind, r)
    if isinstance(w, Environment):
        if w.topology.kind != "box" or w.topology.size != geom.R:
            raise ValueError("environment must live on the same box")
        return w.mu.reshape(geom.d, -1)[a, np.minimum(t, h)]
    w = np.asarray(w, dtype=float)
    return w[a]


def edge_gradient(u, geom, kind: str, r: int | None = None) -> np.ndarray:
    t, h, _ = geom.edges(kind, r)
    f = _flat(u, geom)
    return f[h] - f[t]


def normal_flux(u, w, geom) -> np.ndarray:
    """(w grad u) on the normal edge n(y) = (x, y) of each inner-boundary vertex y."""
    ib = geom.vertices("inner_boundary")
    tails = geom.normal_map()
    f = _flat(u, geom)
    axis = np.argmax(geom.coords[ib] != geom.coords[tails], axis=1)
    base = np.minimum(ib, tails)
    if isinstance(w, Environment):
        wt = w.mu.reshape(geom.d, -1)[axis, base]
    else:
        wt = np.asarray(w, dtype=float)[axis]
    return wt * (f[ib] - f[tails])


# ----------------------------------------------------------------------------
# Problems and extensions
# ----------------------------------------------------------------------------


@dataclass
class ExtensionProblem:
    env: Environment  # box environment of radius R
    a_h: np.ndarray
    p: float
    q: float
    eps: float | None = None
    m: int | None = None
    tol: float = 1e-10

    def __post_init__(self):
        if self.env.topology.kind != "box":
            raise ValueError("extension problems live on a box")
        self.a_h = np.asarray(self.a_h, dtype=float)
        if self.a_h.shape != (self.env.d,) or np.any(self.a_h <= 0):
            raise ValueError("a_h must be d positive diagonal entries")
        if self.eps is None and self.m is None:
            raise ValueError("give a smoothing scale eps or a step count m")
        self.stack = SmoothingStack(self.d, self.R, eps=self.eps if self.m is None else None, m=self.m)
        self.env_h = diagonal(self.a_h, box(self.d, self.R))

    @property
    def d(self):
        return self.env.d

    @property
    def R(self):
        return self.env.topology.size

    @property
    def geom(self):
        return build_box(self.d, self.R)

    def admissible_for_decay(self) -> bool:
        return _inv(self.p) + _inv(self.q) <= Fraction(2, self.d - 1)


def dirichlet_extend(problem: ExtensionProblem, u):
    """a_h-harmonic v on D_R with v = S(u on the boundary) there; returns (v, report)."""
    g = problem.geom
    f = _flat(u, g)
    bnd = g.vertices("boundary")
    data = np.zeros(g.size)
    data[bnd] = problem.stack.smooth(f[bnd])
    v, rep = solve(EllipticProblem(problem.env_h, "dirichlet", boundary=data.reshape(g.shape), tol=problem.tol))
    v = v.reshape(-1)
    v[bnd] = data[bnd]  # exact trace
    return v.reshape(g.shape), rep


def neumann_flux_data(problem: ExtensionProblem, u) -> np.ndarray:
    """Prescribed normal flux S*(omega_n grad_n u) minus its mean."""
    h = normal_flux(u, problem.env, problem.geom)
    g = problem.stack.dual_smooth(h)
    return g - g.mean()


def neumann_extend(problem: ExtensionProblem, u):
    """a_h-harmonic v with prescribed normal flux and matching inner-boundary sum; returns (v, report)."""
    g = problem.geom
    f = _flat(u, g)
    flux = neumann_flux_data(problem, u)
    ib = g.vertices("inner_boundary")
    v, rep = solve(EllipticProblem(problem.env_h, "neumann", flux=flux,
                                   normalization=float(f[ib].sum()), tol=problem.tol))
    return v, rep


def boundary_term(env: Environment, a_h, u, v) -> float:
    """(1/|inner bdry|) sum_y (u - v)(y) (omega grad u - omega_h grad v) on n(y)."""
    geom = build_box(env.d, env.topology.size)
    ib = geom.vertices("inner_boundary")
    diff = _flat(u, geom)[ib] - _flat(v, geom)[ib]
    flux = normal_flux(u, env, geom) - normal_flux(v, a_h, geom)
    return float(np.mean(diff * flux))


def neumann_boundary_identity(problem: ExtensionProblem, u, v) -> float:
    """Right side of the duality representation of the Neumann boundary term."""
    st = problem.stack
    g = problem.geom
    bnd = g.vertices("boundary")
    w = _flat(u, g)[bnd] - _flat(v, g)[bnd]
    Zg = st.modify(st.restrict(w))
    diff = st.restrict(Zg - st.smooth(Zg))
    return float(np.mean(diff * normal_flux(u, problem.env, g)))


# ----------------------------------------------------------------------------
# Quantities
# ----------------------------------------------------------------------------


def moment_sum(env: Environment, p, q, r: int | None = None) -> float:
    """Lambda = avnorm(omega, p, E_r) + avnorm(1/omega, q, E_r)."""
    geom = build_box(env.d, env.topology.size)
    w = edge_weights(env, geom, "E", r)
    return avnorm(w, p) + avnorm(1.0 / w, q)


def lambda_bar_terms(env: Environment, u, p, q) -> dict:
    """The four boundary norms whose maximum defines the boundary size of u."""
    geom = build_box(env.d, env.topology.size)
    out = {}
    for kind in ("tan", "nor"):
        gu = edge_gradient(u, geom, kind)
        out[f"flux_{kind}"] = avnorm(edge_weights(env, geom, kind) * gu, _dual(p))
        out[f"grad_{kind}"] = avnorm(gu, _dual(q))
    return out


def lambda_bar(env: Environment, u, p, q, squared: bool = True) -> float:
    """Boundary size of u: max of the four boundary norms, squared by default.

    The squared form is homogeneous of degree two in u, like the boundary
    term and the extension energies it controls.
    """
    m = max(lambda_bar_terms(env, u, p, q).values())
    return m * m if squared else m


def energy(v, w, R: int | None = None) -> float:
    """avnorm(w (grad v)^2, 1, E_R) with w a box environment or diagonal vector."""
    v = np.asarray(v, dtype=float)
    d = v.ndim
    geom = build_box(d, (v.shape[0] - 1) // 2)
    gv = edge_gradient(v, geom, "E", R)
    return float(np.mean(edge_weights(w, geom, "E", R) * gv**2))


def annulus_energy(v, w, rho: int) -> float:
    """sum over E_R minus E_{R-rho} of w (grad v)^2, divided by |E_R|."""
    v = np.asarray(v, dtype=float)
    d = v.ndim
    R = (v.shape[0] - 1) // 2
    if not 1 <= rho <= R / 2:
        raise ValueError("rho must lie in [1, R/2]")
    geom = build_box(d, R)
    t, h, _ = geom.edges("E")
    inner = np.abs(geom.coords[t] + geom.coords[h]).max(axis=1) < 2 * (R - rho)
    e = edge_weights(w, geom, "E") * edge_gradient(v, geom, "E") ** 2
    return float(e[~inner].sum() / e.size)


def suitable_radius(env: Environment, u, R: int, p, q, R_max: int | None = None) -> int:
    """Radius in [R, min(2R, R_max)] minimising the boundary size of u (first minimiser wins)."""
    Rbig = env.topology.size
    hi = min(2 * R, Rbig if R_max is None else R_max)
    best, best_val = R, math.inf
    u = np.asarray(u, dtype=float)
    for Rp in range(R, hi + 1):
        off = Rbig - Rp
        sl = (slice(off, off + 2 * Rp + 1),) * env.d
        val = lambda_bar(env.restrict_to_box(Rp), u[sl], p, q)
        if val < best_val:
            best, best_val = Rp, val
    return best


def restrict_grid(u, R: int) -> np.ndarray:
    """Restrict a centred grid array to D̄_R."""
    u = np.asarray(u)
    Rbig = (u.shape[0] - 1) // 2
    off = Rbig - R
    if off < 0:
        raise ValueError("target radius exceeds the array")
    return u[(slice(off, off + 2 * R + 1),) * u.ndim]


# ----------------------------------------------------------------------------
# Diagnostics
# ----------------------------------------------------------------------------


@dataclass
class DiagnosticBundle:
    R: int
    d: int
    p: float
    q: float
    eps: float | None
    m: int
    Lambda: float
    lambda_bar: float
    theta_pq: float
    theta_qq: float
    alpha_p: float
    alpha_q: float
    branches: list = field(default_factory=list)
    values: dict = field(default_factory=dict)
    ratios: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, default=float)

    def csv_rows(self, seed=None):
        for k, v in {**self.values, **self.ratios}.items():
            yield (self.R, self.eps, self.p, self.q, seed, k, v)

    def write_csv(self, path, seed=None, append=False):
        with open(path, "a" if append else "w", newline="") as fh:
            wr = csv.writer(fh)
            if not append:
                wr.writerow(["R", "eps", "p", "q", "seed", "quantity", "value"])
            wr.writerows(self.csv_rows(seed))


def branches_for(p, q):
    """Dirichlet when q >= p, Neumann when p >= q; both when equal."""
    out = []
    if q >= p:
        out.append("dirichlet")
    if p >= q:
        out.append("neumann")
    return out


def diagnostics(problem: ExtensionProblem, u, rho: int | None = None) -> DiagnosticBundle:
    """Measure the boundary term, extension energies and annulus share against their bounds.

    Ratios divide by the bound with its unspecified constant dropped:
    boundary: |B| / (R eps^theta(p,q) Lambda_bar); energy: E / Lambda_bar;
    annulus: share / ((rho/R)^gamma eps^-(d-1) min((p+1)/p,(q+1)/q) Lambda Lambda_bar).

    The extension construction presumes normal and tangential boundary
    gradients are comparable; the ``transfer_*`` ratios (normal over
    tangential, same norm) measure that for u and for each extension.
    """
    d, R, p, q = problem.d, problem.R, problem.p, problem.q
    eps = problem.eps
    lb = lambda_bar(problem.env, u, p, q)
    Lam = moment_sum(problem.env, p, q)
    th = float(theta(p, q, d))
    b = DiagnosticBundle(R, d, p, q, eps, problem.stack.m, Lam, lb, th, float(theta(q, q, d)),
                         float(alpha(p, d)), float(alpha(q, d)), branches_for(p, q))
    eps_eff = eps if eps is not None else max(math.sqrt(problem.stack.m) / R, 1.0 / R)
    b.ratios.update(_transfer_ratios(problem.env, u, p, q, "u"))
    for br in b.branches:
        v, rep = (dirichlet_extend if br == "dirichlet" else neumann_extend)(problem, u)
        B = boundary_term(problem.env, problem.a_h, u, v)
        E = energy(v, problem.a_h)
        b.values[f"{br}_boundary_term"] = B
        b.values[f"{br}_energy"] = E
        b.values[f"{br}_solver_residual"] = rep.residual
        b.ratios.update(_transfer_ratios(problem.env_h, v, p, q, br))
        b.ratios[f"{br}_boundary_ratio"] = abs(B) / (R * eps_eff**th * lb) if lb > 0 else 0.0
        b.ratios[f"{br}_energy_ratio"] = E / lb if lb > 0 else 0.0
        if rho is not None:
            share = annulus_energy(v, problem.env, rho) + _annulus_inverse(v, problem.env, rho)
            gamma = float(annulus_exponent(p, q))
            power = -(d - 1) * min((1 + _inv(p)), (1 + _inv(q)))
            bound = (rho / R) ** gamma * eps_eff ** float(power) * Lam * lb
            b.values[f"{br}_annulus_share"] = share
            b.ratios[f"{br}_annulus_ratio"] = share / bound if bound > 0 else 0.0
    return b


def _transfer_ratios(env: Environment, u, p, q, label: str) -> dict:
    t = lambda_bar_terms(env, u, p, q)
    out = {}
    for k in ("flux", "grad"):
        tan = t[f"{k}_tan"]
        out[f"{label}_transfer_{k}"] = t[f"{k}_nor"] / tan if tan > 0 else math.inf
    return out


def _annulus_inverse(v, env: Environment, rho: int) -> float:
    inv = Environment(env.topology, np.where(np.isnan(env.mu), 1.0, 1.0 / np.nan_to_num(env.mu, nan=1.0)))
    return annulus_energy(v, inv, rho)


# ----------------------------------------------------------------------------
# Boundary-term scaling experiment
# ----------------------------------------------------------------------------


@dataclass
class ScalingResult:
    eps: list
    medians: dict  # branch -> median |B| / Lambda_bar per eps
    slopes: dict  # branch -> least-squares log-log slope
    radii: list  # suitable radius chosen per seed
    samples: dict = field(default_factory=dict)  # (branch, eps) -> per-seed values


def boundary_scaling(law: str, R: int, eps_list, seeds, p=4.0, q=4.0, d: int = 2, tol: float = 1e-10,
                     branches=("dirichlet", "neumann")) -> ScalingResult:
    """Median |B|/Lambda_bar against eps for random a-harmonic u at a suitable radius.

    Per seed, u is a-harmonic on D̄_{2R} with i.i.d. normal boundary data; the
    boundary term is then evaluated at the radius in [R, 2R] minimising the
    boundary size of u.  Correctors come from a torus of side 4R+8.
    """
    from .correctors import correctors
    from .elliptic import harmonic_extension
    from .environment import make_environment, stream, torus
    eps_list = [float(e) for e in eps_list]
    samples = {(br, e): [] for br in branches for e in eps_list}
    radii = []
    for s in seeds:
        env = make_environment(law, torus(d, 4 * R + 8), s)
        ah = np.diag(correctors(env, tol, with_sigma=False).a_h)
        big = env.restrict_to_box(2 * R)
        u, _ = harmonic_extension(big, stream(s, "boundary").standard_normal(big.topology.shape), tol)
        Rp = suitable_radius(big, u, R, p, q)
        radii.append(Rp)
        e, uu = env.restrict_to_box(Rp), restrict_grid(u, Rp)
        lb = lambda_bar(e, uu, p, q)
        for eps in eps_list:
            pr = ExtensionProblem(e, ah, p, q, eps=eps, tol=tol)
            for br in branches:
                v, _ = (dirichlet_extend if br == "dirichlet" else neumann_extend)(pr, uu)
                samples[(br, eps)].append(abs(boundary_term(e, ah, uu, v)) / lb)
    med = {br: [float(np.median(samples[(br, e)])) for e in eps_list] for br in branches}
    slopes = {br: float(np.polyfit(np.log(eps_list), np.log(med[br]), 1)[0]) for br in branches}
    return ScalingResult(eps_list, med, slopes, radii, samples)
