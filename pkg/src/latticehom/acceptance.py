"""Acceptance suite: twelve numbered checks with fixed thresholds.

Each check returns a :class:`CriterionResult`.  Checks never relax their
thresholds; a failing check reports the measured numbers in ``detail``.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import correctors as C
from . import excess as X
from . import extension as E
from . import surface as S
from .environment import box, homogeneous, layered, make_environment, simulate_walk, torus

TOL = 1e-10


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    runtime: float = 0.0
    budget: float = math.inf
    data: dict = field(default_factory=dict)

    def line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return f"[{flag}] {self.number:2d} {self.name}: {self.detail} ({self.runtime:.1f}s / {self.budget:.0f}s)"


class Context:
    """Shared state so corrector residuals gathered by earlier checks feed the residual check."""

    def __init__(self):
        self.residuals: list[tuple[str, dict]] = []

    def record(self, label, cs):
        self.residuals.append((label, dict(cs.residuals)))


# ----------------------------------------------------------------------------


def c1_identity(ctx):
    # (a) homogeneous Id, polynomial harmonic u and v, no correctors
    R = 6
    g = E.build_box(2, R)
    x1 = g.coords[:, 0].reshape(g.shape).astype(float)
    x2 = g.coords[:, 1].reshape(g.shape).astype(float)
    env = homogeneous(1.0, box(2, R))
    zeros_phi = np.zeros((2,) + g.shape)
    zeros_sig = np.zeros((2, 2, 2) + g.shape)
    eta = X.cutoff(R, 1).eta
    ra = X.energy_identity_check(env, np.ones(2), x1, x1 * x2, zeros_phi, zeros_sig, eta)
    # (b) layered 1/4, solved harmonic functions and true correctors
    envt = layered(1.0, 4.0, torus(2, 2 * 16 + 8))
    setup = X.identity_setup(envt, 16, 4, seed=7, tol=TOL)
    rb = X.energy_identity_check(*setup, tol=TOL)
    ok = ra.residual <= 1e-12 and rb.residual <= 1e-8 and rb.hypotheses_ok
    return ok, f"homogeneous residual {ra.residual:.2e} (<=1e-12), layered residual {rb.residual:.2e} (<=1e-8), " \
               f"harmonicity {max(rb.harmonic_residual_u, rb.harmonic_residual_v):.1e}", {}


def c2_homogenized(ctx):
    cs = C.correctors(homogeneous(2.5, torus(2, 8)), TOL)
    ctx.record("constant", cs)
    exact = np.array_equal(cs.a_h, 2.5 * np.eye(2))
    cs = C.correctors(layered(1.0, 4.0, torus(2, 16)), TOL)
    ctx.record("layered", cs)
    lay_err = float(np.abs(np.diag(cs.a_h) - [1.6, 2.5]).max())
    diag, off = [], []
    for s in range(100):
        cs = C.correctors(make_environment("two_point:4", torus(2, 64), s), TOL)
        ctx.record(f"two_point seed {s}", cs)
        diag.append(np.diag(cs.a_h).mean())
        off.extend([cs.mean_flux[0, 1], cs.mean_flux[1, 0]])
    md = float(np.mean(diag))
    off = np.asarray(off)
    se = off.std(ddof=1) / math.sqrt(off.size)
    ok = exact and lay_err <= 1e-8 and abs(md - 1) <= 0.05 and abs(off.mean()) <= 3 * se
    return ok, (f"constant exact={exact}, layered err {lay_err:.1e}, two_point mean diag {md:.4f}, "
                f"off-diag mean {off.mean():.1e} vs 3se {3 * se:.1e}"), {"two_point_mean": md}


def c3_bracketing(ctx):
    bad = 0
    for s in range(50):
        env = make_environment("lognormal:0,1", torus(2, 32), s)
        cs = C.correctors(env, TOL, with_sigma=False)
        for i in range(2):
            mu = env.mu[i]
            lo, hi = 1.0 / np.mean(1.0 / mu), np.mean(mu)
            bad += not (lo <= cs.a_h[i, i] <= hi)
    return bad == 0, f"{bad} violations over 50 environments", {}


def c4_residuals(ctx):
    if not ctx.residuals:
        for law in ("layered:1,4", "lognormal:0,1", "two_point:4"):
            ctx.record(law, C.correctors(make_environment(law, torus(2, 64), 0), TOL))
    worst, where = 0.0, ""
    for label, res in ctx.residuals:
        for k, v in res.items():
            if v > worst:
                worst, where = v, f"{label} {k}"
    return worst <= 10 * TOL, f"worst {worst:.2e} ({where}) over {len(ctx.residuals)} environments, budget {10 * TOL:.0e}", {}


def c5_surface(ctx):
    rng = np.random.default_rng(0)
    proj = 0.0
    dual = 0.0
    for d in (2, 3):
        for R in (4, 8, 16):
            mesh = S.SurfaceMesh(d, R)
            n = mesh.corners.max() + 1
            for _ in range(100):
                u = rng.standard_normal(n)
                proj = max(proj, float(np.abs(S.scott_zhang(mesh, u) - u).max()))
    for d, R in ((2, 8), (3, 4)):
        st = S.SmoothingStack(d, R, eps=0.25)
        n_ib = st.ib.size
        for _ in range(100):
            h, g = rng.standard_normal(n_ib), rng.standard_normal(n_ib)
            lhs = float(st.restrict(st.smooth(st.modify(h))) @ g)
            rhs = float(h @ st.dual_smooth(g))
            dual = max(dual, abs(lhs - rhs) / max(1.0, abs(lhs)))
    w2 = np.array_equal(S.dual_weights(2), np.array([[4.0, -2.0], [-2.0, 4.0]]))
    bi = max(float(np.abs(S.biorthogonality_matrix(d) - np.eye(2 ** (d - 1))).max()) for d in (2, 3))
    ok = proj <= 1e-12 and dual <= 1e-12 and w2 and bi <= 1e-12
    return ok, f"projection {proj:.1e}, duality {dual:.1e}, biorthogonality {bi:.1e}, d=2 weights (4,-2) {w2}", {}


def c6_smoothing(ctx):
    eps = 0.25
    spreads = {}
    for r in (2.0, math.inf):
        rows = [S.smoothing_constants(2, R, eps, 1.0, r) for R in (8, 16, 32, 64)]
        for name in ("c_value", "c_gradient", "c_approx"):
            vals = np.array([getattr(c, name) for c in rows])
            spreads[f"{name} r={r:g}"] = float(vals.max() / vals.min())
    st = S.SmoothingStack(2, 16, eps=eps)
    one = np.ones(st.bnd.size)
    const = float(np.abs(st.smooth(one) - one).max())
    st0 = S.SmoothingStack(2, 16, m=0)
    u = np.random.default_rng(1).standard_normal(st0.bnd.size)
    ident = np.array_equal(st0.smooth(u), u)
    worst = max(spreads.values())
    ok = worst < 2 and const <= 1e-14 and ident
    return ok, f"largest max/min ratio {worst:.2f} (<2), constants preserved to {const:.0e}, m=0 identity {ident}", spreads


def c7_extensions(ctx):
    R = 8
    env = homogeneous(1.0, box(2, R))
    g = E.build_box(2, R)
    x1 = g.coords[:, 0].reshape(g.shape).astype(float)
    pr = E.ExtensionProblem(env, np.ones(2), 4, 4, m=0)
    vd, _ = E.dirichlet_extend(pr, x1)
    vn, _ = E.neumann_extend(pr, x1)
    keep = np.union1d(g.vertices("open"), g.vertices("inner_boundary"))
    err_d = float(np.abs(vd - x1).max())
    err_n = float(np.abs(vn.reshape(-1)[keep] - x1.reshape(-1)[keep]).max())
    # flux conditions on a rough instance with genuine smoothing
    envt = make_environment("layered_noise:1,4,0.5", torus(2, 2 * R + 8), 3)
    ah = np.diag(C.correctors(envt, TOL, with_sigma=False).a_h)
    eb = envt.restrict_to_box(R)
    u = np.random.default_rng(3).standard_normal(g.shape)
    pr2 = E.ExtensionProblem(eb, ah, 4, 4, eps=0.25)
    v2, _ = E.neumann_extend(pr2, u)
    target = E.neumann_flux_data(pr2, u)
    flux_err = float(np.abs(E.normal_flux(v2, ah, g) - target).max())
    zero = E.boundary_term(env, np.ones(2), x1, x1)
    ok = err_d <= 1e-9 and err_n <= 1e-9 and flux_err <= 1e-9 and zero == 0.0
    return ok, (f"Dirichlet x1 err {err_d:.1e}, Neumann x1 err {err_n:.1e}, flux err {flux_err:.1e}, "
                f"B(u,u)={zero}"), {}


def c8_boundary_scaling(ctx):
    target = float(E.theta(4, 4, 2))
    res = E.boundary_scaling("layered_noise:1,4,0.5", 32, [0.4, 0.2, 0.1], range(20), 4.0, 4.0, tol=TOL)
    ok = all(abs(s - target) <= 0.3 for s in res.slopes.values())
    slopes = ", ".join(f"{k} {v:.2f}" for k, v in res.slopes.items())
    return ok, f"slopes {slopes} vs theta {target:.2f} +-0.3", {"slopes": res.slopes, "medians": res.medians}


def c9_sublinearity(ctx):
    Ls = [16, 32, 64, 128]
    _, med = C.sublinearity_scan("lognormal:0,1", Ls, 4.0, 4.0, range(20), tol=TOL)
    phi = [med[L][0] for L in Ls]
    sig = [med[L][1] for L in Ls]
    dec = lambda v: all(a > b for a, b in zip(v, v[1:]))
    ok = dec(phi) and dec(sig)
    fmt = lambda v: "/".join(f"{x:.3f}" for x in v)
    return ok, f"phi {fmt(phi)}, sigma {fmt(sig)}", {"phi": phi, "sigma": sig}


def c10_excess(ctx):
    R = 64
    tab = X.excess_decay_experiment("two_point:2", R, [8, 16, 32], range(30), tol=TOL)
    rc = tab.median_ratio(R // 4, "corrected")
    alpha = tab.median_alpha("corrected")
    worse = all(tab.median_ratio(r, "uncorrected") > tab.median_ratio(r, "corrected") for r in (8, 16, 32))
    ok = rc <= 0.6 and alpha > 0 and worse
    return ok, (f"median ratio at R/4 {rc:.2e} (<=0.6), alpha_hat {alpha:.2f}, "
                f"zero-corrector ratios worse at every r {worse}"), {}


def c11_liouville(ctx):
    L, R = 32, 12
    out = []
    ok = True
    for law in ("layered:1,4", "two_point:4"):
        cs = C.correctors(make_environment(law, torus(2, L), 1), TOL, with_sigma=False)
        rep = X.liouville_dimension(cs, R, n_samples=30, seed=0, radii=[R // 4, R // 2], tol=TOL)
        D = np.asarray(rep.distances)
        frac = float(np.mean(D[:, 0] < D[:, 1]))
        ev = min(rep.gram_eigenvalues)
        ok &= ev > 0 and rep.rank == 3 and frac >= 0.8
        out.append(f"{law} min eig {ev:.2e} rank {rep.rank}, decrease in {frac:.0%}")
    return ok, "; ".join(out), {}


def c12_walk(ctx):
    c = 2.0
    w = simulate_walk(homogeneous(c, torus(2, 8)), 20.0, 10_000, seed=1)
    hom = [abs(w.covariance[i, i] - c) <= 3 * w.stderr[i, i] for i in range(2)]
    wl = simulate_walk(layered(1.0, 4.0, torus(2, 8)), 200.0, 10_000, seed=2)
    rel = np.abs(np.diag(wl.covariance) / np.array([1.6, 2.5]) - 1)
    ok = all(hom) and bool(np.all(rel <= 0.1))
    return ok, (f"homogeneous {np.diag(w.covariance).round(3).tolist()} vs {c} (3se ok {all(hom)}), "
                f"layered {np.diag(wl.covariance).round(3).tolist()} rel err {rel.max():.1%}"), {}


CRITERIA = [
    (1, "energy identity", c1_identity, 30),
    (2, "homogenized matrix oracles", c2_homogenized, 600),
    (3, "variational bracketing", c3_bracketing, 300),
    (4, "corrector residuals", c4_residuals, 600),
    (5, "surface operators", c5_surface, 60),
    (6, "smoothing contract", c6_smoothing, 120),
    (7, "extension oracles", c7_extensions, 60),
    (8, "boundary-term scaling", c8_boundary_scaling, 900),
    (9, "corrector sublinearity", c9_sublinearity, 1200),
    (10, "excess decay", c10_excess, 1800),
    (11, "Liouville dimension", c11_liouville, 600),
    (12, "walk cross-validation", c12_walk, 600),
]


def run_criterion(number: int, ctx: Context | None = None) -> CriterionResult:
    ctx = ctx or Context()
    num, name, fn, budget = next(c for c in CRITERIA if c[0] == number)
    t = time.perf_counter()
    try:
        ok, detail, data = fn(ctx)
    except Exception as exc:  # a crash is a failure, reported with its message
        ok, detail, data = False, f"error: {type(exc).__name__}: {exc}", {}
    dt = time.perf_counter() - t
    if dt > budget:
        ok, detail = False, detail + "; over runtime budget"
    return CriterionResult(num, name, bool(ok), detail, dt, budget, data)


def run_all(numbers=None, echo=None) -> list[CriterionResult]:
    ctx = Context()
    out = []
    for num, *_ in CRITERIA:
        if numbers and num not in numbers:
            continue
        res = run_criterion(num, ctx)
        out.append(res)
        if echo:
            echo(res.line())
    return out
