"""Random conductance environments on tori and boxes, and the variable-speed walk.

Conductances are stored axis-major: ``mu[i][x]`` is the conductance of the
edge {x, x + e_i}.  On a torus of side L the index x runs over (Z/LZ)^d and
the coordinate x of Z^d sits at index x mod L.  On a box of radius R the
index is x + R; slots whose edge would leave the box hold NaN.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field

import numpy as np

from .lattice import avnorm, build_box


def stream(seed: int, name: str) -> np.random.Generator:
    """Named, counter-based random stream derived from a master seed."""
    key = zlib.crc32(name.encode())
    ss = np.random.SeedSequence(int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class Topology:
    kind: str  # "torus" or "box"
    d: int
    size: int  # side L for a torus, radius R for a box

    def __post_init__(self):
        if self.kind not in ("torus", "box"):
            raise ValueError("topology kind must be 'torus' or 'box'")
        if self.d < 1 or self.size < 1:
            raise ValueError("topology needs d >= 1 and positive size")

    @property
    def shape(self):
        n = self.size if self.kind == "torus" else 2 * self.size + 1
        return (n,) * self.d

    @property
    def periodic(self):
        return self.kind == "torus"


def torus(d: int, L: int) -> Topology:
    return Topology("torus", d, L)


def box(d: int, R: int) -> Topology:
    return Topology("box", d, R)


def _edge_mask(top: Topology) -> np.ndarray:
    """Boolean (d, *shape) array marking slots that hold a real edge."""
    m = np.ones((top.d,) + top.shape, dtype=bool)
    if not top.periodic:
        for i in range(top.d):
            idx = [i] + [slice(None)] * top.d
            idx[1 + i] = -1
            m[tuple(idx)] = False
    return m


class Environment:
    """Positive conductances on the nearest-neighbour edges of a torus or box."""

    def __init__(self, topology: Topology, mu, provenance: dict | None = None):
        mu = np.array(mu, dtype=float)
        if mu.shape != (topology.d,) + topology.shape:
            raise ValueError(f"conductance array shape {mu.shape} does not match {topology}")
        mask = _edge_mask(topology)
        vals = mu[mask]
        if not np.all(np.isfinite(vals)) or vals.min() <= 0:
            raise ValueError("conductances must be finite and strictly positive")
        mu[~mask] = np.nan
        mu.setflags(write=False)
        self.topology = topology
        self.mu = mu
        self.provenance = dict(provenance or {})
        self._cache: dict = {}

    @property
    def d(self):
        return self.topology.d

    def edge_values(self, axis: int | None = None) -> np.ndarray:
        """Conductances of all real edges (optionally along one axis), axis-major order."""
        mask = _edge_mask(self.topology)
        if axis is None:
            return self.mu[mask]
        return self.mu[axis][mask[axis]]

    def coefficient_field(self) -> np.ndarray:
        """Diagonal entries a_ii(x) = mu({x, x+e_i}) as a (d, *shape) array."""
        return self.mu

    def conductance(self, x, y) -> float:
        x = np.asarray(x, dtype=np.int64)
        y = np.asarray(y, dtype=np.int64)
        diff = y - x
        if np.abs(diff).sum() != 1:
            raise ValueError("x and y are not nearest neighbours")
        i = int(np.flatnonzero(diff)[0])
        base = x if diff[i] == 1 else y
        return float(self.mu[(i,) + self._index(base)])

    def _index(self, x):
        if self.topology.periodic:
            return tuple(int(c) % self.topology.size for c in x)
        return tuple(int(c) + self.topology.size for c in x)

    def restrict_to_box(self, R: int) -> "Environment":
        """Box environment on D̄_R; a torus is read with the origin at index 0."""
        top = self.topology
        if top.periodic:
            if 2 * R + 1 > top.size:
                raise ValueError("box does not fit in the torus")
            idx = np.arange(-R, R + 1) % top.size
            mu = self.mu[(slice(None),) + np.ix_(*([idx] * top.d))]
        else:
            if R > top.size:
                raise ValueError("box radius exceeds the stored box")
            off = top.size - R
            sl = (slice(None),) + (slice(off, off + 2 * R + 1),) * top.d
            mu = self.mu[sl].copy()
        return Environment(box(top.d, R), mu, {**self.provenance, "restricted_to": R})

    def __eq__(self, other):
        return (
            isinstance(other, Environment)
            and self.topology == other.topology
            and np.array_equal(self.mu, other.mu, equal_nan=True)
        )

    def __repr__(self):
        law = self.provenance.get("law", "?")
        return f"Environment({self.topology.kind}, d={self.d}, size={self.topology.size}, law={law})"


# ----------------------------------------------------------------------------
# Samplers
# ----------------------------------------------------------------------------


def homogeneous(c: float, topology: Topology) -> Environment:
    if not c > 0:
        raise ValueError("conductance must be positive")
    mu = np.full((topology.d,) + topology.shape, float(c))
    return Environment(topology, mu, {"law": f"constant:{c}"})


def _coords(topology: Topology, axis: int) -> np.ndarray:
    n = topology.shape[0]
    base = np.arange(n) if topology.periodic else np.arange(n) - topology.size
    shape = [1] * topology.d
    shape[axis] = n
    return np.broadcast_to(base.reshape(shape), topology.shape)


def diagonal(c, topology: Topology) -> Environment:
    """Homogeneous environment with conductance c[i] on every edge along axis i."""
    c = np.asarray(c, dtype=float)
    if c.shape != (topology.d,) or np.any(c <= 0):
        raise ValueError("need d positive diagonal entries")
    mu = np.broadcast_to(c.reshape((-1,) + (1,) * topology.d), (topology.d,) + topology.shape)
    return Environment(topology, mu, {"law": "diagonal:" + ",".join(f"{v:.17g}" for v in c)})


def layered(a: float, b: float, topology: Topology) -> Environment:
    """Both edge directions carry c(x_1), with c = a on even columns and b on odd ones."""
    if a <= 0 or b <= 0:
        raise ValueError("layer conductances must be positive")
    if topology.periodic and topology.size % 2:
        raise ValueError("layered environments need an even torus side")
    c = np.where(_coords(topology, 0) % 2 == 0, float(a), float(b))
    mu = np.stack([c] * topology.d)
    return Environment(topology, mu, {"law": f"layered:{a},{b}"})


def _draw(law: str, params, rng: np.random.Generator, shape):
    if law == "lognormal":
        m, s = params
        if s < 0:
            raise ValueError("lognormal scale must be nonnegative")
        return np.exp(rng.normal(m, s, size=shape))
    if law == "two_point":
        (lam,) = params
        if lam <= 0:
            raise ValueError("two_point parameter must be positive")
        return np.where(rng.random(shape) < 0.5, lam, 1.0 / lam)
    if law == "uniform":
        lo, hi = params
        if not 0 < lo <= hi:
            raise ValueError("uniform law needs 0 < a <= b")
        return rng.uniform(lo, hi, size=shape)
    if law == "pareto":
        (kappa,) = params
        if kappa <= 0:
            raise ValueError("pareto tail index must be positive")
        # P(mu > t) = t^-kappa on [1, inf): E[mu^p] finite iff p < kappa.
        return (1.0 - rng.random(shape)) ** (-1.0 / kappa)
    raise ValueError(f"unknown i.i.d. law {law!r}")


def sample_iid(law: str, params, topology: Topology, seed: int) -> Environment:
    """I.i.d. conductances: lognormal(m, s), two_point(lam), uniform(a, b) or pareto(kappa)."""
    params = tuple(float(p) for p in params)
    rng = stream(seed, "environment")
    mu = _draw(law, params, rng, (topology.d,) + topology.shape)
    mu = mu.astype(float)
    mask = _edge_mask(topology)
    mu[~mask] = 1.0  # placeholder, replaced by NaN in the constructor
    return Environment(topology, mu, {"law": law, "params": list(params), "seed": int(seed)})


def sample_layered_noise(a: float, b: float, s: float, topology: Topology, seed: int) -> Environment:
    """Layered c(x_1) multiplied by i.i.d. lognormal(0, s) noise on every edge."""
    base = layered(a, b, topology).mu.copy()
    noise = np.exp(stream(seed, "environment").normal(0.0, s, size=base.shape))
    mu = base * noise
    mu[~_edge_mask(topology)] = 1.0
    return Environment(topology, mu, {"law": "layered_noise", "params": [a, b, s], "seed": int(seed)})


def torus_laplacian_symbol(d: int, L: int) -> np.ndarray:
    """Eigenvalues sum_i 2(1 - cos k_i) of the torus graph Laplacian on the FFT grid."""
    k = 2 * np.pi * np.fft.fftfreq(L)
    lam = np.zeros((L,) * d)
    for i in range(d):
        shape = [1] * d
        shape[i] = L
        lam = lam + (2 - 2 * np.cos(k)).reshape(shape)
    return lam


def sample_gff(d: int, L: int, seed: int) -> np.ndarray:
    """Mean-zero Gaussian field with covariance the zero-mode-free torus Green function."""
    if d < 3:
        raise ValueError("the free-field environment requires d >= 3")
    white = stream(seed, "gff").standard_normal((L,) * d)
    lam = torus_laplacian_symbol(d, L)
    filt = np.zeros_like(lam)
    nz = lam > 0
    filt[nz] = lam[nz] ** -0.5
    return np.real(np.fft.ifftn(np.fft.fftn(white) * filt))


def sample_gff_exp(d: int, L: int, seed: int) -> Environment:
    """Conductances exp(phi_x + phi_y) for a torus free field phi."""
    phi = sample_gff(d, L, seed)
    mu = np.stack([np.exp(phi + np.roll(phi, -1, axis=i)) for i in range(d)])
    return Environment(torus(d, L), mu, {"law": "gff", "seed": int(seed)})


def parse_law(law: str):
    """Split 'name:a,b' into (name, [a, b])."""
    name, _, rest = law.partition(":")
    params = [float(x) for x in rest.split(",")] if rest else []
    return name.strip(), params


def make_environment(law: str, topology: Topology, seed: int = 0) -> Environment:
    """Build an environment from a law string such as 'lognormal:0,1' or 'layered:1,4'."""
    name, params = parse_law(law)
    if name == "constant":
        if len(params) != 1:
            raise ValueError("constant law takes one parameter")
        return homogeneous(params[0], topology)
    if name == "layered":
        if len(params) != 2:
            raise ValueError("layered law takes two parameters")
        return layered(params[0], params[1], topology)
    if name == "layered_noise":
        if len(params) != 3:
            raise ValueError("layered_noise law takes three parameters")
        return sample_layered_noise(*params, topology, seed)
    if name == "gff":
        if not topology.periodic:
            raise ValueError("the free-field law is sampled on a torus")
        return sample_gff_exp(topology.d, topology.size, seed)
    arity = {"lognormal": 2, "two_point": 1, "uniform": 2, "pareto": 1}
    if name not in arity or len(params) != arity[name]:
        raise ValueError(f"cannot parse law {law!r}")
    return sample_iid(name, params, topology, seed)


# ----------------------------------------------------------------------------
# Group actions
# ----------------------------------------------------------------------------


def shift(env: Environment, a) -> Environment:
    """(tau_a omega)({x, y}) = omega({a + x, a + y}) on a torus."""
    if not env.topology.periodic:
        raise ValueError("shifts are defined on periodic environments only")
    a = [int(v) for v in a]
    if len(a) != env.d:
        raise ValueError("shift vector has the wrong dimension")
    mu = np.roll(env.mu, shift=[-v for v in a], axis=tuple(range(1, env.d + 1)))
    return Environment(env.topology, mu, {**env.provenance, "shift": a})


def reflect(env: Environment, axis: int) -> Environment:
    """Image under x_axis -> -x_axis."""
    top = env.topology
    mu = np.array(env.mu)
    out = np.empty_like(mu)
    for i in range(env.d):
        if top.periodic:
            if i == axis:
                out[i] = np.flip(mu[i], axis)
            else:
                out[i] = np.roll(np.flip(mu[i], axis), 1, axis)
        else:
            if i == axis:
                out[i] = np.roll(np.flip(mu[i], axis), -1, axis)
            else:
                out[i] = np.flip(mu[i], axis)
    mask = _edge_mask(top)
    out[~mask] = 1.0
    return Environment(top, out, {**env.provenance, "reflect": axis})


# ----------------------------------------------------------------------------
# Moments
# ----------------------------------------------------------------------------


@dataclass
class MomentReport:
    p: float
    q: float
    norm_mu: float
    norm_mu_inv: float
    threshold: float | None
    radii: list = field(default_factory=list)
    per_radius: list = field(default_factory=list)

    @property
    def value(self) -> float:
        return self.norm_mu + self.norm_mu_inv

    @property
    def passed(self) -> bool:
        if self.threshold is None:
            return True
        vals = [self.value] + [a + b for a, b in self.per_radius]
        return all(v < self.threshold for v in vals)


def box_edge_conductances(env: Environment, r: int) -> np.ndarray:
    """Conductances on the oriented edge set E_r (each undirected edge twice)."""
    top = env.topology
    R = top.size if not top.periodic else (top.size - 1) // 2
    if r > R:
        raise ValueError("radius too large for the environment")
    benv = env.restrict_to_box(r) if (top.periodic or r != top.size) else env
    geom = build_box(env.d, r)
    t, h, a = geom.edges("E")
    base = np.minimum(t, h)
    return benv.mu.reshape(env.d, -1)[a, base]


def moment_report(env: Environment, p: float, q: float, threshold: float | None = None,
                  radii=None) -> MomentReport:
    """Averaged norms of mu and 1/mu over all edges and optionally over each E_r."""
    vals = env.edge_values()
    rep = MomentReport(p, q, avnorm(vals, p), avnorm(1.0 / vals, q), threshold)
    for r in radii or []:
        ev = box_edge_conductances(env, r)
        rep.radii.append(int(r))
        rep.per_radius.append((avnorm(ev, p), avnorm(1.0 / ev, q)))
    return rep


# ----------------------------------------------------------------------------
# Variable-speed random walk
# ----------------------------------------------------------------------------


@dataclass
class WalkEstimate:
    T: float
    n_paths: int
    covariance: np.ndarray  # (1/2T) E[X_i X_j]
    stderr: np.ndarray
    mean_jumps: float
    note: str = "covariance normalised by 2T; homogeneous conductance c gives c"


def simulate_walk(env: Environment, T: float, n_paths: int, seed: int, start=None) -> WalkEstimate:
    """Walk with generator sum_y mu_xy (u(y) - u(x)) run to time T, displacement unfolded.

    The holding time at x is exponential with rate sum_y mu_xy.
    """
    if T <= 0 or n_paths <= 0:
        raise ValueError("horizon and path count must be positive")
    top = env.topology
    if not top.periodic:
        raise ValueError("the walk runs on a torus")
    d, L = top.d, top.size
    rng = stream(seed, "walk")
    start = np.zeros(d, dtype=np.int64) if start is None else np.asarray(start, dtype=np.int64) % L
    pos = np.tile(start, (n_paths, 1))
    disp = np.zeros((n_paths, d), dtype=np.int64)
    clock = np.zeros(n_paths)
    jumps = np.zeros(n_paths, dtype=np.int64)
    active = np.arange(n_paths)
    mu = env.mu
    steps = np.concatenate([np.eye(d, dtype=np.int64), -np.eye(d, dtype=np.int64)])
    while active.size:
        p = pos[active]
        rates = np.empty((active.size, 2 * d))
        for i in range(d):
            rates[:, i] = mu[(i,) + tuple(p.T)]
            back = p.copy()
            back[:, i] = (back[:, i] - 1) % L
            rates[:, d + i] = mu[(i,) + tuple(back.T)]
        total = rates.sum(axis=1)
        clock[active] += rng.exponential(1.0, active.size) / total
        stay = clock[active] <= T
        active = active[stay]
        rates, total = rates[stay], total[stay]
        if not active.size:
            break
        u = rng.random(active.size) * total
        choice = (np.cumsum(rates, axis=1) < u[:, None]).sum(axis=1)
        choice = np.minimum(choice, 2 * d - 1)
        step = steps[choice]
        pos[active] = (pos[active] + step) % L
        disp[active] += step
        jumps[active] += 1
    X = disp.astype(float)
    prods = X[:, :, None] * X[:, None, :] / (2.0 * T)
    cov = prods.mean(axis=0)
    se = prods.std(axis=0, ddof=1) / np.sqrt(n_paths)
    return WalkEstimate(float(T), int(n_paths), cov, se, float(jumps.mean()))


# ----------------------------------------------------------------------------
# File format
# ----------------------------------------------------------------------------


def save_environment(env: Environment, path) -> None:
    """One JSON header line, then the (d, *shape) array as little-endian float64."""
    top = env.topology
    header = {
        "format": "latticehom-environment-1",
        "d": top.d,
        "topology": top.kind,
        "size": top.size,
        "law": env.provenance.get("law"),
        "seed": env.provenance.get("seed"),
        "provenance": env.provenance,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(np.ascontiguousarray(env.mu, dtype="<f8").tobytes())


def load_environment(path) -> Environment:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline())
        data = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    top = Topology(header["topology"], header["d"], header["size"])
    mu = data.reshape((top.d,) + top.shape).copy()
    mu[~_edge_mask(top)] = 1.0
    return Environment(top, mu, header.get("provenance", {}))
