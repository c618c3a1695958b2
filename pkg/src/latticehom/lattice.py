"""Boxes of Z^d, their vertex and edge index sets, discrete calculus and norms.

Coordinates of a box of radius R run over {-R, ..., R}^d.  Every box owns a
dense grid of shape ``(2R+1,)*d``; a vertex is addressed by its flat
(C-order, hence lexicographic) index into that grid.  Sub-domains such as the
open box D_r or the boundary of D_r for r <= R are sorted subsets of those
flat indices.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np

VERTEX_KINDS = ("closed", "open", "boundary", "inner_boundary")
EDGE_KINDS = ("E", "tan", "nor")


class DomainError(ValueError):
    """Raised for mismatched domains or stencils that leave the stored domain."""


@dataclass(frozen=True)
class Domain:
    kind: str
    r: int

    def __post_init__(self):
        if self.kind not in VERTEX_KINDS:
            raise DomainError(f"unknown vertex domain kind {self.kind!r}")
        if self.r < 0:
            raise DomainError("domain radius must be nonnegative")


@dataclass(frozen=True)
class EdgeSet:
    kind: str
    r: int

    def __post_init__(self):
        if self.kind not in EDGE_KINDS:
            raise DomainError(f"unknown edge set kind {self.kind!r}")


class BoxGeometry:
    """Index sets of the box of radius R in dimension d.

    Use :func:`build_box` to obtain cached instances.
    """

    def __init__(self, d: int, R: int):
        if int(d) != d or d < 2:
            raise ValueError("dimension d must be an integer >= 2")
        if int(R) != R or R < 1:
            raise ValueError("radius R must be an integer >= 1")
        self.d = int(d)
        self.R = int(R)
        self.n = 2 * self.R + 1
        self.shape = (self.n,) * self.d
        self.size = self.n**self.d
        self.coords = (np.indices(self.shape).reshape(self.d, -1).T - self.R).astype(np.int64)
        self.coords.setflags(write=False)
        self._absc = np.abs(self.coords)
        self._sup = self._absc.max(axis=1)
        self._vcache: dict = {}
        self._ecache: dict = {}

    # vertices -------------------------------------------------------------
    def _check_r(self, r):
        r = self.R if r is None else int(r)
        if r < 0 or r > self.R:
            raise DomainError(f"radius {r} outside [0, {self.R}]")
        return r

    def vertices(self, kind: str, r: int | None = None) -> np.ndarray:
        """Sorted flat indices of a vertex domain of radius ``r``."""
        r = self._check_r(r)
        key = (kind, r)
        if key not in self._vcache:
            if kind == "closed":
                mask = self._sup <= r
            elif kind == "open":
                mask = self._sup < r
            elif kind == "boundary":
                mask = self._sup == r
            elif kind == "inner_boundary":
                mask = (self._sup == r) & ((self._absc == r).sum(axis=1) == 1) & (r >= 1)
            else:
                raise DomainError(f"unknown vertex domain kind {kind!r}")
            idx = np.flatnonzero(mask)
            idx.setflags(write=False)
            self._vcache[key] = idx
        return self._vcache[key]

    def count(self, kind: str, r: int | None = None) -> int:
        return int(self.vertices(kind, r).size)

    def index(self, coords) -> np.ndarray:
        """Flat grid index of integer coordinates (last axis of length d)."""
        c = np.asarray(coords, dtype=np.int64)
        if np.any(np.abs(c) > self.R):
            raise DomainError("coordinates outside the box")
        return np.ravel_multi_index(tuple(np.moveaxis(c + self.R, -1, 0)), self.shape)

    def corner_region(self, r: int | None = None) -> np.ndarray:
        """Boundary vertices without an interior neighbour."""
        return np.setdiff1d(self.vertices("boundary", r), self.vertices("inner_boundary", r))

    # edges ----------------------------------------------------------------
    def _all_oriented(self):
        if "all" not in self._ecache:
            tails, heads, axes = [], [], []
            for i in range(self.d):
                for s in (1, -1):
                    ok = np.abs(self.coords[:, i] + s) <= self.R
                    t = np.flatnonzero(ok)
                    h = t + s * self.n ** (self.d - 1 - i)
                    tails.append(t)
                    heads.append(h)
                    axes.append(np.full(t.size, i))
            t = np.concatenate(tails)
            h = np.concatenate(heads)
            a = np.concatenate(axes)
            order = np.lexsort((h, t))
            self._ecache["all"] = (t[order], h[order], a[order])
        return self._ecache["all"]

    def edges(self, kind: str, r: int | None = None):
        """Oriented edges ``(tail, head, axis)`` of an edge set, sorted by (tail, head)."""
        r = self._check_r(r)
        key = (kind, r)
        if key not in self._ecache:
            t, h, a = self._all_oriented()
            st, sh = self._sup[t], self._sup[h]
            if kind == "E":
                mid2 = np.abs(self.coords[t] + self.coords[h]).max(axis=1)
                mask = mid2 < 2 * r
            elif kind == "tan":
                mask = (st == r) & (sh == r)
            elif kind == "nor":
                mask = (st < r) & (sh == r)
            else:
                raise DomainError(f"unknown edge set kind {kind!r}")
            out = tuple(np.ascontiguousarray(x[mask]) for x in (t, h, a))
            for x in out:
                x.setflags(write=False)
            self._ecache[key] = out
        return self._ecache[key]

    def edge_count(self, kind: str, r: int | None = None) -> int:
        return int(self.edges(kind, r)[0].size)

    def normal_map(self, r: int | None = None):
        """For each inner-boundary vertex y (sorted), the tail x of n_r(y) = (x, y)."""
        r = self._check_r(r)
        key = ("normal", r)
        if key not in self._ecache:
            ib = self.vertices("inner_boundary", r)
            t, h, _ = self.edges("nor", r)
            pos = np.searchsorted(ib, h)
            if not np.array_equal(ib[pos], h) or np.unique(h).size != h.size or h.size != ib.size:
                raise AssertionError("normal edges are not in bijection with the inner boundary")
            tails = np.empty_like(ib)
            tails[pos] = t
            tails.setflags(write=False)
            self._ecache[key] = tails
        return self._ecache[key]

    def __repr__(self):
        return f"BoxGeometry(d={self.d}, R={self.R})"


@lru_cache(maxsize=64)
def build_box(d: int, R: int) -> BoxGeometry:
    return BoxGeometry(d, R)


# ----------------------------------------------------------------------------
# Fields
# ----------------------------------------------------------------------------


class VertexField:
    """Values on a vertex domain; vector fields carry a trailing axis of length d."""

    __slots__ = ("geometry", "domain", "values")

    def __init__(self, geometry: BoxGeometry, domain: Domain, values):
        values = np.array(values, dtype=float)
        n = geometry.count(domain.kind, domain.r)
        if values.ndim not in (1, 2) or values.shape[0] != n:
            raise DomainError(f"expected {n} values for {domain}, got shape {values.shape}")
        if values.ndim == 2 and values.shape[1] != geometry.d:
            raise DomainError("vector fields need d components per vertex")
        values.setflags(write=False)
        self.geometry = geometry
        self.domain = domain
        self.values = values

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2

    @property
    def indices(self) -> np.ndarray:
        return self.geometry.vertices(self.domain.kind, self.domain.r)

    @property
    def coords(self) -> np.ndarray:
        return self.geometry.coords[self.indices]

    @classmethod
    def from_function(cls, geometry, domain, f: Callable[[np.ndarray], np.ndarray]):
        c = geometry.coords[geometry.vertices(domain.kind, domain.r)]
        return cls(geometry, domain, f(c))

    @classmethod
    def from_grid(cls, geometry, domain, grid):
        grid = np.asarray(grid, dtype=float)
        flat = grid.reshape((geometry.size,) + grid.shape[geometry.d:])
        return cls(geometry, domain, flat[geometry.vertices(domain.kind, domain.r)])

    def to_grid(self, fill=np.nan) -> np.ndarray:
        g = self.geometry
        out = np.full((g.size,) + self.values.shape[1:], fill, dtype=float)
        out[self.indices] = self.values
        return out.reshape(g.shape + self.values.shape[1:])

    def component(self, i: int) -> "VertexField":
        if not self.is_vector:
            raise DomainError("scalar field has no components")
        return VertexField(self.geometry, self.domain, self.values[:, i])

    def restrict(self, domain: Domain) -> "VertexField":
        sub = self.geometry.vertices(domain.kind, domain.r)
        pos = np.searchsorted(self.indices, sub)
        if np.any(pos >= self.indices.size) or not np.array_equal(self.indices[np.minimum(pos, self.indices.size - 1)], sub):
            raise DomainError(f"{domain} is not contained in {self.domain}")
        return VertexField(self.geometry, domain, self.values[pos])

    def _combine(self, other, op):
        if isinstance(other, VertexField):
            if other.geometry is not self.geometry or other.domain != self.domain:
                raise DomainError(f"mixed-domain arithmetic: {self.domain} vs {other.domain}")
            return VertexField(self.geometry, self.domain, op(self.values, other.values))
        if np.ndim(other) == 0:
            return VertexField(self.geometry, self.domain, op(self.values, float(other)))
        raise DomainError("fields combine only with fields on the same domain or scalars")

    def __add__(self, o):
        return self._combine(o, np.add)

    def __sub__(self, o):
        return self._combine(o, np.subtract)

    def __mul__(self, o):
        return self._combine(o, np.multiply)

    __radd__ = __add__
    __rmul__ = __mul__

    def __neg__(self):
        return VertexField(self.geometry, self.domain, -self.values)

    def __repr__(self):
        kind = "vector" if self.is_vector else "scalar"
        return f"VertexField({kind}, {self.domain}, d={self.geometry.d}, R={self.geometry.R})"


class EdgeField:
    """Values on the oriented edges of an edge set, in the set's sorted order."""

    __slots__ = ("geometry", "edge_set", "values", "antisymmetric")

    def __init__(self, geometry: BoxGeometry, edge_set: EdgeSet, values, antisymmetric=False):
        values = np.array(values, dtype=float)
        n = geometry.edge_count(edge_set.kind, edge_set.r)
        if values.shape != (n,):
            raise DomainError(f"expected {n} edge values, got {values.shape}")
        values.setflags(write=False)
        self.geometry = geometry
        self.edge_set = edge_set
        self.values = values
        self.antisymmetric = bool(antisymmetric)
        if antisymmetric:
            err = self.antisymmetry_defect()
            if err > 1e-12 * max(1.0, float(np.abs(values).max(initial=0.0))):
                raise DomainError(f"edge field flagged antisymmetric but defect is {err:g}")

    @property
    def tails(self):
        return self.geometry.edges(self.edge_set.kind, self.edge_set.r)[0]

    @property
    def heads(self):
        return self.geometry.edges(self.edge_set.kind, self.edge_set.r)[1]

    def reversal(self) -> np.ndarray:
        """Position of the reversed edge for each edge, or -1 if absent from the set."""
        t, h = self.tails, self.heads
        n = self.geometry.size
        key = t * n + h
        rkey = h * n + t
        pos = np.searchsorted(key, rkey)
        pos = np.minimum(pos, key.size - 1)
        return np.where(key[pos] == rkey, pos, -1)

    def antisymmetry_defect(self) -> float:
        rev = self.reversal()
        ok = rev >= 0
        if not ok.any():
            return 0.0
        return float(np.abs(self.values[ok] + self.values[rev[ok]]).max())

    @classmethod
    def gradient(cls, u: VertexField, edge_set: EdgeSet) -> "EdgeField":
        """Edge gradient u(head) - u(tail); antisymmetric by construction."""
        g = u.geometry
        grid = u.to_grid().reshape(g.size)
        t, h, _ = g.edges(edge_set.kind, edge_set.r)
        vals = grid[h] - grid[t]
        if np.isnan(vals).any():
            raise DomainError("edge set leaves the domain of the field")
        return cls(g, edge_set, vals, antisymmetric=True)


# ----------------------------------------------------------------------------
# Array helpers shared by the solver modules
# ----------------------------------------------------------------------------


def shift(a: np.ndarray, axis: int, s: int, periodic: bool = False, fill=np.nan) -> np.ndarray:
    """Return b with b[x] = a[x + s e_axis]; non-periodic shifts pad with ``fill``."""
    if periodic:
        return np.roll(a, -s, axis=axis)
    out = np.full_like(a, fill, dtype=float)
    n = a.shape[axis]
    src = [slice(None)] * a.ndim
    dst = [slice(None)] * a.ndim
    if s >= 0:
        src[axis] = slice(s, n)
        dst[axis] = slice(0, n - s)
    else:
        src[axis] = slice(0, n + s)
        dst[axis] = slice(-s, n)
    out[tuple(dst)] = a[tuple(src)]
    return out


def _norm_core(values: np.ndarray, p: float):
    v = np.abs(np.asarray(values, dtype=float)).ravel()
    if v.size == 0:
        raise ValueError("norm over an empty index set")
    if p == np.inf:
        return float(v.max()), float(v.max()), v.size
    if p < 1:
        raise ValueError("exponent p must lie in [1, inf]")
    m = v.max()
    if m == 0:
        return 0.0, 0.0, v.size
    s = float(np.sum((v / m) ** p))
    return m * s ** (1.0 / p), m * (s / v.size) ** (1.0 / p), v.size


def avnorm(values, p: float, average: bool = True) -> float:
    """Averaged norm (sum |u|^p / |A|)^(1/p) over the given values; p = inf is the max.

    Fields are accepted directly.  Vector fields are taken componentwise.
    """
    if isinstance(values, (VertexField, EdgeField)):
        values = values.values
    plain, av, _ = _norm_core(values, p)
    return av if average else plain


def norm(values, p: float) -> float:
    """Plain norm (sum |u|^p)^(1/p)."""
    return avnorm(values, p, average=False)


# ----------------------------------------------------------------------------
# Discrete calculus on fields
# ----------------------------------------------------------------------------


def _out_domain(dom: Domain) -> Domain:
    if dom.kind == "closed":
        out = Domain("open", dom.r)
    elif dom.kind == "open":
        out = Domain("open", dom.r - 1)
    else:
        raise DomainError("finite differences need a closed or open box domain")
    if out.r < 1:
        raise DomainError("domain too small for the stencil")
    return out


def _same_domain(*fields):
    f0 = fields[0]
    for f in fields[1:]:
        if f.geometry is not f0.geometry or f.domain != f0.domain:
            raise DomainError(f"mixed domains {f0.domain} and {f.domain}")


def _finish(geom, dom, grid_vals):
    flat = grid_vals.reshape((geom.size,) + grid_vals.shape[geom.d:])[geom.vertices(dom.kind, dom.r)]
    if np.isnan(flat).any():
        raise DomainError("domain too small for the stencil")
    return VertexField(geom, dom, flat)


def _scalar_grid(u: VertexField):
    if u.is_vector:
        raise DomainError("expected a scalar field")
    return u.to_grid()


def grad(u: VertexField) -> VertexField:
    """Forward differences (u(x+e_i) - u(x))_i."""
    g = _scalar_grid(u)
    comps = [shift(g, i, 1) - g for i in range(u.geometry.d)]
    return _finish(u.geometry, _out_domain(u.domain), np.stack(comps, axis=-1))


def grad_star(u: VertexField) -> VertexField:
    """Backward differences (u(x-e_i) - u(x))_i, the adjoint of the forward gradient."""
    g = _scalar_grid(u)
    comps = [shift(g, i, -1) - g for i in range(u.geometry.d)]
    return _finish(u.geometry, _out_domain(u.domain), np.stack(comps, axis=-1))


def div_star(F: VertexField) -> VertexField:
    """sum_i F_i(x-e_i) - F_i(x)."""
    if not F.is_vector:
        raise DomainError("div_star needs a vector field")
    G = F.to_grid()
    out = sum(shift(G[..., i], i, -1) - G[..., i] for i in range(F.geometry.d))
    return _finish(F.geometry, _out_domain(F.domain), out)


def laplacian(u: VertexField) -> VertexField:
    """sum over neighbours of u(y) - 2d u(x)."""
    g = _scalar_grid(u)
    d = u.geometry.d
    out = sum(shift(g, i, 1) + shift(g, i, -1) for i in range(d)) - 2 * d * g
    return _finish(u.geometry, _out_domain(u.domain), out)


def shifted_grad(f: VertexField, g: VertexField, i: int) -> VertexField:
    """[(f grad_i) g](x) = f(x+e_i) (g(x+e_i) - g(x))."""
    _same_domain(f, g)
    F, G = _scalar_grid(f), _scalar_grid(g)
    return _finish(f.geometry, _out_domain(f.domain), shift(F, i, 1) * (shift(G, i, 1) - G))


def shifted_grad_star(f: VertexField, g: VertexField, i: int) -> VertexField:
    """[(f grad*_i) g](x) = f(x-e_i) (g(x-e_i) - g(x))."""
    _same_domain(f, g)
    F, G = _scalar_grid(f), _scalar_grid(g)
    return _finish(f.geometry, _out_domain(f.domain), shift(F, i, -1) * (shift(G, i, -1) - G))


def contract_grad(F: VertexField, g: VertexField) -> VertexField:
    """(F . grad) g = sum_i (F_i grad_i) g."""
    _same_domain(F, g)
    if not F.is_vector:
        raise DomainError("first argument must be a vector field")
    Fg, G = F.to_grid(), _scalar_grid(g)
    out = sum(shift(Fg[..., i], i, 1) * (shift(G, i, 1) - G) for i in range(F.geometry.d))
    return _finish(F.geometry, _out_domain(F.domain), out)


def contract_grad_star(F: VertexField, g: VertexField) -> VertexField:
    """(F . grad*) g = sum_i (F_i grad*_i) g."""
    _same_domain(F, g)
    if not F.is_vector:
        raise DomainError("first argument must be a vector field")
    Fg, G = F.to_grid(), _scalar_grid(g)
    out = sum(shift(Fg[..., i], i, -1) * (shift(G, i, -1) - G) for i in range(F.geometry.d))
    return _finish(F.geometry, _out_domain(F.domain), out)


# ----------------------------------------------------------------------------
# Serialization
# ----------------------------------------------------------------------------

_MAGIC = b"LHFIELD1"
_KIND_CODE = {k: i for i, k in enumerate(VERTEX_KINDS)}


def field_to_csv(u: VertexField, path) -> None:
    """Columns: index, x_1..x_d, value (or value_1..value_d for vector fields)."""
    d = u.geometry.d
    vals = u.values.reshape(u.values.shape[0], -1)
    header = ["index"] + [f"x_{i + 1}" for i in range(d)]
    header += ["value"] if vals.shape[1] == 1 else [f"value_{i + 1}" for i in range(vals.shape[1])]
    table = np.column_stack([u.indices, u.coords, vals])
    fmt = ["%d"] * (d + 1) + ["%.17g"] * vals.shape[1]
    comment = json.dumps({"d": d, "R": u.geometry.R, "domain": [u.domain.kind, u.domain.r]})
    np.savetxt(path, table, fmt=fmt, delimiter=",", header=comment + "\n" + ",".join(header))


def field_from_csv(path) -> VertexField:
    with open(path) as fh:
        meta = json.loads(fh.readline().lstrip("# ").strip())
    table = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
    geom = build_box(meta["d"], meta["R"])
    dom = Domain(*meta["domain"])
    vals = table[:, 1 + geom.d:]
    return VertexField(geom, dom, vals[:, 0] if vals.shape[1] == 1 else vals)


def save_field(u: VertexField, path) -> None:
    """Binary dump: magic, header (d, R, kind, r, components, count), little-endian float64."""
    comps = 1 if not u.is_vector else u.geometry.d
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<iiiiiq", u.geometry.d, u.geometry.R, _KIND_CODE[u.domain.kind],
                             u.domain.r, comps, u.values.shape[0]))
        fh.write(np.ascontiguousarray(u.values, dtype="<f8").tobytes())


def load_field(path) -> VertexField:
    with open(path, "rb") as fh:
        if fh.read(8) != _MAGIC:
            raise ValueError("not a field dump")
        d, R, kind, r, comps, n = struct.unpack("<iiiiiq", fh.read(28))
        data = np.frombuffer(fh.read(), dtype="<f8").astype(float)
    geom = build_box(d, R)
    vals = data.reshape(n, comps) if comps > 1 else data
    return VertexField(geom, Domain(VERTEX_KINDS[kind], r), vals)


def write_triplets(matrix, path) -> None:
    """Write a sparse matrix as CSV rows (row, col, weight)."""
    coo = matrix.tocoo()
    table = np.column_stack([coo.row, coo.col, coo.data])
    np.savetxt(path, table, fmt=["%d", "%d", "%.17g"], delimiter=",", header="row,col,weight")


def corner_sources(geom: BoxGeometry, r: int | None = None):
    """Corner-region vertices and, for each, its lexicographically least inner-boundary
    vertex within max-distance 1.  Returns two aligned flat-index arrays."""
    r = geom.R if r is None else r
    corners = geom.corner_region(r)
    ib = geom.vertices("inner_boundary", r)
    ibc = geom.coords[ib]
    src = np.empty_like(corners)
    for k, c in enumerate(geom.coords[corners]):
        near = np.flatnonzero(np.abs(ibc - c).max(axis=1) <= 1)
        if near.size == 0:
            raise DomainError("corner vertex without an inner-boundary neighbour")
        src[k] = ib[near.min()]  # flat order is lexicographic in the coordinates
    return corners, src
