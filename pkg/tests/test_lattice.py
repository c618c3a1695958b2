import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from latticehom import lattice as lt
from latticehom.lattice import Domain, DomainError, EdgeField, EdgeSet, VertexField, avnorm, build_box


@pytest.mark.parametrize("d,R,counts", [
    (2, 1, {"open": 1, "boundary": 8, "inner_boundary": 4}),
    (2, 3, {"open": 25, "boundary": 24, "inner_boundary": 20}),
    (3, 1, {"boundary": 26, "inner_boundary": 6}),
])
def test_vertex_counts(d, R, counts):
    g = build_box(d, R)
    for kind, n in counts.items():
        assert g.count(kind) == n


def test_edge_counts():
    assert build_box(2, 1).edge_count("E") == 8
    g = build_box(2, 3)
    assert g.edge_count("nor") == 20
    assert g.edge_count("tan") == 48


@pytest.mark.parametrize("d,R", [(2, 2), (2, 5), (3, 2)])
def test_edge_set_structure(d, R):
    g = build_box(d, R)
    for kind in ("E", "tan"):
        t, h, _ = g.edges(kind)
        pairs = set(zip(t.tolist(), h.tolist()))
        assert all((b, a) in pairs for a, b in pairs)
    t, h, _ = g.edges("nor")
    assert np.all(np.abs(g.coords[t]).max(axis=1) < R)
    assert np.all(np.abs(g.coords[h]).max(axis=1) == R)
    tails = g.normal_map()
    ib = g.vertices("inner_boundary")
    assert np.all(np.abs(g.coords[ib] - g.coords[tails]).sum(axis=1) == 1)


def test_edges_sorted_and_unit_length():
    g = build_box(2, 4)
    t, h, a = g.edges("E")
    key = t * g.size + h
    assert np.all(np.diff(key) > 0)
    diff = g.coords[h] - g.coords[t]
    assert np.all(np.abs(diff).sum(axis=1) == 1)
    assert np.all(np.abs(diff[np.arange(a.size), a]) == 1)


def test_invalid_geometry():
    with pytest.raises(ValueError):
        build_box(1, 3)
    with pytest.raises(ValueError):
        build_box(2, 0)
    with pytest.raises(DomainError):
        build_box(2, 3).vertices("open", 4)
    with pytest.raises(DomainError):
        Domain("weird", 1)


def _field(d, R, f, kind="closed"):
    return VertexField.from_function(build_box(d, R), Domain(kind, R), f)


def test_affine_gradient():
    u = _field(2, 4, lambda c: c[:, 0] + 2.0 * c[:, 1])
    gu = lt.grad(u)
    assert gu.domain == Domain("open", 4)
    assert np.all(gu.values == np.array([1.0, 2.0]))


def test_laplacian_examples():
    assert np.all(lt.laplacian(_field(2, 3, lambda c: np.full(len(c), 7.0))).values == 0)
    assert np.all(lt.laplacian(_field(2, 3, lambda c: c[:, 0] ** 2.0)).values == 2)


def test_div_star_of_grad_is_minus_laplacian(rng):
    g = build_box(2, 5)
    u = VertexField(g, Domain("closed", 5), rng.standard_normal(g.size))
    lhs = lt.div_star(lt.grad(u))
    rhs = lt.laplacian(u).restrict(Domain("open", 4))
    np.testing.assert_allclose(lhs.values, -rhs.values, atol=1e-12)


def test_shifted_grad_examples(rng):
    x1 = _field(2, 3, lambda c: c[:, 0].astype(float))
    val = lt.shifted_grad(x1, x1, 0)
    origin = np.searchsorted(val.indices, build_box(2, 3).index([0, 0]))
    assert val.values[origin] == 1.0
    g = _field(2, 3, lambda c: rng.standard_normal(len(c)))
    c = _field(2, 3, lambda c_: np.full(len(c_), 2.5))
    np.testing.assert_array_equal(lt.shifted_grad(c, g, 1).values, 2.5 * lt.grad(g).values[:, 1])


def test_product_rule_exact(rng):
    g = build_box(2, 8)
    dom = Domain("closed", 8)
    f = VertexField(g, dom, rng.integers(-5, 5, g.size))
    h = VertexField(g, dom, rng.integers(-5, 5, g.size))
    for i in range(2):
        lhs = lt.grad(f * h).values[:, i]
        rhs = lt.shifted_grad(f, h, i).values + h.values[np.searchsorted(f.indices, lt.grad(f).indices)] * lt.grad(f).values[:, i]
        assert np.max(np.abs(lhs - rhs)) == 0


def test_mixed_domain_arithmetic_raises():
    g = build_box(2, 3)
    a = VertexField(g, Domain("closed", 3), np.ones(g.size))
    b = VertexField(g, Domain("open", 3), np.ones(g.count("open")))
    with pytest.raises(DomainError):
        a + b


def test_stencil_too_small():
    with pytest.raises(DomainError):
        lt.grad(_field(2, 1, lambda c: np.ones(len(c)), kind="open"))


def test_edge_field_antisymmetry(rng):
    g = build_box(2, 4)
    u = VertexField(g, Domain("closed", 4), rng.standard_normal(g.size))
    e = EdgeField.gradient(u, EdgeSet("E", 4))
    assert e.antisymmetry_defect() == 0
    with pytest.raises(DomainError):
        EdgeField(g, EdgeSet("E", 4), np.ones(g.edge_count("E")), antisymmetric=True)


def test_avnorm_examples():
    assert avnorm(np.ones(4), 2) == 1.0
    assert lt.norm(np.ones(4), 2) == 2.0
    for p in (1, 2, 3.5, np.inf):
        assert avnorm(np.full(9, -3.0), p) == pytest.approx(3.0)
    with pytest.raises(ValueError):
        avnorm(np.array([]), 2)
    with pytest.raises(ValueError):
        avnorm(np.ones(3), 0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=40), st.floats(1, 8), st.floats(1, 8))
def test_avnorm_monotone_in_p(vals, p1, p2):
    v = np.array(vals)
    lo, hi = sorted((p1, p2))
    assert avnorm(v, lo) <= avnorm(v, hi) * (1 + 1e-12) + 1e-300
    assert avnorm(v, hi) <= avnorm(v, np.inf) * (1 + 1e-12) + 1e-300


def test_shift_helper():
    a = np.arange(5.0)
    np.testing.assert_array_equal(lt.shift(a, 0, 1)[:4], [1, 2, 3, 4])
    assert np.isnan(lt.shift(a, 0, 1)[4])
    np.testing.assert_array_equal(lt.shift(a, 0, -2, periodic=True), [3, 4, 0, 1, 2])


def test_corner_sources():
    g = build_box(2, 3)
    corners, src = lt.corner_sources(g)
    assert set(corners) == set(g.corner_region())
    ib = set(g.vertices("inner_boundary").tolist())
    assert all(s in ib for s in src)
    assert np.all(np.abs(g.coords[corners] - g.coords[src]).max(axis=1) <= 1)


def test_field_roundtrips(tmp_path, rng):
    g = build_box(3, 2)
    for dom, vals in [(Domain("closed", 2), rng.standard_normal(g.size)),
                      (Domain("inner_boundary", 2), rng.standard_normal((g.count("inner_boundary"), 3)))]:
        u = VertexField(g, dom, vals)
        lt.save_field(u, tmp_path / "f.bin")
        back = lt.load_field(tmp_path / "f.bin")
        assert back.domain == u.domain
        np.testing.assert_array_equal(back.values, u.values)
        lt.field_to_csv(u, tmp_path / "f.csv")
        back = lt.field_from_csv(tmp_path / "f.csv")
        np.testing.assert_array_equal(back.values, u.values)
    (tmp_path / "bad.bin").write_bytes(b"NOTAFIELD" + bytes(40))
    with pytest.raises(ValueError):
        lt.load_field(tmp_path / "bad.bin")
