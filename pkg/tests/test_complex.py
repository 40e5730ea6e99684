import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reggelab import complex as cx
from reggelab.errors import BadRange, NonManifoldStar, ValidationError
from reggelab.euclid import EmbeddedSimplex, thickness_batch
from reggelab.harness.catalog import flat_torus, torus_base


def triangle():
    return cx.SimplicialComplex([(0, 1, 2)], 3)


# ----------------------------------------------------------- subdivision
def test_triangle_E2():
    sub = cx.refine(triangle(), 2)
    assert len(sub.complex) == 4
    assert sub.complex.num_vertices == 6
    size = np.sum(sub.support >= 0, axis=1)
    assert np.sum(size == 1) == 3
    assert np.all(sub.weights[size == 2][:, :2] == 1)
    assert np.all(sub.weights.sum(axis=1) == 2)


@pytest.mark.parametrize("n,E", [(1, 5), (2, 3), (2, 4), (3, 2), (3, 3), (4, 2)])
def test_cell_count(n, E):
    T = cx.kuhn_template(n, E)
    assert len(T.cells) == E**n
    assert np.all(T.grid.sum(axis=1) == E)


def test_tetrahedron_E3_shape_catalog():
    T = cx.kuhn_template(3, 3)
    # embed the standard simplex as the regular tetrahedron and classify cells by sorted edge lengths
    from tests.test_euclid import regular_simplex
    V = regular_simplex(3)
    pts = T.grid @ V / 3
    cells = pts[T.cells]
    d = np.linalg.norm(cells[:, :, None] - cells[:, None], axis=-1)
    iu = np.triu_indices(4, 1)
    keys = {tuple(np.round(np.sort(di[iu]), 9)) for di in d}
    assert len(keys) <= 3
    assert thickness_batch(cells).min() > 0.1


def test_bad_subdivision_order():
    with pytest.raises(BadRange):
        cx.kuhn_template(2, 0)


@pytest.mark.parametrize("E", [1, 2, 3, 5])
def test_euler_characteristic_preserved(E):
    for K, chi in [(cx.octahedron(), 2), (cx.torus_grid(3, 2), 0), (cx.torus_grid(3, 3), 0)]:
        S = cx.subdivide(K, E)
        assert S.euler_characteristic() == chi == K.euler_characteristic()
        assert S.is_closed


def test_subdivision_shared_faces_consistent():
    S = cx.subdivide(cx.torus_grid(3, 3), 2)
    # closed and every interior face borders exactly two facets
    assert S.is_closed
    assert np.all(S.neighbors >= 0)


# ---------------------------------------------------------------- choose_E
def test_choose_E_examples():
    assert cx.choose_E(3.0, 10.0, 1.0) == 4
    assert cx.choose_E(10.0, 5.0, 2.0) == 2


@given(st.floats(0.1, 100.0), st.floats(0.001, 1.0))
def test_choose_E_inequality(top, frac):
    rho = frac * top
    E = cx.choose_E(rho, top, 1.0)
    assert top / rho < E <= 2 * top / rho + 1e-12


def test_choose_E_bad_range():
    with pytest.raises(BadRange):
        cx.choose_E(11.0, 10.0, 1.0)
    with pytest.raises(BadRange):
        cx.choose_E(0.0, 10.0, 1.0)


# ------------------------------------------------------------------ bones
def test_octahedron_bones():
    B = cx.bones(cx.octahedron())
    assert len(B) == 6
    assert np.all(B.ring_sizes == 4)


def test_torus3_bones_are_edges():
    K = cx.torus_grid(4, 3)
    B = cx.bones(K)
    assert len(B) == len(K.simplices(1))
    assert set(np.unique(B.ring_sizes)) <= {4, 6}


def test_disc_boundary_excluded():
    K = cx.fan_disc(5)
    B = cx.bones(K)
    assert B.vertices.tolist() == [[0]]
    assert B.ring_sizes.tolist() == [5]


def test_bone_ring_is_a_cycle():
    K = cx.subdivide(cx.octahedron(), 2)
    B = K.bones
    for k in range(len(B)):
        fac, ext, _ = B.ring(k)
        bone = set(B.vertices[k])
        for r in range(len(fac)):
            assert bone <= set(K.facets[fac[r]])
            # the crossed face leads to the next ring entry
            nxt = K.neighbors[fac[r], ext[r]]
            assert nxt == fac[(r + 1) % len(fac)]


def test_non_manifold_star():
    # two fans glued at vertex 0 only
    K = cx.SimplicialComplex([(0, 1, 2), (0, 2, 3), (0, 3, 1), (0, 4, 5), (0, 5, 6), (0, 6, 4)], 7)
    with pytest.raises(NonManifoldStar):
        cx.bones(K)


# ------------------------------------------------------------ polyhedron
def test_flat_torus_edge_lengths_match_chart():
    m = flat_torus(3.0, 2)
    K, P = torus_base(m, 3)
    for E in (1, 2, 3):
        poly = cx.build_approximation(m, K, P, E)
        x = poly.positions[poly.edges]
        d = m.lift(x[:, 0], x[:, 1]) - x[:, 0]
        np.testing.assert_allclose(poly.edge_lengths, np.linalg.norm(d, axis=1), atol=1e-12)
        T = cx.kuhn_template(2, E)
        unit = T.grid @ np.array([[0, 0], [1, 0], [1, 1]]) / E
        catalog_t = thickness_batch(unit[T.cells]).min()
        assert poly.quality.t_min == pytest.approx(catalog_t, rel=1e-9)


def test_sphere_octahedron_E1(sphere_poly):
    poly = sphere_poly[1]
    assert len(poly.edges) == 12
    np.testing.assert_allclose(poly.edge_lengths, np.pi / 2, atol=1e-12)
    assert poly.quality.closed
    assert poly.quality.orientation_mismatches == 0


def test_sphere_mesh_halves(sphere, sphere_base, sphere_poly):
    rho = [sphere_poly[E].mesh for E in (2, 4)]
    rho.append(cx.build_approximation(sphere, *sphere_base, 8).mesh)
    for a, b in zip(rho, rho[1:]):
        assert b / a == pytest.approx(0.5, rel=0.1)


def test_quality_bounded_over_sweep(sphere_poly, bump, bump_base):
    ts = [sphere_poly[E].quality.t_min for E in (1, 2, 4)]
    vs = [sphere_poly[E].quality.vol_min_ratio for E in (1, 2, 4)]
    assert min(ts) > 0.1 and min(vs) > 0.1
    vols = []
    for E in (1, 2, 4):
        q = cx.build_approximation(bump, *bump_base, E).quality
        assert q.t_min > 0.1 and q.orientation_mismatches == 0
        vols.append(q.vol_min_ratio)
    # bounded below uniformly in E, not merely positive
    assert min(vols) > 0.05 and max(vols) / min(vols) < 2


def test_shared_lengths_are_bit_exact(sphere_poly):
    poly = sphere_poly[4]
    K = poly.complex
    d = poly.facet_distances
    for f in range(0, len(K), 7):
        for a in range(3):
            g = K.neighbors[f, a]
            shared = [v for v in K.facets[f] if v != K.facets[f, a]]
            i = [list(K.facets[f]).index(v) for v in shared]
            j = [list(K.facets[g]).index(v) for v in shared]
            assert d[f, i[0], i[1]] == d[g, j[0], j[1]]


def test_vertices_placed_by_barycentric_interpolation(sphere, sphere_base, sphere_poly):
    from reggelab.barycentric import weighted_min
    sub = cx.refine(sphere_base[0], 2)
    poly = sphere_poly[2]
    P = sphere_base[1]
    for v in range(sub.complex.num_vertices):
        sup = sub.support[v]
        w = sub.weights[v]
        ok = sup >= 0
        pts = P[sup[ok]]
        pts = sphere.lift(pts[0], pts)
        x = weighted_min(sphere, pts, w[ok] / 2)
        np.testing.assert_allclose(sphere.wrap(x), sphere.wrap(poly.positions[v]), atol=1e-9)


def test_build_rejects_bad_positions(sphere, sphere_base):
    K, P = sphere_base
    with pytest.raises(ValidationError):
        cx.build_approximation(sphere, K, P[:3], 1)
    bad = P.copy()
    bad[0, 0] = 0.0
    with pytest.raises(ValidationError):
        cx.build_approximation(sphere, K, bad, 1)


def test_polyhedron_round_trip_bit_exact(bump_poly):
    text = cx.dumps_polyhedron(bump_poly)
    back = cx.loads_polyhedron(text)
    np.testing.assert_array_equal(back.positions, bump_poly.positions)
    np.testing.assert_array_equal(back.edge_lengths, bump_poly.edge_lengths)
    np.testing.assert_array_equal(back.orientation, bump_poly.orientation)
    assert cx.dumps_polyhedron(back) == text


def test_polyhedron_format_errors():
    with pytest.raises(ValidationError):
        cx.loads_polyhedron("nonsense\n")
    with pytest.raises(ValidationError):
        cx.loads_polyhedron("# reggelab polyhedron v99\n")


def test_crossing_count_diagnostic(sphere, sphere_base, sphere_poly):
    from reggelab import holonomy, regge
    polys = [sphere_poly[2], sphere_poly[4], cx.build_approximation(sphere, *sphere_base, 8)]
    ratios = []
    for poly in polys:
        rho = poly.mesh
        L = 4.2 * rho if rho < 0.3 else 1.2
        curves = holonomy.seeded_geodesics(sphere, 6, L, 3, box=([1.2, 0.0], [1.94, 6.28]))
        counts = [regge.crossing_count(poly, c) for c in curves]
        ratios.append(max(counts) * rho / L)
    # the constant B in  count <= B L / rho  stays bounded across refinements
    assert max(ratios) < 8
    assert max(ratios) / min(ratios) < 3
