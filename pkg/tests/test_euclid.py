import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from reggelab import euclid
from reggelab.errors import Degenerate, FacetMismatch, NotRealizable, ValidationError


def regular_simplex(n: int) -> np.ndarray:
    """Regular n-simplex of edge 1 as n+1 points in R^n."""
    return euclid.embed_simplex(euclid.DistanceMatrix(1.0 - np.eye(n + 1))).vertices


def random_simplex(rng, n, m=None):
    m = n if m is None else m
    while True:
        P = rng.standard_normal((n + 1, m))
        s = euclid.EmbeddedSimplex(P)
        if s.thickness > 0.02:
            return P


# ----------------------------------------------------------- distance matrix
def test_distance_matrix_rejects_bad_input():
    with pytest.raises(ValidationError):
        euclid.DistanceMatrix([[0, 1], [2, 0]])
    with pytest.raises(ValidationError):
        euclid.DistanceMatrix([[0, 0], [0, 0]])
    with pytest.raises(ValidationError):
        euclid.DistanceMatrix([[1, 1], [1, 0]])
    with pytest.raises(ValidationError):
        euclid.DistanceMatrix([[0, np.nan], [np.nan, 0]])


def test_distance_matrix_from_edges():
    dm = euclid.DistanceMatrix.from_edges(2, {(0, 1): 3.0, (0, 2): 4.0, (1, 2): 5.0})
    assert dm.order == 2
    assert dm.d[2, 1] == 5.0


# ------------------------------------------------------------ volumes
def test_cayley_menger_equilateral_triangle():
    dm = euclid.DistanceMatrix(1.0 - np.eye(3))
    assert euclid.cayley_menger_volume(dm) == pytest.approx(np.sqrt(3) / 4, abs=1e-12)


def test_cayley_menger_collinear_is_zero():
    dm = euclid.DistanceMatrix([[0, 1, 2], [1, 0, 1], [2, 1, 0]])
    assert euclid.cayley_menger_volume(dm) == pytest.approx(0.0, abs=1e-12)


def test_cayley_menger_regular_tetrahedron():
    dm = euclid.DistanceMatrix(1.0 - np.eye(4))
    assert euclid.cayley_menger_volume(dm) == pytest.approx(np.sqrt(2) / 12, abs=1e-12)


def test_cayley_menger_violating_triangle_inequality():
    dm = euclid.DistanceMatrix([[0, 1, 3], [1, 0, 1], [3, 1, 0]])
    with pytest.raises(NotRealizable):
        euclid.cayley_menger_volume(dm)


def test_cayley_menger_matches_coordinates(rng):
    for n in range(1, 6):
        P = random_simplex(rng, n)
        dm = euclid.DistanceMatrix.from_points(P)
        assert euclid.cayley_menger_volume(dm) == pytest.approx(float(euclid.simplex_volume(P)), rel=1e-9)


# ----------------------------------------------------------- schoenberg
def test_schoenberg_right_isoceles():
    dm = euclid.DistanceMatrix([[0, 1, 1], [1, 0, np.sqrt(2)], [1, np.sqrt(2), 0]])
    res = euclid.schoenberg_check(dm)
    assert res.realizable
    np.testing.assert_allclose(euclid.gram_from_distances(dm.d), np.eye(2), atol=1e-15)


def test_schoenberg_collinear():
    res = euclid.schoenberg_check(euclid.DistanceMatrix([[0, 1, 2], [1, 0, 1], [2, 1, 0]]))
    assert not res.realizable
    assert res.min_eigenvalue == pytest.approx(0.0, abs=1e-12)
    with pytest.raises(NotRealizable):
        euclid.embed_simplex(euclid.DistanceMatrix([[0, 1, 2], [1, 0, 1], [2, 1, 0]]))


def test_schoenberg_random_points_in_4_space(rng):
    P = rng.standard_normal((5, 4))
    dm = euclid.DistanceMatrix.from_points(P)
    assert euclid.schoenberg_check(dm).realizable
    s = euclid.embed_simplex(dm)
    np.testing.assert_allclose(s.distance_matrix().d, dm.d, atol=1e-10 * dm.scale)


@pytest.mark.parametrize("n", [2, 3, 4, 5])
def test_embed_round_trip(n):
    rng = np.random.default_rng(100 + n)
    for _ in range(25):
        dm = euclid.DistanceMatrix.from_points(random_simplex(rng, n, n + 1))
        s = euclid.embed_simplex(dm)
        np.testing.assert_allclose(s.distance_matrix().d, dm.d, rtol=0, atol=1e-10 * dm.scale)
        assert np.all(s.vertices[0] == 0)
        L = s.vertices[1:]
        assert np.allclose(np.triu(L, 1), 0) and np.all(np.diag(L) > 0)


# ------------------------------------------------------------ embedding
def test_embed_equilateral_canonical():
    s = euclid.embed_simplex(euclid.DistanceMatrix(1.0 - np.eye(3)))
    np.testing.assert_allclose(s.vertices, [[0, 0], [1, 0], [0.5, np.sqrt(3) / 2]], atol=1e-15)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5])
def test_regular_simplex_thickness(n):
    s = euclid.EmbeddedSimplex(regular_simplex(n))
    assert s.thickness == pytest.approx(1 / np.sqrt(2 * n * (n + 1)), rel=1e-12)
    assert euclid.thickness_bound(n) == pytest.approx(1 / np.sqrt(2 * n * (n + 1)))
    assert s.openness == pytest.approx(euclid.regular_volume(n), rel=1e-12)


def test_near_degenerate_sliver():
    dm = euclid.DistanceMatrix([[0, 1, 1], [1, 0, 1.999], [1, 1.999, 0]])
    res = euclid.schoenberg_check(dm)
    assert res.realizable and res.min_eigenvalue < 1e-2
    assert euclid.embed_simplex(dm).thickness < 0.03


# ------------------------------------------------------------ quality
def test_inradius_equilateral():
    s = euclid.EmbeddedSimplex(regular_simplex(2))
    assert s.inradius == pytest.approx(1 / (2 * np.sqrt(3)), rel=1e-12)


def test_inradius_right_triangle_centroid_distances():
    s = euclid.EmbeddedSimplex([[0, 0], [1, 0], [0, 1]])
    c = np.array([1 / 3, 1 / 3])
    # distances from the centroid to the legs and to the hypotenuse x + y = 1
    expected = min(c[0], c[1], abs(c.sum() - 1) / np.sqrt(2))
    assert s.inradius == pytest.approx(expected, rel=1e-12)


def test_regular_triangle_thickness_openness():
    s = euclid.EmbeddedSimplex(regular_simplex(2))
    assert s.thickness == pytest.approx(1 / np.sqrt(12), rel=1e-12)
    assert s.openness == pytest.approx(np.sqrt(3) / 4, rel=1e-12)


@given(st.floats(0.01, 100.0))
def test_thickness_openness_scale_invariant(lam):
    P = np.array([[0.0, 0.0], [1.0, 0.2], [0.3, 0.9]])
    a = euclid.EmbeddedSimplex(P)
    b = euclid.EmbeddedSimplex(lam * P)
    assert b.thickness == pytest.approx(a.thickness, rel=1e-10)
    assert b.openness == pytest.approx(a.openness, rel=1e-10)


def test_degenerate_quality_raises():
    s = euclid.EmbeddedSimplex([[0, 0], [1, 0], [2, 0]])
    assert s.is_degenerate
    with pytest.raises(Degenerate):
        euclid.openness(s)
    with pytest.raises(Degenerate):
        euclid.inradius(s)


def test_sliver_satisfies_openness_sandwich():
    s = euclid.embed_simplex(euclid.DistanceMatrix([[0, 1, 1], [1, 0, 1.99], [1, 1.99, 0]]))
    lo, hi = euclid.openness_bounds(2, s.openness)
    assert lo <= s.thickness <= hi


@pytest.mark.parametrize("n", [2, 3, 4])
def test_openness_sandwich_random_and_regular(n):
    rng = np.random.default_rng(n)
    for _ in range(30):
        s = euclid.EmbeddedSimplex(random_simplex(rng, n))
        lo, hi = euclid.openness_bounds(n, s.openness)
        assert lo * (1 - 1e-12) <= s.thickness <= hi * (1 + 1e-12)
    reg = euclid.EmbeddedSimplex(regular_simplex(n))
    lo, _ = euclid.openness_bounds(n, reg.openness)
    assert reg.thickness == pytest.approx(lo, abs=1e-9)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_thickness_bound_strict_off_regular(n):
    rng = np.random.default_rng(7 * n)
    R = regular_simplex(n)
    bound = euclid.thickness_bound(n)
    for _ in range(20):
        s = euclid.EmbeddedSimplex(R + 0.05 * rng.standard_normal(R.shape))
        assert s.thickness < bound


def test_inradius_lower_bounds_edge_combinations(rng):
    for n in (2, 3, 4):
        P = random_simplex(rng, n)
        s = euclid.EmbeddedSimplex(P)
        U = P[1:] - P[0]
        u = rng.standard_normal((100, n))
        lhs = s.inradius * np.linalg.norm(u, axis=1)
        rhs = np.linalg.norm(u @ U, axis=1)
        assert np.all(lhs <= rhs * (1 + 1e-12))


# ------------------------------------------------------------ dihedrals
def test_dihedral_regular_tetrahedron():
    s = euclid.EmbeddedSimplex(regular_simplex(3))
    for pair in [(0, 1), (0, 3), (2, 3)]:
        assert euclid.dihedral_angle(s, pair) == pytest.approx(np.arccos(1 / 3), abs=1e-12)


def test_dihedral_triangle_is_interior_angle():
    s = euclid.EmbeddedSimplex(regular_simplex(2))
    # the bone opposite (1, 2) is vertex 0
    assert euclid.dihedral_angle(s, (1, 2)) == pytest.approx(np.pi / 3, abs=1e-12)


def test_dihedral_orthoscheme_right_angles():
    s = euclid.EmbeddedSimplex([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]])
    # facets opposite vertices 1, 2, 3 are coordinate planes meeting at right angles
    for pair in [(1, 2), (1, 3), (2, 3)]:
        assert euclid.dihedral_angle(s, pair) == pytest.approx(np.pi / 2, abs=1e-12)


def test_dihedral_bad_pair():
    s = euclid.EmbeddedSimplex(regular_simplex(3))
    with pytest.raises(ValidationError):
        euclid.dihedral_angle(s, (1, 1))


def test_planar_triangulation_angles_sum_to_2pi(rng):
    # fan of random triangles around the origin
    k = 7
    ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    while np.max(np.diff(np.r_[ang, ang[0] + 2 * np.pi])) >= np.pi * 0.9:
        ang = np.sort(rng.uniform(0, 2 * np.pi, k))
    rad = rng.uniform(0.5, 2.0, k)
    ring = np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    total = 0.0
    for i in range(k):
        tri = euclid.EmbeddedSimplex([[0, 0], ring[i], ring[(i + 1) % k]])
        total += euclid.dihedral_angle(tri, (1, 2))
    assert total == pytest.approx(2 * np.pi, abs=1e-9)


# ------------------------------------------------------------ unfolding
def test_unfold_rhombus():
    a = euclid.EmbeddedSimplex(regular_simplex(2))
    b = euclid.DistanceMatrix(1.0 - np.eye(3))
    u = euclid.unfold_adjacent(a, b, [(1, 0), (2, 1)])
    np.testing.assert_allclose(u.vertices[:2], a.vertices[1:], atol=1e-15)
    # the apex is the reflection of a's vertex 0 across the shared edge
    np.testing.assert_allclose(u.vertices[2], a.vertices[1] + a.vertices[2] - a.vertices[0], atol=1e-12)


def _unfold_fan(angles):
    """Unfold isoceles triangles with unit legs around the apex; return final edge direction."""
    first = None
    cur = None
    for k, th in enumerate(angles):
        base = 2 * np.sin(th / 2)
        dm = euclid.DistanceMatrix([[0, 1, 1], [1, 0, base], [1, base, 0]])
        if cur is None:
            cur = euclid.embed_simplex(dm)
            first = cur.vertices[1] - cur.vertices[0]
        else:
            # share apex and the previous far edge: (apex, far vertex) -> (apex, near vertex)
            cur = euclid.unfold_adjacent(cur, dm, [(0, 0), (2, 1)])
    return first, cur.vertices[2] - cur.vertices[0]


def test_unfold_flat_vertex_closes():
    first, last = _unfold_fan([np.pi / 2] * 4)
    np.testing.assert_allclose(last, first, atol=1e-12)


def test_unfold_octahedron_vertex_rotation():
    first, last = _unfold_fan([np.pi / 3] * 4)
    ang = np.arctan2(first[0] * last[1] - first[1] * last[0], first @ last)
    assert abs(ang) == pytest.approx(2 * np.pi / 3, abs=1e-12)


def test_unfold_mismatch_raises():
    a = euclid.EmbeddedSimplex(regular_simplex(2))
    b = euclid.DistanceMatrix([[0, 1.1, 1], [1.1, 0, 1], [1, 1, 0]])
    with pytest.raises(FacetMismatch):
        euclid.unfold_adjacent(a, b, [(1, 0), (2, 1)])


@given(arrays(np.float64, (2, 4, 3), elements=st.floats(-1, 1)))
def test_unfold_isometry_property(noise):
    base = regular_simplex(3)
    A = base + 0.15 * noise[0]
    a = euclid.EmbeddedSimplex(A)
    # b shares face (1, 2, 3) of a; its own vertex 3 is the new apex
    B = np.vstack([A[1:], A[0] + 0.15 * noise[1, 0] + 2 * (A[1:].mean(0) - A[0])])
    bs = euclid.EmbeddedSimplex(B)
    if a.thickness < 0.05 or bs.thickness < 0.05:
        return
    dm = euclid.DistanceMatrix.from_points(B)
    u = euclid.unfold_adjacent(a, dm, [(1, 0), (2, 1), (3, 2)])
    np.testing.assert_allclose(u.distance_matrix().d, dm.d, atol=1e-9)
    np.testing.assert_allclose(u.vertices[:3], A[1:], atol=1e-12)
    # opposite side of the shared plane from a's vertex 0
    nrm = np.cross(A[2] - A[1], A[3] - A[1])
    assert np.sign(nrm @ (u.vertices[3] - A[1])) == -np.sign(nrm @ (A[0] - A[1]))
