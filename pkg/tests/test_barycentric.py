import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reggelab import barycentric as bc
from reggelab.errors import SingularSystem, ValidationError
from reggelab.euclid import thickness_bound
from reggelab.harness.catalog import flat_torus, sphere_octahedron

weights3 = st.lists(st.floats(0.0, 1.0), min_size=3, max_size=3).filter(lambda w: sum(w) > 1e-3)

SPHERE_TRI = np.array([[1.3, 2.0], [1.6, 2.4], [1.9, 1.9]])
BUMP_TRI = np.array([[0.2, 0.1], [0.8, 0.3], [0.4, 0.9]])


def normalise(w):
    w = np.asarray(w, dtype=float)
    return w / w.sum()


# ------------------------------------------------------------ weighted_min
@given(weights3)
def test_weighted_min_flat_is_affine(w):
    m = flat_torus(10.0)
    P = np.array([[1.0, 1.0], [3.0, 1.5], [2.0, 3.5]])
    lam = normalise(w)
    np.testing.assert_allclose(bc.weighted_min(m, P, lam), lam @ P, atol=1e-9)


def test_weighted_min_vertex(sphere):
    for i in range(3):
        np.testing.assert_array_equal(bc.weighted_min(sphere, SPHERE_TRI, np.eye(3)[i]), SPHERE_TRI[i])


def test_weighted_min_rejects_bad_weights(sphere):
    with pytest.raises(ValidationError):
        bc.weighted_min(sphere, SPHERE_TRI, [0.5, 0.6, -0.1])
    with pytest.raises(ValidationError):
        bc.weighted_min(sphere, SPHERE_TRI, [0.5, 0.6, 0.1])


def test_weighted_min_first_order_condition(bump):
    lam = np.array([0.2, 0.5, 0.3])
    x = bc.weighted_min(bump, BUMP_TRI, lam)
    L = bump.log(np.broadcast_to(x, BUMP_TRI.shape), BUMP_TRI)
    grad = lam @ L
    radius = np.max(bump.distance(np.broadcast_to(BUMP_TRI[0], BUMP_TRI.shape), BUMP_TRI))
    assert bump.norm(x, grad) < 1e-9 * radius


@pytest.mark.parametrize("name", ["sphere", "bump"])
def test_edges_are_geodesics(name, request):
    m = request.getfixturevalue(name)
    rng = np.random.default_rng(11)
    for _ in range(10):
        if name == "sphere":
            p0 = np.array([rng.uniform(1.2, 1.9), rng.uniform(0, 6)])
        else:
            p0 = rng.uniform(-2, 2, 2)
        v = rng.standard_normal(2)
        v *= rng.uniform(0.2, 0.9) / m.norm(p0, v)
        p1 = m.exp(p0, v)
        t = np.linspace(0, 1, 7)
        P = np.broadcast_to(np.stack([p0, p1]), (7, 2, 2))
        x = bc.weighted_min(m, P, np.column_stack([1 - t, t]))
        np.testing.assert_allclose(x, bc.geodesic_point(m, p0, p1, t), atol=1e-7)
        d = m.distance(np.broadcast_to(p0, x.shape), x)
        np.testing.assert_allclose(d, t * m.norm(p0, v), atol=1e-7)


def test_minimizer_independent_of_start(sphere):
    lam = np.array([0.3, 0.3, 0.4])
    a = bc.weighted_min(sphere, SPHERE_TRI, lam)
    b = bc.weighted_min(sphere, SPHERE_TRI, lam, x0=SPHERE_TRI[2])
    c = bc.weighted_min(sphere, SPHERE_TRI, lam, x0=SPHERE_TRI.mean(0) + 0.05)
    np.testing.assert_allclose(a, b, atol=1e-9)
    np.testing.assert_allclose(a, c, atol=1e-9)


def test_pointset_ball_choice(sphere):
    ps1 = bc.PointSet(sphere, SPHERE_TRI)
    ps2 = bc.PointSet(sphere, SPHERE_TRI, center=SPHERE_TRI.mean(0), radius=0.6)
    lam = np.array([0.1, 0.6, 0.3])
    np.testing.assert_allclose(bc.weighted_min(sphere, ps1, lam), bc.weighted_min(sphere, ps2, lam), atol=1e-9)
    with pytest.raises(ValidationError):
        bc.PointSet(sphere, SPHERE_TRI, center=SPHERE_TRI[0], radius=10.0)


def test_face_consistency(bump):
    face = BUMP_TRI[:2]
    lam = np.array([0.35, 0.65])
    a = bc.weighted_min(bump, face, lam)
    b = bc.weighted_min(bump, BUMP_TRI, np.array([0.35, 0.65, 0.0]))
    np.testing.assert_allclose(a, b, atol=1e-9)


# ------------------------------------------------------------ bary_coords
def test_bary_coords_vertex(sphere):
    for i in range(3):
        np.testing.assert_allclose(bc.bary_coords(sphere, SPHERE_TRI, SPHERE_TRI[i]), np.eye(3)[i], atol=1e-10)


def test_bary_coords_flat_affine():
    m = flat_torus(10.0)
    P = np.array([[1.0, 1.0], [3.0, 1.5], [2.0, 3.5]])
    lam = np.array([0.2, 0.3, 0.5])
    np.testing.assert_allclose(bc.bary_coords(m, P, lam @ P), lam, atol=1e-12)


@pytest.mark.parametrize("name,P", [("sphere", SPHERE_TRI), ("bump", BUMP_TRI)])
def test_bary_coords_round_trip_sweep(name, P, request):
    m = request.getfixturevalue(name)
    lam = np.random.default_rng(4).dirichlet(np.ones(3), size=50)
    x = bc.weighted_min(m, np.broadcast_to(P, (50, 3, 2)), lam)
    back = bc.bary_coords(m, np.broadcast_to(P, (50, 3, 2)), x)
    np.testing.assert_allclose(back, lam, atol=1e-7)


@settings(max_examples=15)
@given(weights3)
def test_bary_coords_inverts_weighted_min(w):
    from reggelab.harness.catalog import bump_torus2
    m = bump_torus2()
    lam = normalise(w)
    x = bc.weighted_min(m, BUMP_TRI, lam)
    back = bc.bary_coords(m, BUMP_TRI, x)
    np.testing.assert_allclose(back, lam, atol=1e-7)
    # on a face the recovered weights may be -1e-12 or so; project back
    back = normalise(np.clip(back, 0.0, None))
    np.testing.assert_allclose(bc.weighted_min(m, BUMP_TRI, back), x, atol=1e-7)


def test_bary_coords_singular(bump):
    P = np.array([[0.0, 0.0], [0.5, 0.0], [1.0, 0.0]])
    with pytest.raises(SingularSystem):
        bc.bary_coords(flat_torus(10.0), P + 1.0, np.array([1.2, 1.0]))


# ---------------------------------------------------------------- status
def test_status(bump):
    s = bc.status(bump, BUMP_TRI, BUMP_TRI[0])
    assert s[0] == 0
    m = flat_torus(10.0)
    P = np.array([[1.0, 1.0], [3.0, 1.5], [2.0, 3.5]])
    x = np.array([2.0, 2.0])
    np.testing.assert_allclose(bc.status(m, P, x), np.sum((P - x) ** 2, axis=1), atol=1e-12)


def test_status_gradient_balance_at_minimizer(bump):
    lam = np.array([0.25, 0.45, 0.3])
    x = bc.weighted_min(bump, BUMP_TRI, lam, tol=1e-12)
    h = 1e-5
    grad = np.zeros((3, 2))
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        grad[:, k] = (bc.status(bump, BUMP_TRI, x + e) - bc.status(bump, BUMP_TRI, x - e)) / (2 * h)
    np.testing.assert_allclose(lam @ grad, 0, atol=1e-6)


# ---------------------------------------------------------------- spread
@pytest.mark.parametrize("n", [2, 3])
def test_flat_regular_simplex_spread(n):
    from tests.test_euclid import regular_simplex
    m = flat_torus(10.0, n)
    P = regular_simplex(n) + 2.0
    rep = bc.is_spread(m, P)
    assert rep.spread
    assert rep.t_min == pytest.approx(thickness_bound(n), rel=1e-6)


def test_collinear_not_spread():
    m = flat_torus(10.0)
    rep = bc.is_spread(m, np.array([[1.0, 1.0], [2.0, 1.0], [3.0, 1.0]]))
    assert not rep.spread


def test_octahedron_face_spread(sphere):
    K, P = sphere_octahedron(sphere)
    face = P[K.facets[0]]
    face = sphere.lift(face[0], face)
    rep = bc.is_spread(sphere, face)
    # the minimum sits at a vertex, where the log image is a right isoceles
    # triangle with legs pi/2: inradius about the centroid / diameter = 1/6
    assert rep.spread
    assert rep.t_min == pytest.approx(1 / 6, abs=1e-9)


# -------------------------------------------------------- realize_euclidean
def test_realize_flat_congruent():
    m = flat_torus(10.0)
    P = np.array([[1.0, 1.0], [3.0, 1.5], [2.0, 3.5]])
    s = bc.realize_euclidean(m, P)
    D = np.linalg.norm(P[:, None] - P[None], axis=-1)
    np.testing.assert_allclose(s.distance_matrix().d, D, atol=1e-12)


def test_realize_octahedron_face_equilateral(sphere):
    K, P = sphere_octahedron(sphere)
    face = P[K.facets[0]]
    s = bc.realize_euclidean(sphere, sphere.lift(face[0], face))
    d = s.distance_matrix().d
    np.testing.assert_allclose(d[np.triu_indices(3, 1)], np.pi / 2, atol=1e-10)


def test_realize_bump_triangle_matches_distance(bump):
    s = bc.realize_euclidean(bump, BUMP_TRI)
    d = s.distance_matrix().d
    for i, j in [(0, 1), (0, 2), (1, 2)]:
        assert d[i, j] == pytest.approx(float(bump.distance(BUMP_TRI[i], BUMP_TRI[j])), abs=1e-8)


# ----------------------------------------------------- metric discrepancy
def test_metric_discrepancy_flat():
    m = flat_torus(10.0)
    assert bc.metric_discrepancy(m, np.array([[1.0, 1.0], [3.0, 1.5], [2.0, 3.5]])) < 1e-6


@pytest.mark.parametrize("name,x0", [("sphere", [1.3, 2.0]), ("bump", [0.4, 0.7])])
def test_metric_discrepancy_slope(name, x0, request):
    m = request.getfixturevalue(name)
    shape = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.8]])
    shape = shape / np.max(np.linalg.norm(shape[:, None] - shape[None], axis=-1))
    diam = np.array([0.4, 0.2, 0.1])
    vals = [bc.metric_discrepancy(m, np.asarray(x0) + d * shape) for d in diam]
    slope = np.polyfit(np.log(diam / 2), np.log(vals), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.2)
