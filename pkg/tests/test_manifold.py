import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from reggelab import manifold as mf
from reggelab.errors import LeftDomain, OutOfDomain, ValidationError
from reggelab.harness.catalog import catalog, round_sphere
from reggelab.manifold import ChartManifold, Curve


def band_point(rng, k=None):
    """Sphere chart points away from the poles."""
    shape = () if k is None else (k,)
    return np.stack([rng.uniform(1.1, np.pi - 1.1, shape), rng.uniform(0, 2 * np.pi, shape)], -1)


# ------------------------------------------------------------ construction
def test_chart_rejects_bad_box():
    with pytest.raises(ValidationError):
        ChartManifold(2, lambda x: np.eye(2), [0, 0], [0, 1])
    with pytest.raises(ValidationError):
        ChartManifold(2, lambda x: np.eye(2), [0], [1])


def test_metric_positive_definite_on_grids(sphere, bump, torus3):
    for m in (sphere, bump, torus3):
        t = np.linspace(0.05, 0.95, 7)
        grid = np.stack(np.meshgrid(*[t] * m.dim, indexing="ij"), -1).reshape(-1, m.dim)
        x = m.lower + grid * (m.upper - m.lower)
        g = m.metric(x)
        np.testing.assert_allclose(g, np.swapaxes(g, -1, -2), atol=0)
        assert np.all(np.linalg.eigvalsh(g)[:, 0] > 0)


# ------------------------------------------------------------ christoffel
def test_flat_christoffel_zero(flat2):
    assert np.all(mf.christoffel_at(flat2, [1.0, 2.0]) == 0)


def test_sphere_christoffel_closed_form(sphere):
    x = np.array([1.0, 0.5])
    G = mf.christoffel_at(sphere, x)
    assert G[0, 1, 1] == pytest.approx(-np.sin(1.0) * np.cos(1.0), abs=1e-14)
    np.testing.assert_allclose(sphere.christoffel_fd(x), G, atol=1e-7)


def test_conformal_christoffel_closed_form(torus3):
    rng = np.random.default_rng(3)
    x = rng.uniform(0.5, 5.5, (5, 3))
    G = torus3.christoffel(x)
    np.testing.assert_allclose(G, np.swapaxes(G, -1, -2), atol=0)
    np.testing.assert_allclose(torus3.christoffel_fd(x), G, atol=1e-7)
    # e^{2 phi} delta: Gamma^i_jk = d_j phi delta_ik + d_k phi delta_ij - d_i phi delta_jk
    a = torus3.params["a"]
    dphi = np.zeros((5, 3))
    dphi[:, 0] = -a * np.sin(x[:, 0])
    I = np.eye(3)
    ref = (np.einsum("bj,ik->bijk", dphi, I) + np.einsum("bk,ij->bijk", dphi, I)
           - np.einsum("bi,jk->bijk", dphi, I))
    np.testing.assert_allclose(G, ref, atol=1e-12)


def test_christoffel_out_of_domain(sphere):
    with pytest.raises(OutOfDomain):
        mf.christoffel_at(sphere, [0.0, 1.0])


# ------------------------------------------------------------------- exp
def test_flat_exp(flat2):
    x = np.array([0.3, 0.4])
    v = np.array([0.2, -0.1])
    np.testing.assert_allclose(mf.exp_map(flat2, x, v), x + v, atol=1e-12)


@pytest.mark.parametrize("closed_form", [True, False])
def test_sphere_exp_great_circles(closed_form):
    m = round_sphere(closed_form=closed_form)
    x = np.array([np.pi / 2, 1.0])
    # along the equator by a quarter turn
    np.testing.assert_allclose(m.exp(x, [0.0, np.pi / 2]), [np.pi / 2, 1.0 + np.pi / 2], atol=1e-9)
    # north along a meridian (the pole itself lies outside the chart)
    np.testing.assert_allclose(m.exp(x, [-1.2, 0.0]), [np.pi / 2 - 1.2, 1.0], atol=1e-9)
    y = m.exp(x, [-1.2, 0.0])
    assert m.distance(x, y) == pytest.approx(1.2, abs=1e-9)


def test_sphere_exp_leaves_chart():
    m = round_sphere(closed_form=False)
    with pytest.raises(LeftDomain):
        m.exp(np.array([np.pi / 2, 1.0]), np.array([-np.pi / 2, 0.0]))


@pytest.mark.parametrize("name", ["round_sphere", "bump_torus2", "conformal_torus3"])
def test_exp_semigroup(name):
    m = catalog(name, {"closed_form": False} if name == "round_sphere" else {})
    rng = np.random.default_rng(5)
    x = band_point(rng) if name == "round_sphere" else rng.uniform(0, 6, m.dim)
    v = rng.standard_normal(m.dim)
    v *= 0.8 / m.norm(x, v)
    y, w = m.exp(x, 0.5 * v, return_velocity=True)
    z = m.exp(y, w)
    np.testing.assert_allclose(z, m.exp(x, v), atol=1e-9)


def test_geodesic_constant_speed(bump):
    x = np.array([[0.3, -0.7]])
    v = np.array([[0.5, 0.4]])
    t = np.linspace(0, 1, 17)
    pts, vel, _ = bump.geodesic(x, v, t_eval=t)
    speed = bump.norm(pts[:, 0], vel[:, 0])
    np.testing.assert_allclose(speed, speed[0], rtol=1e-8)


# ------------------------------------------------------------------- log
def test_flat_log(flat2):
    lv = mf.log_map(flat2, [0.1, 0.2], [0.5, -0.3])
    np.testing.assert_allclose(lv.components, [0.4, -0.5], atol=1e-12)


def test_sphere_log_quarter_circle(sphere):
    x = np.array([np.pi / 2, 0.0])
    y = np.array([np.pi / 2, np.pi / 2])
    v = mf.log_map(sphere, x, y).components
    assert sphere.norm(x, v) == pytest.approx(np.pi / 2, abs=1e-10)


@pytest.mark.parametrize("name", ["round_sphere", "bump_torus2", "conformal_torus3"])
def test_exp_log_round_trip(name):
    m = catalog(name, {"closed_form": False} if name == "round_sphere" else {})
    rng = np.random.default_rng(17)
    count = 200 if m.dim == 2 else 60
    x = band_point(rng, count) if name == "round_sphere" else rng.uniform(-3, 3, (count, m.dim))
    v = rng.standard_normal((count, m.dim))
    r = 0.9 * m.convexity_radius * rng.random(count)
    v *= (r / m.norm(x, v))[:, None]
    y = m.exp(x, v)
    w = m.log(x, y)
    np.testing.assert_allclose(m.exp(x, w), y, atol=1e-8)
    np.testing.assert_allclose(m.distance(x, y), m.norm(x, w), rtol=1e-12)


def test_gradient_of_half_squared_distance(bump):
    p = np.array([0.2, 0.1])
    q = np.array([0.6, -0.3])
    h = 1e-5
    grad = np.zeros(2)
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        grad[k] = (0.5 * bump.distance(p, q + e) ** 2 - 0.5 * bump.distance(p, q - e) ** 2) / (2 * h)
    lowered = bump.metric(q) @ bump.log(q, p)
    np.testing.assert_allclose(grad, -lowered, atol=1e-5)


# -------------------------------------------------------------- transport
def test_flat_transport_identity(flat2):
    c = Curve.segment([0.1, 0.1], [0.9, 0.5])
    np.testing.assert_allclose(mf.parallel_transport(flat2, c).matrix, np.eye(2), atol=1e-12)


@pytest.mark.parametrize("name", ["round_sphere", "bump_torus2", "conformal_torus3"])
def test_transport_isometry_and_reversal(name):
    m = catalog(name)
    rng = np.random.default_rng(2)
    x = band_point(rng) if name == "round_sphere" else rng.uniform(-2, 2, m.dim)
    fn = lambda u: x + np.outer(u, 0.6 * np.ones(m.dim)) + 0.2 * np.sin(np.pi * u)[:, None] * np.eye(m.dim)[0]
    c = Curve.from_function(fn, samples=65)
    P = m.parallel_transport(c).matrix
    g0 = m.metric(c.start[0])
    g1 = m.metric(c.end[0])
    np.testing.assert_allclose(P.T @ g1 @ P, g0, atol=1e-8)
    Q = m.parallel_transport(c.reversed()).matrix
    np.testing.assert_allclose(Q @ P, np.eye(m.dim), atol=1e-8)


def test_sphere_octant_triangle_holonomy(sphere):
    from scipy.spatial.transform import Rotation
    Rm = Rotation.align_vectors([[1.0, 0, 0]], [np.ones(3) / np.sqrt(3)])[0].as_matrix()
    A, B, C = (sphere.to_chart(v) for v in Rm.T)
    M = np.eye(2)
    for p, q in [(A, B), (B, C), (C, A)]:
        q = sphere.lift(p, q)
        c = Curve.geodesic(sphere, p, sphere.log(p, q))
        M = sphere.parallel_transport(c).matrix @ M
    g = sphere.metric(A)
    e1 = np.array([1.0, 0.0])
    e2 = np.array([0.0, 1.0 / np.sqrt(g[1, 1])])
    Me1 = M @ e1
    ang = abs(np.arctan2(e2 @ g @ Me1, e1 @ g @ Me1))
    assert ang == pytest.approx(np.pi / 2, abs=1e-4)


# -------------------------------------------------------------- curvature
def test_flat_curvature_zero(flat2):
    assert mf.scalar_curvature(flat2, [1.0, 1.0]) == 0


@pytest.mark.parametrize("R", [1.0, 2.0, 0.5])
def test_sphere_scalar_convention(R):
    m = round_sphere(R)
    x = np.array([1.2, 0.3])
    assert m.scalar_curvature(x) == pytest.approx(2 / R**2, rel=1e-12)
    assert m.scalar_curvature_fd(x) == pytest.approx(2 / R**2, rel=1e-6)


def test_conformal_scalar_closed_form(torus3):
    a = torus3.params["a"]
    x1 = np.linspace(0.1, 6.0, 13)
    x = np.column_stack([x1, np.full(13, 1.0), np.full(13, 2.0)])
    phi = a * np.cos(x1)
    lap = -a * np.cos(x1)
    grad2 = (a * np.sin(x1)) ** 2
    ref = -4 * np.exp(-2 * phi) * (lap + 0.5 * grad2)
    np.testing.assert_allclose(torus3.scalar_curvature_fd(x), ref, atol=1e-5)
    np.testing.assert_allclose(torus3.scalar_curvature(x), ref, atol=1e-12)


@pytest.mark.parametrize("name", ["bump_torus2", "conformal_torus3"])
def test_curvature_tensor_symmetries(name):
    m = catalog(name)
    R = mf.curvature_at(m, np.full(m.dim, 0.4)).lowered
    np.testing.assert_allclose(R, -np.swapaxes(R, 2, 3), atol=1e-8)
    np.testing.assert_allclose(R, -np.swapaxes(R, 0, 1), atol=1e-6)
    bianchi = R + np.einsum("ijkl->iklj", R) + np.einsum("ijkl->iljk", R)
    np.testing.assert_allclose(bianchi, 0, atol=1e-6)


# -------------------------------------------------------------- integrals
def test_integrate_scalar_sphere(sphere):
    val = mf.integrate_scalar(sphere, sphere.lower, sphere.upper)
    # cap-excluded chart: 2 * 2 pi * 2 cos(cap)
    assert val == pytest.approx(8 * np.pi * np.cos(sphere.cap), rel=1e-6)


def test_integrate_scalar_flat(flat2):
    assert mf.integrate_scalar(flat2, flat2.lower, flat2.upper) == 0


def test_integrate_scalar_bump_gauss_bonnet(bump):
    assert abs(mf.integrate_scalar(bump, bump.lower, bump.upper)) < 1e-6


# ---------------------------------------------------------- jacobi defect
def test_jacobi_defect_flat(flat2):
    assert mf.jacobi_defect(flat2, [0.5, 0.5], [1.0, 0.0], [0.0, 1.0], 0.4) < 1e-8


def test_jacobi_defect_sphere_scaling(sphere):
    x = np.array([np.pi / 2, 1.0])
    u = np.array([0.6, 0.8])
    w = np.array([-0.8, 0.6])
    s = np.array([0.4, 0.2, 0.1, 0.05])
    d = np.array([mf.jacobi_defect(sphere, x, u, w, si) for si in s])
    slope = np.polyfit(np.log(s), np.log(d), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.1)
    su = s * sphere.norm(x, u)
    bound = (2 * sphere.curvature_bound / 3 + 0.05) * su**2 * sphere.norm(x, w)
    assert np.all(d <= bound)


@given(st.floats(0.05, 0.5), st.floats(0, 2 * np.pi))
def test_jacobi_defect_bound_property(s, ang):
    m = round_sphere()
    x = np.array([1.4, 2.0])
    g = m.metric(x)
    u = np.array([np.cos(ang), np.sin(ang) / np.sqrt(g[1, 1])])
    w = np.array([-np.sin(ang), np.cos(ang) / np.sqrt(g[1, 1])])
    d = m.jacobi_defect(x, u, w, s)
    assert d <= (2 * m.curvature_bound / 3 + 0.05) * s**2
