"""Smooth-side holonomy of parametrised squares.

Paths inside a square are straight segments in parameter space; the
notation follows the square (s, t): gamma_t runs along s at height t,
delta_s runs along t at abscissa s. A(r, t) goes up the left side to height
t and then along gamma_t to r; B(r, t) goes along the bottom, up the right
side and back along gamma_t to r.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import barycentric
from .errors import OutOfConvexBall, ValidationError
from .manifold import ChartManifold, Curve, FrameMap
from .regge import ParamSquare, SkewMap, locator, trace_curve, transport_matrix

FD_STEP = 1e-4


class SegmentPath:
    """Batch of straight parameter segments a -> b mapped through a square.

    Duck-types the Curve interface used by ChartManifold.transport.
    """

    def __init__(self, square: ParamSquare, a, b):
        self.square = square
        self.a = np.atleast_2d(np.asarray(a, dtype=float))
        self.b = np.atleast_2d(np.asarray(b, dtype=float))
        self.a, self.b = np.broadcast_arrays(self.a, self.b)
        self.d = self.b - self.a

    @property
    def batch(self):
        return len(self.a)

    def _st(self, t, idx):
        if idx is None:
            idx = np.arange(self.batch)
        t = np.broadcast_to(np.asarray(t, dtype=float), np.shape(idx))
        st = self.a[idx] + t[:, None] * self.d[idx]
        return st, idx

    def points_at(self, t, idx=None):
        st, _ = self._st(t, idx)
        return self.square(st[:, 0], st[:, 1])

    def velocities_at(self, t, idx=None):
        st, idx = self._st(t, idx)
        ds, dt = self.square.partials(st[:, 0], st[:, 1])
        return ds * self.d[idx, 0:1] + dt * self.d[idx, 1:2]


def _transport(m: ChartManifold, square, a, b, W=None, u_eval=None):
    path = SegmentPath(square, a, b)
    if W is None:
        W = np.broadcast_to(np.eye(m.dim), (path.batch, m.dim, m.dim))
    return m.transport(path, W, u_eval=u_eval)


def _compose(*mats):
    """mats in path order; returns the transport of the concatenation."""
    out = mats[0]
    for M in mats[1:]:
        out = M @ out
    return out


# ------------------------------------------------------------------ squares
def riemannian_square(m: ChartManifold, x, u, v, r: float, perturb: float = 0.0, seed: int = 0,
                      nodes: int = 21) -> ParamSquare:
    """G(s, t) = exp_x(r (s u + t v)) for a g-orthonormal pair (u, v).

    perturb > 0 adds eps * sin(pi s) sin(pi t) * w with a seeded unit chart
    vector w, which keeps the boundary and makes the square generic.
    """
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    g = m.metric(x)
    gram = np.array([[u @ g @ u, u @ g @ v], [v @ g @ u, v @ g @ v]])
    if np.max(np.abs(gram - np.eye(2))) > 1e-8:
        raise ValidationError("(u, v) must be g-orthonormal at x")
    if r * np.sqrt(2.0) >= m.convexity_radius:
        raise OutOfConvexBall(f"square side {r} too large for convexity radius {m.convexity_radius}")
    w = np.zeros(m.dim)
    if perturb:
        w = np.random.default_rng(seed).standard_normal(m.dim)
        w = perturb * w / np.linalg.norm(w)

    def fn(S, T):
        V = r * (S[..., None] * u + T[..., None] * v)
        P = m.exp(np.broadcast_to(x, V.shape), V)
        return P + (np.sin(np.pi * S) * np.sin(np.pi * T))[..., None] * w

    return ParamSquare.chebyshev(m, fn, nodes, label=f"riemannian(r={r:g})")


def coordinate_frame(m: ChartManifold, x, angle: float = 0.0):
    """g-orthonormal pair at x from Gram-Schmidt on the first two chart axes, rotated by angle."""
    x = np.asarray(x, dtype=float)
    g = m.metric(x)
    e1 = np.eye(m.dim)[0]
    e1 = e1 / np.sqrt(e1 @ g @ e1)
    e2 = np.eye(m.dim)[1]
    e2 = e2 - (e2 @ g @ e1) * e1
    e2 = e2 / np.sqrt(e2 @ g @ e2)
    c, s = np.cos(angle), np.sin(angle)
    return c * e1 + s * e2, -s * e1 + c * e2


def random_squares(m: ChartManifold, count: int, r: float, seed: int, box=None,
                   perturb: float = 0.0) -> list[ParamSquare]:
    """Seeded Riemannian squares with base points in a chart box and random in-plane frames.

    For n > 2 the plane is the span of two random g-orthonormal vectors.
    """
    rng = np.random.default_rng(seed)
    lo, hi = (m.lower, m.upper) if box is None else (np.asarray(box[0], float), np.asarray(box[1], float))
    out = []
    for i in range(count):
        x = lo + (hi - lo) * rng.random(m.dim)
        if m.dim == 2:
            u, v = coordinate_frame(m, x, rng.uniform(0, 2 * np.pi))
        else:
            g = m.metric(x)
            A = rng.standard_normal((m.dim, 2))
            u = A[:, 0] / np.sqrt(A[:, 0] @ g @ A[:, 0])
            v = A[:, 1] - (A[:, 1] @ g @ u) * u
            v = v / np.sqrt(v @ g @ v)
        out.append(riemannian_square(m, x, u, v, r, perturb=perturb, seed=seed + i))
    return out


def octant_square(m, rotation=None) -> ParamSquare:
    """Unit-sphere octant as a square: bottom on one edge, top collapsed to the far vertex.

    rotation is a 3x3 matrix applied to the octant with vertices e1, e2, e3
    (default: the rotation taking the octant centre to the equator, which
    keeps it at least 35 degrees from both chart poles).
    """
    if rotation is None:
        from scipy.spatial.transform import Rotation
        rot, _ = Rotation.align_vectors([[1.0, 0.0, 0.0]], [np.ones(3) / np.sqrt(3.0)])
        rotation = rot.as_matrix()
    Rm = np.asarray(rotation, dtype=float)
    A, B, C = Rm.T

    def slerp(p, q, w):
        ang = np.arccos(np.clip(np.sum(p * q, -1), -1, 1))[..., None]
        return (np.sin((1 - w[..., None]) * ang) * p + np.sin(w[..., None] * ang) * q) / np.sin(ang)

    def fn(S, T):
        E = slerp(np.broadcast_to(A, S.shape + (3,)), np.broadcast_to(B, S.shape + (3,)), S)
        X = slerp(E, np.broadcast_to(C, S.shape + (3,)), T) * m.R
        ch = m.to_chart(X)
        return m.lift(m.to_chart(A * m.R), ch)

    return ParamSquare.chebyshev(m, fn, 25, label="octant")


@dataclass
class SquareGrid:
    """Gauss-Legendre grid on a square with transports along the A and B paths.

    PA[i, j] and PB[i, j] are the transports from G(0,0) to G(r_i, t_j).
    """

    square: ParamSquare
    nodes: np.ndarray
    weights: np.ndarray
    points: np.ndarray
    ds: np.ndarray
    dt: np.ndarray
    PA: np.ndarray
    PB: np.ndarray

    @classmethod
    def build(cls, m: ChartManifold, square: ParamSquare, N: int) -> "SquareGrid":
        q, w = np.polynomial.legendre.leggauss(N)
        q = 0.5 * (q + 1.0)
        w = 0.5 * w
        R, T = np.meshgrid(q, q, indexing="ij")
        pts = square(R, T)
        ds, dt = square.partials(R, T)
        # A: left side to t_j, then along t = t_j to r_i
        left = _transport(m, square, [0.0, 0.0], [0.0, 1.0], u_eval=q)[:, 0]      # (N, n, n) over t_j
        along = _transport(m, square, np.stack([np.zeros(N), q], 1), np.stack([np.ones(N), q], 1),
                           W=left, u_eval=q)                                        # (N_r, N_t, n, n)
        PA = along
        # B: bottom, right side to t_j, then back along t = t_j to r_i
        bottom = _transport(m, square, [0.0, 0.0], [1.0, 0.0])
        right = _transport(m, square, [1.0, 0.0], [1.0, 1.0], W=bottom, u_eval=q)[:, 0]
        back = _transport(m, square, np.stack([np.ones(N), q], 1), np.stack([np.zeros(N), q], 1),
                          W=right, u_eval=(1.0 - q)[::-1])[::-1]
        PB = back
        return cls(square, q, w, pts, ds, dt, PA, PB)


# -------------------------------------------------------------- operations
def loop_transport(m: ChartManifold, square: ParamSquare, height: float = 1.0) -> FrameMap:
    """Transport around the boundary of [0,1] x [0,height]: bottom, right, top, left."""
    c = [(0.0, 0.0), (1.0, 0.0), (1.0, height), (0.0, height)]
    a = np.array(c)
    b = np.array(c[1:] + c[:1])
    P = _transport(m, square, a, b)
    x = square.base
    return FrameMap(x, x, _compose(*P))


def _loop_transports(m: ChartManifold, square: ParamSquare, heights) -> np.ndarray:
    """Loop transports of the rectangles [0,1] x [0,h] for many heights h (batched)."""
    h = np.asarray(heights, dtype=float)
    order = np.argsort(h)
    hs = h[order]
    bottom = _transport(m, square, [0.0, 0.0], [1.0, 0.0])
    right = _transport(m, square, [1.0, 0.0], [1.0, 1.0], W=bottom, u_eval=hs)[:, 0]
    K = len(hs)
    top = _transport(m, square, np.stack([np.ones(K), hs], 1), np.stack([np.zeros(K), hs], 1), W=right)
    left = _transport(m, square, np.stack([np.zeros(K), hs], 1), np.zeros((K, 2)), W=top)
    out = np.empty_like(left)
    out[order] = left
    return out


def _skew_part(m: ChartManifold, x, L):
    """Antisymmetrize L with respect to g_x."""
    g = m.metric(x)
    return 0.5 * (L - np.linalg.solve(g, L.T @ g))


def _refine(compute, N0: int, rtol: float, N_max: int):
    N = N0
    prev = compute(N)
    while True:
        N2 = 2 * N
        cur = compute(N2)
        scale = max(float(np.max(np.abs(cur))), 1e-300)
        if float(np.max(np.abs(cur - prev))) <= rtol * scale or N2 >= N_max:
            return cur, N2
        N, prev = N2, cur


def curvature_double_integral(m: ChartManifold, square: ParamSquare, N: int = 8, rtol: float = 1e-5,
                              N_max: int = 64) -> np.ndarray:
    """Integral over the square of P_B^{-1} R(dG/ds, dG/dt) P_A, refined until stable."""

    def compute(k):
        grid = SquareGrid.build(m, square, k)
        Rg = m.curvature_operator(grid.points, grid.ds, grid.dt)
        f = np.linalg.solve(grid.PB, Rg @ grid.PA)
        return np.einsum("i,j,ijab->ab", grid.weights, grid.weights, f)

    if m.flat:
        return np.zeros((m.dim, m.dim))
    val, _ = _refine(compute, N, rtol, N_max)
    return val


def loop_identity_residual(m: ChartManifold, square: ParamSquare, **kw) -> float:
    """Operator norm of P_loop^{-1} - I minus the curvature double integral."""
    P = loop_transport(m, square).matrix
    D = curvature_double_integral(m, square, **kw)
    x = square.base
    return m.operator_norm(x, x, np.linalg.inv(P) - np.eye(m.dim) - D)


def gauss_curving(m: ChartManifold, square: ParamSquare, N: int = 8, rtol: float = 1e-5,
                  N_max: int = 64) -> SkewMap:
    """Integral of P_A^{-1} R^G P_A against the induced area, as a skew map at G(0,0)."""
    x = square.base
    if m.flat:
        return SkewMap(x, np.zeros((m.dim, m.dim)), m.metric(x))

    def compute(k):
        grid = SquareGrid.build(m, square, k)
        Rg = m.curvature_operator(grid.points, grid.ds, grid.dt)
        f = np.linalg.solve(grid.PA, Rg @ grid.PA)
        return np.einsum("i,j,ijab->ab", grid.weights, grid.weights, f)

    val, _ = _refine(compute, N, rtol, N_max)
    return SkewMap(x, _skew_part(m, x, val), m.metric(x))


def oriented_frame(m: ChartManifold, square: ParamSquare):
    """g-orthonormal (e1, e2) at the base point, oriented like (dG/ds, dG/dt)."""
    x = square.base
    ds, dt = square.partials(0.0, 0.0)
    g = m.metric(x)
    e1 = ds / np.sqrt(ds @ g @ ds)
    e2 = dt - (dt @ g @ e1) * e1
    e2 = e2 / np.sqrt(e2 @ g @ e2)
    return e1, e2


@dataclass(frozen=True)
class GeneralizedAngle:
    matrix: np.ndarray
    angle: float | None


def generalized_angle(m: ChartManifold, square: ParamSquare, N: int = 16, h: float = FD_STEP,
                      rtol: float = 1e-6, N_max: int = 128) -> GeneralizedAngle:
    """Integral over t of P_{Gamma_t} d/dt(P_{Gamma_t}^{-1}), Gamma_t the loop of [0,1] x [0,t].

    The t-derivative is a central difference of loop transports. For n = 2
    the scalar angle <L e1, e2> in an oriented g-orthonormal frame is also
    returned.
    """
    if m.dim < 2:
        raise ValidationError("generalized angle needs n >= 2")
    x = square.base

    def compute(k):
        q, w = np.polynomial.legendre.leggauss(k)
        q = 0.5 * (q + 1.0)
        w = 0.5 * w
        hh = min(h, 0.5 * float(q[0]))
        P = _loop_transports(m, square, np.concatenate([q, q + hh, q - hh]))
        P0, Pp, Pm = P[:k], P[k:2 * k], P[2 * k:]
        dinv = (np.linalg.inv(Pp) - np.linalg.inv(Pm)) / (2 * hh)
        return np.einsum("k,kab->ab", w, P0 @ dinv)

    if m.flat:
        L = np.zeros((m.dim, m.dim))
    else:
        L, _ = _refine(compute, N, rtol, N_max)
        L = _skew_part(m, x, L)
    angle = None
    if m.dim == 2:
        e1, e2 = oriented_frame(m, square)
        angle = float(e2 @ m.metric(x) @ L @ e1)
    return GeneralizedAngle(L, angle)


def gauss_area_integral(m: ChartManifold, square: ParamSquare, N: int = 32) -> float:
    """Integral of the Gauss curvature over the square (n = 2) against the induced area."""
    if m.dim != 2:
        raise ValidationError("Gauss curvature integral is for surfaces")
    q, w = np.polynomial.legendre.leggauss(N)
    q = 0.5 * (q + 1.0)
    w = 0.5 * w
    R, T = np.meshgrid(q, q, indexing="ij")
    pts = square(R, T)
    ds, dt = square.partials(R, T)
    g = m.metric(m.wrap(pts))
    area = np.sqrt(np.abs(np.einsum("...i,...ij,...j->...", ds, g, ds) * np.einsum("...i,...ij,...j->...", dt, g, dt)
                          - np.einsum("...i,...ij,...j->...", ds, g, dt) ** 2))
    K = 0.5 * m.scalar_curvature(m.wrap(pts))
    return float(np.einsum("i,j,ij->", w, w, K * area))


def rotation_angle(m: ChartManifold, x, M, e1, e2) -> float:
    """Angle of a 2-dimensional rotation M of T_x M in the oriented frame (e1, e2)."""
    g = m.metric(x)
    Me1 = M @ e1
    return float(np.arctan2(e2 @ g @ Me1, e1 @ g @ Me1))


# ---------------------------------------------------- smooth vs polyhedral
@dataclass(frozen=True)
class TransportComparison:
    smooth: FrameMap
    polyhedral: FrameMap
    gap: float
    crossings: int


def chart_differential(poly, f: int, x, margin: float = 1e-3):
    """dT: embedded frame of simplex f -> chart components, at chart point x inside f."""
    m = poly.manifold
    loc = locator(poly)
    lam = loc.lam(np.array([f]), m.wrap(np.asarray(x, dtype=float))[None])[0]
    lam = np.maximum(lam, margin)
    lam = lam / lam.sum()
    P = poly.facet_chart(f)
    _, dT = barycentric.differential(m, P, poly.facet_frames[f], lam)
    return dT


def _curve_fn(curve):
    if isinstance(curve, Curve):
        return lambda s: curve.points_at(np.asarray(s, dtype=float), np.zeros(np.size(s), dtype=int))
    return curve


def compare_transport(m: ChartManifold, poly, curve) -> TransportComparison:
    """Smooth transport along a chart curve against the unfolded polyhedral one.

    The polyhedral map is pushed to chart components with the differential
    of the barycentric placement at both end points.
    """
    if not isinstance(curve, Curve):
        fn = curve
        curve = Curve.from_function(lambda u: np.asarray(fn(u))[None], samples=129)
    smooth = m.parallel_transport(curve)
    path = trace_curve(poly, _curve_fn(curve))
    T0 = transport_matrix(poly, path.facets, path.faces)
    x0 = curve.start[0]
    x1 = curve.end[0]
    if path.nudge is not None:
        x0 = x0 + path.nudge
        x1 = x1 + path.nudge
    d0 = chart_differential(poly, int(path.facets[0]), x0)
    d1 = chart_differential(poly, int(path.facets[-1]), x1)
    Mp = d1 @ T0 @ np.linalg.inv(d0)
    poly_map = FrameMap(x0, x1, Mp)
    gap = m.operator_norm(curve.start[0], curve.end[0], smooth.matrix - Mp)
    return TransportComparison(smooth, poly_map, gap, len(path.facets))


def seeded_geodesics(m: ChartManifold, count: int, length: float, seed: int, box=None):
    """Reproducible geodesic curves with start points in a chart box (default: domain)."""
    rng = np.random.default_rng(seed)
    lo, hi = (m.lower, m.upper) if box is None else (np.asarray(box[0], float), np.asarray(box[1], float))
    x = lo + (hi - lo) * rng.random((count, m.dim))
    d = rng.standard_normal((count, m.dim))
    g = m.metric(x)
    d = d / np.sqrt(np.einsum("bi,bij,bj->b", d, g, d))[:, None]
    return [Curve.geodesic(m, x[i], length * d[i]) for i in range(count)]


def curving_gap(m: ChartManifold, poly, square: ParamSquare, gauss: SkewMap | None = None) -> float:
    """Operator-norm distance between the Regge curving (pushed to the chart) and the Gauss curving."""
    from .regge import regge_curving

    if gauss is None:
        gauss = gauss_curving(m, square)
    rc = regge_curving(poly, square)
    x = square.base
    dT = chart_differential(poly, int(rc.base), x)
    L = dT @ rc.matrix @ np.linalg.inv(dT)
    return m.operator_norm(x, x, L - gauss.matrix)
