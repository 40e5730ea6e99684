"""Named test manifolds and their base complexes."""
from __future__ import annotations

import numpy as np

from ..errors import LeftDomain, NoConvergence, OutOfConvexBall, UnknownManifold, ValidationError
from .. import complex as cx
from ..manifold import ChartManifold


def flat_torus(L: float = 2 * np.pi, n: int = 2) -> ChartManifold:
    n = int(n)

    def metric(x):
        return np.broadcast_to(np.eye(n), np.shape(x)[:-1] + (n, n)).copy()

    return ChartManifold(
        n, metric, np.zeros(n), np.full(n, float(L)), period=np.full(n, float(L)),
        convexity_radius=L / 4, curvature_bound=0.0, name="flat_torus",
        params={"L": float(L), "n": n}, flat=True)


class SphereChart(ChartManifold):
    """Round sphere of radius R in polar coordinates (theta, phi).

    theta is the polar angle, restricted to [cap, pi - cap]; phi is periodic.
    With closed_form (the default) geodesics, transport along them and log
    use great circles; otherwise the generic integrator and shooting run.
    """

    def __init__(self, R=1.0, cap=0.01, closed_form=True):
        self.R = float(R)
        self.cap = float(cap)
        self.closed_form = bool(closed_form)
        R2 = self.R**2

        def metric(x):
            s = np.sin(x[..., 0])
            g = np.zeros(np.shape(x)[:-1] + (2, 2))
            g[..., 0, 0] = R2
            g[..., 1, 1] = R2 * s * s
            return g

        def christoffel(x):
            th = x[..., 0]
            G = np.zeros(np.shape(x)[:-1] + (2, 2, 2))
            G[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
            cot = np.cos(th) / np.sin(th)
            G[..., 1, 0, 1] = cot
            G[..., 1, 1, 0] = cot
            return G

        def scalar(x):
            return np.full(np.shape(x)[:-1], 2.0 / R2)

        super().__init__(
            2, metric, [self.cap, 0.0], [np.pi - self.cap, 2 * np.pi],
            period=[0.0, 2 * np.pi], christoffel=christoffel, scalar=scalar,
            convexity_radius=np.pi / 2 * self.R, curvature_bound=1.0 / R2,
            name="round_sphere", params={"R": self.R, "cap": self.cap, "closed_form": self.closed_form},
            log_guess=self._ambient_log)

    def geodesic(self, x, v, t_eval=None, transport=None, groups=None, rtol=None):
        """Great circles in closed form (same contract as the integrated version)."""
        if not self.closed_form:
            return super().geodesic(x, v, t_eval, transport, groups, rtol)
        x = np.asarray(x, dtype=float).reshape(-1, 2)
        v = np.asarray(v, dtype=float).reshape(-1, 2)
        ts = np.array([1.0]) if t_eval is None else np.asarray(t_eval, dtype=float)
        p = self.from_chart(x) / self.R
        E = self._frame(x)                                   # (B, 3, 2)
        a = np.einsum("bij,bj->bi", E, v) / self.R
        om = np.linalg.norm(a, axis=-1)
        w = a / np.where(om > 0, om, 1.0)[:, None]
        self._check_cap(p, w, om, float(np.max(np.abs(ts))) if len(ts) else 0.0)
        # dense samples keep phi continuous
        dense = np.union1d(ts, np.linspace(min(0.0, ts.min()), max(0.0, ts.max()), 65))
        ang = om[None, :] * dense[:, None]
        X = np.cos(ang)[..., None] * p + np.sin(ang)[..., None] * w
        ch = self.to_chart(X)
        phi = np.unwrap(ch[..., 1], axis=0)
        k0 = np.searchsorted(dense, 0.0)
        phi = phi - phi[k0] + x[None, :, 1]
        sel = np.searchsorted(dense, ts)
        pts = np.stack([ch[sel, :, 0], phi[sel]], axis=-1)
        ang = ang[sel]
        Vamb = self.R * om[None, :, None] * (-np.sin(ang)[..., None] * p + np.cos(ang)[..., None] * w)
        vel = self.tangent_to_chart(pts, Vamb)
        tr = None
        if transport is not None:
            W = np.einsum("bij,bjk->bik", E, np.asarray(transport, dtype=float))
            nrm = np.cross(p, w)
            al = np.einsum("bi,bik->bk", w, W)
            be = np.einsum("bi,bik->bk", nrm, W)
            wt = -np.sin(ang)[..., None] * p + np.cos(ang)[..., None] * w          # (T, B, 3)
            Wt = wt[..., :, None] * al[None, :, None, :] + nrm[None, :, :, None] * be[None, :, None, :]
            tr = np.stack([self.tangent_to_chart(pts, Wt[..., k]) for k in range(W.shape[-1])], axis=-1)
        if t_eval is None:
            return pts[0], vel[0], None if tr is None else tr[0]
        return pts, vel, tr

    def log(self, x, y, v0=None, tol=None, max_iter=50, check_ball=True, J0=None,
            return_jacobian=False):
        if not self.closed_form:
            return super().log(x, y, v0, tol, max_iter, check_ball, J0, return_jacobian)
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        xb = np.broadcast_to(x, shape).reshape(-1, 2)
        yb = np.broadcast_to(y, shape).reshape(-1, 2)
        p = self.from_chart(xb) / self.R
        q = self.from_chart(yb) / self.R
        if np.any(np.sum(p * q, -1) < -1 + 1e-12):
            raise NoConvergence("log of antipodal points is not unique")
        v = self._ambient_log(xb, yb)
        if check_ball:
            nrm = self.norm(xb, v)
            if np.any(nrm > 2.0 * self.convexity_radius * (1 + 1e-9)):
                raise OutOfConvexBall(
                    f"distance {np.max(nrm):.4g} exceeds twice the convexity radius hint "
                    f"{self.convexity_radius:.4g}")
        if return_jacobian:
            return v.reshape(shape), np.full((len(xb), 2, 2), np.nan)
        return v.reshape(shape)

    def _frame(self, x):
        th, ph = x[..., 0], x[..., 1]
        e_th = self.R * np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], -1)
        e_ph = self.R * np.stack([-np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), np.zeros_like(th)], -1)
        return np.stack([e_th, e_ph], axis=-1)

    def _check_cap(self, p, w, om, tmax):
        """Raise LeftDomain if a great-circle arc of angle om * tmax enters a polar cap."""
        zmax = np.cos(self.cap)
        T = om * tmax
        amp = np.hypot(p[:, 2], w[:, 2])
        base = np.arctan2(w[:, 2], p[:, 2])
        worst = np.maximum(np.abs(p[:, 2]), np.abs(p[:, 2] * np.cos(T) + w[:, 2] * np.sin(T)))
        k = np.ceil(-base / np.pi)
        first = base + k * np.pi
        worst = np.where(first <= T, amp, worst)
        if np.any(worst > zmax):
            raise LeftDomain(f"geodesic left the chart domain of {self.name}")

    def _ambient_log(self, x, y):
        """Great-circle initial velocity computed in R^3."""
        p = self.from_chart(x) / self.R
        q = self.from_chart(y) / self.R
        c = np.clip(np.sum(p * q, -1), -1.0, 1.0)
        w = q - c[..., None] * p
        nw = np.linalg.norm(w, axis=-1)
        ang = np.arctan2(nw, c)
        amb = self.R * np.where(nw[..., None] > 0, ang[..., None] * w / np.where(nw > 0, nw, 1.0)[..., None], 0.0)
        return self.tangent_to_chart(x, amb)

    def to_chart(self, xyz):
        xyz = np.asarray(xyz, dtype=float)
        r = np.linalg.norm(xyz, axis=-1)
        th = np.arccos(np.clip(xyz[..., 2] / r, -1.0, 1.0))
        ph = np.mod(np.arctan2(xyz[..., 1], xyz[..., 0]), 2 * np.pi)
        return np.stack([th, ph], axis=-1)

    def from_chart(self, x):
        x = np.asarray(x, dtype=float)
        th, ph = x[..., 0], x[..., 1]
        return self.R * np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)

    def tangent_to_chart(self, x, w):
        """Chart components of an ambient tangent vector w at chart point x."""
        th, ph = x[..., 0], x[..., 1]
        e_th = self.R * np.stack([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)], -1)
        e_ph = self.R * np.stack([-np.sin(th) * np.sin(ph), np.sin(th) * np.cos(ph), np.zeros_like(th)], -1)
        a = np.sum(w * e_th, -1) / self.R**2
        b = np.sum(w * e_ph, -1) / (self.R * np.sin(th)) ** 2
        return np.stack([a, b], -1)


def round_sphere(R: float = 1.0, cap: float = 0.01, closed_form: bool = True) -> SphereChart:
    return SphereChart(R, cap, closed_form)


def conformal_manifold(n, phi, dphi, lap, L, name, params, radius, bound):
    """g = exp(2 phi) * identity on the periodic box [0, L)^n."""

    def metric(x):
        f = np.exp(2 * phi(x))
        return f[..., None, None] * np.eye(n)

    def christoffel(x):
        d = dphi(x)                           # (..., n)
        eye = np.eye(n)
        # Gamma^i_jk = delta_ij d_k + delta_ik d_j - delta_jk d_i
        return (eye[:, :, None] * d[..., None, None, :]
                + eye[:, None, :] * d[..., None, :, None]
                - eye[None, :, :] * d[..., :, None, None])

    def scalar(x):
        d = dphi(x)
        return -2 * (n - 1) * np.exp(-2 * phi(x)) * (lap(x) + 0.5 * (n - 2) * np.sum(d * d, -1))

    def spray(x, v, W):
        d = dphi(x)
        dv = np.sum(d * v, -1)
        vv = 2 * dv[..., None] * v - np.sum(v * v, -1)[..., None] * d
        if W is None:
            return vv, None
        dW = np.einsum("...i,...ik->...k", d, W)
        vW = np.einsum("...i,...ik->...k", v, W)
        vw = v[..., :, None] * dW[..., None, :] + dv[..., None, None] * W - d[..., :, None] * vW[..., None, :]
        return vv, vw

    return ChartManifold(
        n, metric, np.zeros(n), np.full(n, float(L)), period=np.full(n, float(L)),
        christoffel=christoffel, scalar=scalar, convexity_radius=radius,
        curvature_bound=bound, name=name, params=params, spray=spray)


def bump_torus2(a: float = 0.3, k: int = 1) -> ChartManifold:
    if int(k) != k or k < 1:
        raise ValidationError("bump_torus2 needs a positive integer frequency k")
    a = float(a)
    k = int(k)

    def phi(x):
        return a * np.cos(k * x[..., 0]) * np.cos(k * x[..., 1])

    def dphi(x):
        c0, c1 = np.cos(k * x[..., 0]), np.cos(k * x[..., 1])
        s0, s1 = np.sin(k * x[..., 0]), np.sin(k * x[..., 1])
        return np.stack([-a * k * s0 * c1, -a * k * c0 * s1], -1)

    def lap(x):
        return -2 * k * k * phi(x)

    # curvature scale 2 a k^2 e^{2a}; convexity hint is the flat value pi/(2k)
    return conformal_manifold(2, phi, dphi, lap, 2 * np.pi, "bump_torus2", {"a": a, "k": k},
                              radius=np.pi / (2 * k),
                              bound=2 * abs(a) * k * k * np.exp(2 * abs(a)))


def conformal_torus3(a: float = 0.1, k: int = 1) -> ChartManifold:
    if int(k) != k or k < 1:
        raise ValidationError("conformal_torus3 needs a positive integer frequency k")
    a = float(a)
    k = int(k)

    def phi(x):
        return a * np.cos(k * x[..., 0])

    def dphi(x):
        d = np.zeros(np.shape(x))
        d[..., 0] = -a * k * np.sin(k * x[..., 0])
        return d

    def lap(x):
        return -k * k * phi(x)

    return conformal_manifold(3, phi, dphi, lap, 2 * np.pi, "conformal_torus3", {"a": a, "k": k},
                              radius=np.pi / (2 * k),
                              bound=2 * abs(a) * k * k * np.exp(2 * abs(a)))


_CATALOG = {
    "flat_torus": flat_torus,
    "round_sphere": round_sphere,
    "bump_torus2": bump_torus2,
    "conformal_torus3": conformal_torus3,
}


def catalog(name: str, params: dict | None = None) -> ChartManifold:
    try:
        factory = _CATALOG[name]
    except KeyError:
        raise UnknownManifold(f"unknown manifold {name!r}; known: {sorted(_CATALOG)}") from None
    try:
        return factory(**(params or {}))
    except TypeError as exc:
        raise ValidationError(f"bad parameters for {name}: {exc}") from None


# Rotation applied to the octahedron so that, for subdivision orders up to 8,
# no vertex and no edge passes within 0.045 rad of a chart pole.
SPHERE_EULER_ZYZ = (-1.49984764, 0.69837693, -0.17988418)


def sphere_octahedron(m: SphereChart, euler=SPHERE_EULER_ZYZ):
    """Octahedron base complex on round_sphere, rotated off the chart poles."""
    from scipy.spatial.transform import Rotation

    K = cx.octahedron()
    xyz = Rotation.from_euler("zyz", euler).apply(cx.octahedron_vertices()) * m.R
    return K, m.to_chart(xyz)


def torus_base(m: ChartManifold, cells: int):
    """Freudenthal grid with `cells` cubes per axis on a periodic box."""
    if not np.all(m.periodic):
        raise ValidationError(f"{m.name} is not a torus")
    L = float(m.period[0])
    return cx.torus_grid(cells, m.dim), m.lower + cx.torus_grid_positions(cells, m.dim, L)


def base_complex(m: ChartManifold, name: str, params: dict | None = None):
    """(complex, chart positions) for a named base complex on m."""
    params = dict(params or {})
    if name == "octahedron":
        if not isinstance(m, SphereChart):
            raise ValidationError("the octahedron base complex lives on round_sphere")
        return sphere_octahedron(m, **params)
    if name == "torus_grid":
        return torus_base(m, int(params.get("cells", 4)))
    raise ValidationError(f"unknown base complex {name!r}; known: octahedron, torus_grid")
