"""Riemannian manifolds given by an analytic metric on a single chart.

All per-point routines are vectorized over leading axes: a point array has
shape (..., n), a metric (..., n, n), Christoffel symbols (..., n, n, n) with
index order [i, j, k] for Gamma^i_jk, and the curvature tensor
(..., n, n, n, n) with order [i, j, k, l] for R^i_jkl, where
R(d_k, d_l) d_j = R^i_jkl d_i and R(X, Y) = [nabla_X, nabla_Y] - nabla_[X,Y].

Periodic chart axes model tori (and the longitude of the sphere). Points
returned by exp are continuous lifts, not reduced modulo the period; use
``wrap`` for a canonical representative and ``lift`` to move one point next
to another.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import CubicSpline

from . import ode
from .errors import LeftDomain, NoConvergence, OutOfConvexBall, OutOfDomain, StepFailure, ValidationError

FD_REL = 1e-5


@dataclass(frozen=True)
class TangentVector:
    base: np.ndarray
    components: np.ndarray


@dataclass(frozen=True)
class FrameMap:
    """Linear map between tangent spaces, in chart components."""

    source: np.ndarray
    target: np.ndarray
    matrix: np.ndarray

    def __call__(self, v):
        return self.matrix @ np.asarray(v, dtype=float)

    def then(self, other: "FrameMap") -> "FrameMap":
        """The map that applies self first and other second."""
        return FrameMap(self.source, other.target, other.matrix @ self.matrix)

    def inverse(self) -> "FrameMap":
        return FrameMap(self.target, self.source, np.linalg.inv(self.matrix))


@dataclass(frozen=True)
class CurvatureTensor:
    base: np.ndarray
    components: np.ndarray   # R^i_jkl
    lowered: np.ndarray      # R_ijkl = g_im R^m_jkl

    def operator(self, u, v) -> np.ndarray:
        """Matrix of w -> R(u, v) w."""
        return np.einsum("ijkl,k,l->ij", self.components, u, v)


class ChartManifold:
    """Metric g(x) on an axis-aligned chart box, optionally periodic per axis.

    metric: vectorized callable (..., n) -> (..., n, n).
    christoffel, scalar: optional vectorized closed forms; finite differences
    of the metric (resp. of the Christoffel symbols) are used otherwise.
    period: per axis, the period length or 0 for a bounded axis. Periodic
    axes have no domain limits.
    convexity_radius: the radius below which geodesic balls are treated as
    convex; it is a user hint and is not computed.
    spray: optional fast path (x, v, W) -> (Gamma(v, v), Gamma(v, W)) for the
    geodesic and transport equations; W may be None.
    log_guess: optional (x, y) -> v starting velocity for geodesic shooting;
    the shooting iteration still decides the answer.
    """

    def __init__(self, dim, metric, lower, upper, *, period=None, christoffel=None,
                 scalar=None, convexity_radius=1.0, curvature_bound=None,
                 name="chart", params=None, flat=False, rtol=1e-10, spray=None,
                 log_guess=None):
        self.dim = int(dim)
        self._metric = metric
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        if self.lower.shape != (self.dim,) or self.upper.shape != (self.dim,):
            raise ValidationError("domain bounds must have one entry per axis")
        if np.any(self.upper <= self.lower):
            raise ValidationError("empty chart domain")
        self.period = np.zeros(self.dim) if period is None else np.asarray(period, dtype=float)
        self.periodic = self.period > 0
        self._christoffel = christoffel
        self._scalar = scalar
        self.convexity_radius = float(convexity_radius)
        self.curvature_bound = curvature_bound
        self.name = name
        self.params = dict(params or {})
        self.flat = bool(flat)
        self._spray = spray
        self._log_guess = log_guess
        self.rtol = float(rtol)
        self.scale = float(np.max(self.upper - self.lower))
        self.h_fd = FD_REL * self.scale

    def __repr__(self):
        return f"ChartManifold({self.name!r}, dim={self.dim}, params={self.params})"

    # ------------------------------------------------------------------ chart
    def wrap(self, x):
        x = np.array(x, dtype=float)
        if self.periodic.any():
            p = self.period[self.periodic]
            lo = self.lower[self.periodic]
            x[..., self.periodic] = lo + np.mod(x[..., self.periodic] - lo, p)
        return x

    def lift(self, x, y):
        """The periodic image of y nearest to x in chart coordinates."""
        y = np.array(y, dtype=float)
        if self.periodic.any():
            x = np.asarray(x, dtype=float)
            p = self.period[self.periodic]
            d = y[..., self.periodic] - x[..., self.periodic]
            y[..., self.periodic] = x[..., self.periodic] + d - p * np.round(d / p)
        return y

    def inside(self, x, margin=0.0):
        x = np.asarray(x, dtype=float)
        ok = (x >= self.lower + margin) & (x <= self.upper - margin)
        ok = ok | self.periodic
        return np.all(ok, axis=-1)

    def _require_inside(self, x, margin=0.0):
        if not np.all(self.inside(x, margin)):
            raise OutOfDomain(f"point outside the chart domain of {self.name}")

    # ----------------------------------------------------------------- metric
    def metric(self, x):
        return self._metric(np.asarray(x, dtype=float))

    def inner(self, x, u, v):
        return np.einsum("...i,...ij,...j->...", u, self.metric(x), v)

    def norm(self, x, u):
        return np.sqrt(np.maximum(self.inner(x, u, u), 0.0))

    def christoffel(self, x):
        x = np.asarray(x, dtype=float)
        if self.flat:
            return np.zeros(x.shape + (self.dim, self.dim))
        if self._christoffel is not None:
            return self._christoffel(x)
        return self.christoffel_fd(x)

    def christoffel_fd(self, x):
        """Gamma^i_jk from central differences of the metric."""
        x = np.asarray(x, dtype=float)
        n = self.dim
        h = self.h_fd
        dg = np.empty(x.shape[:-1] + (n, n, n))  # dg[..., l, i, j] = d_l g_ij
        for l in range(n):
            e = np.zeros(n)
            e[l] = h
            dg[..., l, :, :] = (self.metric(x + e) - self.metric(x - e)) / (2 * h)
        ginv = np.linalg.inv(self.metric(x))
        # Gamma_ljk (lowered first index) = (d_j g_lk + d_k g_lj - d_l g_jk)/2
        low = 0.5 * (np.swapaxes(dg, -3, -2)                      # d_j g_lk -> [l, j, k]
                     + np.moveaxis(dg, -3, -1)                    # d_k g_lj -> [l, j, k]
                     - dg)                                        # d_l g_jk
        return np.einsum("...il,...ljk->...ijk", ginv, low)

    def riemann(self, x):
        """R^i_jkl at points (..., n) by central differences of Gamma."""
        x = np.asarray(x, dtype=float)
        n = self.dim
        if self.flat:
            return np.zeros(x.shape + (n, n, n, n))
        h = self.h_fd
        G = self.christoffel(x)
        dG = np.empty(x.shape[:-1] + (n, n, n, n))  # dG[..., k, i, l, j] = d_k Gamma^i_lj
        for k in range(n):
            e = np.zeros(n)
            e[k] = h
            dG[..., k, :, :, :] = (self.christoffel(x + e) - self.christoffel(x - e)) / (2 * h)
        # R^i_jkl = d_k G^i_lj - d_l G^i_kj + G^i_km G^m_lj - G^i_lm G^m_kj
        t1 = np.einsum("...kilj->...ijkl", dG)
        t2 = np.einsum("...likj->...ijkl", dG)
        t3 = np.einsum("...ikm,...mlj->...ijkl", G, G)
        t4 = np.einsum("...ilm,...mkj->...ijkl", G, G)
        return t1 - t2 + t3 - t4

    def scalar_curvature(self, x):
        x = np.asarray(x, dtype=float)
        if self.flat:
            return np.zeros(x.shape[:-1])
        if self._scalar is not None:
            return self._scalar(x)
        return self.scalar_curvature_fd(x)

    def scalar_curvature_fd(self, x):
        R = self.riemann(x)
        ric = np.einsum("...ijil->...jl", R)
        return np.einsum("...jl,...jl->...", np.linalg.inv(self.metric(x)), ric)

    def curvature_at(self, x) -> CurvatureTensor:
        x = np.asarray(x, dtype=float)
        self._require_inside(x, 2 * self.h_fd)
        R = self.riemann(x)
        low = np.einsum("im,mjkl->ijkl", self.metric(x), R)
        return CurvatureTensor(x.copy(), R, low)

    def curvature_operator(self, x, u, v):
        """Matrices of w -> R(u, v) w, batched."""
        return np.einsum("...ijkl,...k,...l->...ij", self.riemann(x), u, v)

    # -------------------------------------------------------------- geodesics
    def _check_domain(self, n):
        if not (~self.periodic).any():
            return None
        lo = self.lower[~self.periodic]
        hi = self.upper[~self.periodic]
        bounded = ~self.periodic

        def check(y, idx):
            xs = y[:, :n][:, bounded]
            if np.any(xs < lo) or np.any(xs > hi):
                raise LeftDomain(f"geodesic left the chart domain of {self.name}")
        return check

    def contract(self, x, v, W=None):
        """Gamma(v, v) and, if W (B, n, k) is given, Gamma(v, W) columnwise."""
        if self._spray is not None:
            return self._spray(x, v, W)
        G = self.christoffel(x)
        vv = np.einsum("bijk,bj,bk->bi", G, v, v)
        vw = None if W is None else np.einsum("bijk,bj,bkl->bil", G, v, W)
        return vv, vw

    def _geodesic_rhs(self, ntr):
        n = self.dim

        def f(t, y, idx):
            x = y[:, :n]
            v = y[:, n:2 * n]
            W = y[:, 2 * n:].reshape(-1, n, ntr) if ntr else None
            vv, vw = self.contract(x, v, W)
            out = np.empty_like(y)
            out[:, :n] = v
            out[:, n:2 * n] = -vv
            if ntr:
                out[:, 2 * n:] = -vw.reshape(len(y), -1)
            return out
        return f

    def geodesic(self, x, v, t_eval=None, transport=None, groups=None, rtol=None):
        """Integrate geodesics from (x, v) over t in [0, 1].

        x, v: (B, n). transport: optional (B, n, k) vectors parallel
        transported along. Returns (points, velocities, transported), each
        with a leading len(t_eval) axis if t_eval is given.
        """
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        v = np.asarray(v, dtype=float).reshape(-1, self.dim)
        n = self.dim
        B = len(x)
        ntr = 0 if transport is None else np.asarray(transport).shape[-1]
        if self.flat:
            ts = np.array([1.0]) if t_eval is None else np.asarray(t_eval, dtype=float)
            pts = x[None] + ts[:, None, None] * v[None]
            vel = np.broadcast_to(v[None], pts.shape).copy()
            tr = None if transport is None else np.broadcast_to(
                np.asarray(transport, dtype=float)[None], (len(ts),) + np.shape(transport)).copy()
            if t_eval is None:
                return pts[0], vel[0], None if tr is None else tr[0]
            return pts, vel, tr
        y0 = np.empty((B, 2 * n + n * ntr))
        y0[:, :n] = x
        y0[:, n:2 * n] = v
        if ntr:
            y0[:, 2 * n:] = np.asarray(transport, dtype=float).reshape(B, -1)
        atol = (rtol or self.rtol) * 1e-2
        y = ode.integrate(self._geodesic_rhs(ntr), y0, 0.0, 1.0, t_eval=t_eval,
                          rtol=rtol or self.rtol, atol=atol, groups=groups,
                          check=self._check_domain(n))
        pts = y[..., :n]
        vel = y[..., n:2 * n]
        tr = y[..., 2 * n:].reshape(y.shape[:-1] + (n, ntr)) if ntr else None
        return pts, vel, tr

    def exp(self, x, v, return_velocity=False, groups=None, rtol=None):
        x = np.asarray(x, dtype=float)
        v = np.asarray(v, dtype=float)
        shape = np.broadcast_shapes(x.shape, v.shape)
        xb = np.broadcast_to(x, shape).reshape(-1, self.dim)
        vb = np.broadcast_to(v, shape).reshape(-1, self.dim)
        p, w, _ = self.geodesic(xb, vb, groups=groups, rtol=rtol)
        if return_velocity:
            return p.reshape(shape), w.reshape(shape)
        return p.reshape(shape)

    def log(self, x, y, v0=None, tol=None, max_iter=50, check_ball=True, J0=None,
            return_jacobian=False):
        """Initial velocity of the geodesic from x reaching y at time 1.

        Damped Newton shooting on the initial velocity from the chart
        straight-line guess, Jacobian by forward differences of exp; the
        members of one finite-difference stencil share a step sequence so the
        differences are smooth. Pairs where Newton stalls are retried by
        continuation, moving the target along the chart segment from x to y.
        J0 optionally seeds the Jacobian of exp at the start velocity (batch
        shape (B, n, n)); with return_jacobian the last Jacobian is returned.
        """
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        shape = np.broadcast_shapes(x.shape, y.shape)
        n = self.dim
        xb = np.broadcast_to(x, shape).reshape(-1, n)
        yb = self.lift(xb, np.broadcast_to(y, shape).reshape(-1, n))
        if self.flat:
            if return_jacobian:
                return (yb - xb).reshape(shape), np.broadcast_to(np.eye(n), (len(xb), n, n)).copy()
            return (yb - xb).reshape(shape)
        if v0 is None and self._log_guess is not None:
            v = np.asarray(self._log_guess(xb, yb), dtype=float)
        elif v0 is None:
            d = yb - xb
            v = d + 0.5 * self.contract(xb, d)[0]
        else:
            v = np.array(np.broadcast_to(v0, shape).reshape(-1, n))
        chart_len = np.linalg.norm(yb - xb, axis=1)
        tol_abs = (tol if tol is not None else 1e-11) * np.maximum(chart_len, 1e-3 * self.scale)
        # never ask for less than a few ulps of the coordinates
        tol_abs = np.maximum(tol_abs, 8 * np.finfo(float).eps * np.maximum(np.max(np.abs(yb), axis=1), 1.0))
        v, ok, res, Jl = self._newton(xb, yb, v, tol_abs, max_iter, J0)
        for stages in (4, 16, 64):
            if ok.all():
                break
            bad = np.flatnonzero(~ok)
            vb = np.zeros((len(bad), n))
            good = np.ones(len(bad), dtype=bool)
            for k in range(1, stages + 1):
                s_k = k / stages
                target = xb[bad] + s_k * (yb[bad] - xb[bad])
                guess = vb * (s_k / ((k - 1) / stages)) if k > 1 else target - xb[bad]
                vb, okk, rk, Jb = self._newton(xb[bad], target, guess, tol_abs[bad] * s_k, max_iter)
                good &= okk
            v[bad[good]] = vb[good]
            Jl[bad[good]] = Jb[good]
            ok[bad[good]] = True
            res[bad] = np.where(good, 0.0, rk)
        if not ok.all():
            raise NoConvergence(
                f"geodesic shooting did not converge for {int((~ok).sum())} of {len(ok)} pairs "
                f"(worst residual {np.max(res[~ok]):.3e})")
        if check_ball:
            nrm = self.norm(xb, v)
            if np.any(nrm > 2.0 * self.convexity_radius * (1 + 1e-9)):
                raise OutOfConvexBall(
                    f"distance {np.max(nrm):.4g} exceeds twice the convexity radius hint "
                    f"{self.convexity_radius:.4g}")
        if return_jacobian:
            return v.reshape(shape), Jl
        return v.reshape(shape)

    def _newton(self, xb, yb, v, tol_abs, max_iter, J0=None):
        """Shooting iterations; returns (velocity, converged mask, residual, Jacobian).

        The finite-difference Jacobian is reused across iterations (chord
        steps) while the residual keeps dropping fast, and refreshed at the
        best point otherwise; a fresh Jacobian that fails to reduce the
        residual triggers step halving.
        """
        n = self.dim
        B = len(xb)
        v = v.copy()
        step = np.ones(B)
        best_v = v.copy()
        best_r = np.full(B, np.inf)
        J = np.zeros((B, n, n)) if J0 is None else np.array(J0, dtype=float).reshape(B, n, n)
        fresh = np.zeros(B, dtype=bool)    # J was computed at the current v
        need_j = np.ones(B, dtype=bool) if J0 is None else ~np.all(np.isfinite(J), axis=(1, 2))
        ok = np.zeros(B, dtype=bool)
        todo = np.arange(B)
        for _ in range(max_iter):
            if not len(todo):
                break
            tj = todo[need_j[todo]]
            tc = todo[~need_j[todo]]
            P0 = np.empty((B, n))
            if len(tj):
                vt = v[tj]
                eps = 1e-7 * np.maximum(np.linalg.norm(vt, axis=1), 1e-3 * self.scale)
                V = np.repeat(vt[:, None], n + 1, axis=1)
                V[:, 1:] += eps[:, None, None] * np.eye(n)
                grp = np.repeat(np.arange(len(tj)), n + 1)
                try:
                    P = self.exp(np.repeat(xb[tj], n + 1, axis=0), V.reshape(-1, n), groups=grp)
                    P = P.reshape(len(tj), n + 1, n)
                except (LeftDomain, StepFailure):
                    P = self._exp_guarded(xb[tj], V)
                P0[tj] = P[:, 0]
                J[tj] = np.swapaxes((P[:, 1:] - P[:, :1]) / eps[:, None, None], 1, 2)
                fresh[tj] = True
                need_j[tj] = False
            if len(tc):
                try:
                    P0[tc] = self.exp(xb[tc], v[tc])
                except (LeftDomain, StepFailure):
                    P0[tc] = self._exp_guarded(xb[tc], v[tc][:, None])[:, 0]
                fresh[tc] = False
            F = self._residual(P0[todo], yb[todo])
            r = np.linalg.norm(F, axis=1)
            r = np.where(np.isfinite(r), r, np.inf)
            prev = best_r[todo]
            improved = r < prev
            # failures: stale Jacobian -> refresh at the best point; fresh -> halve
            fail = todo[~improved]
            stale = fail[~fresh[fail]]
            v[stale] = best_v[stale]
            need_j[stale] = True
            hard = fail[fresh[fail]]
            step[hard] *= 0.5
            v[hard] = best_v[hard] + 0.5 * (v[hard] - best_v[hard])
            tb = todo[improved]
            best_r[tb] = r[improved]
            best_v[tb] = v[tb]
            slow = r[improved] > 0.1 * prev[improved]
            need_j[tb[slow & ~fresh[tb]]] = True
            conv = best_r[todo] <= tol_abs[todo]
            ok[todo[conv]] = True
            upd = tb[~conv[improved]]
            if len(upd):
                Fi = self._residual(P0[upd], yb[upd])[..., None]
                with np.errstate(all="ignore"):
                    try:
                        dv = np.linalg.solve(J[upd], -Fi)[..., 0]
                    except np.linalg.LinAlgError:
                        dv = np.stack([np.linalg.lstsq(j, -f, rcond=None)[0] for j, f in zip(J[upd], Fi)])
                v[upd] = v[upd] + step[upd, None] * dv
                step[upd] = np.minimum(1.0, step[upd] * 2.0)
            stalled = step[todo] < 1e-6
            todo = todo[~conv & ~stalled]
        return best_v, ok, best_r, J

    def _residual(self, p, y):
        """p - y with periodic axes reduced to the nearest image."""
        d = p - y
        if self.periodic.any():
            per = self.period[self.periodic]
            d[..., self.periodic] -= per * np.round(d[..., self.periodic] / per)
        return d

    def _exp_guarded(self, xt, V):
        """Row-by-row exp for a stencil batch; rows that fail become NaN."""
        nt, m, n = V.shape
        P = np.full((nt, m, n), np.nan)
        for i in range(nt):
            try:
                P[i] = self.exp(np.repeat(xt[i:i + 1], m, axis=0), V[i], groups=np.zeros(m, dtype=int))
            except (LeftDomain, StepFailure):
                pass
        return P

    def distance(self, x, y):
        v = self.log(x, y)
        return self.norm(np.broadcast_to(x, v.shape), v)

    # --------------------------------------------------------------- transport
    def transport(self, curve: "Curve", vectors, u_eval=None, rtol=None):
        """Parallel transport along a batch of curves over u in [0, 1].

        vectors: (B, n, k) or (B, n). Returns the transported vectors at u=1
        or at each u_eval (leading axis).
        """
        n = self.dim
        W = np.asarray(vectors, dtype=float)
        single = W.ndim == 2
        if single:
            W = W[..., None]
        B, _, k = W.shape
        if self.flat:
            if u_eval is None:
                out = W.copy()
            else:
                out = np.broadcast_to(W[None], (len(u_eval),) + W.shape).copy()
            return out[..., 0] if single else out

        def f(t, y, idx):
            pts = curve.points_at(t, idx)
            vel = curve.velocities_at(t, idx)
            _, vw = self.contract(pts, vel, y.reshape(-1, n, k))
            return -vw.reshape(len(y), -1)

        y = ode.integrate(f, W.reshape(B, -1), 0.0, 1.0, t_eval=u_eval,
                          rtol=rtol or self.rtol, atol=(rtol or self.rtol) * 1e-2)
        out = y.reshape(y.shape[:-1] + (n, k))
        return out[..., 0] if single else out

    def parallel_transport(self, curve: "Curve", v=None) -> FrameMap | np.ndarray:
        """Transport along a single curve, as a FrameMap (or applied to v)."""
        E = np.eye(self.dim)[None]
        M = self.transport(curve, E)[0]
        fm = FrameMap(curve.start[0], curve.end[0], M)
        return fm if v is None else fm(v)

    def geodesic_transport(self, x, v):
        """Transport matrices along geodesics t -> exp_x(t v), batched."""
        x = np.asarray(x, dtype=float).reshape(-1, self.dim)
        v = np.asarray(v, dtype=float).reshape(-1, self.dim)
        E = np.broadcast_to(np.eye(self.dim), (len(x), self.dim, self.dim))
        p, _, M = self.geodesic(x, v, transport=E)
        return p, (np.broadcast_to(np.eye(self.dim), E.shape).copy() if M is None else M)

    # -------------------------------------------------------------- integrals
    def integrate_scalar(self, lower, upper, order=8, rtol=1e-6, max_order=256):
        """Integral of scal * sqrt(det g) over a chart box by Gauss quadrature."""
        lower = np.asarray(lower, dtype=float)
        upper = np.asarray(upper, dtype=float)
        prev = None
        q = int(order)
        while True:
            val, mag = self._gauss_box(lower, upper, q)
            if prev is not None and abs(val - prev) <= rtol * max(abs(val), mag, 1e-300):
                return val
            if q >= max_order:
                return val
            prev = val
            q *= 2

    def _gauss_box(self, lower, upper, q):
        n = self.dim
        xg, wg = leggauss(q)
        half = 0.5 * (upper - lower)
        mid = 0.5 * (upper + lower)
        axes = [mid[i] + half[i] * xg for i in range(n)]
        mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, n)
        w = np.ones(1)
        for i in range(n):
            w = np.multiply.outer(w, wg * half[i]).ravel()
        total = 0.0
        mag = 0.0
        chunk = 20000
        for s in range(0, len(mesh), chunk):
            pts = mesh[s:s + chunk]
            f = self.scalar_curvature(pts) * np.sqrt(np.linalg.det(self.metric(pts)))
            total += float(np.dot(w[s:s + chunk], f))
            mag += float(np.dot(w[s:s + chunk], np.abs(f)))
        return total, mag

    def jacobi_defect(self, x, u, w, s):
        """Norm at x of P_s^{-1} d(exp_x)_{su}(w) - w, P_s transport along exp_x(t su)."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        w = np.asarray(w, dtype=float)
        su = s * u
        h = 1e-4 * max(float(self.norm(x, su)), 1e-3) / max(float(self.norm(x, w)), 1e-300)
        V = np.stack([su + h * w, su - h * w])
        P = self.exp(np.stack([x, x]), V, groups=np.zeros(2, dtype=int))
        dexp = (P[0] - P[1]) / (2 * h)
        _, M = self.geodesic_transport(x[None], su[None])
        back = np.linalg.solve(M[0], dexp)
        return float(self.norm(x, back - w))

    # ------------------------------------------------------------- utilities
    def orthonormalize(self, x, vectors):
        """g-orthonormal Gram-Schmidt of the columns of vectors at x."""
        V = np.array(vectors, dtype=float)
        g = self.metric(x)
        for j in range(V.shape[1]):
            for i in range(j):
                V[:, j] -= (V[:, i] @ g @ V[:, j]) * V[:, i]
            V[:, j] /= np.sqrt(V[:, j] @ g @ V[:, j])
        return V

    def sqrt_metric(self, x):
        """Symmetric square root of g(x) and its inverse."""
        lam, Q = np.linalg.eigh(self.metric(x))
        s = np.sqrt(lam)
        return (Q * s[..., None, :]) @ np.swapaxes(Q, -1, -2), (Q / s[..., None, :]) @ np.swapaxes(Q, -1, -2)

    def operator_norm(self, x_src, x_dst, A):
        """Operator norm of A: (T_src, g) -> (T_dst, g)."""
        _, isrc = self.sqrt_metric(x_src)
        sdst, _ = self.sqrt_metric(x_dst)
        return float(np.linalg.norm(sdst @ A @ isrc, 2))


class Curve:
    """A batch of curves over u in [0, 1], interpolated from samples.

    points: (B, K, n) continuous chart samples at parameters u (K,).
    Positions and velocities come from a cubic spline through the samples.
    """

    def __init__(self, u, points):
        u = np.asarray(u, dtype=float)
        p = np.asarray(points, dtype=float)
        if p.ndim == 2:
            p = p[None]
        if p.shape[1] != len(u):
            raise ValidationError("curve samples and parameters disagree")
        self.u = u
        self.samples = p
        self._spline = CubicSpline(u, p, axis=1)
        self._dspline = self._spline.derivative()

    @property
    def batch(self):
        return self.samples.shape[0]

    @property
    def start(self):
        return self.samples[:, 0]

    @property
    def end(self):
        return self.samples[:, -1]

    def points_at(self, t, idx=None):
        return self._eval(self._spline, t, idx)

    def velocities_at(self, t, idx=None):
        return self._eval(self._dspline, t, idx)

    def _eval(self, sp, t, idx):
        t = np.asarray(t, dtype=float)
        if idx is None:
            idx = np.arange(self.batch)
        if t.ndim == 0 or np.all(t == t.flat[0]):
            return sp(float(t.flat[0]))[idx]
        # distinct times per row: evaluate the spline pieces directly
        c = sp.c  # (4, K-1, B, n)
        seg = np.clip(np.searchsorted(self.u, t, side="right") - 1, 0, len(self.u) - 2)
        dt = t - self.u[seg]
        coef = c[:, seg, idx, :]
        out = coef[0]
        for j in range(1, c.shape[0]):
            out = out * dt[:, None] + coef[j]
        return out

    def reversed(self) -> "Curve":
        return Curve(self.u, self.samples[:, ::-1])

    @classmethod
    def segment(cls, a, b, samples=9):
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        u = np.linspace(0.0, 1.0, samples)
        return cls(u, a[:, None] + u[None, :, None] * (b - a)[:, None])

    @classmethod
    def from_function(cls, fn, samples=65, u=None):
        """fn maps parameters (K,) to points (B, K, n) or (K, n)."""
        u = np.linspace(0.0, 1.0, samples) if u is None else np.asarray(u)
        return cls(u, fn(u))

    @classmethod
    def geodesic(cls, m: ChartManifold, x, v, samples=65):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        v = np.atleast_2d(np.asarray(v, dtype=float))
        u = np.linspace(0.0, 1.0, samples)
        pts, _, _ = m.geodesic(x, v, t_eval=u)
        return cls(u, np.swapaxes(pts, 0, 1))


# Functional aliases matching the operation names.
def christoffel_at(m: ChartManifold, x):
    x = np.asarray(x, dtype=float)
    m._require_inside(x, 2 * m.h_fd)
    return m.christoffel(x)


def exp_map(m: ChartManifold, x, v, return_velocity=False):
    return m.exp(x, v, return_velocity=return_velocity)


def log_map(m: ChartManifold, x, y) -> TangentVector:
    return TangentVector(np.asarray(x, dtype=float), m.log(x, y))


def distance(m: ChartManifold, x, y):
    return m.distance(x, y)


def parallel_transport(m: ChartManifold, curve: Curve, v=None):
    return m.parallel_transport(curve, v)


def curvature_at(m: ChartManifold, x) -> CurvatureTensor:
    return m.curvature_at(x)


def scalar_curvature(m: ChartManifold, x):
    x = np.asarray(x, dtype=float)
    m._require_inside(x, 2 * m.h_fd)
    return m.scalar_curvature(x)


def integrate_scalar(m: ChartManifold, lower, upper, order=8):
    return m.integrate_scalar(lower, upper, order=order)


def jacobi_defect(m: ChartManifold, x, u, w, s):
    return m.jacobi_defect(x, u, w, s)
