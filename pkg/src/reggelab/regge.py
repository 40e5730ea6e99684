"""Piecewise-flat geometry of a polyhedron.

Transport in the flat metric is computed by unfolding: crossing a face from
simplex f to its neighbour g maps vectors by the orthogonal part of the
isometry that glues g's canonical frame onto f's. Everything else here
(bone rotations, loop curvature, curvings) is built from these maps and
from the dihedral angles of the simplices.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from math import fsum

import numpy as np
from scipy.spatial import cKDTree

from . import euclid
from .complex import Polyhedron
from .errors import (ConsistencyError, LeftRegion, NoConvergence, NonTransverse, SkeletonCollision,
                     ValidationError)
from .manifold import ChartManifold, Curve, FrameMap

TOL_SKEL_REL = 1e-7     # skeleton clearance, relative to the mesh
NUDGE_FACTOR = 10.0     # nudge size in units of the skeleton clearance
MAX_NUDGES = 5
CROSSING_TOL_REL = 1e-10


# ------------------------------------------------------------------- types
@dataclass(frozen=True)
class SkewMap:
    """Linear map on a tangent space, antisymmetric for the Gram matrix `metric`.

    base is a chart point, or a facet id when the map lives in a simplex frame
    (then metric is the identity).
    """

    base: object
    matrix: np.ndarray
    metric: np.ndarray

    def skewness(self) -> float:
        A = self.metric @ self.matrix
        return float(np.max(np.abs(A + A.T)) / max(1.0, float(np.max(np.abs(A)))))

    def pair(self, u, v) -> float:
        """<S u, v> in the base metric."""
        return float(np.asarray(v) @ self.metric @ self.matrix @ np.asarray(u))


@dataclass(frozen=True)
class DualPath:
    """Simplices met by a curve, in order, with the faces crossed between them.

    faces[i] is the local index, in facets[i], of the vertex opposite the
    face crossed towards facets[i+1]; params[i] is the curve parameter of
    that crossing and points[i] its chart point. start/end are the embedded
    coordinates of the curve end points in the first and last simplex.
    """

    facets: np.ndarray
    faces: np.ndarray
    params: np.ndarray
    points: np.ndarray
    start: np.ndarray
    end: np.ndarray
    nudge: np.ndarray | None = None

    def __len__(self):
        return len(self.facets)


@dataclass(frozen=True)
class DeficitRecord:
    bone_id: int
    vertices: tuple
    ring: tuple                 # ((facet, dihedral), ...)
    beta: float
    alpha: float
    volume: float


@dataclass
class DeficitTable:
    """Per-bone deficit data as arrays (the record list is built on demand)."""

    bone_vertices: np.ndarray
    ring_sizes: np.ndarray
    dihedrals: np.ndarray       # flat, in ring order
    beta: np.ndarray
    alpha: np.ndarray
    volume: np.ndarray
    ring_facets: np.ndarray

    def __len__(self):
        return len(self.alpha)

    def records(self) -> list[DeficitRecord]:
        out = []
        off = np.concatenate([[0], np.cumsum(self.ring_sizes)])
        for k in range(len(self.alpha)):
            s = slice(off[k], off[k + 1])
            ring = tuple(zip(self.ring_facets[s].tolist(), self.dihedrals[s].tolist()))
            out.append(DeficitRecord(k, tuple(int(v) for v in self.bone_vertices[k]), ring,
                                     float(self.beta[k]), float(self.alpha[k]), float(self.volume[k])))
        return out

    def to_text(self) -> str:
        lines = ["bone_id\tring_size\tbeta_total\talpha\tvol_nm2"]
        for k in range(len(self.alpha)):
            lines.append("%d\t%d\t%.16e\t%.16e\t%.16e" % (
                k, self.ring_sizes[k], self.beta[k], self.alpha[k], self.volume[k]))
        return "\n".join(lines) + "\n"


class ParamSquare:
    """Map G: [0,1]^2 -> chart, with base point G(0,0).

    fn(s, t) takes broadcastable arrays and returns (..., n) chart points
    (unwrapped, i.e. continuous in (s, t)). Partials are central finite
    differences unless given.
    """

    def __init__(self, manifold: ChartManifold, fn, partials=None, label: str = ""):
        self.manifold = manifold
        self._fn = fn
        self._partials = partials
        self.label = label
        self._grid_cache: dict = {}

    @classmethod
    def chebyshev(cls, manifold: ChartManifold, fn, nodes: int = 21, label: str = "") -> "ParamSquare":
        """Tensor Chebyshev interpolant of fn sampled on Lobatto nodes.

        fn is called once on (nodes, nodes) parameter arrays. Partials come
        from the interpolant, so they are smooth even when fn is computed by
        an adaptive solver.
        """
        k = np.arange(nodes)
        x = np.cos(np.pi * k / (nodes - 1))[::-1]            # [-1, 1] increasing
        u = 0.5 * (x + 1.0)
        S, T = np.meshgrid(u, u, indexing="ij")
        V = np.asarray(fn(S, T), dtype=float)               # (N, N, n)
        Vi = np.linalg.inv(np.polynomial.chebyshev.chebvander(x, nodes - 1))
        C = np.einsum("ai,ijk,bj->abk", Vi, V, Vi)           # coefficients (N, N, n)
        Cs = np.polynomial.chebyshev.chebder(C, axis=0) * 2.0
        Ct = np.polynomial.chebyshev.chebder(C, axis=1) * 2.0

        def cheb(z, deg):
            # T_k(z) = cos(k arccos z) on [-1, 1]; polynomial recurrence outside
            z = np.asarray(z, dtype=float)
            if np.all(np.abs(z) <= 1.0):
                return np.cos(np.arange(deg + 1) * np.arccos(z)[:, None])
            return np.polynomial.chebyshev.chebvander(z, deg)

        def ev(coef, s, t):
            s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
            A = cheb(2 * s.ravel() - 1, coef.shape[0] - 1)
            B = cheb(2 * t.ravel() - 1, coef.shape[1] - 1)
            return np.einsum("pa,abk,pb->pk", A, coef, B).reshape(s.shape + coef.shape[2:])

        sq = cls(manifold, lambda s, t: ev(C, s, t), lambda s, t: (ev(Cs, s, t), ev(Ct, s, t)), label)
        sq.samples = V
        return sq

    def __call__(self, s, t):
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        return np.asarray(self._fn(s, t), dtype=float)

    @property
    def base(self) -> np.ndarray:
        return self(0.0, 0.0)

    def partials(self, s, t, h: float = 1e-6):
        if self._partials is not None:
            return self._partials(s, t)
        s, t = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        ds = (self(s + h, t) - self(s - h, t)) / (2 * h)
        dt = (self(s, t + h) - self(s, t - h)) / (2 * h)
        return ds, dt

    def boundary_point(self, u):
        """Gamma(u), u in [0,1]: bottom, right, top, left (counterclockwise in (s, t))."""
        u = np.asarray(u, dtype=float)
        k = np.clip(np.floor(4 * u), 0, 3)
        w = 4 * u - k
        s = np.select([k == 0, k == 1, k == 2], [w, np.ones_like(w), 1 - w], np.zeros_like(w))
        t = np.select([k == 0, k == 1, k == 2], [np.zeros_like(w), w, np.ones_like(w)], 1 - w)
        return self(s, t)

    def boundary(self, reverse: bool = False):
        if reverse:
            return lambda u: self.boundary_point(1.0 - np.asarray(u, dtype=float))
        return self.boundary_point

    def grid(self, N: int):
        if N not in self._grid_cache:
            g = np.linspace(0.0, 1.0, N)
            S, T = np.meshgrid(g, g, indexing="ij")
            self._grid_cache[N] = (S, T, self(S, T))
        return self._grid_cache[N]

    def swapped(self) -> "ParamSquare":
        """The same image with s and t exchanged (opposite orientation)."""
        p = self._partials
        sw = None if p is None else (lambda s, t: p(t, s)[::-1])
        return ParamSquare(self.manifold, lambda s, t: self._fn(t, s), sw, self.label + "~")

    def validate(self, N: int = 9) -> None:
        """Sampled checks: inside the chart, immersed with one orientation, inside a convex ball."""
        m = self.manifold
        S, T, P = self.grid(N)
        if not np.all(m.inside(m.wrap(P))):
            raise ValidationError("square leaves the chart domain")
        ds, dt = self.partials(S, T)
        det = ds[..., 0] * dt[..., 1] - ds[..., 1] * dt[..., 0] if m.dim == 2 else None
        if det is not None and not (np.all(det > 0) or np.all(det < 0)):
            raise ValidationError("square is not immersed with a single orientation")
        x0 = np.broadcast_to(self.base, P.reshape(-1, m.dim).shape)
        d = m.distance(x0, P.reshape(-1, m.dim))
        if np.max(d) >= 2 * m.convexity_radius:
            raise ValidationError("square is not inside a convex ball around its base point")


# -------------------------------------------------------------- unfolding
def _unit_normal(E: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Unit vector along the part of w orthogonal to the rows of E (N, k, n)."""
    if E.shape[1]:
        Q, _ = np.linalg.qr(np.swapaxes(E, 1, 2))
        w = w - np.einsum("nka,na->nk", Q, np.einsum("nka,nk->na", Q, w))
    return w / np.linalg.norm(w, axis=1)[:, None]


def _face_locals(n1: int) -> np.ndarray:
    return np.array([[k for k in range(n1) if k != a] for a in range(n1)])


def crossing_maps(poly: Polyhedron, f, a):
    """Affine gluing x_f = M x_g + t of the neighbour g across the face opposite a.

    f, a are arrays of facet ids and local indices. Returns (M, t, g) with M
    orthogonal; vectors are carried from f to g by M^T.
    """
    f = np.atleast_1d(np.asarray(f, dtype=np.int64))
    a = np.atleast_1d(np.asarray(a, dtype=np.int64))
    K = poly.complex
    F = K.facets
    n = K.dim
    g = K.neighbors[f, a]
    if np.any(g < 0):
        raise LeftRegion("crossing a boundary face")
    e = K.neighbor_local[f, a]
    N = len(f)
    r = np.arange(N)
    locf = _face_locals(n + 1)[a]                                # (N, n)
    ids = F[f[:, None], locf]
    locg = np.argmax(F[g][:, None, :] == ids[:, :, None], axis=2)
    Vf = poly.facet_frames[f]
    Vg = poly.facet_frames[g]
    A = Vf[r[:, None], locf]
    B = Vg[r[:, None], locg]
    EA = A[:, 1:] - A[:, :1]
    EB = B[:, 1:] - B[:, :1]
    nA = _unit_normal(EA, Vf[r, a] - A[:, 0])
    nB = _unit_normal(EB, Vg[r, e] - B[:, 0])
    SA = np.concatenate([EA, -nA[:, None]], axis=1)
    SB = np.concatenate([EB, nB[:, None]], axis=1)
    M = np.swapaxes(np.linalg.solve(SB, SA), 1, 2)
    U, _, Vt = np.linalg.svd(M)
    M = U @ Vt
    t = A[:, 0] - np.einsum("nij,nj->ni", M, B[:, 0])
    return M, t, g


def transport_matrix(poly: Polyhedron, facets, faces) -> np.ndarray:
    """Product of crossing maps along a facet path (first frame -> last frame)."""
    n = poly.dim
    T = np.eye(n)
    if len(faces) == 0:
        return T
    M, _, g = crossing_maps(poly, np.asarray(facets[:-1]), np.asarray(faces))
    if np.any(g != np.asarray(facets[1:])):
        raise ValidationError("path is not a chain of facet-adjacent simplices")
    for Mi in M:
        T = Mi.T @ T
    return T


def transport_g0(poly: Polyhedron, path: DualPath) -> FrameMap:
    """Flat-metric transport along a dual path, as a map between simplex frames."""
    T = transport_matrix(poly, path.facets, path.faces)
    return FrameMap(np.asarray(path.facets[0]), np.asarray(path.facets[-1]), T)


# ---------------------------------------------------------- point location
class Locator:
    """Finds the simplex of the polyhedron containing a chart point.

    Membership uses the Riemannian barycentric coordinates of the simplex
    (the inverse of the vertex placement map), so the simplices tile the
    manifold exactly.
    """

    def __init__(self, poly: Polyhedron):
        self.poly = poly
        m = poly.manifold
        P = poly.facet_chart(np.arange(len(poly.complex.facets)))
        cen = m.wrap(P.mean(axis=1))
        span = m.upper - m.lower
        self._box = np.where(m.periodic, m.period, 4 * span)
        self._shift = np.where(m.periodic, -m.lower, span - m.lower)
        self._tree = cKDTree(self._embed(cen), boxsize=self._box)
        self.heights = _face_heights(poly)

    def _embed(self, x):
        m = self.poly.manifold
        y = m.wrap(np.asarray(x, dtype=float)) + self._shift
        return np.clip(y, 0.0, np.nextafter(self._box, 0))

    def lam(self, f, x) -> np.ndarray:
        """Barycentric coordinates of chart points x (B, n) in facets f (B,)."""
        poly = self.poly
        m = poly.manifold
        n = poly.dim
        x = np.asarray(x, dtype=float)
        P = poly.positions[poly.complex.facets[f]]                  # (B, n+1, n)
        L = m.log(np.repeat(x, n + 1, axis=0), P.reshape(-1, n), check_ball=False)
        L = L.reshape(len(x), n + 1, n)
        A = np.concatenate([np.swapaxes(L, 1, 2), np.ones((len(x), 1, n + 1))], axis=1)
        rhs = np.zeros((len(x), n + 1, 1))
        rhs[:, -1] = 1.0
        return np.linalg.solve(A, rhs)[..., 0]

    def embedded(self, f, lam) -> np.ndarray:
        return np.einsum("bi,bin->bn", lam, self.poly.facet_frames[f])

    def locate(self, x, seed=None, max_walk: int = 200):
        """(facet, lam) for each chart point; seed gives starting facets."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = self.poly.manifold
        if not np.all(m.inside(x)):
            raise LeftRegion("point outside the chart domain")
        if seed is None:
            _, f = self._tree.query(self._embed(x))
            f = np.asarray(f, dtype=np.int64)
        else:
            f = np.array(seed, dtype=np.int64)
        nb = self.poly.complex.neighbors
        lam = np.empty((len(x), self.poly.dim + 1))
        todo = np.arange(len(x))
        for _ in range(max_walk):
            lt = self.lam(f[todo], x[todo])
            lam[todo] = lt
            out = lt.min(axis=1) < -1e-13
            if not out.any():
                return f, lam
            todo = todo[out]
            a = np.argmin(lt[out], axis=1)
            g = nb[f[todo], a]
            if np.any(g < 0):
                raise LeftRegion("curve leaves the polyhedron through its boundary")
            f[todo] = g
        raise NoConvergence("point location did not settle")


def _face_heights(poly: Polyhedron) -> np.ndarray:
    """(F, n+1, n+1): height of local vertex b over the opposite edge of the face opposite a."""
    V = poly.facet_frames
    Fn, n1, n = V.shape
    H = np.full((Fn, n1, n1), np.inf)
    for a in range(n1):
        face = [k for k in range(n1) if k != a]
        vf = euclid.simplex_volume(V[:, face])
        for b in face:
            sub = [k for k in face if k != b]
            vs = euclid.simplex_volume(V[:, sub])
            H[:, a, b] = (n - 1) * vf / vs if n > 1 else np.inf
    return H


def locator(poly: Polyhedron) -> Locator:
    loc = getattr(poly, "_locator", None)
    if loc is None:
        loc = Locator(poly)
        poly._locator = loc
    return loc


# ------------------------------------------------------------------ tracing
def _as_callable(curve):
    if isinstance(curve, Curve):
        if curve.batch != 1:
            raise ValidationError("trace one curve at a time")
        return lambda s: curve.points_at(np.asarray(s, dtype=float), np.zeros(np.size(s), dtype=int))
    if callable(curve):
        return lambda s: np.asarray(curve(np.asarray(s, dtype=float)), dtype=float).reshape(np.size(s), -1)
    pts = np.asarray(curve, dtype=float)
    c = Curve(np.linspace(0, 1, len(pts)), pts[None])
    return _as_callable(c)


def _curve_samples(poly: Polyhedron, fn, min_samples=17, per_rho=8.0):
    m = poly.manifold
    u = np.linspace(0.0, 1.0, 65)
    X = fn(u)
    d = np.diff(X, axis=0)
    mid = 0.5 * (X[1:] + X[:-1])
    g = m.metric(m.wrap(mid))
    length = float(np.sum(np.sqrt(np.einsum("ki,kij,kj->k", d, g, d))))
    K = max(min_samples, int(np.ceil(per_rho * length / poly.mesh)) + 1)
    return np.linspace(0.0, 1.0, K)


class _Attempt:
    def __init__(self, fn, nudge):
        self.fn = fn
        self.nudge = nudge
        self.error = None
        self.path = None


def trace_curves(poly: Polyhedron, curves, samples=None) -> list[DualPath]:
    """Dual paths of several chart curves (each traced independently).

    A curve whose face crossings come within the skeleton clearance of an
    (n-2)-face is translated by a small recorded nudge, orthogonal to its
    chord, and traced again.
    """
    fns = [_as_callable(c) for c in curves]
    m = poly.manifold
    tol_skel = TOL_SKEL_REL * poly.mesh
    attempts = [_Attempt(fn, None) for fn in fns]
    final: list = [None] * len(fns)
    pending = list(range(len(fns)))
    for k in range(MAX_NUDGES + 1):
        _trace_batch(poly, [attempts[i] for i in pending], samples)
        still = []
        for i in pending:
            at = attempts[i]
            if at.error is None:
                final[i] = at.path
            elif isinstance(at.error, SkeletonCollision) and k < MAX_NUDGES:
                w = _nudge_vector(m, fns[i], k, NUDGE_FACTOR * tol_skel)
                base_fn = fns[i]
                attempts[i] = _Attempt((lambda s, bf=base_fn, w=w: bf(s) + w), w)
                still.append(i)
            else:
                raise at.error
        pending = still
        if not pending:
            break
    return final


def trace_curve(poly: Polyhedron, curve, samples=None) -> DualPath:
    return trace_curves(poly, [curve], samples)[0]


def _nudge_vector(m: ChartManifold, fn, k: int, size: float) -> np.ndarray:
    """Chart vector of g-length `size`, orthogonal to the curve chord (or start velocity)."""
    n = m.dim
    X = fn(np.array([0.0, 1e-3, 1.0]))
    x0 = m.wrap(X[0])
    chord = X[2] - X[0]
    if np.linalg.norm(chord) < 1e-12 * m.scale:
        chord = X[1] - X[0]
    g = m.metric(x0)
    rng = np.random.default_rng(1000 + k)
    w = rng.standard_normal(n)
    c = chord / np.sqrt(chord @ g @ chord)
    w = w - (w @ g @ c) * c
    return size * w / np.sqrt(w @ g @ w)


def _trace_batch(poly: Polyhedron, attempts, samples):
    if not attempts:
        return
    loc = locator(poly)
    m = poly.manifold
    K = poly.complex
    nb = K.neighbors
    # per-curve samples
    S = []
    X = []
    for at in attempts:
        s = samples if samples is not None else _curve_samples(poly, at.fn)
        s = np.asarray(s, dtype=float)
        S.append(list(s))
        try:
            X.append(at.fn(s))
        except Exception as exc:   # curve evaluation failed (left the chart)
            at.error = LeftRegion(str(exc))
            X.append(None)
    live = [i for i, at in enumerate(attempts) if at.error is None]
    # locate every sample
    facet = {}
    for i in live:
        try:
            Xi = X[i]
            if not np.all(m.inside(m.wrap(Xi))):
                raise LeftRegion("curve leaves the chart domain")
            f, _ = loc.locate(m.wrap(Xi))
            facet[i] = list(f)
        except (LeftRegion, NoConvergence) as exc:
            attempts[i].error = exc if isinstance(exc, LeftRegion) else LeftRegion(str(exc))
    live = [i for i in live if attempts[i].error is None]
    # refine until consecutive samples lie in equal or adjacent facets
    for depth in range(48):
        ins = []   # (curve, position, s_mid)
        for i in live:
            fs = facet[i]
            ss = S[i]
            for q in range(len(ss) - 1):
                f0, f1 = fs[q], fs[q + 1]
                if f0 != f1 and f1 not in nb[f0]:
                    ins.append((i, q, 0.5 * (ss[q] + ss[q + 1])))
        if not ins:
            break
        if depth == 47:
            for i in {c for c, _, _ in ins}:
                attempts[i].error = SkeletonCollision("curve passes through the (n-2)-skeleton")
            live = [i for i in live if attempts[i].error is None]
            break
        pts = []
        seeds = []
        for i, q, sm in ins:
            pts.append(attempts[i].fn(np.array([sm]))[0])
            seeds.append(facet[i][q])
        pts = m.wrap(np.array(pts))
        try:
            f_new, _ = loc.locate(pts, seed=np.array(seeds))
        except (LeftRegion, NoConvergence) as exc:
            for i in {c for c, _, _ in ins}:
                attempts[i].error = exc if isinstance(exc, LeftRegion) else LeftRegion(str(exc))
            live = [i for i in live if attempts[i].error is None]
            continue
        # insert from the back so positions stay valid
        for (i, q, sm), fnew in sorted(zip(ins, f_new), key=lambda z: (z[0][0], -z[0][1])):
            S[i].insert(q + 1, sm)
            facet[i].insert(q + 1, int(fnew))
    # crossings by regula falsi on the vanishing barycentric coordinate
    jobs = []   # (curve, f, a, s_lo, s_hi)
    for i in live:
        fs, ss = facet[i], S[i]
        for q in range(len(ss) - 1):
            if fs[q] != fs[q + 1]:
                a = int(np.flatnonzero(nb[fs[q]] == fs[q + 1])[0])
                jobs.append((i, fs[q], a, ss[q], ss[q + 1]))
    cross_s = np.zeros(len(jobs))
    cross_x = np.zeros((len(jobs), poly.dim))
    if jobs:
        ci = np.array([j[0] for j in jobs])
        jf = np.array([j[1] for j in jobs])
        ja = np.array([j[2] for j in jobs])
        lo = np.array([j[3] for j in jobs])
        hi = np.array([j[4] for j in jobs])

        def phi(svals, rows):
            pts = np.stack([attempts[ci[r]].fn(np.array([sv]))[0] for r, sv in zip(rows, svals)])
            pts = m.wrap(pts)
            lam = loc.lam(jf[rows], pts)
            return lam, pts

        rows = np.arange(len(jobs))
        lam_lo, _ = phi(lo, rows)
        lam_hi, _ = phi(hi, rows)
        flo = lam_lo[rows, ja]
        fhi = lam_hi[rows, ja]
        side_lo = np.zeros(len(jobs), dtype=int)
        mid = lo.copy()
        lam_mid = lam_lo.copy()
        pts_mid = np.zeros((len(jobs), poly.dim))
        active = np.ones(len(jobs), dtype=bool)
        for it in range(80):
            r = np.flatnonzero(active)
            if not len(r):
                break
            denom = flo[r] - fhi[r]
            sm = np.where(np.abs(denom) > 0, (lo[r] * (-fhi[r]) + hi[r] * flo[r]) / np.where(denom == 0, 1, denom),
                          0.5 * (lo[r] + hi[r]))
            # guard against stagnation at the bracket ends
            w = hi[r] - lo[r]
            sm = np.clip(sm, lo[r] + 1e-3 * w, hi[r] - 1e-3 * w)
            lm, pm = phi(sm, r)
            fm = lm[np.arange(len(r)), ja[r]]
            mid[r] = sm
            lam_mid[r] = lm
            pts_mid[r] = pm
            pos = fm >= 0
            # Illinois update
            rp = r[pos]
            lo[rp] = sm[pos]
            flo[rp] = fm[pos]
            fhi[rp[side_lo[rp] == 1]] *= 0.5
            side_lo[rp] = 1
            rn = r[~pos]
            hi[rn] = sm[~pos]
            fhi[rn] = fm[~pos]
            flo[rn[side_lo[rn] == -1]] *= 0.5
            side_lo[rn] = -1
            done = np.abs(fm) <= CROSSING_TOL_REL
            done |= (hi[r] - lo[r]) <= 1e-15
            active[r[done]] = False
        cross_s = mid
        cross_x = pts_mid
        # skeleton clearance at each crossing
        H = loc.heights[jf, ja]                                  # (J, n+1)
        lam_c = lam_mid.copy()
        lam_c[np.arange(len(jobs)), ja] = np.inf
        clear = np.min(lam_c * H, axis=1)
        tol_skel = TOL_SKEL_REL * poly.mesh
        for r in np.flatnonzero(clear < tol_skel):
            attempts[ci[r]].error = SkeletonCollision(
                f"crossing at parameter {cross_s[r]:.6g} is {clear[r]:.3e} from the (n-2)-skeleton")
    # assemble
    by_curve: dict = {}
    for r, j in enumerate(jobs):
        by_curve.setdefault(j[0], []).append(r)
    for i in live:
        at = attempts[i]
        if at.error is not None:
            continue
        fs = facet[i]
        rows = by_curve.get(i, [])
        chain = [fs[0]]
        faces = []
        for r in rows:
            _, f, a, _, _ = jobs[r]
            if f != chain[-1]:
                at.error = ValidationError("internal tracing inconsistency")
                break
            faces.append(a)
            chain.append(int(nb[f, a]))
        if at.error is not None:
            continue
        ends = m.wrap(at.fn(np.array([0.0, 1.0])))
        lam_ends = loc.lam(np.array([chain[0], chain[-1]]), ends)
        emb = loc.embedded(np.array([chain[0], chain[-1]]), lam_ends)
        at.path = DualPath(np.array(chain, dtype=np.int64), np.array(faces, dtype=np.int64),
                           cross_s[rows] if rows else np.zeros(0),
                           cross_x[rows] if rows else np.zeros((0, poly.dim)),
                           emb[0], emb[1], at.nudge)


def crossing_count(poly: Polyhedron, curve) -> int:
    """Number of distinct simplices met by a curve."""
    return len(set(trace_curve(poly, curve).facets.tolist()))


# ------------------------------------------------------------------ deficits
def _pair_index(n1: int) -> np.ndarray:
    idx = np.full((n1, n1), -1, dtype=np.int64)
    for p, (i, j) in enumerate(combinations(range(n1), 2)):
        idx[i, j] = idx[j, i] = p
    return idx


def deficits(poly: Polyhedron) -> DeficitTable:
    cached = getattr(poly, "_deficits", None)
    if cached is not None:
        return cached
    B = poly.bones
    n1 = poly.dim + 1
    pairs = list(combinations(range(n1), 2))
    dih = euclid.dihedral_angles_batch(poly.facet_frames, pairs)     # (F, P)
    pid = _pair_index(n1)[B.ring_exit, B.ring_other]
    ring_dih = dih[B.ring_facet, pid]
    beta = np.add.reduceat(ring_dih, B.offsets[:-1]) if len(B) else np.zeros(0)
    alpha = 2 * np.pi - beta
    first = B.offsets[:-1]
    f0 = B.ring_facet[first]
    a0, b0 = B.ring_exit[first], B.ring_other[first]
    if poly.dim == 2:
        vol = np.ones(len(B))
    else:
        V = poly.facet_frames[f0]
        vol = np.empty(len(B))
        for k in range(len(B)):
            loc = [q for q in range(n1) if q not in (a0[k], b0[k])]
            vol[k] = euclid.simplex_volume(V[k, loc])
    table = DeficitTable(B.vertices, B.ring_sizes, ring_dih, beta, alpha, vol, B.ring_facet)
    poly._deficits = table
    return table


def deficit_table(poly: Polyhedron) -> list[DeficitRecord]:
    return deficits(poly).records()


def bone_points(poly: Polyhedron) -> np.ndarray:
    """Chart location of each bone: its vertex (n=2) or the chart mean of its vertices."""
    m = poly.manifold
    V = poly.positions[poly.bones.vertices]
    if V.shape[1] == 1:
        return V[:, 0]
    lifted = m.lift(np.broadcast_to(V[:, :1], V.shape), V)
    return m.wrap(lifted.mean(axis=1))


def regge_scalar(poly: Polyhedron, region=None) -> float:
    """Sum over bones (inside region, a predicate on chart points) of alpha * volume."""
    D = deficits(poly)
    terms = D.alpha * D.volume
    if region is not None:
        mask = np.asarray(region(bone_points(poly)), dtype=bool)
        terms = terms[mask]
    return fsum(terms.tolist())


def bones_in_region(poly: Polyhedron, region) -> int:
    if region is None:
        return len(poly.bones)
    return int(np.sum(region(bone_points(poly))))


# ------------------------------------------------------------ bone rotations
def _bone_frame(poly: Polyhedron, f, a, b):
    """Bone basis Q (N, n, n-2) and the positive completion (e1, e2) in facet frames.

    Bone directions follow the sorted order of the bone's vertex ids, and
    det[Q, e1, e2] has the sign of the complex orientation of the facet.
    """
    f = np.asarray(f)
    a = np.asarray(a)
    b = np.asarray(b)
    F = poly.complex.facets
    n = poly.dim
    n1 = n + 1
    N = len(f)
    r = np.arange(N)
    V = poly.facet_frames[f]
    allloc = np.arange(n1)[None, :].repeat(N, 0)
    mask = (allloc != a[:, None]) & (allloc != b[:, None])
    bl = allloc[mask].reshape(N, n - 1)
    order = np.argsort(F[f[:, None], bl], axis=1)
    bl = np.take_along_axis(bl, order, axis=1)
    p0 = V[r, bl[:, 0]]
    if n > 2:
        E = V[r[:, None], bl[:, 1:]] - p0[:, None]
        Q, R = np.linalg.qr(np.swapaxes(E, 1, 2))
        Q = Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]
    else:
        Q = np.zeros((N, n, 0))
    ua = V[r, a] - p0
    ub = V[r, b] - p0
    e1 = _unit_normal(np.swapaxes(Q, 1, 2), ua)
    e2 = _unit_normal(np.concatenate([np.swapaxes(Q, 1, 2), e1[:, None]], axis=1), ub)
    full = np.concatenate([Q, e1[:, :, None], e2[:, :, None]], axis=2)
    sgn = np.sign(np.linalg.det(full)) * poly.orientation[f]
    e2 = e2 * sgn[:, None]
    direction = np.sign(np.linalg.det(np.concatenate([Q, ua[:, :, None], ub[:, :, None]], axis=2))) \
        * poly.orientation[f]
    return Q, e1, e2, direction


def hodge_generator(poly: Polyhedron, f, a, b) -> np.ndarray:
    """Skew map of the unit bone 2-form (rotation generator of the normal plane) in facet frames."""
    _, e1, e2, _ = _bone_frame(poly, f, a, b)
    return e2[:, :, None] * e1[:, None, :] - e1[:, :, None] * e2[:, None, :]


def rotation_about_bone(poly: Polyhedron, f, a, b, alpha) -> np.ndarray:
    Q, e1, e2, _ = _bone_frame(poly, f, a, b)
    c = np.cos(alpha)[:, None, None]
    s = np.sin(alpha)[:, None, None]
    P = np.einsum("nik,njk->nij", Q, Q)
    E11 = e1[:, :, None] * e1[:, None, :]
    E22 = e2[:, :, None] * e2[:, None, :]
    G = e2[:, :, None] * e1[:, None, :] - e1[:, :, None] * e2[:, None, :]
    return P + c * (E11 + E22) + s * G


def bone_rotations(poly: Polyhedron, bones=None, start=None):
    """Loop transports around bones (positive ring direction) and their analytic rotations.

    start[k] is the ring position used as base simplex (default 0). Returns
    (T, R, base_facets).
    """
    B = poly.bones
    D = deficits(poly)
    idx = np.arange(len(B)) if bones is None else np.atleast_1d(np.asarray(bones, dtype=np.int64))
    size = B.ring_sizes[idx]
    st = np.zeros(len(idx), dtype=np.int64) if start is None else np.atleast_1d(np.asarray(start)) % size
    off = B.offsets[idx]
    e0 = off + st
    f0, a0, b0 = B.ring_facet[e0], B.ring_exit[e0], B.ring_other[e0]
    _, _, _, direction = _bone_frame(poly, f0, a0, b0)
    n = poly.dim
    T = np.broadcast_to(np.eye(n), (len(idx), n, n)).copy()
    maxlen = int(size.max()) if len(idx) else 0
    for k in range(maxlen):
        act = np.flatnonzero(k < size)
        if not len(act):
            break
        step = np.where(direction[act] > 0, k, -k)
        pos = off[act] + (st[act] + step) % size[act]
        f = B.ring_facet[pos]
        face = np.where(direction[act] > 0, B.ring_exit[pos], B.ring_other[pos])
        M, _, _ = crossing_maps(poly, f, face)
        T[act] = np.einsum("nji,njk->nik", M, T[act])
    R = rotation_about_bone(poly, f0, a0, b0, D.alpha[idx])
    return T, R, f0


def bone_rotation(poly: Polyhedron, bone: int, base: int | None = None, tol: float = 1e-9) -> FrameMap:
    """Flat transport once around a bone, starting in simplex `base` of its ring.

    The loop transport is compared with the rotation by the deficit angle in
    the plane normal to the bone; ConsistencyError if they differ by more
    than tol.
    """
    Bs = poly.bones
    ring, _, _ = Bs.ring(bone)
    if base is None:
        pos = 0
    else:
        hit = np.flatnonzero(ring == base)
        if not len(hit):
            raise ValidationError(f"simplex {base} is not in the star of bone {bone}")
        pos = int(hit[0])
    T, R, f0 = bone_rotations(poly, [bone], [pos])
    err = float(np.max(np.abs(T[0] - R[0])))
    if err > tol:
        raise ConsistencyError(f"loop transport around bone {bone} differs from the deficit rotation by {err:.3e}")
    return FrameMap(np.asarray(f0[0]), np.asarray(f0[0]), T[0])


def rotation_gap_norm(alpha) -> np.ndarray:
    """Operator norm of (rotation by alpha) - Id."""
    return np.sqrt(2.0 * (1.0 - np.cos(alpha)))


# ------------------------------------------------------------- loop curvature
def loop_regge_curvature(poly: Polyhedron, square: ParamSquare):
    """Flat transport around the reversed boundary of the square, minus Id.

    Returns (matrix, base facet); the matrix acts in the base simplex frame.
    """
    path = trace_curve(poly, square.boundary(reverse=True))
    if path.facets[-1] != path.facets[0]:
        raise ValidationError("boundary loop does not close up in one simplex")
    T = transport_matrix(poly, path.facets, path.faces)
    return T - np.eye(poly.dim), int(path.facets[0])


# ------------------------------------------------------------ intersections
@dataclass(frozen=True)
class Intersection:
    bone: int
    s: float
    t: float
    r: np.ndarray
    index: int
    point: np.ndarray


def _bone_map(poly: Polyhedron, bones):
    """B(r) and dB/dr for bone parameters r (N, n-2): edge geodesics for n=3, points for n=2."""
    m = poly.manifold
    n = poly.dim
    V = poly.bones.vertices[bones]
    if n == 2:
        p = poly.positions[V[:, 0]]

        def fn(r):
            return p, np.zeros((len(p), n, 0))
        return fn
    if n == 3:
        p = poly.positions[V[:, 0]]
        q = poly.positions[V[:, 1]]
        v = m.log(p, q)

        def fn(r):
            r = np.asarray(r, dtype=float).reshape(len(p), 1)
            x, w = m.exp(p, r * v, return_velocity=True)
            safe = np.where(np.abs(r) > 1e-12, r, 1.0)
            dB = np.where(np.abs(r) > 1e-12, w / safe, v)
            return x, dB[:, :, None]
        return fn
    raise ValidationError("intersection indices are implemented for n = 2 and n = 3")


def intersections(poly: Polyhedron, square: ParamSquare, bones=None, grid: int = 17,
                  cond_max: float = 1e6) -> list[Intersection]:
    """Transverse intersection points of the square with bones, with their indices."""
    m = poly.manifold
    n = poly.dim
    Sg, Tg, P = square.grid(grid)
    Pf = P.reshape(-1, n)
    bp = bone_points(poly)
    idx = np.arange(len(poly.bones)) if bones is None else np.atleast_1d(np.asarray(bones, dtype=np.int64))
    if not len(idx):
        return []
    # candidate bones near the sampled square
    spacing = max(float(np.max(np.linalg.norm(np.diff(P, axis=0), axis=-1))),
                  float(np.max(np.linalg.norm(np.diff(P, axis=1), axis=-1))))
    reach = 2.0 * spacing + (poly.mesh * 2.0 if n > 2 else 0.0)
    d = np.linalg.norm(m._residual(Pf[None, :, :], bp[idx][:, None, :]), axis=-1)
    near = np.min(d, axis=1) < reach
    idx = idx[near]
    if not len(idx):
        return []
    seed = np.argmin(d[near], axis=1)
    s = Sg.ravel()[seed].copy()
    t = Tg.ravel()[seed].copy()
    r = np.full((len(idx), n - 2), 0.5)
    bmap = _bone_map(poly, idx)
    ok = np.zeros(len(idx), dtype=bool)
    for it in range(40):
        G = square(s, t)
        ds, dt = square.partials(s, t)
        Bp, dB = bmap(r)
        F = m._residual(G, Bp)
        J = np.concatenate([ds[:, :, None], dt[:, :, None], -dB], axis=2)
        step = np.linalg.solve(J, -F[..., None])[..., 0]
        step_norm = np.max(np.abs(step), axis=1)
        lim = np.minimum(1.0, 0.25 / np.maximum(step_norm, 1e-300))
        step *= lim[:, None]
        s = s + step[:, 0]
        t = t + step[:, 1]
        r = r + step[:, 2:]
        ok = np.linalg.norm(F, axis=1) < 1e-12 * max(1.0, m.scale)
        if np.all(ok | (step_norm < 1e-14)):
            break
    G = square(s, t)
    ds, dt = square.partials(s, t)
    Bp, dB = bmap(r)
    F = m._residual(G, Bp)
    J = np.concatenate([dB, ds[:, :, None], dt[:, :, None]], axis=2)
    conv = np.linalg.norm(F, axis=1) < 1e-9 * max(1.0, poly.mesh)
    out = []
    tol_skel = TOL_SKEL_REL * poly.mesh
    gnorm = np.sqrt(np.einsum("ni,nij,nj->n", ds, m.metric(m.wrap(G)), ds)) + \
        np.sqrt(np.einsum("ni,nij,nj->n", dt, m.metric(m.wrap(G)), dt))
    ptol = tol_skel / np.maximum(gnorm, 1e-300)
    sigma = int(poly.orientation[0] * poly.chart_orientation[0])
    for k in range(len(idx)):
        if not conv[k]:
            continue
        rk = r[k]
        inside_sq = -ptol[k] <= s[k] <= 1 + ptol[k] and -ptol[k] <= t[k] <= 1 + ptol[k]
        inside_bone = np.all(rk >= -1e-9) and np.sum(rk) <= 1 + 1e-9
        if not (inside_sq and inside_bone):
            continue
        if min(s[k], 1 - s[k], t[k], 1 - t[k]) <= ptol[k]:
            raise NonTransverse(f"bone {idx[k]} meets the boundary of the square")
        if n > 2 and (np.min(rk) <= 1e-7 or np.sum(rk) >= 1 - 1e-7):
            raise NonTransverse(f"square meets the boundary of bone {idx[k]}")
        c = np.linalg.cond(J[k])
        if not np.isfinite(c) or c > cond_max:
            raise NonTransverse(f"square is tangent to bone {idx[k]} (condition {c:.3e})")
        sign = int(np.sign(np.linalg.det(J[k]))) * sigma
        out.append(Intersection(int(idx[k]), float(s[k]), float(t[k]), rk.copy(), sign, m.wrap(G[k])))
    return out


def intersection_index(poly: Polyhedron, square: ParamSquare, bone: int) -> int:
    return int(sum(x.index for x in intersections(poly, square, [bone])))


# ------------------------------------------------------------- regge curving
def _privileged_path(square: ParamSquare, s_end: float, t_end: float):
    """Up the left side to height t_end, then along t = t_end to s_end."""

    def fn(u):
        u = np.asarray(u, dtype=float)
        first = u < 0.5
        s = np.where(first, 0.0, (2 * u - 1) * s_end)
        t = np.where(first, 2 * u * t_end, t_end)
        return square(s, t)
    return fn


def regge_curving(poly: Polyhedron, square: ParamSquare) -> SkewMap:
    """Sum over bones met by the square of -alpha * index * (transported bone generator).

    The generator of each bone is carried back to the base simplex, the one
    containing G(0,0), along the parameter path up the left side and across.
    """
    n = poly.dim
    hits = intersections(poly, square)
    loc = locator(poly)
    m = poly.manifold
    f_base, _ = loc.locate(m.wrap(square.base[None]))
    f_base = int(f_base[0])
    total = np.zeros((n, n))
    if not hits:
        return SkewMap(f_base, total, np.eye(n))
    D = deficits(poly)
    Bs = poly.bones
    ds, _ = square.partials(np.array([h.s for h in hits]), np.array([h.t for h in hits]))
    speed = np.sqrt(np.einsum("ni,nij,nj->n", ds, m.metric(m.wrap(np.array([h.point for h in hits]))), ds))
    eta = np.minimum(0.05 * poly.mesh / np.maximum(speed, 1e-300),
                     0.5 * np.array([h.s for h in hits]))
    for attempt in range(4):
        curves = [_privileged_path(square, h.s - e, h.t) for h, e in zip(hits, eta)]
        paths = trace_curves(poly, curves)
        ends = np.array([p.facets[-1] for p in paths])
        bad = []
        for k, h in enumerate(hits):
            ring, _, _ = Bs.ring(h.bone)
            if ends[k] not in ring:
                bad.append(k)
        if not bad:
            break
        eta[bad] *= 0.25
    else:
        raise NonTransverse("could not reach the star of an intersected bone")
    for h, p in zip(hits, paths):
        chain = list(p.facets)
        faces = list(p.faces)
        if chain[0] != f_base:
            a = np.flatnonzero(poly.complex.neighbors[f_base] == chain[0])
            if not len(a):
                raise ValidationError("privileged path does not start in the base simplex")
            chain = [f_base] + chain
            faces = [int(a[0])] + faces
        T = transport_matrix(poly, chain, faces)
        ring, ra, rb = Bs.ring(h.bone)
        j = int(np.flatnonzero(ring == chain[-1])[0])
        Sh = hodge_generator(poly, [ring[j]], [ra[j]], [rb[j]])[0]
        total = total - D.alpha[h.bone] * h.index * (T.T @ Sh @ T)
    return SkewMap(f_base, total, np.eye(n))
