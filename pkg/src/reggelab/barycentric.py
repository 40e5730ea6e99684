"""Riemannian barycentric simplices.

A point set p_0..p_k inside a convex ball and weights lambda on the standard
simplex determine the minimizer of sum_i lambda_i d^2(p_i, .). Its first-order
condition sum_i lambda_i log_x(p_i) = 0 serves both as the optimality
certificate and as the equation inverted by bary_coords.

Functions accept a single problem (points (k+1, n), weights (k+1,)) or a
batch (points (B, k+1, n), weights (B, k+1)).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NoConvergence, SingularSystem, ValidationError
from .euclid import DistanceMatrix, EmbeddedSimplex, embed_simplex, thickness_batch
from .manifold import ChartManifold

SPREAD_THRESHOLD = 1e-5


@dataclass(frozen=True)
class PointSet:
    manifold: ChartManifold
    points: np.ndarray
    center: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        p = np.array(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != self.manifold.dim:
            raise ValidationError("points must have shape (k+1, n)")
        object.__setattr__(self, "points", p)
        if self.center is None:
            c = p[0]
            d = self.manifold.distance(np.broadcast_to(c, p.shape), p)
            object.__setattr__(self, "center", c)
            object.__setattr__(self, "radius", float(np.max(d)))
        if self.radius is not None and self.radius >= 2 * self.manifold.convexity_radius:
            raise ValidationError("enclosing ball exceeds the convexity radius hint")

    @property
    def k(self):
        return len(self.points) - 1


def _batch(points, lam=None):
    p = np.asarray(points, dtype=float)
    single = p.ndim == 2
    if single:
        p = p[None]
    if lam is None:
        return p, None, single
    w = np.asarray(lam, dtype=float)
    if w.ndim == 1:
        w = np.broadcast_to(w, p.shape[:2])
    return p, w, single


def check_weights(lam):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < -1e-12):
        raise ValidationError("barycentric weights must be nonnegative")
    if np.any(np.abs(lam.sum(-1) - 1.0) > 1e-12):
        raise ValidationError("barycentric weights must sum to 1")


def weighted_min(m: ChartManifold, points, lam, x0=None, tol=1e-9, max_iter=200):
    """Minimizer of sum_i lam_i d^2(p_i, x) by Riemannian gradient descent.

    Iterates x <- exp_x(step * sum_i lam_i log_x p_i) with step 1, halving the
    step whenever the objective fails to decrease. Stops when the g-norm of
    the gradient is below tol times the enclosing radius (the largest
    distance from the start point to the weighted vertices).
    """
    if isinstance(points, PointSet):
        points = points.points
    P, W, single = _batch(points, lam)
    check_weights(W)
    B, k1, n = P.shape
    if x0 is None:
        x = normal_guess(m, P, W)
    else:
        x = np.array(np.broadcast_to(x0, (B, n)), dtype=float)
    # exact vertex hits need no iteration
    vert = np.isclose(W.max(axis=1), 1.0, rtol=0, atol=1e-15)
    x[vert] = P[vert, np.argmax(W[vert], axis=1)]
    log_tol = max(0.1 * tol, 1e-11)
    act = np.flatnonzero(~vert)
    step = np.ones(B)
    f_cur = np.full(B, np.inf)
    radius = np.zeros(B)
    Lc = np.zeros((B, k1, n))      # logs at the last accepted point
    guess = np.zeros((B, k1, n))   # warm starts for the logs at the trial point
    Jc = np.full((B * k1, n, n), np.nan)  # exp Jacobians reused across iterations
    x_acc = x.copy()
    g_acc = np.zeros((B, n))
    first = True
    for _ in range(max_iter):
        if not len(act):
            break
        xa = np.repeat(x[act], k1, axis=0)
        rows = (act[:, None] * k1 + np.arange(k1)).ravel()
        La, Jr = m.log(xa, P[act].reshape(-1, n), v0=None if first else guess[act].reshape(-1, n),
                       tol=log_tol, check_ball=False, J0=Jc[rows], return_jacobian=True)
        La = La.reshape(-1, k1, n)
        Jc[rows] = Jr
        g = m.metric(x[act])
        sq = np.einsum("bin,bnm,bim->bi", La, g, La)
        f = np.sum(W[act] * sq, axis=1)
        if first:
            radius[act] = np.sqrt(np.max(sq, axis=1))
            first = False
        # objective noise floor: a relative log error e perturbs f by ~2 e r^2
        worse = f > f_cur[act] + 4 * log_tol * radius[act] ** 2
        rej = act[worse]
        acc = act[~worse]
        # accepted points: record, then test the gradient
        x_acc[acc] = x[acc]
        Lc[acc] = La[~worse]
        f_cur[acc] = f[~worse]
        grad = np.einsum("bi,bin->bn", W[acc], La[~worse])
        gn = np.sqrt(np.einsum("bn,bnm,bm->b", grad, g[~worse], grad))
        done = gn <= tol * np.maximum(radius[acc], 1e-300)
        mv = acc[~done]
        g_acc[mv] = grad[~done]
        step[mv] = np.minimum(1.0, 2.0 * step[mv])
        # rejected points: retry from the last accepted point with half the step
        step[rej] *= 0.5
        if np.any(step[rej] < 1e-10):
            raise NoConvergence("weighted minimum: step size collapsed")
        nxt = np.concatenate([mv, rej])
        if len(nxt):
            dx = step[nxt, None] * g_acc[nxt]
            x[nxt] = m.exp(x_acc[nxt], dx)
            guess[nxt] = Lc[nxt] - dx[:, None, :]
        act = np.sort(nxt)
    else:
        raise NoConvergence(f"weighted minimum: {len(act)} of {B} problems unconverged")
    return x[0] if single else x


def normal_guess(m: ChartManifold, P, W):
    """exp_{p_j}(sum_i lam_i log_{p_j} p_i) with p_j the heaviest vertex."""
    B, k1, n = P.shape
    j = np.argmax(W, axis=1)
    base = P[np.arange(B), j]
    L = m.log(np.repeat(base, k1, axis=0), P.reshape(-1, n), check_ball=False).reshape(B, k1, n)
    return m.exp(base, np.einsum("bi,bin->bn", W, L))


def geodesic_point(m: ChartManifold, p0, p1, t):
    """Point at parameter fraction t along the geodesic from p0 to p1."""
    p0 = np.asarray(p0, dtype=float)
    v = m.log(p0, p1)
    t = np.asarray(t, dtype=float)
    return m.exp(p0, t[..., None] * v)


def bary_coords(m: ChartManifold, points, x, cond_max=1e12):
    """Weights lam with sum_i lam_i log_x(p_i) = 0 and sum_i lam_i = 1."""
    if isinstance(points, PointSet):
        points = points.points
    P, _, single = _batch(points)
    B, k1, n = P.shape
    x = np.array(np.broadcast_to(x, (B, n)), dtype=float)
    L = m.log(np.repeat(x, k1, axis=0), P.reshape(-1, n), tol=1e-13, check_ball=False).reshape(B, k1, n)
    A = np.concatenate([np.swapaxes(L, 1, 2), np.ones((B, 1, k1))], axis=1)   # (B, n+1, k+1)
    rhs = np.zeros((B, n + 1))
    rhs[:, -1] = 1.0
    if k1 == n + 1:
        c = np.linalg.cond(A)
        if np.any(~np.isfinite(c)) or np.any(c > cond_max):
            raise SingularSystem(f"barycentric system is singular (condition {np.max(c):.3e})")
        lam = np.linalg.solve(A, rhs[..., None])[..., 0]
    else:
        lam = np.stack([np.linalg.lstsq(a, r, rcond=None)[0] for a, r in zip(A, rhs)])
        resid = np.einsum("bij,bj->bi", A, lam) - rhs
        if np.max(np.abs(resid)) > 1e-8:
            raise SingularSystem("point is not on the face spanned by the given vertices")
    return lam[0] if single else lam


def status(m: ChartManifold, points, x):
    """Squared distances from x to each vertex."""
    if isinstance(points, PointSet):
        points = points.points
    P = np.asarray(points, dtype=float)
    X = np.broadcast_to(np.asarray(x, dtype=float), P.shape)
    return m.distance(X, P) ** 2


def _sample_weights(k1, sample_count, rng):
    w = [np.eye(k1)]
    pairs = [(i, j) for i in range(k1) for j in range(i + 1, k1)]
    mids = np.zeros((len(pairs), k1))
    for r, (i, j) in enumerate(pairs):
        mids[r, [i, j]] = 0.5
    w.append(mids)
    w.append(np.full((1, k1), 1.0 / k1))
    if sample_count:
        w.append(rng.dirichlet(np.ones(k1), size=sample_count))
    return np.concatenate(w)


@dataclass(frozen=True)
class SpreadReport:
    spread: bool
    t_min: float
    samples: int
    threshold: float


def is_spread(m: ChartManifold, points, sample_count=20, seed=0) -> SpreadReport:
    """Sampled spread test: thickness of the log images at sample points."""
    if isinstance(points, PointSet):
        points = points.points
    t = spread_thickness(m, np.asarray(points, dtype=float)[None], sample_count, seed)[0]
    k1 = np.shape(points)[0]
    samples = k1 + k1 * (k1 - 1) // 2 + 1 + sample_count
    return SpreadReport(bool(t > SPREAD_THRESHOLD), float(t), samples, SPREAD_THRESHOLD)


def spread_thickness(m: ChartManifold, P, sample_count=20, seed=0) -> np.ndarray:
    """Minimum sampled thickness of the log images for a batch (B, k+1, n) of point sets.

    The same sample weights are used for every set in the batch.
    """
    P = np.asarray(P, dtype=float)
    B, k1, n = P.shape
    rng = np.random.default_rng(seed)
    W = _sample_weights(k1, sample_count, rng)
    S_ = len(W)
    PP = np.repeat(P, S_, axis=0)                              # (B*S, k1, n)
    Q = weighted_min(m, PP, np.tile(W, (B, 1)))
    L = m.log(np.repeat(Q, k1, axis=0), PP.reshape(-1, n), check_ball=False).reshape(B * S_, k1, n)
    Sq, _ = m.sqrt_metric(Q)
    verts = np.einsum("bnm,bim->bin", Sq, L)
    if k1 - 1 != n:
        # lower-dimensional faces: express in an orthonormal basis of their span
        e = verts[:, 1:] - verts[:, :1]
        q, _ = np.linalg.qr(np.swapaxes(e, 1, 2))
        verts = np.einsum("bnk,bin->bik", q, verts - verts[:, :1])
    with np.errstate(all="ignore"):
        t = thickness_batch(verts)
    t = np.where(np.isfinite(t), t, 0.0)
    return t.reshape(B, S_).min(axis=1)


def realize_euclidean(m: ChartManifold, points) -> EmbeddedSimplex:
    """Euclidean simplex with the geodesic distances as edge lengths."""
    if isinstance(points, PointSet):
        points = points.points
    P = np.asarray(points, dtype=float)
    k1 = len(P)
    iu, ju = np.triu_indices(k1, 1)
    d = np.zeros((k1, k1))
    d[iu, ju] = m.distance(P[iu], P[ju])
    d = d + d.T
    return embed_simplex(DistanceMatrix(d))


def differential(m: ChartManifold, points, verts_embedded, lam, h_rel=1e-4, tol=1e-12):
    """Chart differential of the barycentric map at weights lam.

    The map sends a point y of the Euclidean simplex with vertices
    verts_embedded (k+1, n) to weighted_min of its affine barycentric
    coordinates. Returns (x, dT) with dT (B, n, n) acting on embedded vectors.
    """
    P, W, single = _batch(points, lam)
    V = np.asarray(verts_embedded, dtype=float)
    if V.ndim == 2:
        V = np.broadcast_to(V, (len(P),) + V.shape)
    B, k1, n = P.shape
    if k1 != n + 1:
        raise ValidationError("differential needs a full-dimensional simplex")
    diam = np.max(np.linalg.norm(V[:, :, None] - V[:, None], axis=-1), axis=(1, 2))
    h = h_rel * diam
    # d lam for unit embedded directions: [V^T; 1] dlam = [u; 0]
    A = np.concatenate([np.swapaxes(V, 1, 2), np.ones((B, 1, k1))], axis=1)
    rhs = np.concatenate([np.eye(n), np.zeros((1, n))], axis=0)
    dlam = np.linalg.solve(A, np.broadcast_to(rhs, (B, n + 1, n)))   # (B, k+1, n)
    Wp = W[:, None, :] + h[:, None, None] * np.swapaxes(dlam, 1, 2)
    Wm = W[:, None, :] - h[:, None, None] * np.swapaxes(dlam, 1, 2)
    if np.any(Wp < 0) or np.any(Wm < 0):
        raise ValidationError("sample too close to the simplex boundary for central differences")
    allw = np.concatenate([W[:, None], Wp, Wm], axis=1).reshape(-1, k1)
    allp = np.repeat(P, 2 * n + 1, axis=0)
    X = weighted_min(m, allp, allw, tol=tol).reshape(B, 2 * n + 1, n)
    x = X[:, 0]
    Xp = m.lift(x[:, None], X[:, 1:n + 1])
    Xm = m.lift(x[:, None], X[:, n + 1:])
    dT = np.swapaxes((Xp - Xm) / (2 * h[:, None, None]), 1, 2)
    if single:
        return x[0], dT[0]
    return x, dT


def metric_discrepancy(m: ChartManifold, points, sample_count=10, seed=0, margin=0.1) -> float:
    """sup over samples and directions of |1 - |dT u|_g^2 / |u|^2| relative to |dT u|_g^2."""
    if isinstance(points, PointSet):
        points = points.points
    P = np.asarray(points, dtype=float)
    k1, n = P.shape
    simplex = realize_euclidean(m, P)
    rng = np.random.default_rng(seed)
    W = rng.dirichlet(np.ones(k1), size=sample_count)
    W = margin / k1 + (1 - margin) * W
    W = np.concatenate([np.full((1, k1), 1.0 / k1), W])
    x, dT = differential(m, np.broadcast_to(P, (len(W), k1, n)), simplex.vertices, W)
    H = np.einsum("bni,bnm,bmj->bij", dT, m.metric(x), dT)
    mu = np.linalg.eigvalsh(H)
    return float(np.max(np.abs(1.0 - mu) / mu))
