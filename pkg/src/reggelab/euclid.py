"""Euclidean simplex geometry.

Realization of simplices from edge lengths, quality measures (inradius about
the centroid, thickness, openness), dihedral angles and unfolding across a
shared facet. The batched helpers at the bottom are what the polyhedron code
uses; the scalar API wraps them.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from math import factorial, sqrt

import numpy as np

from .errors import Degenerate, FacetMismatch, NotRealizable, ValidationError

PD_RTOL = 1e-10        # Schoenberg positive-definiteness, relative to max d^2
DEGENERATE_RTOL = 1e-12  # volume / diameter^n below this counts as degenerate
CM_RTOL = 1e-9          # tolerated negative Cayley-Menger value, relative


def regular_volume(n: int) -> float:
    """Volume of the regular n-simplex of diameter 1."""
    if n == 0:
        return 1.0
    return sqrt(n + 1) / (factorial(n) * 2.0 ** (n / 2))


def thickness_bound(n: int) -> float:
    """Thickness of the regular n-simplex, the maximum over all n-simplices."""
    return 1.0 / sqrt(2.0 * n * (n + 1))


@dataclass(frozen=True)
class DistanceMatrix:
    """Edge lengths of a k-simplex as a symmetric (k+1, k+1) array."""

    d: np.ndarray

    def __post_init__(self):
        d = np.array(self.d, dtype=float)
        if d.ndim != 2 or d.shape[0] != d.shape[1] or d.shape[0] < 2:
            raise ValidationError(f"distance matrix must be square with at least 2 rows, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise ValidationError("distance matrix has non-finite entries")
        if np.any(np.diag(d) != 0.0):
            raise ValidationError("distance matrix must have zero diagonal")
        if not np.array_equal(d, d.T):
            if not np.allclose(d, d.T, rtol=1e-12, atol=0.0):
                raise ValidationError("distance matrix is not symmetric")
            d = 0.5 * (d + d.T)
        off = d[~np.eye(len(d), dtype=bool)]
        if np.any(off <= 0.0):
            raise ValidationError("off-diagonal distances must be positive")
        d.setflags(write=False)
        object.__setattr__(self, "d", d)

    @property
    def order(self) -> int:
        return self.d.shape[0] - 1

    @property
    def scale(self) -> float:
        return float(self.d.max())

    @classmethod
    def from_points(cls, points) -> "DistanceMatrix":
        p = np.asarray(points, dtype=float)
        diff = p[:, None, :] - p[None, :, :]
        return cls(np.sqrt(np.sum(diff**2, axis=-1)))

    @classmethod
    def from_edges(cls, k: int, lengths: dict) -> "DistanceMatrix":
        """Build from a mapping {(i, j): length} over all pairs i < j."""
        d = np.zeros((k + 1, k + 1))
        for (i, j), v in lengths.items():
            d[i, j] = d[j, i] = v
        return cls(d)


@dataclass(frozen=True)
class SchoenbergResult:
    realizable: bool
    min_eigenvalue: float


def gram_from_distances(d: np.ndarray) -> np.ndarray:
    """D_ij = (d_i0^2 + d_j0^2 - d_ij^2)/2, batched over leading axes."""
    d2 = np.asarray(d, dtype=float) ** 2
    r = d2[..., 1:, :1]
    c = d2[..., :1, 1:]
    return 0.5 * (r + c - d2[..., 1:, 1:])


def schoenberg_check(dm: DistanceMatrix) -> SchoenbergResult:
    D = gram_from_distances(dm.d)
    lam = float(np.linalg.eigvalsh(D)[0])
    return SchoenbergResult(lam > PD_RTOL * dm.scale**2, lam)


def cayley_menger_volume(dm: DistanceMatrix) -> float:
    """k-volume of the simplex with the given edge lengths."""
    k = dm.order
    s = dm.scale
    d2 = (dm.d / s) ** 2
    cm = np.ones((k + 2, k + 2))
    cm[0, 0] = 0.0
    cm[1:, 1:] = d2
    v2 = (-1) ** (k + 1) * np.linalg.det(cm) / (2.0**k * factorial(k) ** 2)
    if v2 < -CM_RTOL:
        raise NotRealizable(f"Cayley-Menger determinant has the wrong sign ({v2:.3e} in unit scale)")
    return sqrt(max(v2, 0.0)) * s**k


def simplex_volume(vertices: np.ndarray) -> np.ndarray:
    """k-volume of simplices given as (..., k+1, m) vertex arrays, m >= k."""
    v = np.asarray(vertices, dtype=float)
    k = v.shape[-2] - 1
    if k == 0:
        return np.ones(v.shape[:-2])
    e = v[..., 1:, :] - v[..., :1, :]
    g = e @ np.swapaxes(e, -1, -2)
    det = np.clip(np.linalg.det(g), 0.0, None)
    return np.sqrt(det) / factorial(k)


def embed_batch(d: np.ndarray, check: bool = True) -> np.ndarray:
    """Canonical realizations of a stack of distance matrices.

    d has shape (N, k+1, k+1); returns vertices (N, k+1, k) with v0 at the
    origin and the edge vectors given by a lower-triangular factor with
    positive diagonal.
    """
    d = np.asarray(d, dtype=float)
    D = gram_from_distances(d)
    if check:
        lam = np.linalg.eigvalsh(D)[..., 0]
        scale2 = np.max(d, axis=(-1, -2)) ** 2
        bad = lam <= PD_RTOL * scale2
        if np.any(bad):
            i = int(np.flatnonzero(bad.ravel())[0])
            raise NotRealizable(
                f"simplex {i} fails the Schoenberg test (min eigenvalue {lam.ravel()[i]:.3e})"
            )
    L = np.linalg.cholesky(D)
    out = np.zeros(d.shape[:-2] + (d.shape[-1], d.shape[-1] - 1))
    out[..., 1:, :] = L
    return out


class EmbeddedSimplex:
    """A k-simplex realized in R^m (m >= k), vertices as rows."""

    def __init__(self, vertices):
        v = np.array(vertices, dtype=float)
        if v.ndim != 2 or v.shape[0] < 2 or v.shape[1] < v.shape[0] - 1:
            raise ValidationError(f"bad vertex array shape {v.shape}")
        v.setflags(write=False)
        self.vertices = v

    @property
    def dim(self) -> int:
        return self.vertices.shape[0] - 1

    def distance_matrix(self) -> DistanceMatrix:
        return DistanceMatrix.from_points(self.vertices)

    @cached_property
    def diameter(self) -> float:
        v = self.vertices
        return float(np.max(np.linalg.norm(v[:, None] - v[None], axis=-1)))

    @cached_property
    def volume(self) -> float:
        return float(simplex_volume(self.vertices))

    @property
    def is_degenerate(self) -> bool:
        return self.volume < DEGENERATE_RTOL * self.diameter**self.dim

    def _require_nondegenerate(self):
        if self.is_degenerate:
            raise Degenerate(f"{self.dim}-simplex has volume {self.volume:.3e}")

    @cached_property
    def inradius(self) -> float:
        return inradius(self)

    @cached_property
    def thickness(self) -> float:
        return self.inradius / self.diameter

    @cached_property
    def openness(self) -> float:
        self._require_nondegenerate()
        return self.volume / self.diameter**self.dim

    def __repr__(self):
        return f"EmbeddedSimplex(dim={self.dim}, vertices={self.vertices.tolist()})"


def embed_simplex(dm: DistanceMatrix) -> EmbeddedSimplex:
    res = schoenberg_check(dm)
    if not res.realizable:
        raise NotRealizable(f"distance matrix is not realizable (min eigenvalue {res.min_eigenvalue:.3e})")
    return EmbeddedSimplex(embed_batch(dm.d[None], check=False)[0])


def face_volumes(vertices: np.ndarray) -> np.ndarray:
    """(n-1)-volumes of the facets opposite each vertex, shape (..., n+1)."""
    v = np.asarray(vertices, dtype=float)
    n1 = v.shape[-2]
    out = []
    for i in range(n1):
        idx = [j for j in range(n1) if j != i]
        out.append(simplex_volume(v[..., idx, :]))
    return np.stack(out, axis=-1)


def inradius_batch(vertices: np.ndarray) -> np.ndarray:
    """Radius of the largest ball about the centroid inside each simplex."""
    v = np.asarray(vertices, dtype=float)
    n = v.shape[-2] - 1
    vol = simplex_volume(v)
    fv = face_volumes(v)
    return np.min(n * vol[..., None] / ((n + 1) * fv), axis=-1)


def diameter_batch(vertices: np.ndarray) -> np.ndarray:
    v = np.asarray(vertices, dtype=float)
    return np.max(np.linalg.norm(v[..., :, None, :] - v[..., None, :, :], axis=-1), axis=(-1, -2))


def thickness_batch(vertices: np.ndarray) -> np.ndarray:
    return inradius_batch(vertices) / diameter_batch(vertices)


def inradius(s: EmbeddedSimplex) -> float:
    s._require_nondegenerate()
    return float(inradius_batch(s.vertices))


def thickness(s: EmbeddedSimplex) -> float:
    return inradius(s) / s.diameter


def openness(s: EmbeddedSimplex) -> float:
    return s.openness


def openness_bounds(n: int, omega: float) -> tuple[float, float]:
    """Lower and upper thickness bounds implied by the openness omega."""
    c = n / (n + 1)
    upper = c * regular_volume(n) ** ((n - 1) / n) / regular_volume(n - 1) * omega ** (1.0 / n)
    lower = c * omega / regular_volume(n - 1)
    return lower, upper


def _orthonormal_complement(e: np.ndarray, m: int) -> np.ndarray:
    """Columns spanning the orthogonal complement of the rows of e in R^m."""
    if e.shape[0] == 0:
        return np.eye(m)
    q, _ = np.linalg.qr(np.concatenate([e.T, np.eye(m)], axis=1))
    return q[:, e.shape[0]:m]


def dihedral_angles_batch(vertices: np.ndarray, pairs) -> np.ndarray:
    """Dihedral angles at bones of simplices (..., n+1, n).

    Each pair (i, j) names the two vertices not on the bone, so the bone is the
    face spanned by the remaining n-1 vertices. Returns shape (..., len(pairs)).
    """
    v = np.asarray(vertices, dtype=float)
    n1 = v.shape[-2]
    out = []
    for i, j in pairs:
        bone = [k for k in range(n1) if k not in (i, j)]
        b0 = v[..., bone[0], :]
        ui = v[..., i, :] - b0
        uj = v[..., j, :] - b0
        if len(bone) > 1:
            E = v[..., bone[1:], :] - b0[..., None, :]
            Q, _ = np.linalg.qr(np.swapaxes(E, -1, -2))
            ui = _reject(ui, Q)
            uj = _reject(uj, Q)
        w = uj / np.linalg.norm(uj, axis=-1)[..., None]
        c = np.sum(ui * w, axis=-1)
        perp = ui - c[..., None] * w
        out.append(np.arctan2(np.linalg.norm(perp, axis=-1), c))
    return np.stack(out, axis=-1)


def _reject(u: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Remove from u its component in the column span of orthonormal Q."""
    coef = np.einsum("...ka,...k->...a", Q, u)
    return u - np.einsum("...ka,...a->...k", Q, coef)


def dihedral_angle(s: EmbeddedSimplex, bone) -> float:
    """Interior dihedral angle at a bone.

    bone is the pair (i, j) of vertex indices *not* on the bone: the angle is
    between the facets opposite i and opposite j.
    """
    s._require_nondegenerate()
    i, j = bone
    if i == j or not (0 <= i <= s.dim and 0 <= j <= s.dim):
        raise ValidationError(f"bad bone pair {bone}")
    if s.vertices.shape[1] != s.dim:
        raise ValidationError("dihedral angles need a full-dimensional realization")
    return float(dihedral_angles_batch(s.vertices, [(i, j)])[0])


def place_apex(facet: np.ndarray, dists: np.ndarray, away_from: np.ndarray | None = None) -> np.ndarray:
    """Point at the given distances from the n facet vertices in R^n.

    The two solutions are mirror images through the facet hyperplane; the one
    on the side opposite to ``away_from`` is returned.
    """
    F = np.asarray(facet, dtype=float)
    n = F.shape[1]
    E = F[1:] - F[0]
    rhs = 0.5 * (dists[0] ** 2 + np.sum(E**2, axis=1) - dists[1:] ** 2)
    if len(E):
        coef = np.linalg.solve(E @ E.T, rhs)
        t = coef @ E
    else:
        t = np.zeros(n)
    h2 = dists[0] ** 2 - t @ t
    scale = max(float(np.max(dists)), float(np.max(np.abs(E))) if len(E) else 0.0)
    if h2 <= (DEGENERATE_RTOL * scale) ** 2:
        raise Degenerate(f"apex is (nearly) on the facet hyperplane, h^2 = {h2:.3e}")
    normal = _orthonormal_complement(E, n)[:, 0]
    side = 1.0
    if away_from is not None:
        side = -1.0 if (np.asarray(away_from) - F[0]) @ normal > 0 else 1.0
    return F[0] + t + side * sqrt(h2) * normal


def unfold_adjacent(a: EmbeddedSimplex, b_lengths: DistanceMatrix, shared) -> EmbeddedSimplex:
    """Realize b in a's coordinates, glued along the shared facet.

    shared is a sequence of n pairs (index in a, index in b). The result has
    b's vertex order, coincides with a on the shared facet, and puts b's
    remaining vertex on the other side of the facet hyperplane.
    """
    n = a.dim
    if a.vertices.shape[1] != n:
        raise ValidationError("unfolding needs a full-dimensional realization")
    if b_lengths.order != n:
        raise ValidationError("simplices of different dimension")
    shared = [tuple(p) for p in shared]
    if len(shared) != n:
        raise ValidationError(f"a shared facet has {n} vertices, got {len(shared)}")
    ia = [p[0] for p in shared]
    ib = [p[1] for p in shared]
    if len(set(ia)) != n or len(set(ib)) != n:
        raise ValidationError("facet correspondence repeats a vertex")
    da = a.distance_matrix().d
    db = b_lengths.d
    scale = max(a.diameter, b_lengths.scale)
    mism = np.max(np.abs(da[np.ix_(ia, ia)] - db[np.ix_(ib, ib)]))
    if mism > 1e-9 * scale:
        raise FacetMismatch(f"shared facet lengths differ by {mism:.3e}")
    a_rest = [k for k in range(n + 1) if k not in ia][0]
    b_rest = [k for k in range(n + 1) if k not in ib][0]
    F = a.vertices[ia]
    apex = place_apex(F, db[b_rest, ib], away_from=a.vertices[a_rest])
    out = np.zeros((n + 1, n))
    out[ib] = F
    out[b_rest] = apex
    return EmbeddedSimplex(out)


def orthogonal_from_frames(src: np.ndarray, dst: np.ndarray) -> np.ndarray:
    """Linear part M of the affine map sending simplex src onto dst vertexwise."""
    es = src[..., 1:, :] - src[..., :1, :]
    ed = dst[..., 1:, :] - dst[..., :1, :]
    # M es_i = ed_i for every edge row i:  M = ed^T es^{-T}
    return np.swapaxes(np.linalg.solve(es, ed), -1, -2)
