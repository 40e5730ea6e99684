"""Simplicial complexes, edgewise subdivision and approximating polyhedra.

A complex is stored by its top-dimensional simplices ("facets"), each a row
of vertex ids in a fixed order. The order matters for subdivision: facets
sharing a face must list the shared vertices in the same relative order,
which holds when every facet is ordered by one global (or locally
consistent) vertex order.
"""
from __future__ import annotations

import io
import json
from dataclasses import dataclass
from functools import cached_property
from itertools import combinations, permutations, product
from math import floor

import numpy as np

from . import euclid
from ._parallel import map_chunks
from .barycentric import SPREAD_THRESHOLD, geodesic_point, spread_thickness, weighted_min
from .errors import (BadRange, NonManifoldStar, NonOrientable, NotRealizable, SpreadFailure,
                     ValidationError)
from .manifold import ChartManifold

FORMAT_VERSION = 1


def _perm_parity(rows: np.ndarray) -> np.ndarray:
    """+1/-1 parity of the permutation sorting each row (distinct entries)."""
    k = rows.shape[-1]
    inv = np.zeros(rows.shape[:-1], dtype=int)
    for i in range(k):
        for j in range(i + 1, k):
            inv += rows[..., i] > rows[..., j]
    return 1 - 2 * (inv % 2)


def _unique_rows(rows: np.ndarray):
    """Unique sorted-tuple rows with inverse, first-occurrence order kept stable."""
    uniq, first, inverse = np.unique(rows, axis=0, return_index=True, return_inverse=True)
    return uniq, first, inverse.reshape(-1)


@dataclass
class BoneSet:
    """Interior (n-2)-simplices with their cyclically ordered stars.

    Ring k occupies ring_facet[offsets[k]:offsets[k+1]]. Along the ring, the
    step from entry r to entry r+1 crosses the face of ring_facet[r] opposite
    its local vertex ring_exit[r]; ring_other[r] is the local index of the
    second vertex of that facet that is not on the bone.
    """

    vertices: np.ndarray      # (Nb, n-1) sorted vertex ids
    offsets: np.ndarray       # (Nb+1,)
    ring_facet: np.ndarray
    ring_exit: np.ndarray
    ring_other: np.ndarray

    def __len__(self):
        return len(self.vertices)

    def ring(self, k: int):
        s = slice(self.offsets[k], self.offsets[k + 1])
        return self.ring_facet[s], self.ring_exit[s], self.ring_other[s]

    @property
    def ring_sizes(self) -> np.ndarray:
        return np.diff(self.offsets)


class SimplicialComplex:
    """Pure n-dimensional simplicial complex given by its facets."""

    def __init__(self, facets, num_vertices: int | None = None):
        F = np.array(facets, dtype=np.int64)
        if F.ndim != 2 or F.shape[0] == 0:
            raise ValidationError("facets must be a non-empty (F, n+1) integer array")
        if np.any(np.sort(F, axis=1)[:, 1:] == np.sort(F, axis=1)[:, :-1]):
            raise ValidationError("a facet repeats a vertex")
        if F.min() < 0:
            raise ValidationError("negative vertex id")
        nv = int(F.max()) + 1 if num_vertices is None else int(num_vertices)
        if F.max() >= nv:
            raise ValidationError("vertex id out of range")
        if len(np.unique(np.sort(F, axis=1), axis=0)) != len(F):
            raise ValidationError("duplicate facets")
        F.setflags(write=False)
        self.facets = F
        self.num_vertices = nv
        self.dim = F.shape[1] - 1
        # fail early on branching faces
        _ = self.neighbors

    def __len__(self):
        return len(self.facets)

    # ---------------------------------------------------------- adjacency
    @cached_property
    def _facet_faces(self):
        F = self.facets
        n1 = self.dim + 1
        local = [[k for k in range(n1) if k != i] for i in range(n1)]
        rows = np.sort(F[:, local], axis=2).reshape(-1, self.dim)   # (F*(n+1), n)
        faces, _, inv = _unique_rows(rows)
        return faces, inv.reshape(len(F), n1)

    @property
    def faces(self) -> np.ndarray:
        """(n-1)-simplices as sorted vertex tuples."""
        return self._facet_faces[0]

    @property
    def facet_faces(self) -> np.ndarray:
        """(F, n+1): id of the face opposite each local vertex."""
        return self._facet_faces[1]

    @cached_property
    def _adjacency(self):
        faces, ff = self._facet_faces
        Fn, n1 = ff.shape
        flat = ff.ravel()
        counts = np.bincount(flat, minlength=len(faces))
        if np.any(counts > 2):
            bad = int(np.flatnonzero(counts > 2)[0])
            raise NonManifoldStar(f"face {tuple(faces[bad])} borders {counts[bad]} facets")
        order = np.argsort(flat, kind="stable")
        nb = np.full(Fn * n1, -1, dtype=np.int64)
        sf = flat[order]
        pair = np.flatnonzero(sf[1:] == sf[:-1])
        a, b = order[pair], order[pair + 1]
        nb[a] = b
        nb[b] = a
        nbf = np.where(nb >= 0, nb // n1, -1).reshape(Fn, n1)
        nbl = np.where(nb >= 0, nb % n1, -1).reshape(Fn, n1)
        return nbf, nbl, counts

    @property
    def neighbors(self) -> np.ndarray:
        """(F, n+1): facet across the face opposite each local vertex, -1 on the boundary."""
        return self._adjacency[0]

    @property
    def neighbor_local(self) -> np.ndarray:
        """(F, n+1): local index, in the neighbor, of the vertex opposite the shared face."""
        return self._adjacency[1]

    @property
    def boundary_faces(self) -> np.ndarray:
        """Ids of faces bordering a single facet."""
        return np.flatnonzero(self._adjacency[2] == 1)

    @property
    def is_closed(self) -> bool:
        return len(self.boundary_faces) == 0

    # ------------------------------------------------------------ counting
    def simplices(self, k: int) -> np.ndarray:
        """All k-simplices as sorted vertex tuples."""
        if not 0 <= k <= self.dim:
            raise ValidationError(f"no {k}-simplices in a {self.dim}-complex")
        if k == self.dim:
            return np.unique(np.sort(self.facets, axis=1), axis=0)
        cols = list(combinations(range(self.dim + 1), k + 1))
        rows = np.sort(self.facets[:, cols], axis=2).reshape(-1, k + 1)
        return np.unique(rows, axis=0)

    def f_vector(self) -> list[int]:
        out = [0] * (self.dim + 1)
        for k in range(self.dim + 1):
            out[k] = self.num_vertices if k == 0 else len(self.simplices(k))
        return out

    def euler_characteristic(self) -> int:
        return int(sum((-1) ** k * c for k, c in enumerate(self.f_vector())))

    # --------------------------------------------------------- orientation
    @cached_property
    def _face_parity(self) -> np.ndarray:
        """(F, n+1): sign of the face opposite local i as induced by the facet order."""
        n1 = self.dim + 1
        local = [[k for k in range(n1) if k != i] for i in range(n1)]
        par = _perm_parity(self.facets[:, local])
        return par * np.array([(-1) ** i for i in range(n1)])

    @cached_property
    def orientation(self) -> np.ndarray:
        """Flags eps_f in {+1,-1} making eps_f*[facet row] a coherent orientation.

        Facet 0 gets +1. Raises NonOrientable if no coherent choice exists.
        """
        nbf, nbl = self.neighbors, self.neighbor_local
        s = self._face_parity
        Fn = len(self.facets)
        flag = np.zeros(Fn, dtype=np.int8)
        nbf_l, nbl_l, s_l = nbf.tolist(), nbl.tolist(), s.tolist()
        for root in range(Fn):
            if flag[root]:
                continue
            flag[root] = 1
            stack = [root]
            while stack:
                f = stack.pop()
                ef = int(flag[f])
                for a, g in enumerate(nbf_l[f]):
                    if g < 0:
                        continue
                    want = -ef * s_l[f][a] * s_l[g][nbl_l[f][a]]
                    if flag[g] == 0:
                        flag[g] = want
                        stack.append(g)
                    elif flag[g] != want:
                        raise NonOrientable("the complex admits no coherent orientation")
        return flag.astype(np.int64)

    # --------------------------------------------------------------- bones
    @cached_property
    def bones(self) -> BoneSet:
        return bones(self)


# ------------------------------------------------------------------ bones
def bones(K: SimplicialComplex) -> BoneSet:
    """Interior (n-2)-simplices and the cyclic order of their stars."""
    n = K.dim
    if n < 2:
        raise ValidationError("bones need dimension at least 2")
    F = K.facets
    n1 = n + 1
    pairs = list(combinations(range(n1), 2))
    keep = [[k for k in range(n1) if k not in p] for p in pairs]
    rows = np.sort(F[:, keep], axis=2).reshape(-1, n - 1)
    bverts, first, inv = _unique_rows(rows)
    inv = inv.reshape(len(F), len(pairs))
    Nb = len(bverts)
    counts = np.bincount(inv.ravel(), minlength=Nb)

    # bones lying in a boundary face
    on_bd = np.zeros(Nb, dtype=bool)
    nbf = K.neighbors
    bf, ba = np.nonzero(nbf < 0)
    for p, (i, j) in enumerate(pairs):
        for a in (i, j):
            hit = ba == a
            on_bd[inv[bf[hit], p]] = True

    interior = np.flatnonzero(~on_bd)
    f0 = first[interior] // len(pairs)
    p0 = first[interior] % len(pairs)
    pa = np.array(pairs)
    a = pa[p0, 0].copy()
    b = pa[p0, 1].copy()
    f = f0.copy()
    nbl = K.neighbor_local
    maxlen = int(counts[interior].max()) if len(interior) else 0
    lengths = np.zeros(len(interior), dtype=np.int64)
    hist_f = np.zeros((len(interior), maxlen), dtype=np.int64)
    hist_a = np.zeros_like(hist_f)
    hist_b = np.zeros_like(hist_f)
    live = np.ones(len(interior), dtype=bool)
    for step in range(maxlen + 1):
        if not live.any():
            break
        idx = np.flatnonzero(live)
        if step == maxlen:
            raise NonManifoldStar(f"star of bone {tuple(bverts[interior[idx[0]]])} is not a single cycle")
        hist_f[idx, step] = f[idx]
        hist_a[idx, step] = a[idx]
        hist_b[idx, step] = b[idx]
        lengths[idx] += 1
        fi, ai, bi = f[idx], a[idx], b[idx]
        g = nbf[fi, ai]
        if np.any(g < 0):
            raise NonManifoldStar("bone ring reached the boundary")
        e = nbl[fi, ai]
        carried = F[fi, bi]
        loc = np.argmax(F[g] == carried[:, None], axis=1)
        f[idx], a[idx], b[idx] = g, loc, e
        live[idx] = g != f0[idx]
    if np.any(lengths != counts[interior]):
        k = int(np.flatnonzero(lengths != counts[interior])[0])
        raise NonManifoldStar(
            f"star of bone {tuple(bverts[interior[k]])} splits into several cycles "
            f"({lengths[k]} of {counts[interior[k]]} simplices reached)")
    offsets = np.concatenate([[0], np.cumsum(lengths)])
    mask = np.arange(maxlen)[None, :] < lengths[:, None]
    return BoneSet(bverts[interior], offsets, hist_f[mask], hist_a[mask], hist_b[mask])


# ------------------------------------------------------------ subdivision
@dataclass(frozen=True)
class KuhnTemplate:
    """Edgewise subdivision of the standard n-simplex into E^n cells.

    grid holds the integer barycentric points c (sum E); cells index into it.
    """

    n: int
    E: int
    grid: np.ndarray
    cells: np.ndarray


def kuhn_template(n: int, E: int) -> KuhnTemplate:
    """Cells are the Kuhn chains of unit cubes lying in E >= y1 >= ... >= yn >= 0,
    with y_j = c_j + ... + c_n."""
    if E < 1 or int(E) != E:
        raise BadRange(f"subdivision order must be a positive integer, got {E}")
    E = int(E)

    def ok(y):
        return all(0 <= v <= E for v in y) and all(y[i] >= y[i + 1] for i in range(n - 1))

    def to_c(y):
        c = [E - y[0]] + [y[j] - y[j + 1] for j in range(n - 1)] + [y[n - 1]]
        return tuple(c)

    cells_y = []
    for z in product(range(E), repeat=n):
        if not ok(z):
            continue
        for perm in permutations(range(n)):
            w = [tuple(z)]
            cur = list(z)
            for p in perm:
                cur[p] += 1
                w.append(tuple(cur))
            if all(ok(y) for y in w):
                cells_y.append(w)
    assert len(cells_y) == E**n
    index: dict[tuple, int] = {}
    cells = np.zeros((len(cells_y), n + 1), dtype=np.int64)
    for ci, w in enumerate(cells_y):
        for k, y in enumerate(w):
            c = to_c(y)
            cells[ci, k] = index.setdefault(c, len(index))
    grid = np.array(sorted(index, key=index.get), dtype=np.int64)
    return KuhnTemplate(n, E, grid, cells)


@dataclass
class Subdivision:
    """Refined complex plus, per new vertex, its base support and weights."""

    complex: SimplicialComplex
    E: int
    parent: np.ndarray           # (F_E,) base facet of each cell
    support: np.ndarray          # (V_E, n+1) base vertex ids, -1 padded
    weights: np.ndarray          # (V_E, n+1) integer weights summing to E


def refine(K: SimplicialComplex, E: int) -> Subdivision:
    """Edgewise subdivision of every facet of K with order E."""
    T = kuhn_template(K.dim, E)
    n1 = K.dim + 1
    keys: dict[tuple, int] = {}
    support = []
    weights = []
    cell_rows = []
    for f, row in enumerate(K.facets.tolist()):
        gid = np.empty(len(T.grid), dtype=np.int64)
        for gi, c in enumerate(T.grid.tolist()):
            key = tuple(sorted((row[i], c[i]) for i in range(n1) if c[i] > 0))
            v = keys.get(key)
            if v is None:
                v = len(keys)
                keys[key] = v
                ids = [p[0] for p in key] + [-1] * (n1 - len(key))
                ws = [p[1] for p in key] + [0] * (n1 - len(key))
                support.append(ids)
                weights.append(ws)
            gid[gi] = v
        cell_rows.append(gid[T.cells])
    facets = np.concatenate(cell_rows, axis=0)
    parent = np.repeat(np.arange(len(K.facets)), len(T.cells))
    Kn = SimplicialComplex(facets, len(keys))
    return Subdivision(Kn, int(E), parent, np.array(support, dtype=np.int64),
                       np.array(weights, dtype=np.int64))


def subdivide(K: SimplicialComplex, E: int) -> SimplicialComplex:
    return refine(K, E).complex


def choose_E(rho: float, betaT: float, Dn: float) -> int:
    """Subdivision order coupled to a target mesh: floor(1 + betaT*Dn/rho)."""
    top = betaT * Dn
    if not (np.isfinite(rho) and rho > 0 and top > 0 and rho <= top):
        raise BadRange(f"need 0 < rho <= betaT*Dn, got rho={rho}, betaT*Dn={top}")
    return int(floor(1.0 + top / rho))


# ------------------------------------------------------- base complexes
def octahedron() -> SimplicialComplex:
    """Boundary of the cross-polytope; vertices +x, -x, +y, -y, +z, -z."""
    tris = [(i, j, k) for i in (0, 1) for j in (2, 3) for k in (4, 5)]
    return SimplicialComplex(tris, 6)


def octahedron_vertices() -> np.ndarray:
    return np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], dtype=float)


def torus_grid(m: int, n: int = 2) -> SimplicialComplex:
    """Freudenthal triangulation of the n-torus built on an m^n grid (m >= 3).

    Every unit cube z is cut into the n! chains z, z+e_p1, z+e_p1+e_p2, ...;
    facets are listed in chain order, which is consistent on shared faces.
    """
    if m < 3:
        raise ValidationError("torus grid needs m >= 3 to be a simplicial complex")

    def vid(z):
        return int(np.ravel_multi_index(tuple(zi % m for zi in z), (m,) * n))

    facets = []
    for z in product(range(m), repeat=n):
        for perm in permutations(range(n)):
            cur = list(z)
            chain = [vid(cur)]
            for p in perm:
                cur[p] += 1
                chain.append(vid(cur))
            facets.append(chain)
    return SimplicialComplex(facets, m**n)


def torus_grid_positions(m: int, n: int, L: float) -> np.ndarray:
    idx = np.array(list(product(range(m), repeat=n)), dtype=float)
    return L * idx / m


def fan_disc(k: int) -> SimplicialComplex:
    """Disc made of k triangles around vertex 0; boundary vertices 1..k."""
    if k < 3:
        raise ValidationError("a fan disc needs at least 3 triangles")
    return SimplicialComplex([(0, i, i % k + 1) for i in range(1, k + 1)], k + 1)


# ------------------------------------------------------------ polyhedron
@dataclass(frozen=True)
class QualityReport:
    t_min: float
    diam_max: float
    vol_min_ratio: float      # min n-volume / rho^n
    bones_count: int
    boundary_faces: int
    orientation_mismatches: int  # facets whose chart orientation disagrees with the complex orientation

    @property
    def closed(self) -> bool:
        return self.boundary_faces == 0


class Polyhedron:
    """A simplicial complex with chart vertex positions and geodesic edge lengths.

    facet_frames holds, per facet, the canonical Euclidean realization of
    its edge lengths (vertex 0 at the origin, lower-triangular frame).
    orientation holds the coherent complex orientation, signed so that it
    agrees with the chart orientation on the first facet.
    """

    def __init__(self, manifold: ChartManifold, complex: SimplicialComplex, positions,
                 edges, edge_lengths, orientation=None):
        self.manifold = manifold
        self.complex = complex
        n = complex.dim
        if manifold.dim != n:
            raise ValidationError(f"complex dimension {n} does not match manifold dimension {manifold.dim}")
        pos = np.array(positions, dtype=float)
        if pos.shape != (complex.num_vertices, n):
            raise ValidationError(f"positions must have shape {(complex.num_vertices, n)}")
        self.positions = pos
        edges = np.asarray(edges, dtype=np.int64)
        lengths = np.asarray(edge_lengths, dtype=float)
        if np.any(edges[:, 0] >= edges[:, 1]):
            raise ValidationError("edges must be listed with i < j")
        self.edges = edges
        self.edge_lengths = lengths
        # per-facet edge ids
        cols = list(combinations(range(n + 1), 2))
        pairs = np.sort(complex.facets[:, cols], axis=2)
        key = pairs[..., 0] * complex.num_vertices + pairs[..., 1]
        ekey = edges[:, 0] * complex.num_vertices + edges[:, 1]
        order = np.argsort(ekey)
        pos_in = np.searchsorted(ekey[order], key)
        pos_in = np.minimum(pos_in, len(ekey) - 1)
        eid = order[pos_in]
        if np.any(ekey[eid] != key):
            raise ValidationError("edge list does not cover every facet edge")
        self.facet_edges = eid                                      # (F, P)
        d = np.zeros((len(complex.facets), n + 1, n + 1))
        ii, jj = np.array(cols).T
        d[:, ii, jj] = lengths[eid]
        d[:, jj, ii] = lengths[eid]
        self.facet_distances = d
        self.facet_frames = _realize_all(d, pos, complex)
        if orientation is None:
            orientation = complex.orientation * int(self.chart_orientation[0])
        self.orientation = np.asarray(orientation, dtype=np.int64)

    @property
    def dim(self) -> int:
        return self.complex.dim

    @cached_property
    def chart_orientation(self) -> np.ndarray:
        """Sign of det of the lifted chart edge vectors of each facet."""
        P = self.positions[self.complex.facets]
        base = P[:, :1]
        lifted = self.manifold.lift(np.broadcast_to(base, P.shape), P)
        e = lifted[:, 1:] - base
        return np.sign(np.linalg.det(e)).astype(np.int64)

    @cached_property
    def mesh(self) -> float:
        """rho: max g-diameter of the facets (the longest edge)."""
        return float(np.max(self.edge_lengths[self.facet_edges]))

    @cached_property
    def volumes(self) -> np.ndarray:
        return euclid.simplex_volume(self.facet_frames)

    @cached_property
    def bones(self) -> BoneSet:
        return self.complex.bones

    @cached_property
    def quality(self) -> QualityReport:
        n = self.dim
        t = euclid.thickness_batch(self.facet_frames)
        rho = self.mesh
        return QualityReport(
            t_min=float(np.min(t)),
            diam_max=rho,
            vol_min_ratio=float(np.min(self.volumes) / rho**n),
            bones_count=len(self.bones),
            boundary_faces=len(self.complex.boundary_faces),
            orientation_mismatches=int(np.sum(self.orientation != self.chart_orientation)),
        )

    def frame(self, f: int) -> euclid.EmbeddedSimplex:
        return euclid.EmbeddedSimplex(self.facet_frames[f])

    def edge_length(self, i: int, j: int) -> float:
        i, j = min(i, j), max(i, j)
        hit = np.flatnonzero((self.edges[:, 0] == i) & (self.edges[:, 1] == j))
        if not len(hit):
            raise ValidationError(f"({i}, {j}) is not an edge")
        return float(self.edge_lengths[hit[0]])

    def facet_chart(self, f) -> np.ndarray:
        """Chart vertex positions of facet(s) f, lifted next to the first vertex."""
        P = self.positions[self.complex.facets[f]]
        base = P[..., :1, :]
        return self.manifold.lift(np.broadcast_to(base, P.shape), P)


def _realize_all(d: np.ndarray, pos: np.ndarray, K: SimplicialComplex) -> np.ndarray:
    D = euclid.gram_from_distances(d)
    lam = np.linalg.eigvalsh(D)[:, 0]
    scale2 = np.max(d, axis=(1, 2)) ** 2
    bad = np.flatnonzero(lam <= euclid.PD_RTOL * scale2)
    if len(bad):
        f = int(bad[0])
        raise NotRealizable(
            f"{len(bad)} simplices fail the Schoenberg test; first is facet {f} "
            f"{tuple(K.facets[f])} near chart point {np.round(pos[K.facets[f]].mean(0), 6).tolist()} "
            f"(min eigenvalue {lam[f]:.3e})")
    return euclid.embed_batch(d, check=False)


def unique_edges(K: SimplicialComplex) -> np.ndarray:
    return K.simplices(1)


def place_vertices(m: ChartManifold, base_positions: np.ndarray, sub: Subdivision) -> np.ndarray:
    """Chart positions of the refined vertices (the barycentric interpolation map)."""
    n = m.dim
    E = sub.E
    supp = sub.support
    w = sub.weights
    size = np.sum(supp >= 0, axis=1)
    out = np.empty((len(supp), n))
    one = np.flatnonzero(size == 1)
    out[one] = base_positions[supp[one, 0]]
    two = np.flatnonzero(size == 2)
    if len(two):
        p0 = base_positions[supp[two, 0]]
        p1 = base_positions[supp[two, 1]]
        t = w[two, 1] / E

        def seg(a, b, s):
            return geodesic_point(m, a, b, s)

        out[two] = map_chunks(seg, [p0, p1, t])
    for k in range(3, n + 2):
        sel = np.flatnonzero(size == k)
        if not len(sel):
            continue
        P = base_positions[supp[sel, :k]]
        lam = w[sel, :k] / E

        def bary(Pc, lc):
            return weighted_min(m, Pc, lc)

        out[sel] = map_chunks(bary, [P, lam], chunk=2048)
    return m.wrap(out)


def edge_lengths(m: ChartManifold, positions: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Geodesic length of each edge, from the log at the lower-index endpoint."""

    def lengths(x, y):
        v = m.log(x, y)
        return m.norm(x, v)

    return map_chunks(lengths, [positions[edges[:, 0]], positions[edges[:, 1]]])


def build_approximation(m: ChartManifold, base: SimplicialComplex, base_positions, E: int,
                        spread_samples: int = 4) -> Polyhedron:
    """Subdivide base with order E and realize it on m.

    New vertices are placed by Riemannian barycentric interpolation of the
    base facet vertices with the subdivision grid weights; edge lengths are
    geodesic distances. Each base facet is first checked to be spread.
    """
    base_positions = np.asarray(base_positions, dtype=float)
    if base_positions.shape != (base.num_vertices, m.dim):
        raise ValidationError(f"base positions must have shape {(base.num_vertices, m.dim)}")
    inside = m.inside(base_positions)
    if not np.all(inside):
        raise ValidationError(f"base vertex {int(np.flatnonzero(~inside)[0])} lies outside the chart domain")
    if spread_samples:
        t = spread_thickness(m, base_positions[base.facets], sample_count=spread_samples)
        bad = np.flatnonzero(t <= SPREAD_THRESHOLD)
        if len(bad):
            f = int(bad[0])
            raise SpreadFailure(f"base facet {f} {tuple(base.facets[f])} is not spread (t_min {t[f]:.3e})")
    sub = refine(base, E)
    pos = place_vertices(m, base_positions, sub)
    edges = unique_edges(sub.complex)
    lengths = edge_lengths(m, pos, edges)
    return Polyhedron(m, sub.complex, pos, edges, lengths)


# --------------------------------------------------------- serialization
def dumps_polyhedron(poly: Polyhedron) -> str:
    K = poly.complex
    m = poly.manifold
    buf = io.StringIO()
    buf.write(f"# reggelab polyhedron v{FORMAT_VERSION}\n")
    buf.write(f"manifold {m.name} {json.dumps(m.params, sort_keys=True)}\n")
    buf.write(f"dim {K.dim}\n")
    buf.write(f"[vertices] {K.num_vertices}\n")
    for i, p in enumerate(poly.positions):
        buf.write(f"{i} " + " ".join("%.16e" % c for c in p) + "\n")
    buf.write(f"[simplices] {len(K.facets)}\n")
    for row, o in zip(K.facets, poly.orientation):
        buf.write(f"{K.dim} " + " ".join(str(v) for v in row) + f" {int(o)}\n")
    buf.write(f"[edges] {len(poly.edges)}\n")
    for (i, j), ell in zip(poly.edges, poly.edge_lengths):
        buf.write(f"{i} {j} %.16e\n" % ell)
    return buf.getvalue()


def write_polyhedron(poly: Polyhedron, path) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_polyhedron(poly))


def loads_polyhedron(text: str, manifold: ChartManifold | None = None) -> Polyhedron:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("# reggelab polyhedron v"):
        raise ValidationError("not a reggelab polyhedron file")
    version = int(lines[0].rsplit("v", 1)[1])
    if version != FORMAT_VERSION:
        raise ValidationError(f"unsupported polyhedron format version {version}")
    _, name, params = lines[1].split(" ", 2)
    if manifold is None:
        from .harness.catalog import catalog
        manifold = catalog(name, json.loads(params))
    dim = int(lines[2].split()[1])
    k = 3

    def section(label, k):
        head = lines[k].split()
        if head[0] != label:
            raise ValidationError(f"expected section {label}, found {lines[k]!r}")
        cnt = int(head[1])
        return [ln.split() for ln in lines[k + 1:k + 1 + cnt]], k + 1 + cnt

    vrows, k = section("[vertices]", k)
    srows, k = section("[simplices]", k)
    erows, k = section("[edges]", k)
    pos = np.array([[float(c) for c in r[1:]] for r in vrows])
    facets = [[int(v) for v in r[1:-1]] for r in srows]
    if any(int(r[0]) != dim for r in srows):
        raise ValidationError("simplex dimension does not match the header")
    orient = [int(r[-1]) for r in srows]
    edges = np.array([[int(r[0]), int(r[1])] for r in erows], dtype=np.int64)
    lengths = np.array([float(r[2]) for r in erows])
    K = SimplicialComplex(facets, len(vrows))
    return Polyhedron(manifold, K, pos, edges, lengths, orientation=orient)


def read_polyhedron(path, manifold: ChartManifold | None = None) -> Polyhedron:
    with open(path) as fh:
        return loads_polyhedron(fh.read(), manifold)

