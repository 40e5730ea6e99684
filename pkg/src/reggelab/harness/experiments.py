"""Convergence sweeps and the kinematic Monte Carlo constants."""
from __future__ import annotations

import time
from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np

from .. import holonomy, regge
from ..complex import build_approximation
from ..errors import ReggeError
from .config import ExperimentConfig


@dataclass(frozen=True)
class ConvergenceRow:
    level: int
    E: int
    rho: float
    bones_in_region: int
    regge_sum: float
    integral_scal: float
    ratio: float
    transport_gap: float
    max_abs_deficit: float
    wallclock: float

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


class ExperimentError(ReggeError):
    """A level of a sweep failed; rows holds the levels completed before it."""

    def __init__(self, level: int, cause: Exception, rows: list):
        super().__init__(f"level {level} failed: {type(cause).__name__}: {cause}")
        self.level = level
        self.cause = cause
        self.rows = rows


def transport_curves(cfg: ExperimentConfig, m):
    box = None
    if cfg.geodesic_box:
        box = (cfg.geodesic_box["min"], cfg.geodesic_box["max"])
    return holonomy.seeded_geodesics(m, cfg.geodesics, cfg.geodesic_length, cfg.seed, box)


def run_convergence(cfg: ExperimentConfig, progress=None) -> list[ConvergenceRow]:
    """One row per refinement level, in level order.

    The transport gap is the largest compare_transport gap over the seeded
    geodesics (nan when none are configured).
    """
    m = cfg.build_manifold()
    K, P = cfg.base(m)
    region = cfg.region(m)
    whole = region.is_full(m)
    integral = m.integrate_scalar(region.lower, region.upper)
    curves = transport_curves(cfg, m) if cfg.geodesics > 0 else []
    rows: list[ConvergenceRow] = []
    for i, E in enumerate(cfg.levels):
        t0 = time.perf_counter()
        try:
            poly = build_approximation(m, K, P, E)
            D = regge.deficits(poly)
            pred = None if whole else region
            rs = regge.regge_scalar(poly, pred)
            nb = regge.bones_in_region(poly, pred)
            gap = float("nan")
            if curves:
                gap = max(holonomy.compare_transport(m, poly, c).gap for c in curves)
        except ReggeError as exc:
            raise ExperimentError(E, exc, rows) from exc
        ratio = rs / integral if abs(integral) > 1e-12 else float("nan")
        wall = time.perf_counter() - t0 if cfg.record_timing else float("nan")
        row = ConvergenceRow(i, E, poly.mesh, nb, rs, integral, ratio, gap,
                             float(np.max(np.abs(D.alpha))) if len(D) else 0.0, wall)
        rows.append(row)
        if progress is not None:
            progress(row)
    return rows


# ------------------------------------------------------------- kinematic
@dataclass(frozen=True)
class KinematicConstants:
    n: int
    c3: Fraction
    c2_estimate: float
    c2_stderr: float
    c1: float
    samples: int
    seed: int
    c2_raw: float
    c2_raw_stderr: float
    calibration: float


def _random_frames(rng, count: int, n: int):
    """Orthonormal 2-frames from the O(n)-invariant measure (QR of Gaussians)."""
    A = rng.standard_normal((count, n, 2))
    Q, R = np.linalg.qr(A)
    return Q * np.sign(np.diagonal(R, axis1=1, axis2=2))[:, None, :]


def kinematic_samples(n: int, samples: int, seed: int, rotation=None) -> np.ndarray:
    """Per-sample values of 2*pi * index * cos(angle(*X, u^v)) for unit squares.

    X is the span of the last n-2 axes (rotated by `rotation` if given). The
    base corner sits at distance s from X, s with density s ds on [0, sqrt 2],
    at a uniform angle in the normal plane.
    """
    rng = np.random.default_rng(seed)
    Rm = np.eye(n) if rotation is None else np.asarray(rotation, dtype=float)
    N2 = Rm[:, :2]                         # normal plane of X
    X = Rm[:, 2:]
    s = np.sqrt(rng.random(samples) * 2.0)   # density s ds on [0, sqrt 2]
    th = rng.random(samples) * 2 * np.pi
    p = s[:, None] * (np.cos(th)[:, None] * N2[:, 0] + np.sin(th)[:, None] * N2[:, 1])
    F = _random_frames(rng, samples, n)
    # project on the normal plane: p + a u + b v must vanish there
    Mp = np.einsum("ia,bij->baj", N2, F)      # (S, 2, 2): rows normal dirs, cols u, v
    pp = p @ N2
    det = Mp[:, 0, 0] * Mp[:, 1, 1] - Mp[:, 0, 1] * Mp[:, 1, 0]
    ok = np.abs(det) > 1e-14
    ab = np.zeros((samples, 2))
    ab[ok] = np.linalg.solve(Mp[ok], -pp[ok][..., None])[..., 0]
    hit = ok & np.all((ab >= 0.0) & (ab <= 1.0), axis=1)
    # index: sign det[X | u | v]; cos of the angle between u^v and *X is det of the projection
    full = np.concatenate([X[None].repeat(samples, 0), F], axis=2) if n > 2 else F
    orient = np.sign(np.linalg.det(full))
    return 2 * np.pi * np.where(hit, orient * det, 0.0)


def kinematic_c2(n: int, samples: int = 1_000_000, seed: int = 0, rotation=None,
                 calibration_samples: int | None = None,
                 c1_2: float = 0.5) -> KinematicConstants:
    """Monte Carlo c2(n) and c1(n) = c3(n) / c2(n), c3(n) = 2 / (n (n - 1)).

    The raw estimate uses the unnormalised fibre measure. The calibrated
    value rescales it so that the n = 2 run reproduces c1(2) = c1_2, which is
    1/2 exactly; a measured n = 2 convergence ratio can be passed instead.
    """
    if n < 2:
        raise ValueError("n must be at least 2")
    if samples < 10_000:
        raise ValueError("use at least 10^4 samples")
    vals = kinematic_samples(n, samples, seed, rotation)
    raw = float(vals.mean())
    raw_err = float(vals.std(ddof=1) / np.sqrt(samples))
    cal_vals = vals if n == 2 else kinematic_samples(2, calibration_samples or samples, seed)
    raw2 = float(cal_vals.mean())
    calibration = 1.0 / (c1_2 * raw2)       # c3(2) = 1
    c3 = Fraction(2, n * (n - 1))
    c2 = raw * calibration
    return KinematicConstants(n, c3, c2, raw_err * calibration, float(c3) / c2, samples, seed,
                              raw, raw_err, calibration)
