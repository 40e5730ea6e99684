"""Experiment configuration (YAML) and chart-box regions."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..errors import ValidationError
from ..manifold import ChartManifold


@dataclass(frozen=True)
class ChartBox:
    """Region predicate: a chart box, with periodic axes compared modulo the period."""

    lower: np.ndarray
    upper: np.ndarray
    period: np.ndarray

    @classmethod
    def of(cls, m: ChartManifold, lower=None, upper=None) -> "ChartBox":
        lo = m.lower if lower is None else np.asarray(lower, dtype=float)
        hi = m.upper if upper is None else np.asarray(upper, dtype=float)
        if lo.shape != (m.dim,) or hi.shape != (m.dim,):
            raise ValidationError(f"region bounds must have {m.dim} entries")
        if np.any(hi <= lo):
            raise ValidationError("region max must exceed min on every axis")
        return cls(lo, hi, np.where(m.periodic, m.period, 0.0))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d = x - self.lower
        per = self.period > 0
        if per.any():
            d[..., per] = np.mod(d[..., per], self.period[per])
        width = self.upper - self.lower
        tol = 1e-12 * np.maximum(1.0, np.abs(width))
        return np.all((d >= -tol) & (d <= width + tol), axis=-1)

    def is_full(self, m: ChartManifold) -> bool:
        width = self.upper - self.lower
        full_axis = np.where(m.periodic, width >= m.period, (self.lower <= m.lower) & (self.upper >= m.upper))
        return bool(np.all(full_axis))


@dataclass
class ExperimentConfig:
    manifold: str
    manifold_params: dict = field(default_factory=dict)
    base_complex: str = "torus_grid"
    base_params: dict = field(default_factory=dict)
    levels: list = field(default_factory=lambda: [1])
    region_min: list | None = None
    region_max: list | None = None
    seed: int = 0
    tolerances: dict = field(default_factory=dict)
    output: str | None = None
    geodesics: int = 10
    geodesic_length: float = 0.8
    geodesic_box: dict | None = None
    squares: list = field(default_factory=list)
    distances: str | None = None
    samples: int = 1_000_000
    dim: int = 3
    record_timing: bool = False
    polyhedron: str | None = None

    def __post_init__(self):
        lv = [int(v) for v in self.levels]
        if not lv or any(v < 1 for v in lv):
            raise ValidationError("levels must be positive integers")
        if any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValidationError("levels must be strictly increasing")
        self.levels = lv
        self.seed = int(self.seed)

    # ---------------------------------------------------------------- io
    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ValidationError("config must be a mapping")
        d = dict(d)
        known = {"manifold", "base_complex", "levels", "region", "seed", "tolerances", "output",
                 "transport", "squares", "distances", "kinematic", "record_timing", "polyhedron"}
        extra = set(d) - known
        if extra:
            raise ValidationError(f"unknown config keys: {sorted(extra)}")
        man = d.get("manifold")
        if isinstance(man, str):
            man = {"name": man}
        if not isinstance(man, dict) or "name" not in man:
            raise ValidationError("config needs manifold.name")
        base = d.get("base_complex", "torus_grid")
        if isinstance(base, str):
            base = {"name": base}
        region = d.get("region") or {}
        tr = d.get("transport") or {}
        kin = d.get("kinematic") or {}
        return cls(
            manifold=str(man["name"]),
            manifold_params=dict(man.get("params") or {}),
            base_complex=str(base.get("name", "torus_grid")),
            base_params=dict(base.get("params") or {}),
            levels=list(d.get("levels", [1])),
            region_min=region.get("min"),
            region_max=region.get("max"),
            seed=d.get("seed", 0),
            tolerances=dict(d.get("tolerances") or {}),
            output=d.get("output"),
            geodesics=int(tr.get("geodesics", 10)),
            geodesic_length=float(tr.get("length", 0.8)),
            geodesic_box=tr.get("box"),
            squares=list(d.get("squares") or []),
            distances=d.get("distances"),
            samples=int(kin.get("samples", 1_000_000)),
            dim=int(kin.get("n", 3)),
            record_timing=bool(d.get("record_timing", False)),
            polyhedron=d.get("polyhedron"),
        )

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ValidationError(f"cannot parse {path}: {exc}") from None
        cfg = cls.from_dict(data)
        # relative file references are resolved against the config location
        for key in ("distances", "polyhedron"):
            val = getattr(cfg, key)
            if val is not None and not Path(val).is_absolute():
                setattr(cfg, key, str((path.parent / val).resolve()))
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        return {k: v for k, v in d.items() if v is not None}

    # ------------------------------------------------------------ helpers
    def build_manifold(self) -> ChartManifold:
        from .catalog import catalog
        return catalog(self.manifold, self.manifold_params)

    def region(self, m: ChartManifold) -> ChartBox:
        return ChartBox.of(m, self.region_min, self.region_max)

    def base(self, m: ChartManifold):
        from .catalog import base_complex
        return base_complex(m, self.base_complex, self.base_params)


def build_squares(m: ChartManifold, specs, seed: int = 0) -> list:
    """Squares from config entries.

    Each entry is one of
      {octant: true}                                   the sphere octant
      {random: k, r: side, box: {min, max}, seed, perturb}
      {x: point, u: vector, v: vector, r: side, perturb, seed}
    where u, v default to the g-orthonormalised first two chart axes.
    """
    from .. import holonomy as H

    out = []
    for i, spec in enumerate(specs):
        if not isinstance(spec, dict):
            raise ValidationError(f"square entry {i} must be a mapping")
        if spec.get("octant"):
            out.append(H.octant_square(m))
        elif "random" in spec:
            box = spec.get("box")
            b = None if box is None else (box["min"], box["max"])
            out.extend(H.random_squares(m, int(spec["random"]), float(spec.get("r", 1.0)),
                                        int(spec.get("seed", seed)), b, float(spec.get("perturb", 0.0))))
        elif "x" in spec:
            x = np.asarray(spec["x"], dtype=float)
            if "u" in spec:
                u, v = np.asarray(spec["u"], float), np.asarray(spec["v"], float)
            else:
                u, v = H.coordinate_frame(m, x, float(spec.get("angle", 0.0)))
            out.append(H.riemannian_square(m, x, u, v, float(spec.get("r", 1.0)),
                                           float(spec.get("perturb", 0.0)), int(spec.get("seed", seed))))
        else:
            raise ValidationError(f"square entry {i} needs one of octant, random, x")
    return out
