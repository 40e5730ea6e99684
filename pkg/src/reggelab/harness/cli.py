"""Command line front end: every subcommand reads a YAML config and writes a table.

Exit codes: 0 success, 2 validation failure, 3 solver failure, 64 usage error.
"""
from __future__ import annotations

import argparse
import dataclasses
import os
import sys

import numpy as np

from .. import euclid, holonomy, regge
from ..complex import build_approximation, dumps_polyhedron, read_polyhedron
from ..errors import ReggeError, SolverError, ValidationError
from . import io as tio
from .config import ExperimentConfig, build_squares
from .experiments import ConvergenceRow, ExperimentError, kinematic_c2, run_convergence

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_SOLVER = 3
EXIT_USAGE = 64


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Result:
    """Columns, rows and metadata of one command's table."""

    def __init__(self, columns, rows=None, meta=None):
        self.columns = list(columns)
        self.rows = rows if rows is not None else []
        self.meta = meta or {}
        self.error = None


# ------------------------------------------------------------- commands
def _level(cfg, args, default_last=False):
    if args.level is not None:
        return args.level
    return cfg.levels[-1] if default_last else cfg.levels[0]


def cmd_realize(cfg, args):
    if cfg.distances is None:
        raise ValidationError("realize needs a 'distances' file in the config")
    d = np.loadtxt(cfg.distances, ndmin=2)
    dm = euclid.DistanceMatrix(d)
    check = euclid.schoenberg_check(dm)
    meta = {"realizable": check.realizable, "min_eigenvalue": check.min_eigenvalue}
    s = euclid.embed_simplex(dm)
    V = s.vertices
    cols = ["vertex"] + [f"x{i}" for i in range(V.shape[1])]
    rows = [[i, *map(float, p)] for i, p in enumerate(V)]
    meta["volume"] = float(euclid.cayley_menger_volume(dm))
    return _Result(cols, rows, meta)


def cmd_approximate(cfg, args):
    m = cfg.build_manifold()
    K, P = cfg.base(m)
    E = _level(cfg, args, default_last=True)
    poly = build_approximation(m, K, P, E)
    return dumps_polyhedron(poly)


def _polyhedron(cfg, args):
    if cfg.polyhedron is not None and args.level is None:
        return read_polyhedron(cfg.polyhedron)
    m = cfg.build_manifold()
    K, P = cfg.base(m)
    return build_approximation(m, K, P, _level(cfg, args))


def cmd_deficits(cfg, args):
    poly = _polyhedron(cfg, args)
    D = regge.deficits(poly)
    cols = ["bone_id", "ring_size", "beta_total", "alpha", "vol_nm2"]
    rows = [[i, int(D.ring_sizes[i]), float(D.beta[i]), float(D.alpha[i]), float(D.volume[i])]
            for i in range(len(D))]
    return _Result(cols, rows, {"rho": float(poly.mesh)})


def cmd_regge_sum(cfg, args):
    c = dataclasses.replace(cfg, geodesics=0)
    result = _Result(["E", "rho", "bones_in_region", "regge_sum", "integral_scal", "ratio"])
    keep = [1, 2, 3, 4, 5, 6]

    def add(row):
        vals = dataclasses.astuple(row)
        result.rows.append([vals[k] for k in keep])

    _run_levels(result, lambda: run_convergence(c, progress=add))
    return result


def cmd_transport(cfg, args):
    from .experiments import transport_curves

    m = cfg.build_manifold()
    K, P = cfg.base(m)
    curves = transport_curves(cfg, m)
    result = _Result(["E", "rho", "geodesic", "gap", "crossings"])

    def run():
        for E in cfg.levels:
            try:
                poly = build_approximation(m, K, P, E)
                for j, c in enumerate(curves):
                    tc = holonomy.compare_transport(m, poly, c)
                    result.rows.append([E, float(poly.mesh), j, float(tc.gap), int(tc.crossings)])
            except ReggeError as exc:
                raise ExperimentError(E, exc, result.rows) from exc

    _run_levels(result, run)
    return result


def cmd_holonomy(cfg, args):
    m = cfg.build_manifold()
    squares = build_squares(m, cfg.squares, cfg.seed)
    if not squares:
        raise ValidationError("holonomy needs at least one entry under 'squares'")
    if args.curving:
        K, P = cfg.base(m)
        gauss = [holonomy.gauss_curving(m, q) for q in squares]
        result = _Result(["E", "rho", "square", "curving_gap"])

        def run():
            for E in cfg.levels:
                try:
                    poly = build_approximation(m, K, P, E)
                    for j, (q, gc) in enumerate(zip(squares, gauss)):
                        result.rows.append([E, float(poly.mesh), j, holonomy.curving_gap(m, poly, q, gc)])
                except ReggeError as exc:
                    raise ExperimentError(E, exc, result.rows) from exc

        _run_levels(result, run)
        return result
    cols = ["square", "label", "loop_identity_residual", "gauss_curving_norm", "loop_angle",
            "generalized_angle", "area_integral"]
    rows = []
    for j, q in enumerate(squares):
        x = q.base
        res = holonomy.loop_identity_residual(m, q)
        gc = holonomy.gauss_curving(m, q)
        gnorm = m.operator_norm(x, x, gc.matrix)
        loop = gen = area = float("nan")
        if m.dim == 2:
            e1, e2 = holonomy.oriented_frame(m, q)
            loop = holonomy.rotation_angle(m, x, holonomy.loop_transport(m, q).matrix, e1, e2)
            gen = holonomy.generalized_angle(m, q).angle
            area = holonomy.gauss_area_integral(m, q)
        rows.append([j, q.label, float(res), float(gnorm), loop, gen, area])
    return _Result(cols, rows)


def cmd_converge(cfg, args):
    result = _Result(ConvergenceRow.columns())
    _run_levels(result, lambda: run_convergence(cfg, progress=result.rows.append))
    return result


def cmd_kinematic(cfg, args):
    k = kinematic_c2(cfg.dim, cfg.samples, cfg.seed)
    cols = [f.name for f in dataclasses.fields(k)]
    return _Result(cols, [dataclasses.astuple(k)])


def _run_levels(result: _Result, fn):
    """Run a level sweep; on failure keep the partial rows and record the cause."""
    try:
        fn()
    except ExperimentError as exc:
        result.meta["failed_level"] = exc.level
        result.meta["error"] = str(exc)
        result.error = exc.cause


COMMANDS = {
    "realize": (cmd_realize, "embed a simplex from a distance-matrix file (Schoenberg test)"),
    "approximate": (cmd_approximate, "build the polyhedral approximation and write it"),
    "deficits": (cmd_deficits, "deficit angle table of a polyhedron"),
    "regge-sum": (cmd_regge_sum, "Regge sum over the region per level"),
    "transport": (cmd_transport, "smooth vs polyhedral transport gap per geodesic and level"),
    "holonomy": (cmd_holonomy, "holonomy identities on configured squares"),
    "converge": (cmd_converge, "full convergence sweep"),
    "kinematic": (cmd_kinematic, "Monte Carlo kinematic constants"),
}


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="reggelab", description="Numerical Regge calculus experiments.")
    p.add_argument("--threads", type=int, default=None, help="worker threads (sets REGGE_THREADS)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, (_, help_text) in COMMANDS.items():
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("config", help="YAML experiment config")
        sp.add_argument("-o", "--output", help="output path (default: config output, else stdout)")
        if name in ("approximate", "deficits"):
            sp.add_argument("--level", type=int, default=None, help="subdivision order E")
        else:
            sp.set_defaults(level=None)
        if name == "holonomy":
            sp.add_argument("--curving", action="store_true",
                            help="Regge vs Gauss curving gap per level instead of smooth identities")
    return p


def _emit(text: str, path):
    if path is None:
        sys.stdout.write(text)
    else:
        with open(path, "w") as fh:
            fh.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads is not None:
        if args.threads < 1:
            parser.error("--threads must be positive")
        os.environ["REGGE_THREADS"] = str(args.threads)
    try:
        cfg = ExperimentConfig.load(args.config)
    except OSError as exc:
        print(f"reggelab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ReggeError as exc:
        print(f"reggelab: invalid config: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    out = args.output or cfg.output
    fn = COMMANDS[args.command][0]
    try:
        res = fn(cfg, args)
    except ValidationError as exc:
        print(f"reggelab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverError, ReggeError) as exc:
        print(f"reggelab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    if isinstance(res, str):
        _emit(res, out)
        return EXIT_OK
    meta = {"command": args.command, "config": cfg.to_dict()}
    meta.update(res.meta)
    _emit(tio.dumps_table(res.columns, res.rows, meta), out)
    err = getattr(res, "error", None)
    if err is not None:
        print(f"reggelab: {res.meta['error']}", file=sys.stderr)
        return EXIT_VALIDATION if isinstance(err, ValidationError) else EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
