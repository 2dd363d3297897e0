"""Command line interface.

Exit status is 0 on success, 2 for usage or input-format errors and 3 when
the computation itself fails numerically.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
import time
from pathlib import Path
from typing import Dict, List, Optional

from scipy.linalg import LinAlgError

from . import __version__
from .distance import DISTANCES, NCCUndefinedError
from .experiments import RECIPES, parse_angles, run_recipe
from .grid import GridSpec, ScalarField
from .io import (
    FormatError,
    export_pgm,
    read_any,
    read_field,
    read_sinogram,
    write_field,
    write_sinogram,
    write_velocity,
)
from .metrics import dice, ssim
from .optimizer import OptimizerConfig, multilevel_reconstruct
from .phantoms import PHANTOMS, add_noise, make_phantom
from .radon import DEFAULT_DETECTOR_LENGTH, Sinogram, fbp, geometry_for_level, radon_forward
from .regularizer import REG_KINDS, RegConfig
from .solution_map import KINDS

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3
log = logging.getLogger("tbir")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _level_of(m: int) -> int:
    k = int(round(math.log2(m)))
    if 2**k != m:
        raise UsageError(f"grid size {m} is not a power of two")
    return k


def _write_summary(path: Path, values: Dict[str, object]) -> None:
    with open(path, "w") as fh:
        for key, value in values.items():
            if isinstance(value, float):
                value = repr(value)
            fh.write(f"{key}={value}\n")


# -- subcommands -------------------------------------------------------------


def cmd_phantom(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    template, target = make_phantom(args.kind, args.m, strength=args.strength, contrast=args.contrast)
    write_field(out / "template.tbir", template)
    write_field(out / "target.tbir", target)
    print(out / "template.tbir")
    print(out / "target.tbir")
    return EXIT_OK


def cmd_forward(args) -> int:
    f = read_field(args.field)
    if f.grid.n != 2:
        raise UsageError("forward projection of 3D fields is not supported from the command line")
    geom = geometry_for_level(parse_angles(args.angles), _level_of(f.grid.m), args.detector_length)
    s = radon_forward(f, geom)
    write_sinogram(args.out, s)
    print(f"p={geom.p} q={geom.q} -> {args.out}")
    return EXIT_OK


def cmd_noise(args) -> int:
    s = read_sinogram(args.sinogram)
    write_sinogram(args.out, add_noise(s, args.level, args.seed))
    return EXIT_OK


def cmd_fbp(args) -> int:
    s = read_sinogram(args.sinogram)
    if args.m is None:
        if s.geometry.level is None:
            raise UsageError("cannot infer the grid size from the bin count; pass --m")
        m = 2**s.geometry.level
    else:
        m = args.m
    write_field(args.out, fbp(s, GridSpec(2, m)))
    return EXIT_OK


def cmd_ssim(args) -> int:
    a, b = read_field(args.a), read_field(args.b)
    if a.grid != b.grid:
        raise UsageError(f"{args.a} and {args.b} live on different grids")
    print(repr(ssim(a, b)))
    return EXIT_OK


def cmd_export_pgm(args) -> int:
    data = read_any(args.input)
    if not isinstance(data, (ScalarField, Sinogram)):
        raise UsageError("only fields and sinograms can be exported")
    export_pgm(args.output, data)
    return EXIT_OK


def _optimizer_config(args) -> OptimizerConfig:
    return OptimizerConfig(max_gn_iters=args.max_iters, preconditioner=args.preconditioner)


def cmd_reconstruct(args) -> int:
    template = read_field(args.template)
    data = read_sinogram(args.data)
    k_max = _level_of(template.grid.m)
    if data.geometry.level != k_max:
        raise UsageError(
            f"{args.data}: {data.geometry.q} detector bins do not match a {template.grid.m}-cell template "
            f"(expected {int(1.5 * 2**k_max)})"
        )
    k_min = k_max - args.levels + 1 if args.k_min is None else args.k_min
    if not 1 <= k_min <= k_max:
        raise UsageError(f"coarsest level must lie in [1, {k_max}]")
    reg = RegConfig(args.reg, args.gamma_s, template.grid, args.m_t, args.gamma_t, args.gamma_0)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    with open(out / "iterations.log", "w") as logfile:
        def on_iteration(rec):
            logfile.write(rec.line() + "\n")
            logfile.flush()
            log.info(rec.line())

        res = multilevel_reconstruct(
            template, data, args.pde, args.distance, reg, _optimizer_config(args),
            k_min=k_min, k_max=k_max, n_steps=args.n_steps, callback=on_iteration,
        )
    seconds = time.perf_counter() - start
    write_field(out / "result.tbir", res.field)
    write_velocity(out / "velocity.tbir", res.v)
    last = res.reports[-1]
    summary: Dict[str, object] = dict(
        pde=args.pde, distance=args.distance, reg=args.reg, gamma_s=args.gamma_s, gamma_t=args.gamma_t,
        gamma_0=args.gamma_0, m_t=args.m_t, n_steps=args.n_steps, k_min=k_min, k_max=k_max,
        final_J=last.J, final_D=last.history[-1].D, final_R=last.history[-1].R,
        gn_iterations=sum(r.iterations for r in res.reports), stop_reason=last.stop_reason,
        line_search_failed=any(r.line_search_failed for r in res.reports),
    )
    if args.target is not None:
        target = read_field(args.target)
        summary.update(ssim_result=ssim(res.field, target), ssim_template=ssim(template, target),
                       dice_result=dice(res.field, target))
    summary["seconds"] = seconds
    _write_summary(out / "summary.txt", summary)
    print(out / "result.tbir")
    return EXIT_OK


def cmd_experiment(args) -> int:
    recipe = RECIPES[args.name]
    if args.m is not None:
        recipe = recipe.with_(m=args.m)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "iterations.log", "w") as logfile:
        res = run_recipe(recipe, callback=lambda rec: logfile.write(rec.line() + "\n"))
    write_field(out / "template.tbir", res.template)
    write_field(out / "target.tbir", res.target)
    write_sinogram(out / "data.tbir", res.data)
    write_field(out / "result.tbir", res.field)
    write_velocity(out / "velocity.tbir", res.run.v)
    _write_summary(out / "summary.txt", res.summary())
    for key in ("ssim_template", "ssim_result", "ssim_fbp", "dice_result"):
        print(f"{key}={res.scores[key]:.4f}")
    return EXIT_OK


# -- parser ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="tbir", description="Template-based reconstruction from sparse Radon data.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log solver iterations to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("phantom", help="write a template/target pair")
    s.add_argument("--kind", choices=PHANTOMS, required=True)
    s.add_argument("--m", type=int, default=128)
    s.add_argument("--strength", type=float, default=1.0, help="deformation strength (blob/affine)")
    s.add_argument("--contrast", type=float, default=1.0, help="target intensity factor (affine)")
    s.add_argument("--out", default=".", help="output directory")
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("forward", help="Radon transform of a field")
    s.add_argument("field")
    s.add_argument("--angles", required=True, help="count@lo:hi in degrees, e.g. 5@0:90")
    s.add_argument("--detector-length", type=float, default=DEFAULT_DETECTOR_LENGTH)
    s.add_argument("-o", "--out", default="sinogram.tbir")
    s.set_defaults(func=cmd_forward)

    s = sub.add_parser("noise", help="add Gaussian noise to a sinogram")
    s.add_argument("sinogram")
    s.add_argument("--level", type=float, required=True, help="std relative to mean |data|")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--out", default="noisy.tbir")
    s.set_defaults(func=cmd_noise)

    s = sub.add_parser("reconstruct", help="deform a template to explain the data")
    s.add_argument("--template", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--target", help="ground truth, only used for scoring")
    s.add_argument("--pde", choices=KINDS, default="transport")
    s.add_argument("--distance", choices=DISTANCES, default="ncc")
    s.add_argument("--reg", choices=REG_KINDS, default="third-order")
    s.add_argument("--gamma-s", type=float, default=1e-4)
    s.add_argument("--gamma-t", type=float, default=0.0)
    s.add_argument("--gamma-0", type=float, default=1e-6)
    s.add_argument("--m-t", type=int, default=1, help="time cells of the velocity field")
    s.add_argument("--n-steps", type=int, default=5, help="Runge-Kutta steps")
    s.add_argument("--levels", type=int, default=3, help="number of pyramid levels")
    s.add_argument("--k-min", type=int, help="coarsest level (overrides --levels)")
    s.add_argument("--max-iters", type=int, default=20, help="Gauss-Newton iterations per level")
    s.add_argument("--preconditioner", choices=("regularizer", "jacobi"), default="regularizer")
    s.add_argument("--out", default="run", help="output directory")
    s.set_defaults(func=cmd_reconstruct)

    s = sub.add_parser("fbp", help="filtered backprojection baseline")
    s.add_argument("sinogram")
    s.add_argument("--m", type=int, help="grid size (default: from the bin count)")
    s.add_argument("-o", "--out", default="fbp.tbir")
    s.set_defaults(func=cmd_fbp)

    s = sub.add_parser("ssim", help="structural similarity of A against reference B")
    s.add_argument("a")
    s.add_argument("b")
    s.set_defaults(func=cmd_ssim)

    s = sub.add_parser("export-pgm", help="16-bit PGM preview of a field or sinogram")
    s.add_argument("input")
    s.add_argument("output")
    s.set_defaults(func=cmd_export_pgm)

    s = sub.add_parser("experiment", help="run a built-in phantom experiment")
    s.add_argument("name", choices=sorted(RECIPES))
    s.add_argument("--m", type=int, help="override the grid size")
    s.add_argument("--out", default="experiment")
    s.set_defaults(func=cmd_experiment)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(message)s", stream=sys.stderr)
        return args.func(args)
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"error: {exc.path}: byte offset {exc.offset}: {exc.reason}", file=sys.stderr)
        return EXIT_USAGE
    except (NCCUndefinedError, FloatingPointError, LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
