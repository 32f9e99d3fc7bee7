"""Command-line front end.

Subcommands: ``denoise``, ``pm``, ``verify``, ``study``, ``psnr``, ``noise``
and ``synth``.  Exit codes: 0 success, 1 usage or I/O error, 2 numerical
failure.

Parameter units for images
--------------------------
With ``--units pixel`` (the default) ``lam`` and ``dt`` are read in pixel
units, i.e. as if the grid spacing were 1 and intensities were grey levels.
The solver itself always works on [0, 1]^2, so the image is solved as
``u = pixels / N`` with ``lam / N^2`` and ``dt / N^2``.  This change of
variables is exact: the discrete flows agree cell by cell.  Energies, step
norms and residuals in the CSV are converted back to pixel units.
``--units unit`` passes parameters and pixel values to the solver unchanged.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import imaging
from .analysis import RefinementSchedule, refinement_study
from .solver import PeronaMalikConfig, SolverConfig, SolverError, StabilityError, evolve, perona_malik_evolve
from .verification import run_suite, suite_names


DENOISE_CSV = ["k", "energy_J", "energy_E", "inner_iters", "step_norm", "residual_inf"]
PM_CSV = ["k", "total_variation", "step_norm"]
STUDY_CSV = ["N", "M", "dt", "dist_to_prev_level"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- sources for refinement studies -------------------------------------------


def _bump(x, y):
    return np.exp(-((x - 0.5) ** 2 + (y - 0.5) ** 2) / 0.02)


def _constant(x, y):
    return np.full(np.broadcast(x, y).shape, 0.5)


def _ramp(x, y):
    return x + 0.5 * y


SOURCES = {"bump": _bump, "constant": _constant, "ramp": _ramp}


# -- argument parsing ---------------------------------------------------------


def _positive(kind):
    def parse(text):
        try:
            val = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
        if not (val > 0 and math.isfinite(val)):
            raise argparse.ArgumentTypeError(f"must be positive: {text!r}")
        return val

    return parse


def _levels(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"levels must be comma-separated integers: {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty level list")
    return vals


def _image_args(p, dt_default, steps_default):
    p.add_argument("input", help="square PGM image")
    p.add_argument("-o", "--output", required=True, help="output PGM path")
    p.add_argument("--csv", help="per-step diagnostics CSV path")
    p.add_argument("--reference", help="clean PGM; prints PSNR of input and output against it")
    p.add_argument("--dt", type=_positive(float), default=dt_default)
    p.add_argument("--steps", type=_positive(int), default=steps_default)
    p.add_argument("--units", choices=["pixel", "unit"], default="pixel")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rofflow", description=__doc__.split("\n")[0])
    parser.add_argument("--config", help="JSON file with option defaults (flags win)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log every time step")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("denoise", help="run the regularised ROF flow on an image")
    _image_args(p, 0.1, 50)
    p.add_argument("--epsilon", type=_positive(float), default=1e-4)
    p.add_argument("--lam", type=_positive(float), default=30.0)
    p.add_argument("--tol-inner", type=_positive(float), default=1e-8)
    p.add_argument("--max-inner", type=_positive(int), default=500)
    p.add_argument("--cg-tol", type=_positive(float), default=1e-10)

    p = sub.add_parser("pm", help="run the explicit Perona-Malik baseline")
    # 20 steps of 0.25 cover the same horizon as the denoise defaults
    _image_args(p, 0.25, 20)

    p = sub.add_parser("verify", help="run property suites")
    p.add_argument("--suite", default="all", help="suite name or 'all'")
    p.add_argument("--size", type=_positive(int), default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--trials", type=_positive(int), default=10)

    p = sub.add_parser("study", help="refinement study on a built-in source")
    p.add_argument("--alpha", type=_positive(float), default=1.0)
    p.add_argument("--levels", type=_levels, default=[16, 32, 64])
    p.add_argument("--T", dest="horizon", type=_positive(float), default=0.5)
    p.add_argument("--exponent", type=_positive(float), help="M = round(T N^exponent); default alpha/2")
    p.add_argument("--source", choices=sorted(SOURCES), default="bump")
    p.add_argument("--epsilon", type=_positive(float), default=1.0)
    p.add_argument("--lam", type=_positive(float), default=30.0)
    p.add_argument("--csv", help="output CSV path (default: stdout)")

    p = sub.add_parser("psnr", help="PSNR between two PGM images")
    p.add_argument("a")
    p.add_argument("b")

    p = sub.add_parser("noise", help="add seeded Gaussian noise to an image")
    p.add_argument("input")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--sigma", type=float, default=20.0, help="standard deviation in grey levels")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("synth", help="write the synthetic test images")
    p.add_argument("outdir")
    p.add_argument("--size", type=_positive(int), default=256)
    p.add_argument("--sigma", type=float, default=20.0, help="also write noisy copies (0 to skip)")
    p.add_argument("--seed", type=int, default=1)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise OSError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config file must hold a JSON object")
        data = {k.replace("-", "_"): v for k, v in data.items()}
        unknown = sorted(set(data) - set(vars(args)))
        if unknown:
            raise UsageError(f"unknown config keys for {args.command}: {', '.join(unknown)}")
        # re-parse with the file as defaults so explicit flags still win
        subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
        subparsers.choices[args.command].set_defaults(**data)
        args = parser.parse_args(argv)
    return args


# -- helpers ------------------------------------------------------------------


def _load(path) -> imaging.Image:
    try:
        return imaging.load_pgm(path)
    except FileNotFoundError:
        raise OSError(f"no such file: {path}") from None


def _write_csv(path, header, rows):
    if path is None:
        return
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _report_psnr(args, noisy: imaging.Image, out: imaging.Image):
    if args.reference:
        ref = _load(args.reference)
        print(f"psnr_input {_fmt_db(imaging.psnr(noisy, ref))}")
        print(f"psnr_output {_fmt_db(imaging.psnr(out, ref))}")


def _fmt_db(val: float) -> str:
    return "inf" if math.isinf(val) else f"{val:.4f}"


def _scale(args, n: int) -> float:
    """Intensity scale between pixel values and solver values."""
    return 1.0 / n if args.units == "pixel" else 1.0


def _variation(a: np.ndarray) -> float:
    # pixel-unit total variation, averaged over forward and backward differences
    dx = np.diff(a, axis=1)
    dy = np.diff(a, axis=0)
    fwd = np.sqrt(np.pad(dx, ((0, 0), (0, 1))) ** 2 + np.pad(dy, ((0, 1), (0, 0))) ** 2)
    bwd = np.sqrt(np.pad(dx, ((0, 0), (1, 0))) ** 2 + np.pad(dy, ((1, 0), (0, 0))) ** 2)
    return 0.5 * float(fwd.sum() + bwd.sum())


# -- subcommands --------------------------------------------------------------


def cmd_denoise(args) -> int:
    noisy = _load(args.input)
    f = imaging.image_to_grid(noisy)
    n = f.n
    s = _scale(args, n)
    cfg = SolverConfig(
        epsilon=args.epsilon,
        lam=args.lam * s * s,
        dt=args.dt * s * s,
        steps=args.steps,
        tol_inner=args.tol_inner,
        max_inner=args.max_inner,
        cg_tol=args.cg_tol,
    )
    fs = f * s
    traj = evolve(fs, fs, cfg)
    # pixel units use spacing 1: energies and norms pick up n^2, rates 1/n
    e_fac, r_fac = (n * n, 1.0 / n) if args.units == "pixel" else (1.0, 1.0)
    rows = [
        [
            d.step_index,
            repr(d.energy_J * e_fac),
            repr(d.energy_E * e_fac),
            d.inner_iterations,
            repr(d.step_norm * e_fac),
            repr(d.residual_inf * r_fac),
        ]
        for d in traj.diagnostics
    ]
    out = imaging.grid_to_image(traj.final / s)
    imaging.save_pgm(args.output, out)
    _write_csv(args.csv, DENOISE_CSV, rows)
    _report_psnr(args, noisy, out)
    return 0


def cmd_pm(args) -> int:
    noisy = _load(args.input)
    u0 = imaging.image_to_grid(noisy)
    n = u0.n
    s = _scale(args, n)
    if args.units == "pixel" and args.dt > 0.25:
        raise StabilityError(f"Perona-Malik time step {args.dt:g} exceeds the explicit stability limit 0.25")
    cfg = PeronaMalikConfig(dt=args.dt * s * s, steps=args.steps)
    traj = perona_malik_evolve(u0 * s, cfg)
    rows = []
    for k, (prev, cur) in enumerate(zip(traj.states[:-1], traj.states[1:]), start=1):
        d = (cur.values - prev.values) / s
        rows.append([k, repr(_variation(cur.values / s)), repr(math.sqrt(float(np.sum(d * d))))])
    out = imaging.grid_to_image(traj.final / s)
    imaging.save_pgm(args.output, out)
    _write_csv(args.csv, PM_CSV, rows)
    _report_psnr(args, noisy, out)
    return 0


def cmd_verify(args) -> int:
    names = suite_names() if args.suite == "all" else [args.suite]
    for name in names:
        if name not in suite_names():
            raise UsageError(f"unknown suite {name!r}; valid suites: all, {', '.join(suite_names())}")
    ok = True
    for name in names:
        res = run_suite(name, args.size, args.seed, args.trials)
        print(res.line(), flush=True)
        ok &= res.passed
    return 0 if ok else 2


def cmd_study(args) -> int:
    try:
        schedule = RefinementSchedule.power_law(args.alpha, args.horizon, args.levels, args.exponent)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if not schedule.coupled:
        print(
            "warning: schedule does not drive M / (T N^alpha) to zero; "
            f"ratios {', '.join(f'{r:.3g}' for r in schedule.ratios())}",
            file=sys.stderr,
        )
    template = SolverConfig(epsilon=args.epsilon, lam=args.lam)
    result = refinement_study(SOURCES[args.source], schedule, template)
    rows = [[r.n, r.m, repr(r.dt), "" if math.isnan(r.dist_to_prev_level) else repr(r.dist_to_prev_level)]
            for r in result.rows]
    if args.csv:
        _write_csv(args.csv, STUDY_CSV, rows)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(STUDY_CSV)
        w.writerows(rows)
    return 0


def cmd_psnr(args) -> int:
    print(_fmt_db(imaging.psnr(_load(args.a), _load(args.b))))
    return 0


def cmd_noise(args) -> int:
    if not (args.sigma >= 0 and math.isfinite(args.sigma)):
        raise UsageError(f"sigma must be non-negative, got {args.sigma}")
    img = _load(args.input)
    imaging.save_pgm(args.output, imaging.add_gaussian_noise(img, args.sigma, args.seed))
    return 0


def cmd_synth(args) -> int:
    out = Path(args.outdir)
    out.mkdir(parents=True, exist_ok=True)
    for name, img in imaging.synthetic_corpus(args.size).items():
        imaging.save_pgm(out / f"{name}.pgm", img)
        if args.sigma > 0:
            noisy = imaging.add_gaussian_noise(img, args.sigma, args.seed)
            imaging.save_pgm(out / f"{name}_noisy.pgm", noisy)
    return 0


COMMANDS = {
    "denoise": cmd_denoise,
    "pm": cmd_pm,
    "verify": cmd_verify,
    "study": cmd_study,
    "psnr": cmd_psnr,
    "noise": cmd_noise,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(message)s",
            stream=sys.stderr,
        )
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, imaging.PGMError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SolverError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
