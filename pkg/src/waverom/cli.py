"""Command line front end.

Subcommands mirror the pipeline stages: make-data simulates and
persists array data, build-rom factors it, invert runs one inversion
mode, report regenerates images and the manifest, and run chains all
of them. Every subcommand operates on a run directory so stages can be
re-run independently.

Exit codes: 0 on success, 2 for configuration problems, 3 for
numerical failures. The WAVEROM_THREADS environment variable caps the
BLAS/OpenMP thread count (it must be set before heavy imports, which
is why this module configures it at import time).
"""

from __future__ import annotations

import argparse
import os
import sys

if "WAVEROM_THREADS" in os.environ:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                 "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
        os.environ.setdefault(_var, os.environ["WAVEROM_THREADS"])

from pathlib import Path

from . import harness
from .errors import ConfigurationError, NumericalError, WaveRomError

_PRESETS = ("two-inclusions", "cracks1", "cracks2", "custom")


def _resolve_experiment(args: argparse.Namespace) -> harness.Experiment:
    """Build the Experiment named on the command line, with overrides."""
    if args.experiment == "custom":
        if not args.config:
            raise ConfigurationError("--experiment custom requires --config FILE")
        exp = harness.load_config(args.config)
    else:
        kwargs = {}
        if args.resolution_factor is not None:
            kwargs["resolution_factor"] = args.resolution_factor
        if args.sensors is not None:
            kwargs["n_sensors"] = args.sensors
        if args.n_t is not None:
            kwargs["n_t"] = args.n_t
        if args.iterations is not None:
            kwargs["iterations"] = args.iterations
        if args.experiment == "two-inclusions":
            exp = harness.recipe_two_inclusions(**kwargs)
        else:
            exp = harness.recipe_cracks(int(args.experiment[-1]), **kwargs)
    from dataclasses import replace

    if args.noise_level is not None:
        exp = replace(exp, noise_level=args.noise_level)
    if args.seed is not None:
        exp = replace(exp, seed=args.seed)
    return exp


def _parse_rank(text: str) -> int | str:
    if text in ("auto", "config"):
        return text
    try:
        return int(text)
    except ValueError:
        raise ConfigurationError(f"--rank must be 'auto' or an integer, got {text!r}") from None


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--experiment", choices=_PRESETS, default="two-inclusions",
                        help="experiment recipe (custom requires --config)")
    parser.add_argument("--config", metavar="FILE",
                        help="TOML experiment definition for --experiment custom")
    parser.add_argument("--noise-level", type=float, default=None, metavar="B",
                        help="override the recipe noise level")
    parser.add_argument("--seed", type=int, default=None, metavar="K",
                        help="override the noise seed")
    parser.add_argument("--resolution-factor", type=float, default=None, metavar="F",
                        help="grid resolution scale (preset recipes)")
    parser.add_argument("--sensors", type=int, default=None, metavar="N",
                        help="number of sensors (preset recipes)")
    parser.add_argument("--n-t", type=int, default=None, metavar="N",
                        help="number of data times (preset recipes)")
    parser.add_argument("--iterations", type=int, default=None, metavar="Q",
                        help="Gauss-Newton iterations per layer (preset recipes)")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="waverom",
        description="Data-driven reduced order models for acoustic imaging.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="simulate and persist array data")
    _add_experiment_flags(p)
    p.add_argument("--out", required=True, metavar="DIR", help="run directory")

    p = sub.add_parser("build-rom", help="factor persisted data into a ROM")
    p.add_argument("--out", required=True, metavar="DIR", help="run directory")
    p.add_argument("--rank", default="config", metavar="auto|R",
                   help="truncation rank: 'auto' for the spectral default")

    p = sub.add_parser("invert", help="run one inversion mode")
    p.add_argument("--out", required=True, metavar="DIR", help="run directory")
    p.add_argument("--mode", required=True, choices=("rom", "fwi"))
    p.add_argument("--config", metavar="FILE",
                   help="TOML file whose [inversion] section overrides the persisted one")

    p = sub.add_parser("run", help="full pipeline: data, ROM, both modes, report")
    _add_experiment_flags(p)
    p.add_argument("--out", required=True, metavar="DIR", help="run directory")
    p.add_argument("--rank", default="config", metavar="auto|R",
                   help="truncation rank: 'auto' for the spectral default")

    p = sub.add_parser("report", help="regenerate images and the manifest")
    p.add_argument("--out", required=True, metavar="DIR", help="run directory")
    return parser


def _print_report(report: harness.Report) -> None:
    print(f"experiment {report.name} -> {report.output_dir}")
    if report.noise_ratio is not None:
        print(f"  realized noise ratio: {report.noise_ratio:.6f}")
    for mode, rep in report.modes.items():
        print(f"  {mode}: rel err c {rep.rel_error_c:.4f}, rho {rep.rel_error_rho:.4f}, "
              f"joint {rep.rel_error_joint:.4f}, objective {rep.final_objective:.3e}, "
              f"{rep.runtime_s:.1f} s")


def _dispatch(args: argparse.Namespace) -> int:
    if args.command == "make-data":
        outdir = Path(args.out)
        harness.make_data(_resolve_experiment(args), outdir)
        print(f"data written to {outdir}")
    elif args.command == "build-rom":
        factor = harness.build_rom_artifact(Path(args.out), _parse_rank(args.rank))
        print(f"ROM factor (rank {factor.r} of {factor.n_t}) written to {args.out}")
    elif args.command == "invert":
        override = harness.load_config(args.config) if args.config else None
        result = harness.run_inversion(Path(args.out), args.mode, override)
        print(f"{args.mode} inversion finished: objective {result.final_objective:.6e}"
              + (" (updates clamped)" if result.clamped else ""))
    elif args.command == "run":
        exp = _resolve_experiment(args)
        outdir = Path(args.out)
        harness.make_data(exp, outdir)
        harness.build_rom_artifact(outdir, _parse_rank(args.rank))
        for mode in ("rom", "fwi"):
            harness.run_inversion(outdir, mode)
        _print_report(harness.regenerate_report(outdir))
    elif args.command == "report":
        _print_report(harness.regenerate_report(Path(args.out)))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except WaveRomError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
