"""Command-line interface.

Subcommands: ``run`` (genome-wide testing), ``estimate-sigma``, ``simulate``
(size and power tables), ``boundary`` (2-D rejection contours), and
``power-curve`` (polar power sweep).  Exit codes: 0 success, 1 usage error,
2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

import numpy as np

from .errors import DataError, NumericalError, PcassocError
from .gwas import (
    DEFAULT_GWAS_TESTS,
    RunConfig,
    estimate_sigma,
    ingest_merge,
    read_panel,
    run_genomewide,
)
from .model import CorrelationMatrix, SignalVector, read_correlation, write_correlation
from .power import power_curve_polar, rejection_boundary_2d
from .seeds import Seed
from .simulate import (
    DEFAULT_POWER_TESTS,
    DEFAULT_TYPE1_TESTS,
    power_table,
    random_correlation,
    scenario,
    type1_table,
)

log = logging.getLogger("pcassoc")


class UsageError(PcassocError):
    """Bad command-line invocation."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _comma_list(text):
    return tuple(t for t in text.split(",") if t)


def _seed(text) -> Seed:
    try:
        return Seed(int(text, 0))
    except (ValueError, DataError) as exc:
        raise UsageError(f"bad seed {text!r}: {exc}") from exc


def _add_io_options(p):
    p.add_argument("--input", nargs="+", required=True, help="per-phenotype summary TSV files")
    p.add_argument("--pheno-names", type=_comma_list, default=None,
                   help="comma-separated phenotype names (default: file stems)")
    p.add_argument("--prune-list", default=None,
                   help="file with one SNP ID per line; restricts sigma estimation")
    p.add_argument("--z-cut", type=float, default=5.45,
                   help="exclude SNPs with max |Z| above this from sigma estimation")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pcassoc", description=__doc__)
    sub = parser.add_subparsers(dest="command", metavar="command")

    run = sub.add_parser("run", help="test every SNP of a merged panel", parents=[])
    _add_io_options(run)
    group = run.add_mutually_exclusive_group(required=True)
    group.add_argument("--sigma", help="correlation matrix file (header optional)")
    group.add_argument("--estimate-sigma", action="store_true",
                       help="estimate sigma from the merged panel")
    run.add_argument("--tests", type=_comma_list, default=DEFAULT_GWAS_TESTS)
    run.add_argument("--alpha", type=float, default=0.05)
    run.add_argument("--rx-B", type=int, default=1000, dest="rx_b")
    run.add_argument("--seed", type=_seed, default=Seed(0))
    run.add_argument("--threads", type=int, default=1)
    run.add_argument("--out", required=True)
    run.add_argument("--qq-out", default=None,
                     help="long CSV (test,expected,observed) of QQ data")
    run.add_argument("--sigma-out", default=None,
                     help="write the estimated sigma here (with --estimate-sigma)")
    run.set_defaults(func=_cmd_run)

    est = sub.add_parser("estimate-sigma", help="estimate the Z-score correlation matrix")
    _add_io_options(est)
    est.add_argument("--out", required=True)
    est.set_defaults(func=_cmd_estimate_sigma)

    sim = sub.add_parser("simulate", help="size and power tables")
    sim.add_argument("--mode", choices=("type1", "power"), required=True)
    sim.add_argument("--scenarios", type=_comma_list, default=("M1",),
                     help="power mode: comma-separated scenario names (M1..M15)")
    sim.add_argument("--sigma", default=None, help="type1 mode: sigma file")
    sim.add_argument("--random-k", type=int, default=None,
                     help="type1 mode: use a random correlation of this dimension")
    sim.add_argument("--alphas", type=_comma_list, default=("0.05", "0.01", "0.001"))
    sim.add_argument("--alpha", type=float, default=0.05)
    sim.add_argument("--reps", type=int, default=100_000)
    sim.add_argument("--tests", type=_comma_list, default=None)
    sim.add_argument("--seed", type=_seed, default=Seed(0))
    sim.add_argument("--threads", type=int, default=1)
    sim.add_argument("--sigma-file", default=None, help="template scenarios: sigma file")
    sim.add_argument("--beta-file", default=None, help="template scenarios: beta file")
    sim.add_argument("--out", required=True)
    sim.set_defaults(func=_cmd_simulate)

    bnd = sub.add_parser("boundary", help="trace a 2-D rejection boundary")
    bnd.add_argument("--test", required=True)
    bnd.add_argument("--rho", type=float, default=None)
    bnd.add_argument("--sigma", default=None)
    bnd.add_argument("--alpha", type=float, default=0.05)
    bnd.add_argument("--resolution", type=int, default=72)
    bnd.add_argument("--beta", type=_comma_list, default=None,
                     help="signal vector (needed for the Oracle boundary)")
    bnd.add_argument("--seed", type=_seed, default=Seed(0))
    bnd.add_argument("--out", required=True)
    bnd.set_defaults(func=_cmd_boundary)

    crv = sub.add_parser("power-curve", help="polar power sweep for two phenotypes")
    crv.add_argument("--r", type=float, default=2.0, help="signal magnitude")
    crv.add_argument("--rho", type=float, default=None)
    crv.add_argument("--sigma", default=None)
    crv.add_argument("--alpha", type=float, default=0.05)
    crv.add_argument("--grid-deg", type=float, default=5.0)
    crv.add_argument("--method", choices=("analytic", "monte_carlo"), default="analytic")
    crv.add_argument("--tests", type=_comma_list, default=None)
    crv.add_argument("--reps", type=int, default=10_000)
    crv.add_argument("--seed", type=_seed, default=Seed(0))
    crv.add_argument("--out", required=True)
    crv.set_defaults(func=_cmd_power_curve)
    return parser


def _load_panel(args):
    names = args.pheno_names
    if names is not None and len(names) != len(args.input):
        raise UsageError(
            f"{len(names)} phenotype names for {len(args.input)} input files"
        )
    if len(args.input) == 1:
        return read_panel(args.input[0])
    from .gwas import read_summary_file

    files = [
        read_summary_file(path, names[i] if names else None)
        for i, path in enumerate(args.input)
    ]
    return ingest_merge(files)


def _read_prune(path):
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return frozenset(line.strip() for line in fh if line.strip())


def _cmd_run(args) -> int:
    panel = _load_panel(args)
    prune = _read_prune(args.prune_list)
    if args.sigma:
        sigma = read_correlation(args.sigma)
    else:
        sigma = estimate_sigma(panel, prune_list=prune, z_cut=args.z_cut)
        if args.sigma_out:
            write_correlation(sigma, args.sigma_out, names=panel.phenotypes)
    cfg = RunConfig(
        tests=tuple(args.tests),
        alpha=args.alpha,
        z_cut=args.z_cut,
        rx_b=args.rx_b,
        seed=args.seed,
        threads=args.threads,
        prune_list=prune,
    )
    summary = run_genomewide(panel, sigma, cfg, args.out)
    for test in cfg.tests:
        print(
            f"{test}\t{summary['alpha'][test]} below alpha={cfg.alpha:g}\t"
            f"{summary['genome_wide'][test]} below 5e-08"
        )
    if args.qq_out:
        _write_qq_long(panel, sigma, cfg, args.out, args.qq_out)
    return 0


def _write_qq_long(panel, sigma, cfg, results_path, qq_path):
    import pandas as pd

    from .gwas import qq_data

    df = pd.read_csv(results_path, sep="\t", comment="#")
    with open(qq_path, "w", encoding="utf-8") as fh:
        fh.write("test,expected,observed\n")
        for test in cfg.tests:
            vals = pd.to_numeric(df[test], errors="coerce").dropna().to_numpy()
            if vals.size == 0:
                continue
            expected, observed = qq_data(vals)
            for e, o in zip(expected, observed):
                fh.write(f"{test},{e:.8e},{o:.8e}\n")


def _cmd_estimate_sigma(args) -> int:
    panel = _load_panel(args)
    sigma = estimate_sigma(panel, prune_list=_read_prune(args.prune_list), z_cut=args.z_cut)
    write_correlation(sigma, args.out, names=panel.phenotypes)
    print(f"sigma ({sigma.dim}x{sigma.dim}) written to {args.out}")
    return 0


def _sigma_from_args(args, default_dim=2):
    if args.sigma is not None:
        return read_correlation(args.sigma)
    if args.rho is not None:
        return CorrelationMatrix.exchangeable(default_dim, args.rho)
    raise UsageError("supply --sigma FILE or --rho")


def _cmd_simulate(args) -> int:
    if args.mode == "type1":
        if args.sigma:
            sigma = read_correlation(args.sigma)
        elif args.random_k:
            sigma = random_correlation(args.random_k, args.seed.child(1))
        else:
            from .simulate import SIGMA_UNK3

            sigma = SIGMA_UNK3
        alphas = tuple(float(a) for a in args.alphas)
        tests = args.tests if args.tests else DEFAULT_TYPE1_TESTS
        table = type1_table(
            sigma, alphas=alphas, reps=args.reps, seed=args.seed,
            tests=tests, threads=args.threads,
        )
    else:
        specs = [
            scenario(
                name, reps=args.reps, alpha=args.alpha, seed=args.seed,
                sigma_file=args.sigma_file, beta_file=args.beta_file,
            )
            for name in args.scenarios
        ]
        tests = args.tests if args.tests else DEFAULT_POWER_TESTS
        table = power_table(specs, tests=tests, threads=args.threads)
    table.to_csv(args.out)
    print(f"{len(table.rows)} cells written to {args.out}")
    return 0


def _cmd_boundary(args) -> int:
    sigma = _sigma_from_args(args)
    beta = None
    if args.beta is not None:
        beta = SignalVector(np.array([float(v) for v in args.beta]))
    curve = rejection_boundary_2d(
        args.test, sigma, args.alpha, resolution=args.resolution, beta=beta
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("test,angle_deg,z1,z2\n")
        for point in curve.points:
            phi = float(np.degrees(np.arctan2(point[1], point[0])) % 360.0)
            fh.write(f"{curve.test_name},{phi:.8e},{point[0]:.8e},{point[1]:.8e}\n")
    if curve.skipped_rays_deg:
        print(f"skipped rays (no crossing within radius): {curve.skipped_rays_deg}")
    print(f"{curve.points.shape[0]} boundary points written to {args.out}")
    return 0


def _cmd_power_curve(args) -> int:
    sigma = _sigma_from_args(args)
    angles, powers = power_curve_polar(
        args.r, sigma, args.alpha, grid_deg=args.grid_deg, method=args.method,
        tests=args.tests, reps=args.reps, seed=args.seed,
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("test,angle_deg,power\n")
        for test, values in powers.items():
            for phi, val in zip(angles, values):
                fh.write(f"{test},{phi:.8e},{val:.8e}\n")
    print(f"power sweep over {angles.size} angles written to {args.out}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not getattr(args, "func", None):
            raise UsageError("choose a subcommand (run, estimate-sigma, simulate, boundary, power-curve)")
        return int(args.func(args) or 0)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
