"""Command line entry point: ``layercontact <command> --config run.json``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import SOLVERS, ConfigError, ExperimentConfig, load_config
from .experiments import (
    PipelineError,
    compare_contact_spaces,
    compare_solvers,
    convergence_study,
    run_benchmark,
)

log = logging.getLogger("layercontact")


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON experiment file (default: built-in benchmark)")
    common.add_argument("--mesh-h", type=float, nargs="+", metavar="H", help="mesh sizes, overriding mesh.h_list")
    common.add_argument("--contact-space", choices=["p0", "p1"])
    common.add_argument("--solver", choices=SOLVERS)
    common.add_argument("--tol", type=float, help="MFEM stopping tolerance")
    common.add_argument("--max-iters", type=int, help="MFEM iteration cap and LDM outer cap")
    common.add_argument("--theta", type=float, help="LDM relaxation parameter")
    common.add_argument("--out", type=Path, help="output directory (default: results)")
    common.add_argument("--threads", type=int, help="BLAS/OpenMP thread count")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="layercontact", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("solve", parents=[common], help="solve the configured problem and write VTK fields")
    sub.add_parser("compare-spaces", parents=[common], help="piecewise-constant vs nodal-linear multipliers")
    sub.add_parser("compare-solvers", parents=[common], help="MFEM vs layer decomposition on one mesh")
    conv = sub.add_parser("convergence", parents=[common], help="mesh refinement study against the finest size")
    conv.add_argument(
        "--spacing-factor", type=float, default=1.0, help="grid spacing is this factor times each mesh size"
    )
    return p


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig.benchmark()
    return cfg.with_overrides(
        h_list=args.mesh_h,
        contact_space=args.contact_space,
        solver=args.solver,
        tol=args.tol,
        max_iters=args.max_iters,
        theta=args.theta,
        output_dir=args.out,
    )


def _run(args, cfg: ExperimentConfig) -> dict:
    out = Path(cfg.output_dir)
    if args.command == "solve":
        runs = run_benchmark(cfg)
        return {"runs": [r.report() for r in runs]}
    if args.command == "compare-spaces":
        table = compare_contact_spaces(cfg)
        path = table.to_csv(out / "contact_spaces.csv")
        return {"table": str(path), "norm": table.norm, "rows": table.records()}
    if args.command == "compare-solvers":
        return compare_solvers(cfg).report()
    if args.command == "convergence":
        rep = convergence_study(cfg, spacing_factor=args.spacing_factor, csv_path=out / "convergence.csv")
        return {"table": str(out / "convergence.csv"), "order": rep.order, "rows": rep.records()}
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = _config(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    limiter = None
    if args.threads:
        from threadpoolctl import threadpool_limits

        limiter = threadpool_limits(args.threads)
    try:
        summary = _run(args, cfg)
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finally:
        if limiter is not None:
            limiter.unregister()
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
