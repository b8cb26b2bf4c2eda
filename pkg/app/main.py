"""Command-line entry point.

Subcommands:
- ``run --config <file> --out <dir>``: Monte Carlo experiment, CSV/JSON outputs
- ``ntk --config <file> --out <dir>``: NTK gram matrix, eigenvalues and effective dimension
- ``grad-check``: finite-difference gradient suite
- ``oracle-check``: covariance and kernel oracle suite

Exit codes: 0 success, 1 config error, 2 usage error, 3 runtime abort.
"""
import argparse
import json
import logging
import os
import sys
from typing import List, Optional

import numpy as np

from app.core.config import settings
from app.core.config_loader import load_config
from app.core.environments import dump_environment, make_environment
from app.core.exceptions import BanditError, UsageError
from app.core.logging_setup import configure_logging
from app.core.ntk import check_assumption1, effective_dimension, ntk_gram, subsample_contexts
from app.core.oracles import run_grad_check, run_oracle_check
from app.core.report_generator import OutputError, emit_outputs
from app.core.runner import run_experiment
from app.core.seeding import instance_seed, substream, substream_seed
from app.schemas.diagnostics import CheckReport, NtkReport
from app.schemas.experiment import ExperimentConfig, NtkDiagSpec
from app.schemas.records import RunStatus

logger = logging.getLogger("app.main")


def create_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bnucb",
        description=f"{settings.APP_NAME} {settings.APP_VERSION}: batched neural contextual bandits",
    )
    parser.add_argument("--log-level", default=None, help="override BNUCB_LOG_LEVEL")
    sub = parser.add_subparsers(dest="command", metavar="command")
    sub.required = True

    run = sub.add_parser("run", help="run a Monte Carlo experiment")
    run.add_argument("--config", required=True, help="flat key=value config file")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, default=None, help="override master_seed")
    run.add_argument("--workers", type=int, default=None, help="override n_workers")
    run.add_argument("--xlsx", action="store_true", help="also write report.xlsx")
    run.add_argument("--dump-env", action="store_true", help="also write environment.csv for instance 0")

    ntk = sub.add_parser("ntk", help="NTK gram matrix and effective dimension")
    ntk.add_argument("--config", required=True)
    ntk.add_argument("--out", required=True)
    ntk.add_argument("--seed", type=int, default=None)
    ntk.add_argument("--subsample", type=int, default=None, help="number of contexts")
    ntk.add_argument("--lam", type=float, default=None, help="regularization of the effective dimension")

    for name, text in (("grad-check", "finite-difference gradient checks"),
                       ("oracle-check", "Sherman-Morrison, log-det and NTK Monte Carlo checks")):
        check = sub.add_parser(name, help=text)
        check.add_argument("--seed", type=int, default=0)
    return parser


# =============================================================================
# Commands
# =============================================================================

def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config, master_seed=args.seed)
    if args.workers is not None:
        if args.workers < 1:
            raise UsageError("--workers must be positive", field="workers")
        config = config.model_copy(update={"n_workers": args.workers})
    records = run_experiment(config)
    emit_outputs(records, args.out, config=config, xlsx=args.xlsx)
    if args.dump_env:
        seed = substream_seed(instance_seed(config.master_seed, 0), "environment")
        dump_environment(make_environment(config.env, seed), os.path.join(args.out, "environment.csv"))

    aborted = [r for r in records if r.status == RunStatus.ABORTED]
    for record in aborted:
        print(record.error, file=sys.stderr)
    return 3 if aborted else 0


def _ntk_settings(config: ExperimentConfig, args: argparse.Namespace) -> NtkDiagSpec:
    diag = config.ntk_diag or NtkDiagSpec(subsample=settings.DEFAULT_NTK_SUBSAMPLE, lam=config.net.reg_lambda)
    update = {}
    if args.subsample is not None:
        update["subsample"] = args.subsample
    if args.lam is not None:
        update["lam"] = args.lam
    try:
        return NtkDiagSpec(**{**diag.model_dump(), **update})
    except ValueError as exc:
        raise UsageError(str(exc).splitlines()[0], field=",".join(update) or None) from None


def cmd_ntk(args: argparse.Namespace) -> int:
    config = load_config(args.config, master_seed=args.seed)
    diag = _ntk_settings(config, args)
    seed = instance_seed(config.master_seed, 0)
    env = make_environment(config.env, substream_seed(seed, "environment"))
    contexts = subsample_contexts(env.all_contexts(), diag.subsample, substream(seed, "ntk"))

    ntk = ntk_gram(contexts, config.net.depth)
    holds, min_eig = check_assumption1(ntk)
    eff = effective_dimension(ntk, diag.lam)
    report = NtkReport(
        env=config.env.kind.value,
        n_contexts=ntk.n,
        depth=config.net.depth,
        lam=diag.lam,
        min_eig=min_eig,
        assumption_holds=holds,
        d_tilde=eff.d_tilde,
        eigenvalues=[float(v) for v in ntk.eigenvalues],
    )

    try:
        os.makedirs(args.out, exist_ok=True)
        np.savetxt(os.path.join(args.out, "ntk_gram.csv"), ntk.H, delimiter=",", fmt="%.17g")
        np.savetxt(os.path.join(args.out, "ntk_eigenvalues.csv"), ntk.eigenvalues, fmt="%.17g")
        with open(os.path.join(args.out, "ntk_report.json"), "w", encoding="utf-8") as fh:
            json.dump(report.model_dump(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OutputError(f"cannot write NTK outputs to {args.out}: {exc.strerror or exc}", field=args.out) from exc

    logger.info("NTK on %d contexts: min_eig %.4g, d_tilde %.4g", ntk.n, min_eig, eff.d_tilde)
    print(f"n_contexts={ntk.n} min_eig={min_eig:.6g} d_tilde={eff.d_tilde:.6g} positive_definite={holds}")
    return 0


def _print_report(report: CheckReport) -> int:
    for check in report.checks:
        status = "ok" if check.passed else "FAIL"
        print(f"{status:4s} {check.name}: max_error={check.max_error:.3e} tolerance={check.tolerance:.3e}")
    return 0 if report.passed else 3


def cmd_grad_check(args: argparse.Namespace) -> int:
    return _print_report(run_grad_check(args.seed))


def cmd_oracle_check(args: argparse.Namespace) -> int:
    return _print_report(run_oracle_check(args.seed))


COMMANDS = {
    "run": cmd_run,
    "ntk": cmd_ntk,
    "grad-check": cmd_grad_check,
    "oracle-check": cmd_oracle_check,
}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse ``argv`` and dispatch; returns the process exit code."""
    parser = create_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    configure_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except BanditError as exc:
        print(exc.to_line(), file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
