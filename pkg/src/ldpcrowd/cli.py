"""Command-line entry point: ``ldpcrowd <subcommand> [options]``.

Exit codes: 0 success, 1 operation error (or failed sweep rows), 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from ldpcrowd.audit import empirical_privacy_ratio
from ldpcrowd.bounds import BoundInputs, bound_for
from ldpcrowd.core import (
    DEFAULT_EPS1_FRACTION,
    AnswerDomain,
    MechanismConfig,
    MechanismKind,
    MFConfig,
    ReplacementStrategy,
    sparsity_profile,
)
from ldpcrowd.data import (
    SyntheticSpec,
    generate_synthetic,
    load_answers_csv,
    load_dataset,
    load_truth_csv,
    save_answers_csv,
    save_dataset,
    write_answers_csv,
)
from ldpcrowd.experiment import ExperimentConfig, run_experiment
from ldpcrowd.inference import evaluate_mae_change, infer_truth
from ldpcrowd.mechanisms import perturb_matrix

SEED_ENV = "LDPCROWD_SEED"


class UsageError(Exception):
    pass


def _floats(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _mix(text: str) -> tuple[tuple[float, float], ...]:
    """``0.5:1,0.5:5`` -> ((0.5, 1.0), (0.5, 5.0))."""
    try:
        return tuple(tuple(float(x) for x in part.split(":")) for part in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected fraction:sigma pairs, got {text!r}") from None


def _replacement(text: str) -> ReplacementStrategy:
    try:
        return ReplacementStrategy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _seed(text: str) -> int:
    try:
        seed = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"seed must be an integer, got {text!r}") from None
    if not 0 <= seed < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in 64 unsigned bits")
    return seed


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("common")
    g.add_argument("--seed", type=_seed, default=None, help=f"master seed (default: ${SEED_ENV} or 0)")
    g.add_argument("--domain-min", type=int, default=None)
    g.add_argument("--domain-max", type=int, default=None)
    g.add_argument("--epsilon", type=float, default=1.0)
    g.add_argument("--eps1-frac", type=float, default=DEFAULT_EPS1_FRACTION, help="RR+LP share of the budget for the class step")
    g.add_argument("--mf-d", type=int, default=None)
    g.add_argument("--mf-gamma", type=float, default=None, help="MF learning rate (default 1/(2L))")
    g.add_argument("--mf-lambda", type=float, default=1e-6, help="MF ridge")
    g.add_argument("--mf-max-iter", type=int, default=10_000)
    g.add_argument("--lp-replacement", type=_replacement, default=ReplacementStrategy.uniform(), help="uniform or constant:<c>")
    g.add_argument("--clamp", action="store_true", help="clamp LP output into the domain")
    g.add_argument("--out", default=None, help="output path (directory for generate/experiment)")
    g.add_argument("--format", choices=("csv", "json"), default=None)
    g.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="ldpcrowd", description="Locally private crowdsourced answer simulator.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a synthetic dataset bundle")
    g.add_argument("--m", type=int, default=200)
    g.add_argument("--n", type=int, default=50)
    g.add_argument("--sparsity", type=float, default=0.0)
    g.add_argument("--truth-center", type=float, default=0.0)
    g.add_argument("--worker-mix", type=_mix, default=((0.5, 1.0), (0.5, 5.0)), help="fraction:sigma pairs")

    p = sub.add_parser("perturb", parents=[common], help="perturb an answer CSV")
    p.add_argument("--answers", required=True)
    p.add_argument("--mechanism", required=True)

    i = sub.add_parser("infer", parents=[common], help="infer truths from an answer CSV")
    i.add_argument("--answers", required=True)
    i.add_argument("--tol", type=float, default=1e-6)
    i.add_argument("--max-iter", type=int, default=100)

    e = sub.add_parser("evaluate", parents=[common], help="MAE change between original and perturbed answers")
    e.add_argument("--answers", required=True)
    e.add_argument("--perturbed", required=True)
    e.add_argument("--truth", required=True)

    b = sub.add_parser("bound", parents=[common], help="analytic expected-MAE bound")
    b.add_argument("--mechanism", required=True, help="none, lp, rr, rrlp or mf")
    b.add_argument("--dataset", default=None, help="bundle directory; uses its sigmas, truths and answer pattern")
    b.add_argument("--m", type=int, default=1)
    b.add_argument("--n", type=int, default=1)
    b.add_argument("--sigma", type=float, default=1.0)
    b.add_argument("--nonnull", type=float, default=1.0, help="fraction of tasks each worker answered")
    b.add_argument("--mu", type=float, default=None, help="true value of every task (default: domain min)")
    b.add_argument("--terms-out", default=None, help="CSV dump of per-cell terms")

    a = sub.add_parser("audit", parents=[common], help="empirical privacy ratio")
    a.add_argument("--mechanism", required=True)
    a.add_argument("--trials", type=int, default=1_000_000)

    x = sub.add_parser("experiment", parents=[common], help="seeded sweep")
    x.add_argument("--mechanisms", default="LP,RR,RRLP,MF")
    x.add_argument("--epsilons", type=_floats, default=(0.1, 1.0, 5.0))
    x.add_argument("--sparsities", type=_floats, default=(0.5, 0.9))
    x.add_argument("--reps", type=int, default=10)
    x.add_argument("--m", type=int, default=200)
    x.add_argument("--n", type=int, default=50)
    x.add_argument("--truth-center", type=float, default=0.0)
    x.add_argument("--worker-mix", type=_mix, default=((0.5, 1.0), (0.5, 5.0)))
    x.add_argument("--answers", default=None)
    x.add_argument("--truth", default=None)
    x.add_argument("--jobs", type=int, default=1)
    x.add_argument("--timing", action="store_true", help="fill wall_ms (makes output non-reproducible)")
    return parser


# --------------------------------------------------------------------------


def _resolve_seed(args) -> int:
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV)
    if env:
        try:
            return _seed(env)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"{SEED_ENV}: {exc}") from None
    return 0


def _domain(args, fallback: AnswerDomain | None = None) -> AnswerDomain | None:
    if args.domain_min is None and args.domain_max is None:
        return fallback
    if args.domain_min is None or args.domain_max is None:
        raise UsageError("--domain-min and --domain-max go together")
    return AnswerDomain(args.domain_min, args.domain_max)


def _mf(args) -> MFConfig:
    return MFConfig(d=args.mf_d, learning_rate=args.mf_gamma, ridge=args.mf_lambda, max_iter=args.mf_max_iter)


def _split(args, epsilon: float) -> tuple[float, float]:
    if not 0 < args.eps1_frac < 1:
        raise UsageError("--eps1-frac must lie in (0, 1)")
    e1 = args.eps1_frac * epsilon
    return e1, epsilon - e1


def _emit(obj: dict, args) -> None:
    text = json.dumps(obj, indent=2) + "\n"
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _load_answers(path, args):
    return load_answers_csv(path, _domain(args))


def cmd_generate(args) -> int:
    if not args.out:
        raise UsageError("generate needs --out <directory>")
    spec = SyntheticSpec(
        m=args.m, n=args.n, domain=_domain(args, AnswerDomain(0, 9)), truth_center=args.truth_center,
        worker_mix=args.worker_mix, sparsity=args.sparsity, seed=_resolve_seed(args),
    )
    out = save_dataset(generate_synthetic(spec), args.out)
    print(out)
    return 0


def cmd_perturb(args) -> int:
    matrix = _load_answers(args.answers, args)
    kind = MechanismKind.parse(args.mechanism)
    split = _split(args, args.epsilon) if kind is MechanismKind.RRLP else None
    config = MechanismConfig(
        kind, args.epsilon, epsilon_split=split, replacement=args.lp_replacement,
        mf=_mf(args), seed=_resolve_seed(args), clamp=args.clamp,
    )
    result = perturb_matrix(matrix, config)
    out = result.matrix
    if result.empty_workers.size:
        logging.warning("%d worker(s) have no answers after perturbation", result.empty_workers.size)
    if args.format == "json":
        _emit({
            "shape": list(out.shape),
            "entries": [
                [out.worker_ids[i], out.task_ids[j], float(v)] for i, j, v in zip(out.rows, out.cols, out.values)
            ],
            "emptyWorkers": [int(i) for i in result.empty_workers],
            "unconvergedWorkers": [int(i) for i in result.unconverged_workers],
        }, args)
    elif args.out:
        save_answers_csv(out, args.out)
    else:
        write_answers_csv(out, sys.stdout)
    return 0


def cmd_infer(args) -> int:
    matrix = _load_answers(args.answers, args)
    result = infer_truth(matrix, args.tol, args.max_iter)
    if args.format == "csv":
        lines = ["task_id,truth"] + [f"{t},{v!r}" for t, v in zip(matrix.task_ids, map(float, result.truths))]
        text = "\n".join(lines) + "\n"
        if args.out:
            Path(args.out).write_text(text, encoding="utf-8")
        else:
            sys.stdout.write(text)
    else:
        _emit(result.to_json(matrix), args)
    return 0


def cmd_evaluate(args) -> int:
    original = _load_answers(args.answers, args)
    domain = original.domain
    perturbed = load_answers_csv(
        args.perturbed, AnswerDomain(-10**12, 10**12), worker_ids=original.worker_ids, task_ids=original.task_ids,
    )
    ground = load_truth_csv(args.truth, original.task_ids, allow_missing=True)
    report = evaluate_mae_change(original, perturbed, ground, domain=domain)
    _emit(report.to_json(), args)
    return 0


def _bound_inputs(args) -> BoundInputs:
    eps = args.epsilon
    e1, e2 = _split(args, eps)
    if args.dataset:
        ds = load_dataset(args.dataset)
        if ds.sigmas is None:
            raise ValueError("dataset bundle has no generator sigmas")
        matrix = ds.matrix
        domain = _domain(args, matrix.domain)
        m, n = matrix.shape
        return BoundInputs(
            qualities=np.full(m, 1.0 / m), sigmas=ds.sigmas,
            nonnull_fractions=sparsity_profile(matrix).per_worker, truths=ds.ground.truths,
            domain=domain, epsilon=eps, eps1=e1, eps2=e2,
            d=args.mf_d if args.mf_d is not None else MFConfig().resolve_d(n), answered=matrix.mask(),
        )
    domain = _domain(args, AnswerDomain(0, 9))
    mu = domain.min if args.mu is None else args.mu
    d = args.mf_d if args.mf_d is not None else MFConfig().resolve_d(args.n)
    return BoundInputs.uniform(
        args.m, args.n, sigma=args.sigma, s=args.nonnull, truth=mu, domain=domain,
        epsilon=eps, eps1=e1, eps2=e2, d=d,
    )


def cmd_bound(args) -> int:
    report = bound_for(args.mechanism, _bound_inputs(args), args.lp_replacement)
    if args.terms_out and report.terms is not None:
        with open(args.terms_out, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("worker", "task", "term"))
            for (i, j), v in np.ndenumerate(report.terms):
                w.writerow((i, j, repr(float(v))))
    if args.format == "csv":
        print(repr(report.value))
    else:
        _emit(report.to_json(), args)
    return 0


def cmd_audit(args) -> int:
    kind = MechanismKind.parse(args.mechanism)
    budget = _split(args, args.epsilon) if kind is MechanismKind.RRLP else args.epsilon
    rng = np.random.default_rng(_resolve_seed(args))
    result = empirical_privacy_ratio(kind, _domain(args, AnswerDomain(0, 9)), budget, args.trials, rng)
    _emit(result.to_json(), args)
    return 0


def cmd_experiment(args) -> int:
    if not args.out:
        raise UsageError("experiment needs --out <directory>")
    config = ExperimentConfig(
        mechanisms=tuple(k for k in args.mechanisms.split(",") if k.strip()),
        epsilons=args.epsilons,
        sparsities=args.sparsities,
        repetitions=args.reps,
        seed=_resolve_seed(args),
        m=args.m,
        n=args.n,
        domain=_domain(args, AnswerDomain(0, 9)),
        truth_center=args.truth_center,
        worker_mix=args.worker_mix,
        eps1_fraction=args.eps1_frac,
        replacement=args.lp_replacement,
        mf=_mf(args),
        clamp=args.clamp,
        answers_path=args.answers,
        truth_path=args.truth,
        timing=args.timing,
        jobs=args.jobs,
    )
    result = run_experiment(config, args.out)
    for f in result.failures:
        logging.error("%s eps=%g sparsity=%g rep=%d: %s", f.mechanism, f.epsilon, f.sparsity, f.rep, f.error)
    return 1 if result.failures else 0


COMMANDS = {
    "generate": cmd_generate,
    "perturb": cmd_perturb,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "bound": cmd_bound,
    "audit": cmd_audit,
    "experiment": cmd_experiment,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ldpcrowd: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"ldpcrowd: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
