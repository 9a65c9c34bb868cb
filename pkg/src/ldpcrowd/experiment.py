"""Seeded sweep over mechanisms, privacy budgets and sparsity levels."""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ldpcrowd.bounds import BoundInputs, bound_for
from ldpcrowd.core import (
    DEFAULT_DOMAIN,
    DEFAULT_EPS1_FRACTION,
    AnswerDomain,
    MechanismConfig,
    MFConfig,
    ReplacementStrategy,
    sparsity_profile,
)
from ldpcrowd.data import Dataset, SyntheticSpec, generate_synthetic
from ldpcrowd.inference import DEFAULT_MAX_ITER, DEFAULT_TOL, infer_truth, mae
from ldpcrowd.mechanisms import perturb_matrix

log = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "mechanism", "epsilon", "sparsity", "rep", "mae_original", "mae_perturbed",
    "mae_change", "analytic_bound", "iterations", "wall_ms",
)
MECHANISMS = ("NONE", "LP", "RR", "RRLP", "MF")


def derive_seed(master: int, *parts) -> int:
    """64-bit seed from a hash of the master seed and a cell coordinate."""
    text = "|".join(str(p) for p in (master, *parts)).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


def _mechanism_name(name: str) -> str:
    key = name.upper().replace("+", "").replace("-", "").replace("_", "")
    if key not in MECHANISMS:
        raise ValueError(f"unknown mechanism {name!r}; expected one of {', '.join(MECHANISMS)}")
    return key


@dataclasses.dataclass(frozen=True)
class ExperimentConfig:
    """Sweep definition.

    With ``answers_path`` set the dataset comes from CSV files, the sparsity
    grid is ignored and the bound column is left empty (generator σ_i unknown).
    """

    mechanisms: tuple[str, ...] = ("LP", "RR", "RRLP", "MF")
    epsilons: tuple[float, ...] = (0.1, 1.0, 5.0)
    sparsities: tuple[float, ...] = (0.5, 0.9)
    repetitions: int = 10
    seed: int = 0
    m: int = 200
    n: int = 50
    domain: AnswerDomain = DEFAULT_DOMAIN
    truth_center: float = 0.0
    worker_mix: tuple[tuple[float, float], ...] = ((0.5, 1.0), (0.5, 5.0))
    eps1_fraction: float = DEFAULT_EPS1_FRACTION
    replacement: ReplacementStrategy = ReplacementStrategy.uniform()
    mf: MFConfig = MFConfig()
    clamp: bool = False
    answers_path: str | None = None
    truth_path: str | None = None
    infer_tol: float = DEFAULT_TOL
    infer_max_iter: int = DEFAULT_MAX_ITER
    timing: bool = False
    jobs: int = 1

    def __post_init__(self):
        object.__setattr__(self, "mechanisms", tuple(_mechanism_name(k) for k in self.mechanisms))
        object.__setattr__(self, "epsilons", tuple(float(e) for e in self.epsilons))
        object.__setattr__(self, "sparsities", tuple(float(s) for s in self.sparsities))
        if self.repetitions < 1:
            raise ValueError("repetitions must be >= 1")
        if not self.mechanisms or not self.epsilons:
            raise ValueError("mechanism and epsilon grids must be non-empty")
        if self.answers_path is None and not self.sparsities:
            raise ValueError("sparsity grid must be non-empty for synthetic data")
        if any(e <= 0 for e in self.epsilons):
            raise ValueError("epsilons must be positive")
        if (self.answers_path is None) != (self.truth_path is None):
            raise ValueError("answers_path and truth_path go together")
        if self.jobs < 1:
            raise ValueError("jobs must be >= 1")

    @property
    def synthetic(self) -> bool:
        return self.answers_path is None

    def to_json(self) -> dict:
        out = {}
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, AnswerDomain):
                v = [v.min, v.max]
            elif isinstance(v, ReplacementStrategy):
                v = str(v)
            elif isinstance(v, MFConfig):
                v = dataclasses.asdict(v)
            elif isinstance(v, tuple):
                v = [list(x) if isinstance(x, tuple) else x for x in v]
            out[f.name] = v
        out.pop("jobs")
        return out


@dataclasses.dataclass(frozen=True)
class SweepRow:
    mechanism: str
    epsilon: float
    sparsity: float
    rep: int
    mae_original: float = math.nan
    mae_perturbed: float = math.nan
    mae_change: float = math.nan
    analytic_bound: float = math.nan
    iterations: int | None = None
    wall_ms: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclasses.dataclass(frozen=True)
class ExperimentResult:
    rows: list[SweepRow]
    summary: dict

    @property
    def failures(self) -> list[SweepRow]:
        return [r for r in self.rows if not r.ok]


def _dataset_for(config: ExperimentConfig, s_idx: int, rep: int) -> Dataset:
    if not config.synthetic:
        from ldpcrowd.data import load_answers_csv, load_truth_csv

        matrix = load_answers_csv(config.answers_path)
        return Dataset(matrix, load_truth_csv(config.truth_path, matrix.task_ids, allow_missing=True))
    spec = SyntheticSpec(
        m=config.m, n=config.n, domain=config.domain, truth_center=config.truth_center,
        worker_mix=config.worker_mix, sparsity=config.sparsities[s_idx],
        seed=derive_seed(config.seed, "data", s_idx, rep),
    )
    return generate_synthetic(spec)


def _mechanism_config(config: ExperimentConfig, kind: str, epsilon: float, seed: int) -> MechanismConfig:
    extra = {}
    if kind == "RRLP":
        e1 = config.eps1_fraction * epsilon
        extra["epsilon_split"] = (e1, epsilon - e1)
    return MechanismConfig(kind, epsilon, replacement=config.replacement, mf=config.mf, seed=seed, clamp=config.clamp, **extra)


def _bound(config: ExperimentConfig, dataset: Dataset, kind: str, epsilon: float) -> float:
    if dataset.sigmas is None:
        return math.nan
    matrix = dataset.matrix
    m, n = matrix.shape
    e1 = config.eps1_fraction * epsilon
    inputs = BoundInputs(
        qualities=np.full(m, 1.0 / m),
        sigmas=dataset.sigmas,
        nonnull_fractions=sparsity_profile(matrix).per_worker,
        truths=dataset.ground.truths,
        domain=matrix.domain,
        epsilon=epsilon,
        eps1=e1,
        eps2=epsilon - e1,
        d=config.mf.resolve_d(n),
        answered=matrix.mask(),
    )
    return bound_for(kind, inputs, config.replacement).value


def _run_dataset(config: ExperimentConfig, s_idx: int, rep: int) -> list[SweepRow]:
    """All (mechanism, ε) rows for one generated dataset."""
    dataset = _dataset_for(config, s_idx, rep)
    matrix = dataset.matrix
    sparsity = config.sparsities[s_idx] if config.synthetic else sparsity_profile(matrix).overall
    base = infer_truth(matrix, config.infer_tol, config.infer_max_iter)
    mae_before = mae(base.truths, dataset.ground)
    rows = []
    for kind in config.mechanisms:
        for e_idx, eps in enumerate(config.epsilons):
            start = time.perf_counter()
            try:
                if kind == "NONE":
                    after = base
                else:
                    seed = derive_seed(config.seed, kind, e_idx, s_idx, rep)
                    perturbed = perturb_matrix(matrix, _mechanism_config(config, kind, eps, seed)).matrix
                    after = infer_truth(perturbed, config.infer_tol, config.infer_max_iter, matrix.domain)
                mae_after = mae(after.truths, dataset.ground)
                bound = _bound(config, dataset, kind, eps)
            except Exception as exc:  # recorded per row; the sweep continues
                log.warning("%s eps=%g sparsity=%g rep=%d failed: %s", kind, eps, sparsity, rep, exc)
                rows.append(SweepRow(kind, eps, sparsity, rep, mae_original=mae_before, error=f"{type(exc).__name__}: {exc}"))
                continue
            wall = (time.perf_counter() - start) * 1e3 if config.timing else None
            rows.append(SweepRow(
                kind, eps, sparsity, rep, mae_before, mae_after, mae_after - mae_before,
                bound, after.iterations, wall,
            ))
    return rows


def _run_dataset_args(args):
    return _run_dataset(*args)


def _summarize(config: ExperimentConfig, rows: list[SweepRow]) -> dict:
    points = []
    for kind in config.mechanisms:
        for eps in config.epsilons:
            for sp in sorted({r.sparsity for r in rows}):
                group = [r for r in rows if r.mechanism == kind and r.epsilon == eps and r.sparsity == sp and r.ok]
                if not group:
                    continue
                change = np.array([r.mae_change for r in group])
                bounds = np.array([r.analytic_bound for r in group])
                points.append({
                    "mechanism": kind,
                    "epsilon": eps,
                    "sparsity": sp,
                    "repetitions": len(group),
                    "maeChangeMean": float(change.mean()),
                    "maeChangeStd": float(change.std(ddof=1)) if len(group) > 1 else 0.0,
                    "maeOriginalMean": float(np.mean([r.mae_original for r in group])),
                    "maePerturbedMean": float(np.mean([r.mae_perturbed for r in group])),
                    "analyticBoundMean": None if np.all(np.isnan(bounds)) else float(np.nanmean(bounds)),
                })
    failures = [
        {"mechanism": r.mechanism, "epsilon": r.epsilon, "sparsity": r.sparsity, "rep": r.rep, "error": r.error}
        for r in rows if not r.ok
    ]
    return {"config": config.to_json(), "points": points, "failures": failures}


def run_experiment(config: ExperimentConfig, out_dir=None) -> ExperimentResult:
    """Run the sweep; write ``sweep.csv`` and ``summary.json`` under ``out_dir`` if given.

    Rows come out ordered by mechanism, ε, sparsity and repetition regardless of
    ``jobs``. Without ``timing`` the output is byte-identical across runs.
    """
    s_range = range(len(config.sparsities)) if config.synthetic else range(1)
    cells = [(config, s, r) for s in s_range for r in range(config.repetitions)]
    if config.jobs > 1:
        with ProcessPoolExecutor(max_workers=config.jobs) as pool:
            chunks = list(pool.map(_run_dataset_args, cells))
    else:
        chunks = [_run_dataset_args(c) for c in cells]
    rows = [r for chunk in chunks for r in chunk]
    order = {k: i for i, k in enumerate(config.mechanisms)}
    e_order = {e: i for i, e in enumerate(config.epsilons)}
    rows.sort(key=lambda r: (order[r.mechanism], e_order[r.epsilon], r.sparsity, r.rep))
    result = ExperimentResult(rows, _summarize(config, rows))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "sweep.csv").write_text(sweep_csv(rows), encoding="utf-8")
        (out / "summary.json").write_text(json.dumps(result.summary, indent=2) + "\n", encoding="utf-8")
    return result


def _cell(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    return repr(x) if isinstance(x, float) else str(x)


def sweep_csv(rows: list[SweepRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(SWEEP_COLUMNS)
    for r in rows:
        w.writerow([_cell(getattr(r, c)) for c in SWEEP_COLUMNS])
    return buf.getvalue()
