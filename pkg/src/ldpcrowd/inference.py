"""Iterative quality-weighted truth inference and MAE evaluation."""

from __future__ import annotations

import dataclasses

import numpy as np

from ldpcrowd.core import AnswerDomain, AnswerMatrix, GroundTruth

SIGMA_FLOOR = 1e-9
DEFAULT_TOL = 1e-6
DEFAULT_MAX_ITER = 100


@dataclasses.dataclass(frozen=True)
class InferenceResult:
    truths: np.ndarray
    qualities: np.ndarray  # zero for excluded workers
    iterations: int
    converged: bool
    excluded_workers: tuple[int, ...] = ()
    unanswered_tasks: tuple[int, ...] = ()  # truth set to the domain midpoint

    def to_json(self, matrix: AnswerMatrix | None = None) -> dict:
        out = {
            "truths": [float(x) for x in self.truths],
            "qualities": [float(x) for x in self.qualities],
            "iterations": self.iterations,
            "converged": self.converged,
            "excludedWorkers": list(self.excluded_workers),
            "unansweredTasks": list(self.unanswered_tasks),
        }
        if matrix is not None:
            out["taskIds"] = list(matrix.task_ids)
            out["workerIds"] = list(matrix.worker_ids)
        return out


def _weighted_truths(rows, cols, vals, q, n, anchor, answered):
    # shifting by a per-task anchor keeps identical answers exact
    w = q[rows]
    num = np.bincount(cols, weights=w * (vals - anchor[cols]), minlength=n)
    den = np.bincount(cols, weights=w, minlength=n)
    out = anchor.copy()
    out[answered] += num[answered] / den[answered]
    return out


def infer_truth(
    matrix: AnswerMatrix,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    domain: AnswerDomain | None = None,
) -> InferenceResult:
    """Alternate weighted-average truths and inverse-RMS-deviation qualities.

    Qualities start at 1/m over workers with at least one answer and are
    renormalized to sum 1 each round. Stops when the largest truth change
    drops below ``tol`` or after ``max_iter`` rounds.
    """
    if matrix.nnz == 0:
        raise ValueError("cannot infer truths from a matrix with no answers")
    if tol <= 0 or max_iter < 1:
        raise ValueError("tol must be positive and max_iter >= 1")
    domain = domain or matrix.domain
    m, n = matrix.shape
    rows, cols, vals = matrix.rows, matrix.cols, matrix.values

    counts = matrix.answers_per_worker()
    included = counts > 0
    per_task = matrix.answers_per_task()
    answered = per_task > 0
    midpoint = domain.midpoint if domain is not None else float(np.mean(vals))

    anchor = np.full(n, midpoint)
    # first answer of each task (entries are sorted by worker, so take min index per task)
    first = np.full(n, vals.size, dtype=np.int64)
    np.minimum.at(first, cols, np.arange(vals.size))
    anchor[answered] = vals[first[answered]]

    q = np.where(included, 1.0 / included.sum(), 0.0)
    truths = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = _weighted_truths(rows, cols, vals, q, n, anchor, answered)
        resid = vals - new[cols]
        mse = np.bincount(rows, weights=resid * resid, minlength=m)
        sigma = np.sqrt(mse[included] / counts[included])
        q = np.zeros(m)
        q[included] = 1.0 / np.maximum(sigma, SIGMA_FLOOR)
        q /= q.sum()
        if truths is not None and np.max(np.abs(new - truths)) < tol:
            truths = new
            converged = True
            break
        truths = new

    truths[~answered] = midpoint
    return InferenceResult(
        truths=truths,
        qualities=q,
        iterations=it,
        converged=converged,
        excluded_workers=tuple(int(i) for i in np.flatnonzero(~included)),
        unanswered_tasks=tuple(int(j) for j in np.flatnonzero(~answered)),
    )


def mae(truths, ground: GroundTruth | np.ndarray) -> float:
    """Mean absolute error over tasks; tasks with unknown (nan) ground truth are skipped."""
    est = np.asarray(truths, dtype=float)
    ref = ground.truths if isinstance(ground, GroundTruth) else np.asarray(ground, dtype=float)
    if est.shape != ref.shape:
        raise ValueError(f"length mismatch: {est.size} truths vs {ref.size} ground-truth values")
    known = ~np.isnan(ref)
    if not known.any():
        raise ValueError("no task has a known ground truth")
    return float(np.mean(np.abs(ref[known] - est[known])))


@dataclasses.dataclass(frozen=True)
class EvaluationReport:
    mae_original: float
    mae_perturbed: float
    mae_change: float
    iterations_original: int = 0
    iterations_perturbed: int = 0

    def to_json(self) -> dict:
        return {
            "maeOriginal": self.mae_original,
            "maePerturbed": self.mae_perturbed,
            "maeChange": self.mae_change,
            "iterationsOriginal": self.iterations_original,
            "iterationsPerturbed": self.iterations_perturbed,
        }


def evaluate_mae_change(
    original: AnswerMatrix,
    perturbed: AnswerMatrix,
    ground: GroundTruth,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    domain: AnswerDomain | None = None,
) -> EvaluationReport:
    if original.shape != perturbed.shape:
        raise ValueError(f"shape mismatch: {original.shape} vs {perturbed.shape}")
    domain = domain or original.domain or perturbed.domain
    before = infer_truth(original, tol, max_iter, domain)
    after = infer_truth(perturbed, tol, max_iter, domain)
    mo, mp = mae(before.truths, ground), mae(after.truths, ground)
    return EvaluationReport(mo, mp, mp - mo, before.iterations, after.iterations)
