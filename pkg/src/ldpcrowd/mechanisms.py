"""Local perturbation mechanisms for sparse answer vectors.

Rows are 1-D float arrays of length n with ``nan`` for NULL cells. Every
mechanism draws from an explicit ``numpy.random.Generator``; matrix-level
entry points derive one generator per worker from ``seed ^ worker_index``.

Noise is drawn through a ``NoiseSource`` callable ``(rng, scale, size) -> array``
so tests can inject :func:`zero_noise`. The matrix-level entry points always use
Laplace noise.
"""

from __future__ import annotations

import dataclasses
import logging
from typing import Callable

import numpy as np
from scipy.special import expit

from ldpcrowd.core import (
    AnswerDomain,
    AnswerMatrix,
    MechanismConfig,
    MechanismKind,
    MFConfig,
    ReplacementStrategy,
)

log = logging.getLogger(__name__)

NoiseSource = Callable[[np.random.Generator, float, int], np.ndarray]


def laplace_noise(rng: np.random.Generator, scale: float, size: int) -> np.ndarray:
    if scale == 0:
        return np.zeros(size)
    return rng.laplace(0.0, scale, size)


def zero_noise(rng: np.random.Generator, scale: float, size: int) -> np.ndarray:
    """Degenerate noise source for tests."""
    return np.zeros(size)


def laplace_scale(domain: AnswerDomain, epsilon: float) -> float:
    return domain.cardinality / epsilon


def _as_row(row) -> np.ndarray:
    row = np.asarray(row, dtype=float)
    if row.ndim != 1:
        raise ValueError("answer row must be 1-D")
    return row


def worker_rng(seed: int, worker: int) -> np.random.Generator:
    return np.random.default_rng(seed ^ worker)


# --------------------------------------------------------------------------
# Laplace perturbation


def lp_perturb(
    row,
    domain: AnswerDomain,
    epsilon: float,
    replacement: ReplacementStrategy = ReplacementStrategy.uniform(),
    rng: np.random.Generator | None = None,
    *,
    noise: NoiseSource = laplace_noise,
) -> np.ndarray:
    """Fill NULLs per ``replacement`` then add Laplace(|Γ|/ε) to every cell.

    The output is dense and unclamped.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    replacement.validate(domain)
    rng = rng if rng is not None else np.random.default_rng()
    row = _as_row(row)
    out = row.copy()
    null = np.isnan(out)
    if replacement.is_uniform:
        fill = rng.integers(domain.min, domain.max + 1, size=row.size).astype(float)
        out[null] = fill[null]
    else:
        out[null] = replacement.constant
    return out + noise(rng, laplace_scale(domain, epsilon), row.size)


# --------------------------------------------------------------------------
# Randomized response over Γ ∪ {NULL}


@dataclasses.dataclass(frozen=True)
class RRTransition:
    """Keep/switch probabilities over the |Γ|+1 augmented outcomes."""

    keep_probability: float
    switch_probability: float

    @classmethod
    def for_budget(cls, cardinality: int, epsilon: float) -> RRTransition:
        # e^ε/(|Γ|+e^ε) written to stay finite as ε → ∞
        keep = 1.0 / (1.0 + cardinality * np.exp(-epsilon))
        return cls(float(keep), float((1.0 - keep) / cardinality))

    def matrix(self, cardinality: int) -> np.ndarray:
        """(|Γ|+1)×(|Γ|+1) transition matrix; last index is NULL."""
        k = cardinality + 1
        p = np.full((k, k), self.switch_probability)
        np.fill_diagonal(p, self.keep_probability)
        return p


def encode_cells(row: np.ndarray, domain: AnswerDomain) -> np.ndarray:
    """Map cell values to outcome indices: value v -> v - min, NULL -> |Γ|."""
    null = np.isnan(row)
    vals = row[~null]
    if np.any(vals != np.round(vals)):
        raise ValueError("randomized response requires integer answers")
    if np.any(~domain.contains(vals)):
        raise ValueError(f"answer outside domain [{domain.min}, {domain.max}]")
    codes = np.full(row.size, domain.cardinality, dtype=np.int64)
    codes[~null] = vals.astype(np.int64) - domain.min
    return codes


def decode_cells(codes: np.ndarray, domain: AnswerDomain) -> np.ndarray:
    out = (codes + domain.min).astype(float)
    out[codes == domain.cardinality] = np.nan
    return out


def rr_perturb_codes(codes: np.ndarray, cardinality: int, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    t = RRTransition.for_budget(cardinality, epsilon)
    keep = rng.random(codes.size) < t.keep_probability
    # uniform over the |Γ| outcomes other than the input
    other = rng.integers(0, cardinality, size=codes.size)
    other = other + (other >= codes)
    return np.where(keep, codes, other)


def rr_perturb(row, domain: AnswerDomain, epsilon: float, rng: np.random.Generator | None = None) -> np.ndarray:
    """Keep each cell w.p. e^ε/(|Γ|+e^ε), else switch to another member of Γ ∪ {NULL}."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    codes = encode_cells(_as_row(row), domain)
    return decode_cells(rr_perturb_codes(codes, domain.cardinality, epsilon, rng), domain)


# --------------------------------------------------------------------------
# RR on the NULL/non-NULL class, then Laplace on the value


@dataclasses.dataclass(frozen=True)
class ClassDesignMatrix:
    stay_probability: float
    flip_probability: float

    @classmethod
    def for_budget(cls, eps1: float) -> ClassDesignMatrix:
        stay = float(expit(eps1))
        return cls(stay, 1.0 - stay)


def rrlp_perturb(
    row,
    domain: AnswerDomain,
    eps1: float,
    eps2: float,
    rng: np.random.Generator | None = None,
    *,
    noise: NoiseSource = laplace_noise,
) -> np.ndarray:
    """Two-step perturbation guaranteeing (ε₁+ε₂)-cell LDP.

    Step 1 keeps the NULL/non-NULL class w.p. e^ε₁/(1+e^ε₁). Cells whose output
    class is non-NULL get a value (the original, or a uniform draw from Γ if the
    input was NULL) plus Laplace(|Γ|/ε₂).
    """
    if not (eps1 > 0 and eps2 > 0):
        raise ValueError("eps1 and eps2 must be positive")
    rng = rng if rng is not None else np.random.default_rng()
    row = _as_row(row)
    null_in = np.isnan(row)
    stay = rng.random(row.size) < ClassDesignMatrix.for_budget(eps1).stay_probability
    null_out = np.where(stay, null_in, ~null_in)
    fill = rng.integers(domain.min, domain.max + 1, size=row.size).astype(float)
    base = np.where(null_in, fill, row)
    out = base + noise(rng, laplace_scale(domain, eps2), row.size)
    out[null_out] = np.nan
    return out


# --------------------------------------------------------------------------
# Matrix factorization with objective perturbation


def mf_generate_task_profile(d: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """d×n nonnegative task profile matrix with every column summing to 1."""
    if d < 1 or n < 1:
        raise ValueError("d and n must be positive")
    v = rng.random((d, n))
    zero = v.sum(axis=0) == 0
    while np.any(zero):
        v[:, zero] = rng.random((d, int(zero.sum())))
        zero = v.sum(axis=0) == 0
    return v / v.sum(axis=0, keepdims=True)


@dataclasses.dataclass(frozen=True)
class WorkerProfileFit:
    profile: np.ndarray
    noise: np.ndarray
    iterations: int
    gradient_norm: float
    converged: bool


def _normal_system(row: np.ndarray, V: np.ndarray, ridge: float) -> tuple[np.ndarray, np.ndarray]:
    """(Σ_j v_j v_jᵀ + λI, Σ_j v_j a_j) over the answered tasks of ``row``."""
    obs = ~np.isnan(row)
    Vo = V[:, obs]
    A = Vo @ Vo.T + ridge * np.eye(V.shape[0])
    return A, Vo @ row[obs]


def mf_loss(row, u, V, eta, ridge: float = 0.0) -> float:
    """Σ_{j∈T_i}(a_j − u·v_j)² + 2u·η + λ‖u‖²."""
    row = _as_row(row)
    obs = ~np.isnan(row)
    r = row[obs] - np.asarray(u) @ V[:, obs]
    return float(r @ r + 2.0 * np.dot(u, eta) + ridge * np.dot(u, u))


def mf_gradient(row, u, V, eta, ridge: float = 0.0) -> np.ndarray:
    A, b = _normal_system(_as_row(row), V, ridge)
    return 2.0 * (A @ np.asarray(u) - (b - np.asarray(eta)))


def largest_eigenvalue(A: np.ndarray, iterations: int = 20) -> np.ndarray:
    """Power-iteration estimate of λ_max for a stack of PSD matrices (..., d, d)."""
    x = np.ones(A.shape[:-1])
    lam = np.zeros(A.shape[:-2])
    for _ in range(iterations):
        y = np.einsum("...ij,...j->...i", A, x)
        norm = np.linalg.norm(y, axis=-1)
        lam = norm / np.maximum(np.linalg.norm(x, axis=-1), np.finfo(float).tiny)
        x = y / np.maximum(norm, np.finfo(float).tiny)[..., None]
    return lam


def _descend(A, b, u0, gamma, tol, max_iter):
    """Batched gradient descent on ½uᵀ(2A)u − 2bᵀu; each row stops at its own tolerance.

    A: (k, d, d), b: (k, d), u0: (k, d), gamma: (k,).
    """
    u = u0.copy()
    k = u.shape[0]
    iters = np.zeros(k, dtype=np.int64)
    grad = 2.0 * (np.einsum("kij,kj->ki", A, u) - b)
    gnorm = np.linalg.norm(grad, axis=1)
    active = gnorm > tol
    for _ in range(max_iter):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        u[idx] -= gamma[idx, None] * grad[idx]
        iters[idx] += 1
        g = 2.0 * (np.einsum("kij,kj->ki", A[idx], u[idx]) - b[idx])
        grad[idx] = g
        gnorm[idx] = np.linalg.norm(g, axis=1)
        active[idx] = gnorm[idx] > tol
    return u, iters, gnorm, ~active


def _fit_batch(rows: np.ndarray, V: np.ndarray, domain: AnswerDomain, epsilon: float,
               config: MFConfig, rngs, noise: NoiseSource) -> list[WorkerProfileFit]:
    d = V.shape[0]
    k = rows.shape[0]
    A = np.empty((k, d, d))
    b = np.empty((k, d))
    u0 = np.empty((k, d))
    etas = np.empty((k, d))
    scale = laplace_scale(domain, epsilon)
    for i, (row, rng) in enumerate(zip(rows, rngs)):
        if not np.any(~np.isnan(row)):
            raise ValueError("MF needs at least one non-NULL answer per row")
        A[i], rhs = _normal_system(row, V, config.ridge)
        u0[i] = rng.random(d)
        etas[i] = noise(rng, scale, d)
        b[i] = rhs - etas[i]
    if config.learning_rate is not None:
        gamma = np.full(k, config.learning_rate)
    else:
        hessian_max = 2.0 * largest_eigenvalue(A)
        gamma = 1.0 / (2.0 * hessian_max)
    u, iters, gnorm, conv = _descend(A, b, u0, gamma, config.tolerance, config.max_iter)
    return [
        WorkerProfileFit(u[i], etas[i], int(iters[i]), float(gnorm[i]), bool(conv[i]))
        for i in range(k)
    ]


def _check_profile(row: np.ndarray, V: np.ndarray) -> None:
    if V.ndim != 2 or V.shape[1] != row.size:
        raise ValueError(f"task profile has {V.shape[-1]} columns, row has {row.size} cells")


def mf_fit_worker_profile(
    row,
    V: np.ndarray,
    domain: AnswerDomain,
    epsilon: float,
    config: MFConfig = MFConfig(),
    rng: np.random.Generator | None = None,
    *,
    noise: NoiseSource = laplace_noise,
) -> WorkerProfileFit:
    """Minimize the noise-perturbed loss by gradient descent from u ~ U[0,1)^d.

    Non-convergence is reported via ``converged=False``, not raised.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    row = _as_row(row)
    V = np.asarray(V, dtype=float)
    _check_profile(row, V)
    rng = rng if rng is not None else np.random.default_rng()
    return _fit_batch(row[None, :], V, domain, epsilon, config, [rng], noise)[0]


@dataclasses.dataclass(frozen=True)
class ClosedFormSolution:
    profile: np.ndarray
    singular: bool


def mf_closed_form_oracle(row, V: np.ndarray, eta, ridge: float) -> ClosedFormSolution:
    """Direct solve of (Σ v_j v_jᵀ + λI) u = Σ v_j a_j − η.

    Falls back to the minimum-norm least-squares solution when the system is singular.
    """
    row = _as_row(row)
    V = np.asarray(V, dtype=float)
    A, rhs = _normal_system(row, V, ridge)
    rhs = rhs - np.asarray(eta, dtype=float)
    if np.linalg.matrix_rank(A) < A.shape[0]:
        u, *_ = np.linalg.lstsq(A, rhs, rcond=None)
        return ClosedFormSolution(u, True)
    return ClosedFormSolution(np.linalg.solve(A, rhs), False)


def mf_perturb(
    row,
    V: np.ndarray,
    domain: AnswerDomain,
    epsilon: float,
    config: MFConfig = MFConfig(),
    rng: np.random.Generator | None = None,
    *,
    noise: NoiseSource = laplace_noise,
) -> tuple[np.ndarray, WorkerProfileFit]:
    """Release ``u V`` for the fitted profile u; the fit carries the convergence flag."""
    fit = mf_fit_worker_profile(row, V, domain, epsilon, config, rng, noise=noise)
    return fit.profile @ V, fit


# --------------------------------------------------------------------------
# Matrix-level entry points


@dataclasses.dataclass(frozen=True)
class PerturbationResult:
    matrix: AnswerMatrix
    empty_workers: np.ndarray  # workers left with no non-NULL answer
    unconverged_workers: np.ndarray  # MF only
    task_profile: np.ndarray | None = None


TASK_PROFILE_STREAM = 0x7A5C


def task_profile_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, TASK_PROFILE_STREAM])


def perturb_matrix(matrix: AnswerMatrix, config: MechanismConfig, domain: AnswerDomain | None = None) -> PerturbationResult:
    """Perturb every worker row independently with generator ``seed ^ i``."""
    domain = domain or matrix.domain
    if domain is None:
        raise ValueError("perturbation needs an answer domain")
    dense = matrix.to_dense()
    m, n = matrix.shape
    rngs = [worker_rng(config.seed, i) for i in range(m)]
    kind = config.kind
    unconverged = np.array([], dtype=np.int64)
    V = None
    if kind is MechanismKind.LP:
        out = np.vstack([lp_perturb(dense[i], domain, config.epsilon, config.replacement, rngs[i]) for i in range(m)])
        if config.clamp:
            out = np.clip(out, domain.min, domain.max)
    elif kind is MechanismKind.RR:
        out = np.vstack([rr_perturb(dense[i], domain, config.epsilon, rngs[i]) for i in range(m)])
    elif kind is MechanismKind.RRLP:
        e1, e2 = config.epsilon_split
        out = np.vstack([rrlp_perturb(dense[i], domain, e1, e2, rngs[i]) for i in range(m)])
    elif kind is MechanismKind.MF:
        d = config.mf.resolve_d(n)
        V = mf_generate_task_profile(d, n, task_profile_rng(config.seed))
        fits = _fit_batch(dense, V, domain, config.epsilon, config.mf, rngs, laplace_noise)
        U = np.vstack([f.profile for f in fits])
        out = U @ V
        unconverged = np.array([i for i, f in enumerate(fits) if not f.converged], dtype=np.int64)
        if unconverged.size:
            log.info("MF: %d of %d worker fits hit max_iter", unconverged.size, m)
    else:  # pragma: no cover
        raise ValueError(f"unsupported mechanism {kind}")
    result = matrix.with_dense(out)
    return PerturbationResult(result, result.empty_workers(), unconverged, V)
