"""Analytic upper bounds on the expected MAE of inferred truths.

All calculators are ex-ante: worker deviations σ_i and qualities q_i are
inputs, never estimated from data.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.special import logsumexp

from ldpcrowd.core import AnswerDomain, ReplacementStrategy

SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


@dataclasses.dataclass(frozen=True)
class BoundInputs:
    """Inputs to every bound calculator.

    ``answered`` is the m×n original answer pattern (who answered which task);
    ``None`` means every worker answered every task.
    """

    qualities: np.ndarray
    sigmas: np.ndarray
    nonnull_fractions: np.ndarray
    truths: np.ndarray
    domain: AnswerDomain
    epsilon: float = 1.0
    eps1: float | None = None
    eps2: float | None = None
    d: int | None = None
    answered: np.ndarray | None = None

    def __post_init__(self):
        for name in ("qualities", "sigmas", "nonnull_fractions", "truths"):
            object.__setattr__(self, name, np.atleast_1d(np.asarray(getattr(self, name), dtype=float)))
        m = self.qualities.size
        if self.sigmas.size != m or self.nonnull_fractions.size != m:
            raise ValueError("qualities, sigmas and nonnull_fractions need one entry per worker")
        if np.any(self.sigmas < 0):
            raise ValueError("sigmas must be nonnegative")
        if np.any((self.nonnull_fractions < 0) | (self.nonnull_fractions > 1)):
            raise ValueError("nonnull fractions must lie in [0, 1]")
        if self.answered is not None:
            ans = np.asarray(self.answered, dtype=bool)
            if ans.shape != (m, self.truths.size):
                raise ValueError(f"answered pattern must be {m}x{self.truths.size}")
            object.__setattr__(self, "answered", ans)

    @classmethod
    def uniform(cls, m: int, n: int, *, sigma=1.0, s=1.0, truth=0.0, domain=AnswerDomain(0, 9), **kwargs) -> BoundInputs:
        """Homogeneous inputs with q_i = 1/m."""
        return cls(
            qualities=np.full(m, 1.0 / m),
            sigmas=np.broadcast_to(np.asarray(sigma, dtype=float), (m,)),
            nonnull_fractions=np.broadcast_to(np.asarray(s, dtype=float), (m,)),
            truths=np.broadcast_to(np.asarray(truth, dtype=float), (n,)),
            domain=domain,
            **kwargs,
        )

    @property
    def m(self) -> int:
        return self.qualities.size

    @property
    def n(self) -> int:
        return self.truths.size

    @property
    def max_quality(self) -> float:
        return float(self.qualities.max())

    def pattern(self) -> np.ndarray:
        if self.answered is None:
            return np.ones((self.m, self.n), dtype=bool)
        return self.answered


@dataclasses.dataclass(frozen=True)
class BoundReport:
    mechanism: str
    value: float
    terms: np.ndarray | None = None  # e_ij, m×n
    helper: np.ndarray | None = None  # φ_j or ψ_j per task

    def to_json(self) -> dict:
        out = {"mechanism": self.mechanism, "bound": self.value}
        if self.helper is not None:
            out["helper"] = [float(x) for x in self.helper]
        return out


def _aggregate(inputs: BoundInputs, terms: np.ndarray, pattern: np.ndarray) -> float:
    """(1/n) Σ_j Σ_{i∈W̄_j} q_i e_ij / Σ_{i∈W̄_j} q_i."""
    w = inputs.qualities[:, None] * pattern
    den = w.sum(axis=0)
    if np.any(den <= 0):
        raise ValueError("every task needs at least one answering worker with positive quality")
    return float(np.mean((w * terms).sum(axis=0) / den))


def uniform_deviation(truths, domain: AnswerDomain) -> np.ndarray:
    """((max − μ)² + (μ − min)²) / (2(max − min)): the continuous-uniform E|μ − U|."""
    mu = np.asarray(truths, dtype=float)
    lo, hi = domain.min, domain.max
    return ((hi - mu) ** 2 + (mu - lo) ** 2) / (2.0 * (hi - lo))


def baseline_bound(inputs: BoundInputs) -> BoundReport:
    terms = np.broadcast_to(SQRT_2_OVER_PI * inputs.sigmas[:, None], (inputs.m, inputs.n))
    return BoundReport("NONE", _aggregate(inputs, terms, inputs.pattern()), np.array(terms))


def lp_bound(inputs: BoundInputs, replacement: ReplacementStrategy = ReplacementStrategy.uniform()) -> BoundReport:
    """Sums over all workers per task: LP leaves no NULL cells."""
    dom = inputs.domain
    if replacement.is_uniform:
        phi = uniform_deviation(inputs.truths, dom)
    else:
        phi = np.abs(inputs.truths - replacement.constant)
    noise = dom.cardinality / inputs.epsilon
    s = inputs.nonnull_fractions[:, None]
    terms = (1 - s) * (phi[None, :] + noise) + s * (inputs.sigmas[:, None] * SQRT_2_OVER_PI + noise)
    value = _aggregate(inputs, terms, np.ones_like(terms, dtype=bool))
    return BoundReport("LP", value, terms, phi)


def discrete_gaussian_weights(support: np.ndarray, mu, sigma) -> np.ndarray:
    """Gaussian density at each support point, normalized to sum 1 over the support.

    Broadcasts ``mu``/``sigma``; returns shape ``broadcast(mu, sigma).shape + (len(support),)``.
    σ = 0 is the limit: equal mass on the support points nearest to μ.
    """
    mu = np.asarray(mu, dtype=float)[..., None]
    sigma = np.asarray(sigma, dtype=float)[..., None]
    dist2 = (support - mu) ** 2
    with np.errstate(divide="ignore", invalid="ignore"):
        logw = np.where(sigma > 0, -dist2 / (2.0 * np.where(sigma > 0, sigma, 1.0) ** 2), 0.0)
    nearest = np.isclose(dist2, dist2.min(axis=-1, keepdims=True), rtol=0, atol=1e-12)
    logw = np.where(sigma > 0, logw, np.where(nearest, 0.0, -np.inf))
    return np.exp(logw - logsumexp(logw, axis=-1, keepdims=True))


def rr_expected_values(domain: AnswerDomain, epsilon: float) -> tuple[float, np.ndarray]:
    """(Σ_y y/(e^ε+|Γ|), [Σ_y y P_xy for x in Γ]) with NULL outputs contributing nothing."""
    k = domain.cardinality
    y = domain.values()
    switch = math.exp(-epsilon) / (1.0 + k * math.exp(-epsilon))  # 1/(e^ε+|Γ|)
    keep = 1.0 / (1.0 + k * math.exp(-epsilon))
    P = np.full((k, k), switch)
    np.fill_diagonal(P, keep)
    return float(y.sum() * switch), P @ y


def rr_bound(inputs: BoundInputs) -> BoundReport:
    dom = inputs.domain
    null_mean, value_mean = rr_expected_values(dom, inputs.epsilon)
    mu = inputs.truths
    support = dom.values()
    # N(x; μ_j, σ_i) as an m×n×|Γ| array
    weights = discrete_gaussian_weights(support, mu[None, :], inputs.sigmas[:, None])
    dev = np.abs(mu[:, None] - value_mean[None, :])  # n×|Γ|
    value_part = np.einsum("ijx,jx->ij", weights, dev)
    s = inputs.nonnull_fractions[:, None]
    terms = (1 - s) * np.abs(mu - null_mean)[None, :] + s * value_part
    return BoundReport("RR", _aggregate(inputs, terms, inputs.pattern()), terms)


def rrlp_bound(inputs: BoundInputs) -> BoundReport:
    if inputs.eps1 is None or inputs.eps2 is None:
        raise ValueError("RR+LP bound needs eps1 and eps2")
    if not (inputs.eps1 > 0 and inputs.eps2 > 0):
        raise ValueError("eps1 and eps2 must be positive")
    psi = uniform_deviation(inputs.truths, inputs.domain)[None, :]
    e1 = math.exp(inputs.eps1)
    noise = inputs.domain.cardinality / inputs.eps2
    s = inputs.nonnull_fractions[:, None]
    sig = inputs.sigmas[:, None]
    terms = (s * psi + s * noise + e1 * (1 - s) * (sig * SQRT_2_OVER_PI + noise)) / (s + e1 * (1 - s))
    return BoundReport("RRLP", _aggregate(inputs, terms, inputs.pattern()), terms, psi[0])


def mf_bound(inputs: BoundInputs) -> BoundReport:
    """q̃·m·(√(2/π) + d|Γ|/(nε)); independent of the answer pattern and s_i."""
    if inputs.d is None or inputs.d < 1:
        raise ValueError("MF bound needs the factorization parameter d")
    value = inputs.max_quality * inputs.m * (
        SQRT_2_OVER_PI + inputs.d * inputs.domain.cardinality / (inputs.n * inputs.epsilon)
    )
    return BoundReport("MF", float(value))


def bound_for(kind: str, inputs: BoundInputs, replacement: ReplacementStrategy = ReplacementStrategy.uniform()) -> BoundReport:
    key = kind.upper().replace("+", "")
    if key in ("NONE", "BASELINE"):
        return baseline_bound(inputs)
    if key == "LP":
        return lp_bound(inputs, replacement)
    if key == "RR":
        return rr_bound(inputs)
    if key == "RRLP":
        return rrlp_bound(inputs)
    if key == "MF":
        return mf_bound(inputs)
    raise ValueError(f"unknown mechanism {kind!r}")
