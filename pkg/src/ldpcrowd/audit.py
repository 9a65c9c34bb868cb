"""Monte Carlo check of the per-cell privacy guarantee.

For every single-cell input in Γ ∪ {NULL} the mechanism is run ``trials``
times; outputs are bucketed (unit-width bins ``floor(y)`` plus a NULL bin) and
the largest frequency ratio between two inputs over the same bucket is
reported. Bucketed ratios lower-bound the pointwise density ratio, so a
correct mechanism stays below e^ε up to sampling error.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.stats import norm

from ldpcrowd.core import AnswerDomain, MechanismKind
from ldpcrowd.mechanisms import lp_perturb, rr_perturb, rrlp_perturb

MIN_TRIALS = 100_000
CONFIDENCE = 0.999
MAX_RELATIVE_HALF_WIDTH = 0.05
NULL_BUCKET = "NULL"


def wilson_interval(successes, trials, confidence: float = CONFIDENCE) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized Wilson score interval for binomial proportions."""
    k = np.asarray(successes, dtype=float)
    n = np.asarray(trials, dtype=float)
    z = norm.ppf(0.5 + confidence / 2.0)
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2.0 * n)) / denom
    half = z * np.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    return centre - half, centre + half


@dataclasses.dataclass(frozen=True)
class AuditResult:
    mechanism: str
    epsilon: float
    ratio: float  # max point estimate over eligible (input pair, bucket)
    ratio_lower: float  # Wilson-based bounds for that same pair and bucket
    ratio_upper: float
    worst_pair: tuple[str, str]
    worst_bucket: str
    eligible_buckets: int
    trials: int
    per_bucket: dict = dataclasses.field(default_factory=dict)  # bucket label -> max ratio

    @property
    def limit(self) -> float:
        return math.exp(self.epsilon)

    @property
    def margin(self) -> float:
        """Relative statistical slack of the worst ratio: upper/point − 1."""
        return self.ratio_upper / self.ratio - 1.0

    def to_json(self) -> dict:
        return {
            "mechanism": self.mechanism,
            "epsilon": self.epsilon,
            "ratio": self.ratio,
            "ratioLower": self.ratio_lower,
            "ratioUpper": self.ratio_upper,
            "limit": self.limit,
            "worstPair": list(self.worst_pair),
            "worstBucket": self.worst_bucket,
            "eligibleBuckets": self.eligible_buckets,
            "trials": self.trials,
        }


def _label(x: float) -> str:
    return NULL_BUCKET if np.isnan(x) else str(int(x))


def _bucket_counts(outputs: np.ndarray) -> dict:
    null = np.isnan(outputs)
    keys, counts = np.unique(np.floor(outputs[~null]), return_counts=True)
    out = {float(k): int(c) for k, c in zip(keys, counts)}
    if null.any():
        out[math.nan] = int(null.sum())
    return out


def empirical_privacy_ratio(
    kind,
    domain: AnswerDomain,
    epsilon,
    trials: int,
    rng: np.random.Generator | None = None,
    *,
    max_relative_half_width: float = MAX_RELATIVE_HALF_WIDTH,
) -> AuditResult:
    """Largest bucketed output-frequency ratio over all single-cell input pairs.

    ``epsilon`` is a float, or an ``(eps1, eps2)`` pair for RR+LP. ``trials``
    is the number of mechanism runs per input value. Only buckets whose 99.9%
    Wilson interval has relative half-width at most
    ``max_relative_half_width`` (5% by default) for both inputs of a pair are
    compared, so rare tail buckets do not dominate through sampling noise.
    """
    kind = MechanismKind.parse(kind) if isinstance(kind, str) else kind
    if kind is MechanismKind.MF:
        raise ValueError("MF is audited analytically through its noise distribution, not by frequencies")
    if trials < MIN_TRIALS:
        raise ValueError(f"need at least {MIN_TRIALS} trials per input, got {trials}")
    rng = rng if rng is not None else np.random.default_rng()

    if kind is MechanismKind.RRLP:
        eps1, eps2 = epsilon
        total = eps1 + eps2
        run = lambda row: rrlp_perturb(row, domain, eps1, eps2, rng)
    else:
        total = float(epsilon)
        if kind is MechanismKind.LP:
            run = lambda row: lp_perturb(row, domain, total, rng=rng)
        else:
            run = lambda row: rr_perturb(row, domain, total, rng)

    inputs = [*domain.values(), math.nan]
    per_input = [_bucket_counts(run(np.full(trials, x))) for x in inputs]

    # nan keys do not compare equal, so key the NULL bucket by label
    labels = sorted({_label(k) for c in per_input for k in c}, key=lambda s: (s == NULL_BUCKET, float(s) if s != NULL_BUCKET else 0))
    index = {lab: b for b, lab in enumerate(labels)}
    counts = np.zeros((len(inputs), len(labels)))
    for a, c in enumerate(per_input):
        for k, v in c.items():
            counts[a, index[_label(k)]] = v

    lo, hi = wilson_interval(counts, trials)
    p = counts / trials
    with np.errstate(divide="ignore", invalid="ignore"):
        eligible = (counts > 0) & ((hi - lo) / 2.0 <= max_relative_half_width * p)

    best = (0.0, 0.0, 0.0, ("", ""), "")
    per_bucket = {}
    for b, lab in enumerate(labels):
        rows = np.flatnonzero(eligible[:, b])
        if rows.size < 2:
            continue
        top = rows[np.argmax(p[rows, b])]
        bottom = rows[np.argmin(p[rows, b])]
        ratio = p[top, b] / p[bottom, b]
        per_bucket[lab] = float(ratio)
        if ratio > best[0]:
            pair = (_label(inputs[top]), _label(inputs[bottom]))
            best = (ratio, lo[top, b] / hi[bottom, b], hi[top, b] / lo[bottom, b], pair, lab)
    if not per_bucket:
        raise ValueError("no output bucket is well estimated for two inputs; increase trials")
    ratio, r_lo, r_hi, pair, bucket = best
    return AuditResult(
        kind.value, float(total), float(ratio), float(r_lo), float(r_hi), pair, bucket, len(per_bucket), trials, per_bucket,
    )
