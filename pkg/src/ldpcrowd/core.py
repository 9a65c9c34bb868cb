"""Shared types: answer domain, sparse answer matrix, ground truth, mechanism configuration."""

from __future__ import annotations

import dataclasses
import enum
import math
from collections.abc import Sequence

import numpy as np


@dataclasses.dataclass(frozen=True)
class AnswerDomain:
    """Discrete numeric answer domain ``{min, min+1, ..., max}``.

    ``cardinality`` (max - min + 1) is the sensitivity used by every mechanism,
    not the range max - min.
    """

    min: int
    max: int

    def __post_init__(self):
        if int(self.min) != self.min or int(self.max) != self.max:
            raise ValueError(f"domain bounds must be integers, got [{self.min}, {self.max}]")
        object.__setattr__(self, "min", int(self.min))
        object.__setattr__(self, "max", int(self.max))
        if self.max - self.min + 1 < 2:
            raise ValueError(f"domain [{self.min}, {self.max}] must contain at least two values")

    @property
    def cardinality(self) -> int:
        return self.max - self.min + 1

    @property
    def midpoint(self) -> float:
        return (self.min + self.max) / 2.0

    def values(self) -> np.ndarray:
        return np.arange(self.min, self.max + 1, dtype=float)

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return (x >= self.min) & (x <= self.max)


DEFAULT_DOMAIN = AnswerDomain(0, 9)


class AnswerMatrix:
    """Immutable sparse worker-by-task answer matrix.

    Only non-NULL answers are stored, as coordinate triplets sorted by
    (worker, task). A NULL answer is simply an absent entry.

    Row vectors handed to the mechanisms use ``nan`` for NULL cells; see
    :meth:`row` and :meth:`from_dense`.
    """

    __slots__ = ("_m", "_n", "_rows", "_cols", "_vals", "domain", "worker_ids", "task_ids")

    def __init__(
        self,
        m: int,
        n: int,
        rows,
        cols,
        values,
        *,
        domain: AnswerDomain | None = None,
        worker_ids: Sequence[str] | None = None,
        task_ids: Sequence[str] | None = None,
    ):
        if m < 1 or n < 1:
            raise ValueError(f"matrix dimensions must be positive, got {m}x{n}")
        rows = np.asarray(rows, dtype=np.int64).ravel()
        cols = np.asarray(cols, dtype=np.int64).ravel()
        vals = np.asarray(values, dtype=float).ravel()
        if not (rows.shape == cols.shape == vals.shape):
            raise ValueError("rows, cols and values must have equal length")
        if rows.size:
            if rows.min() < 0 or rows.max() >= m or cols.min() < 0 or cols.max() >= n:
                raise ValueError("entry index out of range")
        if not np.all(np.isfinite(vals)):
            raise ValueError("answer values must be finite; NULL is an absent entry")
        order = np.lexsort((cols, rows))
        rows, cols, vals = rows[order], cols[order], vals[order]
        key = rows * n + cols
        if key.size > 1 and np.any(key[1:] == key[:-1]):
            raise ValueError("duplicate answer for a (worker, task) cell")
        for arr in (rows, cols, vals):
            arr.flags.writeable = False
        self._m, self._n = int(m), int(n)
        self._rows, self._cols, self._vals = rows, cols, vals
        self.domain = domain
        self.worker_ids = tuple(worker_ids) if worker_ids is not None else tuple(str(i) for i in range(m))
        self.task_ids = tuple(task_ids) if task_ids is not None else tuple(str(j) for j in range(n))
        if len(self.worker_ids) != m or len(self.task_ids) != n:
            raise ValueError("id lists must match matrix dimensions")

    @classmethod
    def from_dense(cls, dense, **kwargs) -> AnswerMatrix:
        """Build from a 2-D array where ``nan`` marks NULL cells."""
        dense = np.asarray(dense, dtype=float)
        if dense.ndim != 2:
            raise ValueError("dense matrix must be 2-D")
        rows, cols = np.nonzero(~np.isnan(dense))
        return cls(dense.shape[0], dense.shape[1], rows, cols, dense[rows, cols], **kwargs)

    @classmethod
    def from_rows(cls, rows: Sequence[np.ndarray], **kwargs) -> AnswerMatrix:
        return cls.from_dense(np.vstack([np.asarray(r, dtype=float) for r in rows]), **kwargs)

    @property
    def shape(self) -> tuple[int, int]:
        return self._m, self._n

    @property
    def m(self) -> int:
        return self._m

    @property
    def n(self) -> int:
        return self._n

    @property
    def nnz(self) -> int:
        return int(self._vals.size)

    @property
    def rows(self) -> np.ndarray:
        return self._rows

    @property
    def cols(self) -> np.ndarray:
        return self._cols

    @property
    def values(self) -> np.ndarray:
        return self._vals

    def to_dense(self) -> np.ndarray:
        out = np.full((self._m, self._n), np.nan)
        out[self._rows, self._cols] = self._vals
        return out

    def mask(self) -> np.ndarray:
        out = np.zeros((self._m, self._n), dtype=bool)
        out[self._rows, self._cols] = True
        return out

    def row(self, i: int) -> np.ndarray:
        lo, hi = np.searchsorted(self._rows, [i, i + 1])
        out = np.full(self._n, np.nan)
        out[self._cols[lo:hi]] = self._vals[lo:hi]
        return out

    def answers_per_worker(self) -> np.ndarray:
        return np.bincount(self._rows, minlength=self._m)

    def answers_per_task(self) -> np.ndarray:
        return np.bincount(self._cols, minlength=self._n)

    def empty_workers(self) -> np.ndarray:
        """Indices of workers with no non-NULL answer (possible after RR)."""
        return np.flatnonzero(self.answers_per_worker() == 0)

    def with_entries(self, rows, cols, values) -> AnswerMatrix:
        """Same dimensions, ids and domain, new entries."""
        return AnswerMatrix(
            self._m, self._n, rows, cols, values,
            domain=self.domain, worker_ids=self.worker_ids, task_ids=self.task_ids,
        )

    def with_dense(self, dense) -> AnswerMatrix:
        dense = np.asarray(dense, dtype=float)
        if dense.shape != self.shape:
            raise ValueError(f"shape mismatch: {dense.shape} vs {self.shape}")
        rows, cols = np.nonzero(~np.isnan(dense))
        return self.with_entries(rows, cols, dense[rows, cols])

    def __eq__(self, other) -> bool:
        if not isinstance(other, AnswerMatrix):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self._rows, other._rows)
            and np.array_equal(self._cols, other._cols)
            and np.array_equal(self._vals, other._vals)
        )

    __hash__ = None

    def __repr__(self) -> str:
        return f"AnswerMatrix(m={self._m}, n={self._n}, nnz={self.nnz}, domain={self.domain})"


@dataclasses.dataclass(frozen=True)
class GroundTruth:
    truths: np.ndarray

    def __post_init__(self):
        arr = np.array(self.truths, dtype=float).ravel()
        arr.flags.writeable = False
        object.__setattr__(self, "truths", arr)

    def __len__(self) -> int:
        return int(self.truths.size)


@dataclasses.dataclass(frozen=True)
class SparsityProfile:
    per_worker: np.ndarray  # s_i, fraction of tasks answered
    overall: float  # fraction of NULL cells


def sparsity_profile(matrix: AnswerMatrix) -> SparsityProfile:
    counts = matrix.answers_per_worker()
    return SparsityProfile(
        per_worker=counts / matrix.n,
        overall=1.0 - counts.sum() / (matrix.m * matrix.n),
    )


class MechanismKind(str, enum.Enum):
    LP = "LP"
    RR = "RR"
    RRLP = "RRLP"
    MF = "MF"

    @classmethod
    def parse(cls, name: str) -> MechanismKind:
        key = name.upper().replace("+", "").replace("-", "").replace("_", "")
        try:
            return cls(key)
        except ValueError:
            raise ValueError(f"unknown mechanism {name!r}; expected one of LP, RR, RRLP, MF") from None


@dataclasses.dataclass(frozen=True)
class ReplacementStrategy:
    """How LP fills NULL cells before adding noise.

    ``constant=None`` means a uniform draw over the domain values.
    """

    constant: float | None = None

    @classmethod
    def uniform(cls) -> ReplacementStrategy:
        return cls(None)

    @property
    def is_uniform(self) -> bool:
        return self.constant is None

    def validate(self, domain: AnswerDomain) -> None:
        if self.constant is not None and not (domain.min <= self.constant <= domain.max):
            raise ValueError(f"replacement constant {self.constant} outside domain [{domain.min}, {domain.max}]")

    @classmethod
    def parse(cls, text: str) -> ReplacementStrategy:
        text = text.strip().lower()
        if text == "uniform":
            return cls.uniform()
        if text.startswith("constant:"):
            return cls(float(text.split(":", 1)[1]))
        raise ValueError(f"replacement must be 'uniform' or 'constant:<c>', got {text!r}")

    def __str__(self) -> str:
        return "uniform" if self.constant is None else f"constant:{self.constant:g}"


def default_factorization_dim(n: int) -> int:
    return max(1, math.ceil(n / 10))


@dataclasses.dataclass(frozen=True)
class MFConfig:
    """Worker-side factorization settings.

    ``d=None`` resolves to ``max(1, ceil(n/10))`` and ``learning_rate=None`` to
    ``1/(2L)`` with ``L`` the largest Hessian eigenvalue, both per row at fit time.
    """

    d: int | None = None
    learning_rate: float | None = None
    tolerance: float = 1e-8
    max_iter: int = 10_000
    ridge: float = 1e-6

    def __post_init__(self):
        if self.d is not None and self.d < 1:
            raise ValueError("d must be >= 1")
        if self.learning_rate is not None and self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")

    def resolve_d(self, n: int) -> int:
        return self.d if self.d is not None else default_factorization_dim(n)


DEFAULT_EPS1_FRACTION = 0.1


@dataclasses.dataclass(frozen=True)
class MechanismConfig:
    kind: MechanismKind
    epsilon: float
    epsilon_split: tuple[float, float] | None = None
    replacement: ReplacementStrategy = ReplacementStrategy.uniform()
    mf: MFConfig = MFConfig()
    seed: int = 0
    clamp: bool = False  # LP only; post-processing, off by default

    def __post_init__(self):
        object.__setattr__(self, "kind", MechanismKind.parse(self.kind) if isinstance(self.kind, str) else self.kind)
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be positive, got {self.epsilon}")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        if self.kind is MechanismKind.RRLP:
            if self.epsilon_split is None:
                e1 = DEFAULT_EPS1_FRACTION * self.epsilon
                object.__setattr__(self, "epsilon_split", (e1, self.epsilon - e1))
            e1, e2 = self.epsilon_split
            if not (e1 > 0 and e2 > 0):
                raise ValueError("RR+LP needs eps1 > 0 and eps2 > 0")
            if not math.isclose(e1 + e2, self.epsilon, rel_tol=1e-9):
                raise ValueError(f"eps1 + eps2 = {e1 + e2} does not equal epsilon = {self.epsilon}")

    @classmethod
    def with_eps1_fraction(cls, kind, epsilon: float, fraction: float, **kwargs) -> MechanismConfig:
        if not 0 < fraction < 1:
            raise ValueError("eps1 fraction must lie in (0, 1)")
        e1 = fraction * epsilon
        return cls(kind, epsilon, epsilon_split=(e1, epsilon - e1), **kwargs)
