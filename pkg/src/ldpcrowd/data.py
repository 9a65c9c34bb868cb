"""Synthetic crowd data and CSV ingestion.

Answer CSV: header ``worker_id,task_id,answer``, one row per non-NULL answer.
Truth CSV: header ``task_id,truth``. IDs are arbitrary strings mapped to dense
indices in first-seen order.
"""

from __future__ import annotations

import csv
import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from ldpcrowd.core import DEFAULT_DOMAIN, AnswerDomain, AnswerMatrix, GroundTruth, sparsity_profile

ANSWER_HEADER = ("worker_id", "task_id", "answer")
TRUTH_HEADER = ("task_id", "truth")
SPARSITY_SLACK = 0.05


class DataFormatError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    """Generator settings.

    ``worker_mix`` lists ``(fraction, sigma)`` groups; ``sparsity`` is the
    per-cell NULL probability, optionally overridden per worker by
    ``worker_sparsity``.
    """

    m: int
    n: int
    domain: AnswerDomain = DEFAULT_DOMAIN
    truth_center: float = 0.0
    truth_scale: float = 1.0
    worker_mix: tuple[tuple[float, float], ...] = ((0.5, 1.0), (0.5, 5.0))
    sparsity: float = 0.0
    worker_sparsity: tuple[float, ...] | None = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 1 or self.n < 1:
            raise ValueError("m and n must be positive")
        mix = tuple((float(f), float(s)) for f, s in self.worker_mix)
        object.__setattr__(self, "worker_mix", mix)
        if not mix or any(f < 0 for f, _ in mix) or not math.isclose(sum(f for f, _ in mix), 1.0, abs_tol=1e-9):
            raise ValueError("worker mix fractions must be nonnegative and sum to 1")
        if any(s < 0 for _, s in mix):
            raise ValueError("worker sigmas must be nonnegative")
        if not 0 <= self.sparsity < 1:
            raise ValueError("sparsity must lie in [0, 1)")
        if self.worker_sparsity is not None:
            ws = tuple(float(r) for r in self.worker_sparsity)
            if len(ws) != self.m or any(not 0 <= r < 1 for r in ws):
                raise ValueError("worker_sparsity needs m values in [0, 1)")
            object.__setattr__(self, "worker_sparsity", ws)

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "n": self.n,
            "domain": [self.domain.min, self.domain.max],
            "truthCenter": self.truth_center,
            "truthScale": self.truth_scale,
            "workerMix": [list(p) for p in self.worker_mix],
            "sparsity": self.sparsity,
            "workerSparsity": list(self.worker_sparsity) if self.worker_sparsity is not None else None,
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, obj: dict) -> SyntheticSpec:
        ws = obj.get("workerSparsity")
        return cls(
            m=obj["m"],
            n=obj["n"],
            domain=AnswerDomain(*obj["domain"]),
            truth_center=obj["truthCenter"],
            truth_scale=obj["truthScale"],
            worker_mix=tuple(tuple(p) for p in obj["workerMix"]),
            sparsity=obj["sparsity"],
            worker_sparsity=tuple(ws) if ws is not None else None,
            seed=obj["seed"],
        )


@dataclasses.dataclass(frozen=True)
class Dataset:
    matrix: AnswerMatrix
    ground: GroundTruth
    sigmas: np.ndarray | None = None  # generator σ_i, synthetic only
    provenance: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        if len(self.ground) != self.matrix.n:
            raise ValueError("ground truth length does not match the number of tasks")
        if self.sigmas is not None and len(self.sigmas) != self.matrix.m:
            raise ValueError("need one sigma per worker")


def _group_sizes(fractions, m: int) -> np.ndarray:
    """Largest-remainder split of m workers into groups."""
    raw = np.asarray(fractions) * m
    sizes = np.floor(raw).astype(int)
    short = m - sizes.sum()
    sizes[np.argsort(-(raw - sizes), kind="stable")[:short]] += 1
    return sizes


def generate_synthetic(spec: SyntheticSpec, rng: np.random.Generator | None = None) -> Dataset:
    rng = rng if rng is not None else np.random.default_rng(spec.seed)
    dom = spec.domain
    m, n = spec.m, spec.n
    truths = np.clip(np.round(rng.normal(spec.truth_center, spec.truth_scale, n)), dom.min, dom.max)

    fractions, group_sigmas = zip(*spec.worker_mix)
    sigmas = rng.permutation(np.repeat(group_sigmas, _group_sizes(fractions, m)))
    answers = np.clip(np.round(truths[None, :] + rng.normal(size=(m, n)) * sigmas[:, None]), dom.min, dom.max)

    rho = np.asarray(spec.worker_sparsity) if spec.worker_sparsity is not None else np.full(m, spec.sparsity)
    keep = rng.random((m, n)) >= rho[:, None]
    empty = np.flatnonzero(~keep.any(axis=1))
    keep[empty, rng.integers(0, n, size=empty.size)] = True

    realized = 1.0 - keep.mean()
    if abs(realized - rho.mean()) > SPARSITY_SLACK:
        raise ValueError(
            f"realized sparsity {realized:.3f} is more than {SPARSITY_SLACK} away from the target {rho.mean():.3f}"
        )
    rows, cols = np.nonzero(keep)
    matrix = AnswerMatrix(m, n, rows, cols, answers[rows, cols], domain=dom)
    return Dataset(matrix, GroundTruth(truths), sigmas.astype(float), {"synthetic": spec.to_json()})


# --------------------------------------------------------------------------
# CSV


def _read_rows(path, header: tuple[str, ...]):
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        first = next(reader, None)
        if first is None:
            raise DataFormatError(f"{path}: empty file")
        if tuple(c.strip() for c in first) != header:
            raise DataFormatError(f"{path}:1: expected header {','.join(header)}, got {','.join(first)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataFormatError(f"{path}:{reader.line_num}: expected {len(header)} fields, got {len(row)}")
            yield reader.line_num, [c.strip() for c in row]


def _parse_number(text: str, path, line: int) -> float:
    try:
        x = float(text)
    except ValueError:
        raise DataFormatError(f"{path}:{line}: not a number: {text!r}") from None
    if not math.isfinite(x):
        raise DataFormatError(f"{path}:{line}: non-finite value {text!r}")
    return x


def load_answers_csv(path, domain: AnswerDomain | None = None, *, worker_ids=None, task_ids=None) -> AnswerMatrix:
    """Read an answer CSV; the domain is inferred as [floor(min), ceil(max)] unless given.

    ``worker_ids``/``task_ids`` fix the index order (and allow ids with no
    answers); ids missing from them are then an error.
    """
    workers: dict[str, int] = {w: i for i, w in enumerate(worker_ids)} if worker_ids is not None else {}
    tasks: dict[str, int] = {t: j for j, t in enumerate(task_ids)} if task_ids is not None else {}
    rows, cols, vals, lines = [], [], [], []
    seen: dict[tuple[int, int], int] = {}
    for line, (w, t, a) in _read_rows(path, ANSWER_HEADER):
        if not w or not t:
            raise DataFormatError(f"{path}:{line}: empty worker or task id")
        if worker_ids is not None and w not in workers:
            raise DataFormatError(f"{path}:{line}: unknown worker id {w!r}")
        if task_ids is not None and t not in tasks:
            raise DataFormatError(f"{path}:{line}: unknown task id {t!r}")
        i = workers.setdefault(w, len(workers))
        j = tasks.setdefault(t, len(tasks))
        if (i, j) in seen:
            raise DataFormatError(f"{path}:{line}: duplicate answer for worker {w!r}, task {t!r} (first on line {seen[i, j]})")
        seen[i, j] = line
        rows.append(i)
        cols.append(j)
        vals.append(_parse_number(a, path, line))
        lines.append(line)
    if not vals:
        raise DataFormatError(f"{path}: no answers")
    vals_arr = np.asarray(vals)
    if domain is None:
        lo, hi = math.floor(vals_arr.min()), math.ceil(vals_arr.max())
        if hi == lo:
            raise DataFormatError(f"{path}: all answers equal {lo}; pass the domain explicitly")
        domain = AnswerDomain(lo, hi)
    else:
        bad = np.flatnonzero(~domain.contains(vals_arr))
        if bad.size:
            k = bad[0]
            raise DataFormatError(f"{path}:{lines[k]}: answer {vals[k]} outside domain [{domain.min}, {domain.max}]")
    return AnswerMatrix(len(workers), len(tasks), rows, cols, vals, domain=domain, worker_ids=list(workers), task_ids=list(tasks))


def load_truth_csv(path, task_ids, *, allow_missing: bool = False) -> GroundTruth:
    """Align truths to ``task_ids``; tasks absent from the file are an error unless ``allow_missing`` (then nan)."""
    index = {t: j for j, t in enumerate(task_ids)}
    truths = np.full(len(index), np.nan)
    seen = np.zeros(len(index), dtype=bool)
    count = 0
    for line, (t, v) in _read_rows(path, TRUTH_HEADER):
        if t not in index:
            raise DataFormatError(f"{path}:{line}: unknown task id {t!r}")
        j = index[t]
        if seen[j]:
            raise DataFormatError(f"{path}:{line}: duplicate truth for task {t!r}")
        seen[j] = True
        truths[j] = _parse_number(v, path, line)
        count += 1
    if count == 0:
        raise DataFormatError(f"{path}: no truth rows")
    if not allow_missing and not seen.all():
        missing = [t for t, j in index.items() if not seen[j]]
        raise DataFormatError(f"{path}: missing truth for {len(missing)} task(s), e.g. {missing[0]!r}")
    return GroundTruth(truths)


def _fmt(x: float) -> str:
    return str(int(x)) if float(x).is_integer() else repr(float(x))


def write_answers_csv(matrix: AnswerMatrix, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(ANSWER_HEADER)
    for i, j, v in zip(matrix.rows, matrix.cols, matrix.values):
        w.writerow((matrix.worker_ids[i], matrix.task_ids[j], _fmt(v)))


def save_answers_csv(matrix: AnswerMatrix, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        write_answers_csv(matrix, fh)


def save_truth_csv(ground: GroundTruth, task_ids, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRUTH_HEADER)
        for t, v in zip(task_ids, ground.truths):
            if not np.isnan(v):
                w.writerow((t, _fmt(v)))


def _task_order(path) -> list[str]:
    return [t for _, (t, _) in _read_rows(path, TRUTH_HEADER)]


def save_dataset(dataset: Dataset, directory) -> Path:
    """Write answers.csv, truth.csv and meta.json into ``directory``."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    m = dataset.matrix
    save_answers_csv(m, out / "answers.csv")
    save_truth_csv(dataset.ground, m.task_ids, out / "truth.csv")
    meta = dict(dataset.provenance)
    meta["domain"] = [m.domain.min, m.domain.max] if m.domain else None
    meta["sigmas"] = None if dataset.sigmas is None else [float(s) for s in dataset.sigmas]
    meta["sparsity"] = sparsity_profile(m).overall
    meta["workerIds"] = list(m.worker_ids)
    meta["taskIds"] = list(m.task_ids)
    (out / "meta.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return out


def load_dataset(directory) -> Dataset:
    src = Path(directory)
    meta = {}
    if (src / "meta.json").exists():
        meta = json.loads((src / "meta.json").read_text(encoding="utf-8"))
    domain = AnswerDomain(*meta["domain"]) if meta.get("domain") else None
    task_ids = meta.get("taskIds") or _task_order(src / "truth.csv")
    matrix = load_answers_csv(src / "answers.csv", domain, worker_ids=meta.get("workerIds"), task_ids=task_ids)
    ground = load_truth_csv(src / "truth.csv", matrix.task_ids, allow_missing=True)
    sigmas = meta.get("sigmas")
    skip = ("sigmas", "domain", "sparsity", "workerIds", "taskIds")
    provenance = {k: v for k, v in meta.items() if k not in skip}
    provenance["source"] = str(src)
    return Dataset(matrix, ground, None if sigmas is None else np.asarray(sigmas, dtype=float), provenance)
