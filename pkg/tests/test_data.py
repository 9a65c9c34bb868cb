import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldpcrowd.core import AnswerDomain, AnswerMatrix, sparsity_profile
from ldpcrowd.data import (
    DataFormatError,
    SyntheticSpec,
    generate_synthetic,
    load_answers_csv,
    load_dataset,
    load_truth_csv,
    save_answers_csv,
    save_dataset,
    save_truth_csv,
)


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def web_like_file(path, seed=0):
    """34 workers, 177 tasks, 770 distinct answers in [0, 4], every id used."""
    r = np.random.default_rng(seed)
    cells = {(i % 34, i % 177) for i in range(177)}
    while len(cells) < 770:
        cells.add((int(r.integers(34)), int(r.integers(177))))
    lines = ["worker_id,task_id,answer"] + [f"w{i},t{j},{r.integers(0, 5)}" for i, j in sorted(cells, key=lambda c: r.random())]
    return write(path, "\n".join(lines) + "\n")


def test_web_format_dimensions(tmp_path):
    mat = load_answers_csv(web_like_file(tmp_path / "web.csv"))
    assert mat.shape == (34, 177)
    assert mat.nnz == 770
    assert mat.domain == AnswerDomain(0, 4)


def test_ids_mapped_in_first_seen_order(tmp_path):
    p = write(tmp_path / "a.csv", "worker_id,task_id,answer\nbob,x,1\nann,y,2.5\nbob,y,3\n")
    mat = load_answers_csv(p)
    assert mat.worker_ids == ("bob", "ann")
    assert mat.task_ids == ("x", "y")
    assert mat.domain == AnswerDomain(1, 3)
    np.testing.assert_array_equal(mat.to_dense(), [[1, 3], [np.nan, 2.5]])


def test_empty_file_errors(tmp_path):
    with pytest.raises(DataFormatError, match="empty"):
        load_answers_csv(write(tmp_path / "e.csv", ""))


def test_header_only_errors(tmp_path):
    with pytest.raises(DataFormatError):
        load_answers_csv(write(tmp_path / "h.csv", "worker_id,task_id,answer\n"))


def test_duplicate_answer_errors(tmp_path):
    p = write(tmp_path / "d.csv", "worker_id,task_id,answer\na,t,1\na,t,2\n")
    with pytest.raises(DataFormatError, match="duplicate answer"):
        load_answers_csv(p)


@pytest.mark.parametrize(
    "body,line",
    [("a,t,x\n", 2), ("a,t\n", 2), ("a,t,1\nb,u,nan\n", 3)],
)
def test_malformed_rows_report_line(tmp_path, body, line):
    p = write(tmp_path / "m.csv", "worker_id,task_id,answer\n" + body)
    with pytest.raises(DataFormatError, match=f":{line}:"):
        load_answers_csv(p)


def test_answer_outside_declared_domain(tmp_path):
    p = write(tmp_path / "o.csv", "worker_id,task_id,answer\na,t,1\na,u,12\n")
    with pytest.raises(DataFormatError, match=":3:"):
        load_answers_csv(p, AnswerDomain(0, 9))


def test_truth_alignment_and_missing(tmp_path):
    p = write(tmp_path / "t.csv", "task_id,truth\ny,2\n")
    g = load_truth_csv(p, ["x", "y"], allow_missing=True)
    assert np.isnan(g.truths[0]) and g.truths[1] == 2
    with pytest.raises(DataFormatError, match="missing"):
        load_truth_csv(p, ["x", "y"])
    with pytest.raises(DataFormatError, match="unknown"):
        load_truth_csv(p, ["x"])


def test_csv_roundtrip(tmp_path):
    ds = generate_synthetic(SyntheticSpec(30, 12, sparsity=0.4, seed=5))
    save_answers_csv(ds.matrix, tmp_path / "a.csv")
    back = load_answers_csv(tmp_path / "a.csv", ds.matrix.domain, worker_ids=ds.matrix.worker_ids, task_ids=ds.matrix.task_ids)
    assert back == ds.matrix
    save_truth_csv(ds.ground, ds.matrix.task_ids, tmp_path / "t.csv")
    np.testing.assert_array_equal(load_truth_csv(tmp_path / "t.csv", ds.matrix.task_ids).truths, ds.ground.truths)


@given(st.integers(0, 2**32))
def test_real_valued_roundtrip_exact(seed):
    import tempfile
    from pathlib import Path

    r = np.random.default_rng(seed)
    dense = r.normal(4, 10, (5, 4))
    dense[r.random((5, 4)) < 0.3] = np.nan
    dense[:, 0] = 1.0
    mat = AnswerMatrix.from_dense(dense, domain=AnswerDomain(-100, 100))
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "a.csv"
        save_answers_csv(mat, p)
        assert load_answers_csv(p, mat.domain, worker_ids=mat.worker_ids, task_ids=mat.task_ids) == mat


def test_bundle_roundtrip(tmp_path):
    ds = generate_synthetic(SyntheticSpec(40, 15, sparsity=0.6, seed=9))
    save_dataset(ds, tmp_path / "b")
    meta = json.loads((tmp_path / "b" / "meta.json").read_text())
    assert meta["synthetic"]["seed"] == 9 and len(meta["sigmas"]) == 40
    back = load_dataset(tmp_path / "b")
    assert back.matrix == ds.matrix
    np.testing.assert_array_equal(back.sigmas, ds.sigmas)
    np.testing.assert_array_equal(back.ground.truths, ds.ground.truths)


def test_generation_reproducible_and_in_domain():
    spec = SyntheticSpec(60, 25, sparsity=0.5, seed=3)
    a, b = generate_synthetic(spec), generate_synthetic(spec)
    assert a.matrix == b.matrix
    vals = a.matrix.values
    assert np.all(vals == np.round(vals)) and vals.min() >= 0 and vals.max() <= 9
    assert np.all(a.matrix.answers_per_worker() >= 1)


def test_dense_when_no_sparsity():
    ds = generate_synthetic(SyntheticSpec(10, 7, sparsity=0.0, seed=1))
    assert sparsity_profile(ds.matrix).overall == 0


def test_noiseless_workers_answer_truth():
    ds = generate_synthetic(SyntheticSpec(15, 10, worker_mix=((1.0, 0.0),), sparsity=0.3, seed=2))
    np.testing.assert_array_equal(ds.matrix.values, ds.ground.truths[ds.matrix.cols])


@pytest.mark.parametrize("rho", [0.1, 0.5, 0.9])
def test_realized_sparsity_concentrates(rho):
    ds = generate_synthetic(SyntheticSpec(200, 60, sparsity=rho, seed=4))
    assert sparsity_profile(ds.matrix).overall == pytest.approx(rho, abs=0.02)


def test_large_spec_sparsity():
    ds = generate_synthetic(SyntheticSpec(2000, 200, sparsity=0.9, seed=0))
    assert sparsity_profile(ds.matrix).overall == pytest.approx(0.9, abs=0.02)
    assert np.mean(ds.sigmas == 1.0) == pytest.approx(0.5, abs=0.02)


def test_infeasible_sparsity_rejected():
    # one task: every worker must keep it, so realized sparsity is 0
    with pytest.raises(ValueError, match="sparsity"):
        generate_synthetic(SyntheticSpec(50, 1, sparsity=0.9, seed=0))


def test_per_worker_sparsity():
    rho = tuple([0.0] * 10 + [0.8] * 10)
    ds = generate_synthetic(SyntheticSpec(20, 200, sparsity=0.4, worker_sparsity=rho, seed=1))
    s = sparsity_profile(ds.matrix).per_worker
    assert s[:10].min() == 1.0
    assert s[10:].mean() == pytest.approx(0.2, abs=0.03)


def test_spec_validation():
    with pytest.raises(ValueError):
        SyntheticSpec(5, 5, worker_mix=((0.5, 1.0),))
    with pytest.raises(ValueError):
        SyntheticSpec(5, 5, sparsity=1.0)
    with pytest.raises(ValueError):
        SyntheticSpec(5, 5, worker_mix=((1.0, -1.0),))
    spec = SyntheticSpec(5, 5, sparsity=0.2, seed=7)
    assert SyntheticSpec.from_json(spec.to_json()) == spec
