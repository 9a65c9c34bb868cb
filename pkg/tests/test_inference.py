import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldpcrowd.core import AnswerDomain, AnswerMatrix, GroundTruth
from ldpcrowd.inference import evaluate_mae_change, infer_truth, mae
from reference import naive_truth_inference

DOM = AnswerDomain(0, 9)


def random_matrix(r, m, n, density=0.7):
    dense = r.integers(0, 10, (m, n)).astype(float)
    dense[r.random((m, n)) > density] = np.nan
    return dense


def test_matches_naive_reference_on_random_small_matrices():
    r = np.random.default_rng(0)
    for _ in range(30):
        m, n = r.integers(2, 6), r.integers(2, 9)
        dense = random_matrix(r, m, n)
        mat = AnswerMatrix.from_dense(dense, domain=DOM)
        if mat.nnz == 0:
            continue
        res = infer_truth(mat, tol=1e-14, max_iter=200)
        truths, q = naive_truth_inference(dense.tolist(), 200, DOM.midpoint)
        np.testing.assert_allclose(res.truths, truths, atol=1e-8)
        np.testing.assert_allclose(res.qualities, q, atol=1e-8)


def test_qualities_sum_to_one_and_excluded_workers_zero():
    dense = np.array([[1.0, 2.0, np.nan], [np.nan] * 3, [3.0, np.nan, 4.0]])
    res = infer_truth(AnswerMatrix.from_dense(dense, domain=DOM))
    assert res.qualities.sum() == pytest.approx(1.0)
    assert res.qualities[1] == 0
    assert res.excluded_workers == (1,)


def test_unanswered_task_gets_midpoint():
    dense = np.array([[1.0, np.nan], [3.0, np.nan]])
    res = infer_truth(AnswerMatrix.from_dense(dense, domain=DOM))
    assert res.truths[1] == DOM.midpoint
    assert res.unanswered_tasks == (1,)


def test_noiseless_answers_give_exact_truths():
    r = np.random.default_rng(1)
    truths = r.integers(0, 10, 30).astype(float)
    dense = np.tile(truths, (12, 1))
    dense[r.random(dense.shape) < 0.5] = np.nan
    dense[0] = truths
    res = infer_truth(AnswerMatrix.from_dense(dense, domain=DOM))
    assert mae(res.truths, GroundTruth(truths)) == 0.0


def test_noiseless_fractional_answers_exact():
    truths = np.array([0.1, 0.7, 3.3, 8.9])
    dense = np.tile(truths, (7, 1))
    res = infer_truth(AnswerMatrix.from_dense(dense, domain=DOM))
    assert np.array_equal(res.truths, truths)


def test_convergence_flag_and_iterations():
    r = np.random.default_rng(2)
    mat = AnswerMatrix.from_dense(random_matrix(r, 10, 10), domain=DOM)
    res = infer_truth(mat)
    assert res.converged and res.iterations <= 100
    capped = infer_truth(mat, tol=1e-300, max_iter=3)
    assert not capped.converged and capped.iterations == 3


def test_better_workers_get_higher_quality():
    r = np.random.default_rng(3)
    truths = r.integers(2, 8, 40).astype(float)
    good = truths + r.normal(0, 0.3, (5, 40))
    bad = truths + r.normal(0, 3.0, (5, 40))
    res = infer_truth(AnswerMatrix.from_dense(np.vstack([good, bad]), domain=DOM))
    assert res.qualities[:5].min() > res.qualities[5:].max()


@given(st.integers(0, 2**32))
def test_truths_within_answer_hull(seed):
    r = np.random.default_rng(seed)
    dense = random_matrix(r, 4, 6, 0.8)
    mat = AnswerMatrix.from_dense(dense, domain=DOM)
    if mat.nnz == 0:
        return
    res = infer_truth(mat)
    for j in range(6):
        col = dense[:, j][~np.isnan(dense[:, j])]
        if col.size:
            assert col.min() - 1e-9 <= res.truths[j] <= col.max() + 1e-9


def test_mae_skips_unknown_and_checks_length():
    assert mae([1.0, 2.0, 5.0], [1.0, np.nan, 3.0]) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        mae([1.0], [1.0, 2.0])


def test_empty_matrix_rejected():
    with pytest.raises(ValueError):
        infer_truth(AnswerMatrix(2, 2, [], [], []))


def test_evaluate_identity_has_zero_change():
    r = np.random.default_rng(4)
    mat = AnswerMatrix.from_dense(random_matrix(r, 6, 5), domain=DOM)
    rep = evaluate_mae_change(mat, mat, GroundTruth(np.full(5, 4.0)))
    assert rep.mae_change == 0.0
    json.dumps(rep.to_json())


def test_result_json_has_ids():
    mat = AnswerMatrix.from_dense([[1.0, 2.0]], domain=DOM, task_ids=["a", "b"], worker_ids=["w"])
    obj = infer_truth(mat).to_json(mat)
    assert obj["taskIds"] == ["a", "b"] and obj["workerIds"] == ["w"]
    assert len(obj["truths"]) == 2
