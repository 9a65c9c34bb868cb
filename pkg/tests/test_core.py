import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ldpcrowd.core import (
    AnswerDomain,
    AnswerMatrix,
    GroundTruth,
    MechanismConfig,
    MechanismKind,
    MFConfig,
    ReplacementStrategy,
    default_factorization_dim,
    sparsity_profile,
)


def test_domain_cardinality_counts_values_not_range():
    d = AnswerDomain(0, 9)
    assert d.cardinality == 10
    assert d.midpoint == 4.5
    np.testing.assert_array_equal(d.values(), np.arange(10.0))


@pytest.mark.parametrize("lo,hi", [(3, 3), (5, 2), (0.5, 4)])
def test_domain_rejects_degenerate_or_fractional(lo, hi):
    with pytest.raises(ValueError):
        AnswerDomain(lo, hi)


def test_matrix_from_dense_roundtrip_and_accessors():
    dense = np.array([[1.0, np.nan, 3.0], [np.nan, np.nan, 2.0]])
    mat = AnswerMatrix.from_dense(dense, domain=AnswerDomain(0, 9))
    assert mat.shape == (2, 3)
    assert mat.nnz == 3
    np.testing.assert_array_equal(mat.to_dense(), dense)
    np.testing.assert_array_equal(mat.row(1), dense[1])
    np.testing.assert_array_equal(mat.answers_per_worker(), [2, 1])
    np.testing.assert_array_equal(mat.answers_per_task(), [1, 0, 2])


def test_matrix_entries_are_immutable():
    mat = AnswerMatrix.from_dense([[1.0, 2.0]])
    with pytest.raises(ValueError):
        mat.values[0] = 5.0


def test_matrix_rejects_duplicates_and_bad_indices():
    with pytest.raises(ValueError, match="duplicate"):
        AnswerMatrix(2, 2, [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        AnswerMatrix(2, 2, [2], [0], [1.0])
    with pytest.raises(ValueError):
        AnswerMatrix(2, 2, [0], [0], [np.inf])


def test_empty_workers_flagged():
    mat = AnswerMatrix.from_dense([[np.nan, np.nan], [1.0, np.nan]])
    np.testing.assert_array_equal(mat.empty_workers(), [0])


@given(
    st.integers(1, 6),
    st.integers(1, 6),
    st.data(),
)
def test_dense_roundtrip_property(m, n, data):
    cells = data.draw(st.lists(st.one_of(st.none(), st.integers(0, 9)), min_size=m * n, max_size=m * n))
    dense = np.array([np.nan if c is None else float(c) for c in cells]).reshape(m, n)
    mat = AnswerMatrix.from_dense(dense)
    np.testing.assert_array_equal(mat.to_dense(), dense)
    prof = sparsity_profile(mat)
    assert math.isclose(prof.overall, np.isnan(dense).mean())
    np.testing.assert_allclose(prof.per_worker, (~np.isnan(dense)).mean(axis=1))


def test_ground_truth_read_only():
    g = GroundTruth([1, 2, 3])
    assert len(g) == 3
    with pytest.raises(ValueError):
        g.truths[0] = 0


@pytest.mark.parametrize("text,kind", [("rr+lp", MechanismKind.RRLP), ("LP", MechanismKind.LP), ("mf", MechanismKind.MF)])
def test_mechanism_parse(text, kind):
    assert MechanismKind.parse(text) is kind


def test_mechanism_parse_unknown():
    with pytest.raises(ValueError):
        MechanismKind.parse("gauss")


def test_replacement_parse_and_validate():
    assert ReplacementStrategy.parse("uniform").is_uniform
    c = ReplacementStrategy.parse("constant:4")
    assert c.constant == 4.0 and str(c) == "constant:4"
    with pytest.raises(ValueError):
        c.validate(AnswerDomain(5, 9))
    with pytest.raises(ValueError):
        ReplacementStrategy.parse("median")


def test_rrlp_default_split():
    cfg = MechanismConfig("RRLP", 2.0)
    assert cfg.epsilon_split == pytest.approx((0.2, 1.8))
    with pytest.raises(ValueError):
        MechanismConfig("RRLP", 1.0, epsilon_split=(0.5, 0.6))
    with pytest.raises(ValueError):
        MechanismConfig("LP", 0.0)


def test_factorization_dim_default():
    assert default_factorization_dim(1000) == 100
    assert default_factorization_dim(5) == 1
    assert MFConfig().resolve_d(50) == 5
