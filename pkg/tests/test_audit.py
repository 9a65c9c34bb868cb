import math

import numpy as np
import pytest
from scipy.stats import binomtest

from ldpcrowd.audit import empirical_privacy_ratio, wilson_interval
from ldpcrowd.core import AnswerDomain

DOM = AnswerDomain(0, 9)


@pytest.mark.parametrize("k,n", [(0, 100), (7, 100), (500, 1000), (99_000, 100_000)])
def test_wilson_matches_scipy(k, n):
    lo, hi = wilson_interval(k, n, 0.999)
    ci = binomtest(k, n).proportion_ci(confidence_level=0.999, method="wilson")
    assert lo == pytest.approx(ci.low, abs=1e-12)
    assert hi == pytest.approx(ci.high, abs=1e-12)


def test_too_few_trials():
    with pytest.raises(ValueError, match="trials"):
        empirical_privacy_ratio("RR", DOM, 1.0, 1000)


def test_mf_not_frequency_audited():
    with pytest.raises(ValueError):
        empirical_privacy_ratio("MF", DOM, 1.0, 10**5)


def test_rr_near_uniform_budget():
    res = empirical_privacy_ratio("RR", DOM, 0.01, 200_000, np.random.default_rng(0))
    assert res.ratio == pytest.approx(1.01, abs=0.04)
    assert res.eligible_buckets == 11


def test_rrlp_null_bucket_bounded_by_class_budget():
    eps1, eps2 = 0.5, 1.5
    res = empirical_privacy_ratio("RRLP", DOM, (eps1, eps2), 200_000, np.random.default_rng(1))
    null_ratio = res.per_bucket["NULL"]
    assert null_ratio == pytest.approx(math.exp(eps1), rel=0.03)
    assert res.epsilon == pytest.approx(2.0)


def test_result_json_and_margin():
    res = empirical_privacy_ratio("LP", DOM, 1.0, 100_000, np.random.default_rng(2))
    obj = res.to_json()
    assert obj["limit"] == pytest.approx(math.e)
    assert res.ratio_lower <= res.ratio <= res.ratio_upper
    assert res.margin > 0


@pytest.mark.parametrize("eps", [0.5, 1.0, 2.0])
@pytest.mark.parametrize("kind", ["LP", "RR", "RRLP"])
def test_ratio_within_budget_plus_margin(kind, eps):
    budget = (0.1 * eps, 0.9 * eps) if kind == "RRLP" else eps
    res = empirical_privacy_ratio(kind, DOM, budget, 200_000, np.random.default_rng(3))
    assert res.ratio <= math.exp(eps) * (1 + res.margin)
