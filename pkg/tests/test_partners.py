import math
import random

import pytest
from scipy import stats

from synklr.partners import (
    PartnerDistribution,
    partner_levels,
    poisson_partner_weights,
)


def test_syklrbr_weights_five_levels():
    d = poisson_partner_weights("syklrbr", 6, 5)
    expected = {5: 0.368, 4: 0.368, 3: 0.184, 2: 0.061, 1: 0.015, 0: 0.003}
    for lv, w in expected.items():
        assert round(d.weights[lv], 3) == w
    assert math.isclose(sum(d.probabilities()), 1.0)


def test_ch_weights():
    assert poisson_partner_weights("ch", 1, 5).weights == {0: 1.0}
    d = poisson_partner_weights("ch", 4, 5)
    raw = {j: 2.0**j / math.factorial(j) for j in (1, 2, 3)}
    z = sum(raw.values())
    for j in raw:
        assert d.weights[j] == pytest.approx(raw[j] / z)
    assert 0 not in d.weights


def test_klr_point_mass_and_sets():
    assert poisson_partner_weights("klr", 3, 5).weights == {2: 1.0}
    assert partner_levels("klr", 3, 5) == [2]
    assert partner_levels("ch", 3, 5) == [0, 1, 2]
    assert partner_levels("syklrbr", 6, 5) == [0, 1, 2, 3, 4, 5]
    assert partner_levels("syklrbr", 2, 5) == [1]


def test_argument_errors():
    with pytest.raises(ValueError):
        poisson_partner_weights("nash", 1, 2)
    with pytest.raises(ValueError):
        poisson_partner_weights("klr", 0, 2)
    with pytest.raises(ValueError):
        poisson_partner_weights("ch", 2, 3, lam=0.0)
    with pytest.raises(ValueError):
        PartnerDistribution({0: 0.5, 1: 0.6})


@pytest.mark.parametrize("rule,level", [("syklrbr", 6), ("ch", 5)])
def test_sampling_frequencies_chi_square(rule, level):
    d = poisson_partner_weights(rule, level, 5)
    rng = random.Random(0)
    n = 100_000
    counts = {lv: 0 for lv in d.levels}
    for _ in range(n):
        counts[d.sample(rng)] += 1
    observed = [counts[lv] for lv in d.levels]
    expected = [n * p for p in d.probabilities()]
    assert stats.chisquare(observed, expected).pvalue > 0.01
