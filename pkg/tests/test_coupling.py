import math

import numpy as np
import pytest
from scipy import stats

from sbdp import (AggregationModel, AggregationParams, Ball, Box, ComparisonModel, Configuration,
                  ConstantRateModel, StepKernel, comparison_model, simulate, simulate_coupled)
from sbdp.coupling import InclusionAudit, MonotonicityError, audit_pair, birth_mismatches, nested_initial
from sbdp.engine import inclusion_violations

UNIT = Box((0.0, 0.0), (1.0, 1.0))
PARAMS = AggregationParams(StepKernel(math.log(3.0)), 2.0, 1.0, UNIT, True)
ALPHA2 = Configuration(2, [(0.2, 0.3), (0.7, 0.6), (1.5, 0.5)])
ALPHA1 = nested_initial(ALPHA2, UNIT)


def _same(a, b):
    return (np.array_equal(a.times, b.times) and np.array_equal(a.ids, b.ids)
            and np.array_equal(a.kinds, b.kinds) and np.array_equal(a.coords, b.coords))


def test_nested_initial_keeps_ids():
    assert ALPHA1.ids() == [0, 1]
    assert ALPHA1.next_id == ALPHA2.next_id


def test_rejects_non_nested_start():
    with pytest.raises(ValueError, match="not contained"):
        simulate_coupled(ComparisonModel(UNIT, 2.0, 1.0), AggregationModel(PARAMS),
                         Configuration(2, [(0.9, 0.9)]), ALPHA2, 1.0, 0)


@pytest.mark.parametrize("engine", ["auto", "generic"])
def test_diagonal_coupling_is_identical(engine):
    m = AggregationModel(PARAMS)
    for seed in range(30):
        a, b = simulate_coupled(m, m, ALPHA2, ALPHA2, 3.0, seed, engine=engine)
        assert _same(a, b)


@pytest.mark.parametrize("engine", ["auto", "generic"])
def test_comparison_pair_inclusion(engine):
    lower, upper = comparison_model(PARAMS), AggregationModel(PARAMS)
    audit = InclusionAudit()
    for seed in range(300 if engine == "auto" else 60):
        a, b = simulate_coupled(lower, upper, ALPHA1, ALPHA2, 4.0, seed, engine=engine)
        audit.add(seed, a, b)
    assert audit.ok and audit.events > 1000


def test_generic_path_on_ball_region():
    ball = Ball((0.5, 0.5), 0.6)
    params = AggregationParams(StepKernel(math.log(3.0)), 2.0, 1.0, ball, True)
    lower, upper = comparison_model(params), AggregationModel(params)
    assert upper.kernel_params() is None
    a2 = Configuration(2, [(0.5, 0.5), (0.6, 0.4), (2.0, 2.0)])
    for seed in range(40):
        a, b = simulate_coupled(lower, upper, nested_initial(a2, ball), a2, 3.0, seed)
        assert inclusion_violations(a, b) == 0 and birth_mismatches(a, b) == 0


def test_reversed_pair_raises_monotonicity_error():
    lower, upper = comparison_model(PARAMS), AggregationModel(PARAMS)
    for engine in ("auto", "generic"):
        with pytest.raises(MonotonicityError):
            for seed in range(50):
                simulate_coupled(upper, lower, ALPHA1, ALPHA1, 5.0, seed, engine=engine)


def test_marginals_match_uncoupled_simulation():
    """Population of process 1 and of process 2 at t=1 against uncoupled runs (chi-square)."""
    lower, upper = comparison_model(PARAMS), AggregationModel(PARAMS)
    runs = 100_000
    c1 = np.empty(runs, dtype=int)
    c2 = np.empty(runs, dtype=int)
    u1 = np.empty(runs, dtype=int)
    u2 = np.empty(runs, dtype=int)
    for i in range(runs):
        a, b = simulate_coupled(lower, upper, ALPHA1, ALPHA2, 1.0, i)
        c1[i], c2[i] = a.count_at(1.0), b.count_at(1.0)
        u1[i] = simulate(lower, ALPHA1, 1.0, runs + i).count_at(1.0)
        u2[i] = simulate(upper, ALPHA2, 1.0, 2 * runs + i).count_at(1.0)
    for x, y in ((c1, u1), (c2, u2)):
        top = 8
        cx = np.bincount(np.minimum(x, top), minlength=top + 1)
        cy = np.bincount(np.minimum(y, top), minlength=top + 1)
        keep = (cx + cy) > 0
        p = stats.chi2_contingency(np.vstack([cx[keep], cy[keep]]))[1]
        assert p > 1e-3


def test_audit_detects_broken_inclusion():
    a = simulate(ConstantRateModel(UNIT, 0.0, 0.0), ALPHA1, 3.0, 1)
    b = simulate(ConstantRateModel(UNIT, 0.0, 5.0), ALPHA1, 3.0, 1)
    audit = audit_pair(a, b)
    assert audit.violations == 2 and audit.failed_runs == [0]
    assert birth_mismatches(simulate(ConstantRateModel(UNIT, 3.0, 0.0), ALPHA1, 1.0, 4), b) > 0
    merged = InclusionAudit()
    merged.merge(audit)
    assert merged.runs == 1 and not merged.ok
