import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sbdp import (AggregationModel, AggregationParams, Ball, Box, CallbackRegion, ComparisonModel,
                  Configuration, ConstantRateModel, ContactModel, StepKernel, aggregation_death_rate,
                  comparison_model, restrict_count, total_death_rate)
from sbdp.config import as_point
from sbdp.rng import Stream

UNIT = Box((0.0, 0.0), (1.0, 1.0))
LOG2 = math.log(2.0)


def agg(include_self=True, phi=None, c_birth=None):
    return AggregationParams(phi or StepKernel(LOG2), 2.0, 1.0, UNIT, include_self, c_birth)


def test_configuration_ids_never_reused():
    eta = Configuration(2)
    a = eta.add((0.1, 0.2))
    b = eta.add((0.3, 0.4))
    eta.remove(a)
    c = eta.add((0.1, 0.2))
    assert len({a, b, c}) == 3
    assert eta.next_id > max(eta.ids())


def test_configuration_rejects_bad_points():
    eta = Configuration(2)
    with pytest.raises(ValueError):
        eta.add((0.0, math.nan))
    with pytest.raises(ValueError):
        eta.add((0.0,))
    with pytest.raises(ValueError):
        as_point(())


def test_from_items_checks_next_id():
    with pytest.raises(ValueError):
        Configuration.from_items(1, [(5, (0.0,))], next_id=3)
    conf = Configuration.from_items(1, [(5, (0.0,))])
    assert conf.next_id == 6


def test_total_death_rate_empty():
    assert total_death_rate(ConstantRateModel(UNIT, 1.0, 1.0), 0.0, Configuration(2)) == 0.0


def test_total_death_rate_aggregation_single_point():
    m = AggregationModel(agg())
    assert total_death_rate(m, 0.0, Configuration(2, [(0.5, 0.5)])) == pytest.approx(0.5, abs=1e-15)


def test_total_death_rate_constant():
    m = ConstantRateModel(UNIT, 0.0, 1.0)
    assert total_death_rate(m, 0.0, Configuration(2, [(0.1, 0.1), (0.2, 0.2)])) == 2.0


def test_aggregation_death_rate_examples():
    eta = Configuration(2, [(0.5, 0.5)])
    assert aggregation_death_rate(agg(include_self=False), 0, eta) == 1.0
    assert aggregation_death_rate(agg(include_self=True), 0, eta) == pytest.approx(0.5, abs=1e-15)
    eta.add((0.2, 0.7))
    assert aggregation_death_rate(agg(include_self=False), 0, eta) == pytest.approx(0.5, abs=1e-15)


def test_aggregation_death_rate_rejects_missing_particle():
    with pytest.raises(KeyError):
        aggregation_death_rate(agg(), 3, Configuration(2, [(0.5, 0.5)]))


def test_aggregation_params_constraints():
    with pytest.raises(ValueError, match="a must exceed 1"):
        AggregationParams(StepKernel(1.0), 0.5, 1.0, UNIT)
    with pytest.raises(ValueError, match="c must be positive"):
        AggregationParams(StepKernel(1.0), 2.0, 0.0, UNIT)
    with pytest.raises(ValueError, match="log a"):
        AggregationParams(StepKernel(0.1), 2.0, 1.0, UNIT)
    # far part below log a is fine only if the radius covers the region
    AggregationParams(StepKernel(LOG2, 0.0, 2.0), 2.0, 1.0, UNIT)
    with pytest.raises(ValueError):
        AggregationParams(StepKernel(LOG2, 0.0, 0.5), 2.0, 1.0, UNIT)


def test_comparison_model_examples():
    m = comparison_model(agg())
    eta = Configuration(2, [(0.1, 0.1), (0.5, 0.5), (0.9, 0.9), (3.0, 3.0)])
    assert m.birth_mass(0.0, eta) == 3.0
    assert m.birth_mass(0.0, Configuration(2)) == 0.0
    two = Configuration(2, [(0.1, 0.1), (0.5, 0.5)])
    assert m.death_rate(0, 0.0, two) == pytest.approx(0.25, abs=1e-15)
    assert m.death_rate(3, 0.0, eta) == 0.0


def test_comparison_model_rejects_zero_volume():
    with pytest.raises(ValueError):
        ComparisonModel(Box((0.0, 0.0), (0.0, 1.0)), 2.0, 1.0)


def test_restrict_count():
    box = Box((0.0,), (1.0,))
    assert restrict_count(Configuration(1), box) == 0
    eta = Configuration(1, [(0.1,), (0.5,), (0.9,), (1.5,), (-2.0,)])
    assert restrict_count(eta, box) == 3
    # closed boundary
    assert restrict_count(Configuration(1, [(1.0,), (0.0,)]), box) == 2


def test_regions_sample_inside():
    s = Stream.from_seed(1)
    for region in (UNIT, Ball((1.0, -1.0), 0.5),
                   CallbackRegion(1, 2.0, lambda x: 0 <= x[0] <= 2, lambda st: (2 * st.uniform(),),
                                  ((0.0,), (2.0,)))):
        for _ in range(200):
            assert region.contains(region.sample(s))
    assert Ball((0.0, 0.0), 1.0).volume == pytest.approx(math.pi)


def _random_config(rng, n, dim=2, spread=1.5):
    return Configuration(dim, rng.uniform(-0.25, spread, size=(n, dim)).tolist())


BUNDLED = [
    ConstantRateModel(UNIT, 1.5, 0.5),
    ConstantRateModel(UNIT, 1.0, 0.0, immigration=2.0),
    AggregationModel(agg()),
    AggregationModel(agg(include_self=False, c_birth=1.5)),
    ComparisonModel(UNIT, 2.0, 1.0),
    ContactModel(2, 1.2, 0.3),
]


@pytest.mark.parametrize("model", BUNDLED, ids=lambda m: type(m).__name__)
def test_sublinear_growth_and_death_bounds(model):
    rng = np.random.default_rng(0)
    c1, c2 = model.growth_constants
    for _ in range(1000):
        eta = _random_config(rng, int(rng.integers(0, 51)))
        t = float(rng.uniform(0, 10))
        B = model.birth_mass(t, eta)
        assert B <= model.birth_sup_mass(eta) + 1e-12
        assert model.birth_sup_mass(eta) <= c1 * len(eta) + c2 + 1e-9
        for pid in eta.ids()[:5]:
            d = model.death_rate(pid, t, eta)
            assert 0.0 <= d <= model.death_bound(pid, eta) * (1 + 1e-12) <= model.death_sup * (1 + 1e-12)


def test_comparison_sampler_chi_square():
    m = ComparisonModel(Box((0.0,), (1.0,)), 2.0, 1.0)
    s = Stream.from_seed(42)
    eta = Configuration(1, [(0.5,)])
    xs = np.array([m.sample_birth(0.0, eta, s)[0] for _ in range(100_000)])
    counts, _ = np.histogram(xs, bins=10, range=(0.0, 1.0))
    assert stats.chisquare(counts).pvalue > 1e-3


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=12),
       st.tuples(st.floats(-1, 2), st.floats(-1, 2)), st.booleans())
def test_aggregation_death_rate_antitone(points, extra, include_self):
    params = AggregationParams(StepKernel(0.8, 0.3, 0.4), 1.1, 1.0, UNIT, include_self)
    eta = Configuration(2, points)
    before = aggregation_death_rate(params, 0, eta)
    eta.add(extra)
    assert aggregation_death_rate(params, 0, eta) <= before


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=10),
       st.lists(st.tuples(st.floats(-0.5, 1.5), st.floats(-0.5, 1.5)), max_size=10),
       st.floats(1.0, 2.0))
def test_comparison_dominance_on_nested_pairs(inner, extra, c_birth):
    """b1(x, eta1) <= b(x, eta2) and d1(x, eta1) >= d(x, eta2) for eta1 inside region, eta1 subset eta2."""
    params = AggregationParams(StepKernel(math.log(3.0)), 2.0, 1.0, UNIT, True, c_birth)
    upper = AggregationModel(params)
    lower = comparison_model(params)
    eta2 = Configuration(2, inner)
    eta1 = eta2.copy()
    for p in extra:
        eta2.add(p)
    x = (0.3, 0.6)
    assert lower.birth_density(x, 0.0, eta1) <= upper.birth_density(x, 0.0, eta2)
    for pid in eta1.ids():
        assert lower.death_rate(pid, 0.0, eta1) >= upper.death_rate(pid, 0.0, eta2)
