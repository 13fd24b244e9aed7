import math

import numpy as np
import pytest

from sbdp import (AggregationModel, AggregationParams, Box, ComparisonModel, Configuration,
                  ConstantRateModel, StepKernel, simulate, simulate_coupled)
from sbdp import kernels
from sbdp.coupling import nested_initial

pytestmark = pytest.mark.skipif(kernels.BACKEND != "cython", reason="compiled kernel not built")

LOG3 = math.log(3.0)


def _models(dim):
    box = Box((0.0,) * dim, (1.0,) * dim)
    params = AggregationParams(StepKernel(LOG3, 0.9, 0.3), 2.0, 1.0, box, True)
    return [
        ConstantRateModel(box, 1.5, 0.7),
        ConstantRateModel(box, 1.0, 0.4, birth_count_all=False),
        ComparisonModel(box, 2.0, 1.0),
        AggregationModel(params),
        AggregationModel(AggregationParams(StepKernel(LOG3), 2.0, 1.2, box, False)),
    ]


def _initial(dim, seed):
    rng = np.random.default_rng(seed)
    return Configuration(dim, rng.uniform(-0.3, 1.3, size=(4, dim)).tolist())


def _same(a, b):
    return (np.array_equal(a.times, b.times) and np.array_equal(a.kinds, b.kinds)
            and np.array_equal(a.ids, b.ids) and np.array_equal(a.coords, b.coords)
            and a.status == b.status and a.t_end == b.t_end)


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_single_run_bitwise(dim):
    for k, model in enumerate(_models(dim)):
        assert model.kernel_params() is not None
        events = 0
        for seed in range(15):
            alpha = _initial(dim, seed)
            a = simulate(model, alpha, 3.0, seed, engine="kernel", backend="python")
            b = simulate(model, alpha, 3.0, seed, engine="kernel", backend="cython")
            assert _same(a, b), (k, seed)
            events += len(a)
        assert events > 50


def test_stop_count_and_breaker_bitwise():
    box = Box((0.0, 0.0), (1.0, 1.0))
    m = ComparisonModel(box, 2.0, 1.0)
    alpha = Configuration(2, [(0.5, 0.5)])
    for seed in range(30):
        a = simulate(m, alpha, 50.0, seed, stop_count=8, backend="python")
        b = simulate(m, alpha, 50.0, seed, stop_count=8, backend="cython")
        assert _same(a, b)
        assert a.status in ("stopped", "absorbed")
    fast = ConstantRateModel(box, 6.0, 0.1)
    for backend in ("python", "cython"):
        with pytest.raises(Exception, match="sublinear"):
            simulate(fast, alpha, 50.0, 0, max_events=500, backend=backend)


@pytest.mark.parametrize("dim", [1, 2])
def test_coupled_run_bitwise(dim):
    box = Box((0.0,) * dim, (1.0,) * dim)
    params = AggregationParams(StepKernel(LOG3), 2.0, 1.0, box, True)
    pairs = [
        (ComparisonModel(box, 2.0, 1.0), AggregationModel(params)),
        (ConstantRateModel(box, 1.0, 1.0), ConstantRateModel(box, 1.5, 0.5)),
    ]
    for m1, m2 in pairs:
        events = 0
        for seed in range(15):
            alpha2 = _initial(dim, seed)
            alpha1 = nested_initial(alpha2, box)
            a = simulate_coupled(m1, m2, alpha1, alpha2, 2.5, seed, backend="python")
            b = simulate_coupled(m1, m2, alpha1, alpha2, 2.5, seed, backend="cython")
            assert _same(a[0], b[0]) and _same(a[1], b[1])
            events += len(a[1])
        assert events > 50


def test_pure_python_env_switch(monkeypatch):
    import importlib

    monkeypatch.setenv("SBDP_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
    finally:
        monkeypatch.delenv("SBDP_PURE_PYTHON")
        importlib.reload(kernels)
    assert kernels.BACKEND == "cython"


def test_unknown_backend():
    with pytest.raises(ValueError):
        kernels._backend("fortran")
