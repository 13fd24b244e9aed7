"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``ACCEPTANCE k: PASS|FAIL ...`` line, and the
conftest summary hook repeats them at the end of the session.  Seeds are
fixed so the suite is deterministic.
"""
import filecmp
import math
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import stats

from sbdp import (AggregationModel, AggregationParams, Box, ChainParams, ComparisonModel, Configuration,
                  FiniteKernel, Lumping, PureBirthModel, StepKernel, comparison_model, estimate_extinction_mc,
                  is_lumpable, lump, pushforward_equivalence, simulate, simulate_coupled, simulate_with_majorant,
                  total_death_rate)
from sbdp.analytics import (chain_kernel, chain_transition, decay_threshold, growth_run,
                            log_extinction_probability, simulate_chain_hitting)
from sbdp.chains import refined_birth_death_kernel
from sbdp.cli import main
from sbdp.coupling import InclusionAudit, nested_initial
from sbdp.engine import inclusion_violations
from sbdp.generator import capped_count, detection_power, dynkin_residuals
from sbdp.mc import estimate, map_runs

UNIT = Box((0.0, 0.0), (1.0, 1.0))
P = ChainParams(1.0, 2.0)
CONFIGS = Path(__file__).resolve().parent.parent / "configs"


@pytest.mark.acceptance(1)
def test_extinction_closed_form_vs_mc(accept):
    m = ComparisonModel(UNIT, 2.0, 1.0)
    t0 = time.perf_counter()
    est = estimate_extinction_mc(m, Configuration(2, [(0.5, 0.5)]), UNIT, 100_000, 50.0, 20240601)
    secs = time.perf_counter() - t0
    err = abs(est.mean - 0.390850)
    ok = err <= 0.005 and secs < 60
    accept(ok, f"p_hat={est.mean:.5f} se={est.std_error:.5f} |err|={err:.5f} <= 0.005 "
               f"bias_bound={est.extra['bias_bound']:.1e} runtime={secs:.1f}s < 60s")
    assert ok


@pytest.mark.acceptance(2)
def test_hitting_probability_mc(accept):
    est = simulate_chain_hitting(P, 2, 1, 100_000, 2)
    err = abs(est.mean - 0.220737)
    ok = err <= 0.005
    accept(ok, f"c_hat={est.mean:.5f} se={est.std_error:.5f} |err|={err:.5f} <= 0.005")
    assert ok


@pytest.mark.acceptance(3)
def test_exponential_decay(accept):
    d = decay_threshold(P, 2.0, m_max=50)
    worst = max(log_extinction_probability(m, P) + m * math.log(2.0) for m in range(d.m0_bound, 51))
    ok = d.m0_bound is not None and worst <= 0.0
    accept(ok, f"m0={d.m0_bound} (smallest m with p_m <= 2^-m onward: {d.m0_observed}); "
               f"max over m0..50 of log p_m + m log 2 = {worst:.2f} <= 0")
    assert ok


def _coupled_run(lower, upper, a1, a2):
    def run(i, stream):
        x, y = simulate_coupled(lower, upper, a1, a2, 10.0, stream)
        audit = InclusionAudit()
        audit.add(i, x, y)
        return audit, x.count_at(1.0), y.count_at(1.0)
    return run


def _count_at_one(model, alpha):
    def run(i, stream):
        return simulate(model, alpha, 1.0, stream).count_at(1.0)
    return run


def _chi2_same_law(x, y, top=10):
    cx = np.bincount(np.minimum(x, top), minlength=top + 1)
    cy = np.bincount(np.minimum(y, top), minlength=top + 1)
    keep = (cx + cy) > 0
    return float(stats.chi2_contingency(np.vstack([cx[keep], cy[keep]]))[1])


@pytest.mark.acceptance(4)
def test_coupling_inclusion(accept):
    params = AggregationParams(StepKernel(math.log(3.0)), 2.0, 1.0, UNIT, True)
    lower, upper = comparison_model(params), AggregationModel(params)
    a2 = Configuration(2, [(0.5, 0.5), (0.25, 0.75), (1.5, 0.5)])
    a1 = nested_initial(a2, UNIT)
    runs = 10_000
    out = map_runs(_coupled_run(lower, upper, a1, a2), runs, 4)
    audit = InclusionAudit()
    for a, _, _ in out:
        audit.merge(a)
    c1 = np.array([o[1] for o in out])
    c2 = np.array([o[2] for o in out])
    u1 = np.array(map_runs(_count_at_one(lower, a1), runs, 40))
    u2 = np.array(map_runs(_count_at_one(upper, a2), runs, 41))
    p1, p2 = _chi2_same_law(c1, u1), _chi2_same_law(c2, u2)
    ok = audit.ok and audit.runs == runs and p1 > 1e-3 and p2 > 1e-3
    accept(ok, f"runs={audit.runs} T=10 events={audit.events} violations={audit.violations} "
               f"birth_mismatches={audit.birth_mismatches}; marginal chi2 at t=1 p1={p1:.3f} p2={p2:.3f} > 1e-3")
    assert ok


def _majorant_run(model, alpha, T):
    def run(i, stream):
        x, bar = simulate_with_majorant(model, alpha, T, stream)
        return inclusion_violations(x, bar), len(x) + len(bar)
    return run


def _yule_size(i, stream):
    _, bar = simulate_with_majorant(PureBirthModel(UNIT, 1.0), Configuration(2, [(0.5, 0.5)]), 1.0, stream)
    return bar.count_at(1.0)


@pytest.mark.acceptance(5)
def test_majorant_domination(accept):
    params = AggregationParams(StepKernel(math.log(3.0), 0.8, 0.3), 2.0, 1.0, UNIT, True)
    agg = AggregationModel(params)
    alpha = Configuration(2, [(0.5, 0.5), (0.2, 0.8), (1.4, 0.3)])
    res = map_runs(_majorant_run(agg, alpha, 2.0), 10_000, 5)
    violations = sum(r[0] for r in res)
    events = sum(r[1] for r in res)
    yule = estimate(map_runs(_yule_size, 10_000, 50))
    z = yule.z_score(math.e)
    ok = violations == 0 and abs(z) <= 3
    accept(ok, f"runs=10000 T=2 events={events} violations={violations}; "
               f"E|bar eta_1|={yule.mean:.4f} se={yule.std_error:.4f} vs e (z={z:+.2f}, |z| <= 3)")
    assert ok


def _embedded_chain_run(model, alpha, region):
    def run(i, stream):
        tr = simulate(model, alpha, 50.0, stream, stop_count=11, stop_region=region)
        eta = alpha.copy()
        rows = []
        for j in range(len(tr)):
            n = len(eta)
            if 1 <= n <= 10:
                B = model.birth_mass(0.0, eta)
                D = total_death_rate(model, 0.0, eta)
                rows.append((n, B / (B + D), 1 if tr.kinds[j] == 0 else 0))
            if tr.kinds[j] == 0:
                eta.insert(int(tr.ids[j]), tr.coords[j].tolist())
            else:
                eta.remove(int(tr.ids[j]))
        return rows
    return run


@pytest.mark.acceptance(6)
def test_embedded_chain_law(accept):
    """Birth frequency per population stratum against the sum of predicted B/(B+D)."""
    params = AggregationParams(StepKernel(0.3, 0.1, 0.3), 1.1, 0.5, UNIT, True)
    model = AggregationModel(params)
    alpha = Configuration(2, [(0.1, 0.1), (0.3, 0.5), (0.5, 0.5), (0.8, 0.2), (0.9, 0.9)])
    rows = []
    i0 = 0
    while len(rows) < 100_000:
        for r in map_runs(_embedded_chain_run(model, alpha, UNIT), 2000, 1000 + i0):
            rows.extend(r)
        i0 += 1
    arr = np.array(rows)
    worst = 0.0
    parts = []
    for n in range(1, 11):
        sel = arr[:, 0] == n
        if not np.any(sel):
            continue
        p, b = arr[sel, 1], arr[sel, 2]
        z = (b.sum() - p.sum()) / math.sqrt(float(np.sum(p * (1 - p))))
        worst = max(worst, abs(z))
        parts.append(f"{n}:{int(sel.sum())}/{z:+.2f}")
    ok = len(arr) >= 100_000 and worst <= 3 and len(parts) == 10
    accept(ok, f"events={len(arr)} max|z|={worst:.2f} <= 3 (n:events/z {' '.join(parts)})")
    assert ok


@pytest.mark.acceptance(7)
def test_dynkin_residual(accept):
    m = ComparisonModel(UNIT, 2.0, 1.0)
    F = capped_count(UNIT, 1e6)
    ok_est, bad_est = dynkin_residuals(m, F, Configuration(2, [(0.5, 0.5), (0.2, 0.2)]), 2.0, 10_000, 5,
                                       k=4, birth_scales=(1.0, 2.0))
    z_ok, z_bad = ok_est.extra["z"], bad_est.extra["z"]
    power = detection_power(z_bad)
    ok = abs(z_ok) <= 3 and abs(z_bad) > 3 and power >= 0.99
    accept(ok, f"residual={ok_est.mean:+.4f} se={ok_est.std_error:.4f} (z={z_ok:+.2f}); "
               f"doubled-birth compensator z={z_bad:+.1f}, power={power:.4f} >= 0.99")
    assert ok


@pytest.mark.acceptance(8)
def test_lumpability(accept):
    Q3 = FiniteKernel([[0.3, 0.3, 0.4], [0.3, 0.3, 0.4], [0.1, 0.2, 0.7]])
    f3 = Lumping([0, 0, 1])
    d3 = pushforward_equivalence(Q3, f3, [1.0, 0.0, 0.0], 20)
    bit3 = lump(Q3, f3, representatives=[0, 2]) == lump(Q3, f3, representatives=[1, 2])
    up = lambda i: chain_transition(i, P)[0]
    Q, f = refined_birth_death_kernel(up, 41, labels=2)
    mu0 = np.zeros(Q.n)
    mu0[f.f == 1] = 0.5
    dc = pushforward_equivalence(Q, f, mu0, 20)
    Qbar = lump(Q, f)
    bitc = all(lump(Q, f, representatives=[int(c[j]) for c in f.classes()]) == Qbar for j in (0, 1))
    match = float(np.max(np.abs(Qbar.rows - chain_kernel(P, 41).rows)))
    ok = (is_lumpable(Q, f).lumpable and d3 <= 1e-12 and dc <= 1e-12 and bit3 and bitc and match <= 1e-15)
    accept(ok, f"3-state discrepancy={d3:.1e}, chain (41 states x 2 labels) discrepancy={dc:.1e} <= 1e-12; "
               f"representative-independent bitwise: {bit3 and bitc}; max |Qbar - chain|={match:.1e}")
    assert ok


def _growth(i, stream):
    r = growth_run(ComparisonModel(UNIT, 2.0, 1.0), Configuration(2, [(0.5, 0.5)]), UNIT, 15.0, stream)
    return r.survived, r.log_rate, r.late_deaths


@pytest.mark.acceptance(9)
def test_growth(accept):
    res = map_runs(_growth, 10_000, 3)
    rates = np.array([r[1] for r in res if r[0]])
    late = sum(r[2] for r in res)
    med = float(np.median(rates))
    ok = med >= 1.0 - 0.25 and late <= 2
    accept(ok, f"survivors={len(rates)}/10000 median log|eta_T|/T={med:.4f} >= 0.75; "
               f"deaths in region after reaching 20 (all runs)={late} <= 2")
    assert ok


DETERMINISM = [
    ("simulate", "simulate.toml", 200),
    ("extinction", "extinction.toml", 3000),
    ("couple", "couple.toml", 40),
    ("lump", "lump.toml", None),
    ("lump", "lump_file.toml", None),
    ("dynkin", "dynkin.toml", 400),
    ("growth", "growth.toml", 1000),
]


@pytest.mark.acceptance(10)
def test_determinism_across_workers(accept, tmp_path, capsys):
    bad = []
    files = 0
    for k, (cmd, cfg, runs) in enumerate(DETERMINISM):
        dirs = []
        for workers in (1, 8):
            out = tmp_path / f"{k}-{workers}"
            argv = [cmd, "--config", str(CONFIGS / cfg), "--workers", str(workers), "--out", str(out)]
            if runs is not None:
                argv += ["--runs", str(runs)]
            code = main(argv)
            if code != 0:
                bad.append(f"{cmd}:{cfg} exit {code}")
            dirs.append(out)
        names = sorted(p.name for p in dirs[0].iterdir())
        if names != sorted(p.name for p in dirs[1].iterdir()):
            bad.append(f"{cmd}:{cfg} file sets differ")
        _, mismatch, errors = filecmp.cmpfiles(dirs[0], dirs[1], names, shallow=False)
        bad += [f"{cmd}:{cfg}:{n}" for n in mismatch + errors]
        files += len(names)
    capsys.readouterr()
    ok = not bad
    accept(ok, f"{len(DETERMINISM)} subcommand configs x (1 vs 8 workers): {files} files compared, "
               f"differences={bad or 0}")
    assert ok
