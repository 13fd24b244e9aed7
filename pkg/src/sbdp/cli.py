"""``sbdp`` command-line interface.

    sbdp <simulate|extinction|couple|lump|dynkin|growth> --config PATH
         [--seed N] [--runs N] [--workers N] [--out DIR]

Exit status: 0 success, 1 invariant violation or failed run, 2 bad
configuration, 3 a statistical check did not pass.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analytics import (ChainParams, chain_kernel, chain_transition, estimate_extinction_mc,
                        extinction_probability, growth_run, late_death_bound,
                        log_extinction_probability)
from .chains import Lumping, is_lumpable, lump, pushforward_equivalence, refined_birth_death_kernel
from .config import AggregationModel, comparison_model, restrict_count
from .coupling import InclusionAudit, birth_mismatches, nested_initial, simulate_coupled
from .engine import inclusion_violations, simulate
from .generator import capped_count, detection_power, dynkin_residuals
from .io import (ConfigError, ExperimentSpec, format_kernel, format_trajectory, load_config,
                 parse_kernel, validate_trajectory_text)
from .mc import RunFailure, estimate, map_runs

OK, VIOLATION, BAD_CONFIG, STAT_FAIL = 0, 1, 2, 3
COMMANDS = ("simulate", "extinction", "couple", "lump", "dynkin", "growth")


class Report:
    def __init__(self, command: str, spec: ExperimentSpec):
        self.command = command
        self.spec = spec
        self.lines: list[str] = []
        self.summary: dict = {}
        self.status = "ok"

    def add(self, key: str, value) -> None:
        self.lines.append(f"{key}: {_fmt(value)}")
        self.summary[key] = value

    def text(self) -> str:
        head = [
            "# sbdp report",
            f"command: {self.command}",
            f"version: {__version__}",
            f"spec_hash: {self.spec.spec_hash}",
            f"seed: {self.spec['run.seed']}",
            f"runs: {self.spec['run.runs']}",
            f"status: {self.status}",
        ]
        blob = json.dumps(self.summary, sort_keys=True, default=_jsonable)
        return "\n".join(head + self.lines + ["--- summary", blob]) + "\n"


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _jsonable(v):
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.floating,)):
        return float(v)
    return repr(v)


def _write(out: Path, name: str, text: str) -> None:
    out.mkdir(parents=True, exist_ok=True)
    with open(out / name, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _run_args(spec):
    r = spec.values["run"]
    return r["horizon"], r["runs"], r["seed"], r["workers"], r["max_events"], r["stop_count"]


# --------------------------------------------------------------------------


def cmd_simulate(spec: ExperimentSpec, out: Path, rep: Report) -> int:
    model = spec.model()
    alpha = spec.initial()
    region = spec.region()
    T, runs, seed, workers, max_events, stop_count = _run_args(spec)
    keep = spec["output.trajectories"]

    def one(i, stream):
        tr = simulate(model, alpha, T, stream, max_events=max_events, stop_count=stop_count,
                      stop_region=region if stop_count is not None else None)
        n = int(tr.counts()[-1]) if len(tr) else len(alpha)
        nr = int(tr.counts(region)[-1]) if len(tr) else restrict_count(alpha, region)
        text = format_trajectory(tr, region) if i < keep else None
        return len(tr), tr.n_births, tr.n_deaths, n, nr, tr.status, tr.t_end, text

    res = map_runs(one, runs, seed, workers)
    table = ["# run events births deaths n_final n_region_final status t_end"]
    for i, (ne, nb, nd, n, nr, status, t_end, text) in enumerate(res):
        table.append(f"{i} {ne} {nb} {nd} {n} {nr} {status} {t_end!r}")
        if text is not None:
            validate_trajectory_text(text)
            _write(out, f"trajectory_{i:05d}.txt", text)
    _write(out, "simulate_runs.txt", "\n".join(table) + "\n")
    finals = [r[3] for r in res]
    rep.add("trajectory_files", min(keep, runs))
    rep.add("mean_final_population", estimate(finals).mean)
    rep.add("mean_events", estimate([r[0] for r in res]).mean)
    rep.add("extinct_runs", sum(1 for n in finals if n == 0))
    return OK


def _chain_params(spec) -> ChainParams | None:
    if spec["model.preset"] in ("aggregation", "comparison"):
        return ChainParams(spec["model.c"], spec["model.a"])
    return None


def cmd_extinction(spec: ExperimentSpec, out: Path, rep: Report) -> int:
    model = spec.model()
    alpha = spec.initial()
    region = spec.region()
    T, runs, seed, workers, max_events, stop_count = _run_args(spec)
    est = estimate_extinction_mc(model, alpha, region, runs, T, seed, workers=workers,
                                 stop_count=stop_count, bias_tol=spec["extinction.bias_tol"])
    q = restrict_count(alpha, region)
    rep.add("q", q)
    rep.add("estimate", est.mean)
    rep.add("std_error", est.std_error if est.se_defined else "undefined")
    rep.add("bias_bound", est.extra["bias_bound"])
    rep.add("stop_count", est.extra["stop_count"])
    rep.add("stopped_runs", est.extra["stopped"])
    params = _chain_params(spec)
    code = OK
    if params is not None and q >= 1 and q == len(alpha):
        p = extinction_probability(q, params)
        label = "closed_form" if spec["model.preset"] == "comparison" else "comparison_upper_bound"
        rep.add(label, p)
        z = est.z_score(p) if est.se_defined else math.nan
        rep.add("z_score", z)
        if label == "closed_form" and est.se_defined:
            ok = abs(est.mean - p) <= 3 * est.std_error + est.extra["bias_bound"]
        else:
            ok = est.mean <= p + 3 * (est.std_error if est.se_defined else 0.0) + est.extra["bias_bound"]
        rep.add("check", "PASS" if ok else "FAIL")
        code = OK if ok else STAT_FAIL
    if params is not None:
        rows = ["# q p_q log_p_q"]
        for k in range(1, spec["extinction.table_max"] + 1):
            rows.append(f"{k} {extinction_probability(k, params)!r} {log_extinction_probability(k, params)!r}")
        _write(out, "extinction_table.txt", "\n".join(rows) + "\n")
    return code


def cmd_couple(spec: ExperimentSpec, out: Path, rep: Report) -> int:
    if spec["model.preset"] != "aggregation":
        raise ConfigError(["couple needs model.preset = \"aggregation\" (it couples the "
                           "comparison model below it)"])
    params = spec.aggregation_params()
    upper = AggregationModel(params)
    lower = comparison_model(params)
    region = spec.region()
    alpha2 = spec.initial()
    alpha1 = nested_initial(alpha2, region)
    T, runs, seed, workers, max_events, _ = _run_args(spec)
    keep = spec["output.trajectories"]

    def one(i, stream):
        t1, t2 = simulate_coupled(lower, upper, alpha1, alpha2, T, stream, max_events=max_events)
        v = inclusion_violations(t1, t2)
        b = birth_mismatches(t1, t2)
        n1 = int(t1.counts()[-1]) if len(t1) else len(alpha1)
        n2 = int(t2.counts()[-1]) if len(t2) else len(alpha2)
        texts = (format_trajectory(t1, region), format_trajectory(t2, region)) if i < keep else None
        return v, b, len(t1) + len(t2), n1, n2, texts

    res = map_runs(one, runs, seed, workers)
    audit = InclusionAudit()
    for i, (v, b, ne, n1, n2, texts) in enumerate(res):
        audit.runs += 1
        audit.events += ne
        audit.violations += v
        audit.birth_mismatches += b
        if v or b:
            audit.failed_runs.append(i)
        if texts is not None:
            for k, text in enumerate(texts, 1):
                validate_trajectory_text(text)
                _write(out, f"coupled_{i:05d}_process{k}.txt", text)
    rep.lines.append("[audit]")
    rep.add("inclusion violations", audit.violations)
    rep.add("birth mismatches", audit.birth_mismatches)
    rep.add("audited events", audit.events)
    rep.add("failed runs", audit.failed_runs[:20])
    rep.add("mean_final_population_1", estimate([r[3] for r in res]).mean)
    rep.add("mean_final_population_2", estimate([r[4] for r in res]).mean)
    if not audit.ok:
        rep.status = "violation"
        return VIOLATION
    return OK


def cmd_lump(spec: ExperimentSpec, out: Path, rep: Report, config_dir: Path) -> int:
    lp = spec.values["lump"]
    if lp["kernel"] == "comparison-chain":
        params = ChainParams(spec["model.c"], spec["model.a"])
        Q, f = refined_birth_death_kernel(lambda i: _p_up(i, params), lp["states"], lp["labels"])
        target = chain_kernel(params, lp["states"])
        rep.add("source", f"comparison chain with {lp['labels']} spatial labels")
    else:
        path = Path(lp["kernel"])
        if not path.is_absolute():
            path = config_dir / path
        Q = parse_kernel(path.read_text(encoding="utf-8"))
        if lp["lumping"] is None:
            raise ConfigError(["lump.lumping is required with a kernel file"])
        f = Lumping(lp["lumping"])
        target = None
        rep.add("source", path.name)
    if len(f) != Q.n:
        raise ConfigError([f"lump.lumping has {len(f)} labels but the kernel has {Q.n} states"])
    report = is_lumpable(Q, f, lp["tol"])
    rep.add("states", Q.n)
    rep.add("labels", f.n_labels)
    rep.add("lumpable", report.lumpable)
    rep.add("rows_equal", report.rows_equal)
    rep.add("class_discrepancy", report.discrepancy)
    if not report:
        rep.add("witness", list(report.witness))
        rep.status = "violation"
        return VIOLATION
    Qbar = lump(Q, f, lp["tol"])
    _write(out, "lumped_kernel.txt", format_kernel(Qbar))
    spread = max(float(np.max(np.abs(lump(Q, f, lp["tol"], reps).rows - Qbar.rows)))
                 for reps in _representative_choices(f))
    rep.add("representative_spread", spread)
    rep.add("representative_independent_bitwise", spread == 0.0)
    if lp["mu0"] is not None:
        mu0 = np.array(lp["mu0"])
    else:
        mu0 = np.zeros(Q.n)
        mu0[int(np.flatnonzero(f.f == min(1, f.n_labels - 1))[0])] = 1.0
    disc = pushforward_equivalence(Q, f, mu0, lp["n_max"])
    rep.add("pushforward_discrepancy", disc)
    rep.add("n_max", lp["n_max"])
    if target is not None:
        rep.add("max_abs_diff_vs_chain", float(np.max(np.abs(Qbar.rows - target.rows))))
    ok = disc <= lp["tol"] and spread <= lp["tol"]
    rep.add("check", "PASS" if ok else "FAIL")
    return OK if ok else STAT_FAIL


def _p_up(i, params):
    return chain_transition(i, params)[0]


def _representative_choices(f: Lumping):
    classes = f.classes()
    width = max(len(c) for c in classes)
    for k in range(width):
        yield [int(c[min(k, len(c) - 1)]) for c in classes]


def cmd_dynkin(spec: ExperimentSpec, out: Path, rep: Report) -> int:
    model = spec.model()
    if not model.time_homogeneous:
        raise ConfigError(["dynkin needs a time-homogeneous model"])
    alpha = spec.initial()
    region = spec.region()
    T, runs, seed, workers, _, _ = _run_args(spec)
    dk = spec.values["dynkin"]
    F = capped_count(region, dk["cap"])
    scales = (1.0, dk["mutation_scale"])
    res = dynkin_residuals(model, F, alpha, T, runs, seed, k=dk["samples"], workers=workers,
                           birth_scales=scales)
    good, bad = res
    rep.add("residual_mean", good.mean)
    rep.add("residual_se", good.std_error if good.se_defined else "undefined")
    rep.add("residual_z", good.extra["z"])
    rep.add("mutation_birth_scale", dk["mutation_scale"])
    rep.add("mutation_mean", bad.mean)
    rep.add("mutation_z", bad.extra["z"])
    power = detection_power(abs(bad.extra["z"])) if bad.se_defined else math.nan
    rep.add("mutation_power", power)
    if not good.se_defined:
        return OK
    ok = abs(good.extra["z"]) <= 3.0 and (dk["mutation_scale"] == 1.0 or power >= 0.99)
    rep.add("check", "PASS" if ok else "FAIL")
    return OK if ok else STAT_FAIL


def cmd_growth(spec: ExperimentSpec, out: Path, rep: Report) -> int:
    model = spec.model()
    params = model.chain_params()
    if params is None:
        raise ConfigError(["growth needs the aggregation or comparison preset"])
    alpha = spec.initial()
    region = spec.region()
    T, runs, seed, workers, _, _ = _run_args(spec)
    g = spec.values["growth"]

    def one(i, stream):
        r = growth_run(model, alpha, region, T, stream, switch_at=g["switch_at"],
                       late_level=g["late_level"])
        return r.survived, r.n_final, r.log_rate, r.late_deaths, r.fast_forwarded

    res = map_runs(one, runs, seed, workers)
    rows = ["# run survived n_region_T log_rate late_deaths fast_forwarded"]
    for i, (s, n, lr, ld, ff) in enumerate(res):
        rows.append(f"{i} {int(s)} {n} {lr!r} {ld} {int(ff)}")
    _write(out, "growth_runs.txt", "\n".join(rows) + "\n")
    rates = np.array([r[2] for r in res if r[0]])
    late = sum(r[3] for r in res)
    rep.add("survivors", len(rates))
    med = float(np.median(rates)) if len(rates) else math.nan
    rep.add("median_log_rate", med)
    rate = getattr(model, "birth_rate", params.c)
    rep.add("threshold", rate - g["slack"])
    rep.add("late_deaths_total", late)
    rep.add("late_death_expectation_bound", runs * late_death_bound(params, g["late_level"]))
    rep.add("fast_forward_error_bound_per_run", late_death_bound(params, g["switch_at"]))
    ok = len(rates) > 0 and med >= rate - g["slack"]
    rep.add("check", "PASS" if ok else "FAIL")
    return OK if ok else STAT_FAIL


# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sbdp", description="Spatial birth-and-death process simulator.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="experiment config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--runs", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="sbdp-out", help="output directory (default: sbdp-out)")
    p.add_argument("--version", action="version", version=f"sbdp {__version__}")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out)
    try:
        spec = load_config(args.config).with_overrides(seed=args.seed, runs=args.runs,
                                                       workers=args.workers)
    except ConfigError as exc:
        print(f"sbdp: {exc}", file=sys.stderr)
        return BAD_CONFIG
    except OSError as exc:
        print(f"sbdp: cannot read config: {exc}", file=sys.stderr)
        return BAD_CONFIG
    rep = Report(args.command, spec)
    try:
        if args.command == "lump":
            code = cmd_lump(spec, out, rep, Path(os.path.dirname(os.path.abspath(args.config))))
        else:
            code = globals()[f"cmd_{args.command}"](spec, out, rep)
    except ConfigError as exc:
        print(f"sbdp: {exc}", file=sys.stderr)
        return BAD_CONFIG
    except (RunFailure, ValueError, RuntimeError) as exc:
        rep.status = "failed (partial outputs may be present)"
        rep.add("error", str(exc))
        _write(out, f"{args.command}_report.txt", rep.text())
        print(f"sbdp: {exc}", file=sys.stderr)
        return VIOLATION
    if code == STAT_FAIL and rep.status == "ok":
        rep.status = "check failed"
    _write(out, f"{args.command}_report.txt", rep.text())
    sys.stdout.write(rep.text())
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
