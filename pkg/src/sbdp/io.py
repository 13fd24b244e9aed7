"""Experiment configuration, trajectory records and kernel files.

Config files are UTF-8 text made of ``[section]`` headers and
``key = value`` lines; ``#`` starts a comment.  Values are JSON
(numbers, true/false, null, quoted strings, lists); anything that is not
valid JSON is taken as a bare string.  See ``docs/config.md`` for the
schema.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .chains import FiniteKernel
from .config import (AggregationModel, AggregationParams, Ball, Box, ComparisonModel, Configuration,
                     ConstantRateModel, ContactModel, Region, StepKernel)
from .engine import Trajectory
from .rng import Stream, substream

PRESETS = ("aggregation", "comparison", "pure-birth", "contact")
_REQ = object()


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid configuration:\n  " + "\n  ".join(self.errors))


def _num(v):
    if isinstance(v, str) and v.strip().lower() in ("inf", "+inf", "infinity"):
        return math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("expected a number")
    return float(v)


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError("expected an integer")
    return v


def _bool(v):
    if not isinstance(v, bool):
        raise TypeError("expected true or false")
    return v


def _str(v):
    if not isinstance(v, str):
        raise TypeError("expected a string")
    return v


def _vec(v):
    if not isinstance(v, list) or not v:
        raise TypeError("expected a nonempty list of numbers")
    return [_num(x) for x in v]


def _points(v):
    if not isinstance(v, list):
        raise TypeError("expected a list of points")
    return [_vec(p) for p in v]


def _opt(conv):
    def f(v):
        return None if v is None else conv(v)
    return f


def _int_list(v):
    if not isinstance(v, list):
        raise TypeError("expected a list of integers")
    return [_int(x) for x in v]


def _vec_or_none(v):
    return None if v is None else _vec(v)


# section -> key -> (converter, default)
SCHEMA: dict[str, dict[str, tuple]] = {
    "model": {
        "preset": (_str, _REQ),
        "dim": (_int, 2),
        "a": (_num, 2.0),
        "c": (_num, 1.0),
        "c_birth": (_opt(_num), None),
        "phi": (_str, "constant"),
        "phi_near": (_opt(_num), None),
        "phi_far": (_num, 0.0),
        "phi_radius": (_num, math.inf),
        "include_self": (_bool, True),
        "region": (_str, "box"),
        "region_lo": (_opt(_vec), None),
        "region_hi": (_opt(_vec), None),
        "region_center": (_opt(_vec), None),
        "region_radius": (_num, 1.0),
        "lam": (_num, 1.0),
        "c1": (_opt(_num), None),
        "c2": (_num, 0.0),
        "death": (_num, 0.0),
        "kernel_radius": (_num, 0.5),
    },
    "initial": {
        "points": (_opt(_points), None),
        "n": (_opt(_int), None),
        "placement": (_str, "uniform"),
    },
    "run": {
        "horizon": (_num, _REQ),
        "runs": (_int, 1),
        "seed": (_int, 0),
        "workers": (_int, 1),
        "max_events": (_int, 10**7),
        "stop_count": (_opt(_int), None),
    },
    "extinction": {
        "bias_tol": (_num, 1e-6),
        "table_max": (_int, 10),
    },
    "lump": {
        "kernel": (_str, "comparison-chain"),
        "lumping": (_opt(_int_list), None),
        "states": (_int, 41),
        "labels": (_int, 2),
        "mu0": (_vec_or_none, None),
        "n_max": (_int, 20),
        "tol": (_num, 1e-12),
    },
    "dynkin": {
        "cap": (_num, 1e6),
        "samples": (_int, 8),
        "mutation_scale": (_num, 2.0),
    },
    "growth": {
        "switch_at": (_int, 64),
        "late_level": (_int, 20),
        "slack": (_num, 0.25),
    },
    "output": {
        "trajectories": (_int, 1),
    },
}


def _parse_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def parse_document(text: str) -> tuple[dict[str, dict[str, Any]], list[str]]:
    """Split the document into sections; returns (values, syntax errors)."""
    values: dict[str, dict[str, Any]] = {}
    where: dict[tuple, int] = {}
    errors: list[str] = []
    section = None
    for lineno, line in enumerate(text.splitlines(), 1):
        body = _strip_comment(line)
        if not body:
            continue
        if body.startswith("[") and body.endswith("]"):
            section = body[1:-1].strip()
            if section not in SCHEMA:
                errors.append(f"line {lineno}: unknown section [{section}]")
            values.setdefault(section, {})
            continue
        if "=" not in body:
            errors.append(f"line {lineno}: expected 'key = value', got {body!r}")
            continue
        key, raw = (s.strip() for s in body.split("=", 1))
        if section is None:
            errors.append(f"line {lineno}: key {key!r} outside any section")
            continue
        if (section, key) in where:
            errors.append(f"line {lineno}: duplicate key {section}.{key} "
                          f"(first set on line {where[(section, key)]})")
            continue
        where[(section, key)] = lineno
        values[section][key] = _parse_value(raw)
    return values, errors


def _strip_comment(line: str) -> str:
    out = []
    quoted = False
    for ch in line:
        if ch == '"':
            quoted = not quoted
        if ch == "#" and not quoted:
            break
        out.append(ch)
    return "".join(out).strip()


@dataclass
class ExperimentSpec:
    values: dict[str, dict[str, Any]]
    text: str = ""
    explicit: set = field(default_factory=set)

    def __getitem__(self, key: str):
        section, name = key.split(".", 1)
        return self.values[section][name]

    def with_overrides(self, **kw) -> "ExperimentSpec":
        vals = {s: dict(v) for s, v in self.values.items()}
        for k, v in kw.items():
            if v is not None:
                vals["run"][k] = v
        spec = ExperimentSpec(vals, self.text, set(self.explicit))
        errors = _validate(spec)
        if errors:
            raise ConfigError(errors)
        return spec

    @property
    def spec_hash(self) -> str:
        """sha256 of the resolved spec; the worker count is excluded."""
        vals = {s: dict(v) for s, v in self.values.items()}
        vals["run"].pop("workers", None)
        blob = json.dumps(vals, sort_keys=True, default=repr, allow_nan=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    # -- builders ---------------------------------------------------------

    def region(self) -> Region:
        m = self.values["model"]
        d = m["dim"]
        if m["region"] == "box":
            lo = m["region_lo"] or [0.0] * d
            hi = m["region_hi"] or [1.0] * d
            return Box(tuple(lo), tuple(hi))
        center = m["region_center"] or [0.0] * d
        return Ball(tuple(center), m["region_radius"])

    def phi(self) -> StepKernel:
        m = self.values["model"]
        near = m["phi_near"] if m["phi_near"] is not None else math.log(m["a"])
        if m["phi"] == "constant":
            return StepKernel(near)
        return StepKernel(near, m["phi_far"], m["phi_radius"])

    def aggregation_params(self) -> AggregationParams:
        m = self.values["model"]
        return AggregationParams(self.phi(), m["a"], m["c"], self.region(), m["include_self"],
                                 m["c_birth"])

    def model(self):
        m = self.values["model"]
        preset = m["preset"]
        if preset == "aggregation":
            return AggregationModel(self.aggregation_params())
        if preset == "comparison":
            return ComparisonModel(self.region(), m["a"], m["c"])
        if preset == "pure-birth":
            lam = m["c1"] if m["c1"] is not None else m["lam"]
            return ConstantRateModel(self.region(), lam, m["death"], True, m["c2"])
        return ContactModel(m["dim"], m["lam"], m["kernel_radius"], 1.0 if m["death"] == 0 else m["death"])

    def initial(self) -> Configuration:
        ini = self.values["initial"]
        d = self.values["model"]["dim"]
        if ini["points"] is not None:
            return Configuration(d, ini["points"])
        stream = Stream(substream(self.values["run"]["seed"], 0, 0x1417))
        region = self.region()
        return Configuration(d, [region.sample(stream) for _ in range(ini["n"])])


def _validate(spec: ExperimentSpec) -> list[str]:
    v = spec.values
    errs = []
    m = v["model"]
    if m["preset"] not in PRESETS:
        errs.append(f"model.preset must be one of {', '.join(PRESETS)} (got {m['preset']!r})")
    d = m["dim"]
    if d < 1:
        errs.append(f"model.dim must be >= 1 (got {d})")
    if m["preset"] in ("aggregation", "comparison"):
        if not m["a"] > 1:
            errs.append(f"a must exceed 1 (got {m['a']})")
        if not m["c"] > 0:
            errs.append(f"c must be positive (got {m['c']})")
        if m["c_birth"] is not None and m["c_birth"] < m["c"]:
            errs.append(f"c_birth must be >= c (got {m['c_birth']})")
    if m["phi"] not in ("constant", "step"):
        errs.append(f"model.phi must be 'constant' or 'step' (got {m['phi']!r})")
    for k in ("lam", "c2", "death", "phi_far", "kernel_radius", "region_radius"):
        if m[k] < 0:
            errs.append(f"model.{k} must be nonnegative (got {m[k]})")
    if m["c1"] is not None and m["c1"] < 0:
        errs.append(f"model.c1 must be nonnegative (got {m['c1']})")
    if m["region"] not in ("box", "ball"):
        errs.append(f"model.region must be 'box' or 'ball' (got {m['region']!r})")
    for k in ("region_lo", "region_hi", "region_center"):
        if m[k] is not None and len(m[k]) != d:
            errs.append(f"model.{k} must have {d} coordinates (got {m[k]})")
    if not errs:
        try:
            r = spec.region()
            if not r.volume > 0:
                errs.append("region must have positive volume")
            if m["preset"] == "aggregation":
                spec.aggregation_params()
        except ValueError as exc:
            errs.append(str(exc))
    ini = v["initial"]
    if ini["points"] is None and ini["n"] is None:
        errs.append("initial: give either points or n")
    if ini["points"] is not None and ini["n"] is not None:
        errs.append("initial: points and n are mutually exclusive")
    if ini["points"] is not None:
        for p in ini["points"]:
            if len(p) != d:
                errs.append(f"initial point {p} must have {d} coordinates")
    if ini["n"] is not None and ini["n"] < 0:
        errs.append(f"initial.n must be nonnegative (got {ini['n']})")
    if ini["placement"] != "uniform":
        errs.append(f"initial.placement must be 'uniform' (got {ini['placement']!r})")
    r = v["run"]
    if not (math.isfinite(r["horizon"]) and r["horizon"] >= 0):
        errs.append(f"run.horizon must be finite and nonnegative (got {r['horizon']})")
    if r["runs"] < 1:
        errs.append(f"run.runs must be >= 1 (got {r['runs']})")
    if r["workers"] < 1:
        errs.append(f"run.workers must be >= 1 (got {r['workers']})")
    if r["seed"] < 0:
        errs.append(f"run.seed must be nonnegative (got {r['seed']})")
    if r["max_events"] < 1:
        errs.append(f"run.max_events must be >= 1 (got {r['max_events']})")
    lp = v["lump"]
    if lp["labels"] < 1 or lp["labels"] & (lp["labels"] - 1):
        errs.append(f"lump.labels must be a power of two (got {lp['labels']})")
    if lp["states"] < 2:
        errs.append(f"lump.states must be >= 2 (got {lp['states']})")
    if v["dynkin"]["cap"] < 1:
        errs.append(f"dynkin.cap must be >= 1 (got {v['dynkin']['cap']})")
    if v["dynkin"]["samples"] < 1:
        errs.append(f"dynkin.samples must be >= 1 (got {v['dynkin']['samples']})")
    return errs


def parse_config(text: str) -> ExperimentSpec:
    """Parse and validate a config document; every violation is reported."""
    raw, errors = parse_document(text)
    values: dict[str, dict[str, Any]] = {}
    explicit = set()
    typed = True  # value checks need every field converted
    for section, keys in SCHEMA.items():
        given = raw.get(section, {})
        out = {}
        for key, (conv, default) in keys.items():
            if key in given:
                explicit.add(f"{section}.{key}")
                try:
                    out[key] = conv(given[key])
                except TypeError as exc:
                    errors.append(f"{section}.{key}: {exc} (got {given[key]!r})")
                    out[key] = None if default is _REQ else default
                    typed = typed and default is not _REQ
            elif default is _REQ:
                errors.append(f"{section}.{key} is required")
                out[key] = None
                typed = False
            else:
                out[key] = default
        values[section] = out
    for section, given in raw.items():
        if section not in SCHEMA:
            continue
        for key in given:
            if key not in SCHEMA[section]:
                errors.append(f"unknown key {section}.{key}")
    spec = ExperimentSpec(values, text, explicit)
    if typed:
        errors += _validate(spec)
    if errors:
        raise ConfigError(errors)
    return spec


def load_config(path) -> ExperimentSpec:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


# --------------------------------------------------------------------------
# trajectory records


def region_to_json(region: Region | None):
    if isinstance(region, Box):
        return {"kind": "box", "lo": list(region.lo), "hi": list(region.hi)}
    if isinstance(region, Ball):
        return {"kind": "ball", "center": list(region.center), "radius": region.radius}
    return None


def region_from_json(obj) -> Region | None:
    if obj is None:
        return None
    if obj["kind"] == "box":
        return Box(tuple(obj["lo"]), tuple(obj["hi"]))
    return Ball(tuple(obj["center"]), obj["radius"])


def format_trajectory(traj: Trajectory, region: Region) -> str:
    """One event per line: time kind id x_1..x_d n n_region (header lines start with #)."""
    dim = traj.initial.dim
    meta = {"dim": dim, "horizon": traj.horizon, "status": traj.status, "t_end": traj.t_end,
            "next_id": traj.initial.next_id, "region": region_to_json(region)}
    cols = " ".join(["time", "kind", "id"] + [f"x{k + 1}" for k in range(dim)] + ["n", "n_region"])
    lines = ["# sbdp trajectory v1", "# meta " + json.dumps(meta, sort_keys=True), "# columns " + cols]
    for pid, p in traj.initial.items():
        lines.append("# init " + " ".join([str(pid)] + [repr(v) for v in p]))
    n = traj.counts() if len(traj) else []
    nr = traj.counts(region) if len(traj) else []
    times = traj.times.tolist()
    ids = traj.ids.tolist()
    coords = traj.coords.tolist()
    kinds = traj.kinds.tolist()
    for i in range(len(traj)):
        row = [repr(times[i]), "B" if kinds[i] == 0 else "D", str(ids[i])]
        row += [repr(v) for v in coords[i]]
        row += [str(int(n[i])), str(int(nr[i]))]
        lines.append(" ".join(row))
    return "\n".join(lines) + "\n"


@dataclass
class TrajectoryRecord:
    trajectory: Trajectory
    region: Region | None
    counts: np.ndarray
    region_counts: np.ndarray


def parse_trajectory(text: str) -> TrajectoryRecord:
    meta = None
    init = []
    rows = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        if line.startswith("# meta "):
            meta = json.loads(line[7:])
        elif line.startswith("# init "):
            parts = line[7:].split()
            init.append((int(parts[0]), [float(x) for x in parts[1:]]))
        elif line.startswith("#"):
            continue
        else:
            rows.append((lineno, line.split()))
    if meta is None:
        raise ValueError("missing '# meta' header")
    dim = meta["dim"]
    alpha = Configuration.from_items(dim, init, meta["next_id"])
    times, kinds, ids, coords, n, nr = [], [], [], [], [], []
    for lineno, parts in rows:
        if len(parts) != dim + 5:
            raise ValueError(f"line {lineno}: expected {dim + 5} columns, got {len(parts)}")
        if parts[1] not in ("B", "D"):
            raise ValueError(f"line {lineno}: kind must be B or D")
        times.append(float(parts[0]))
        kinds.append(0 if parts[1] == "B" else 1)
        ids.append(int(parts[2]))
        coords.append([float(x) for x in parts[3:3 + dim]])
        n.append(int(parts[3 + dim]))
        nr.append(int(parts[4 + dim]))
    traj = Trajectory(alpha, times, kinds, ids, np.array(coords, dtype=float).reshape(len(times), dim),
                      meta["horizon"], meta["status"], meta["t_end"])
    return TrajectoryRecord(traj, region_from_json(meta["region"]), np.array(n, dtype=np.int64),
                            np.array(nr, dtype=np.int64))


def validate_trajectory_text(text: str) -> TrajectoryRecord:
    """Replay a record and check its population columns; raises ValueError on any mismatch."""
    rec = parse_trajectory(text)
    tr = rec.trajectory
    if len(tr) and np.any(np.diff(tr.times) < 0):
        raise ValueError("event times decrease")
    tr.replay()
    if len(tr):
        n = tr.counts()
        bad = np.flatnonzero(n != rec.counts)
        if len(bad):
            i = int(bad[0])
            raise ValueError(f"event {i}: recorded n={rec.counts[i]}, replay gives {n[i]}")
        if rec.region is not None:
            nr = tr.counts(rec.region)
            bad = np.flatnonzero(nr != rec.region_counts)
            if len(bad):
                i = int(bad[0])
                raise ValueError(f"event {i}: recorded n_region={rec.region_counts[i]}, replay gives {nr[i]}")
    return rec


# --------------------------------------------------------------------------
# kernel files


def format_kernel(Q: FiniteKernel) -> str:
    lines = [f"n={Q.n}"]
    for row in Q.rows.tolist():
        lines.append(" ".join(repr(v) for v in row))
    return "\n".join(lines) + "\n"


def parse_kernel(text: str) -> FiniteKernel:
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("n="):
        raise ValueError("kernel file must start with a header line 'n=<states>'")
    try:
        n = int(lines[0][2:])
    except ValueError:
        raise ValueError(f"bad header {lines[0]!r}") from None
    body = lines[1:]
    if len(body) != n:
        raise ValueError(f"header says n={n} but the file has {len(body)} rows")
    rows = []
    for i, ln in enumerate(body):
        vals = [float(x) for x in ln.split()]
        if len(vals) != n:
            raise ValueError(f"row {i} has {len(vals)} entries, expected {n}")
        rows.append(vals)
    return FiniteKernel(rows)
