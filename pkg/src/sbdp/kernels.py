"""Backend selection for the event-loop kernels.

The compiled extension is used when importable; setting
``SBDP_PURE_PYTHON=1`` forces the Python mirror.  Both backends return
identical results for identical inputs.
"""
import os

import numpy as np

from . import _pykernel
from ._pykernel import ABSORBED, BIRTH, BREAKER, DEATH, HORIZON, STOPPED, KernelError  # noqa: F401

_compiled = None
if not os.environ.get("SBDP_PURE_PYTHON"):
    try:
        from . import _ckernel as _compiled
    except ImportError:
        _compiled = None

BACKEND = "cython" if _compiled is not None else "python"


def _backend(name):
    if name is None:
        return _compiled or _pykernel
    if name == "python":
        return _pykernel
    if name == "cython":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not available")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def _log_arrays(times, kinds, ids, coords, dim):
    return (
        np.asarray(times, dtype=np.float64),
        np.asarray(kinds, dtype=np.int8),
        np.asarray(ids, dtype=np.int64),
        np.asarray(coords, dtype=np.float64).reshape(-1, dim),
    )


def run_single(fp, lo, hi, ids0, coords0, next_id, horizon, max_events, stop_count, stream,
               backend=None):
    mod = _backend(backend)
    out = mod.run_single(fp, lo, hi, ids0, coords0, next_id, float(horizon), int(max_events),
                         int(stop_count), stream)
    dim = len(lo)
    out["times"], out["kinds"], out["ids"], out["coords"] = _log_arrays(
        out["times"], out["kinds"], out["ids"], out["coords"], dim)
    out["final_ids"] = np.asarray(out["final_ids"], dtype=np.int64)
    out["final_coords"] = np.asarray(out["final_coords"], dtype=np.float64).reshape(-1, dim)
    return out


def run_coupled(fp1, fp2, lo, hi, ids0, coords0, in1, next_id, horizon, max_events, stream,
                backend=None):
    mod = _backend(backend)
    out = mod.run_coupled(fp1, fp2, lo, hi, ids0, coords0, in1, next_id, float(horizon),
                          int(max_events), stream)
    dim = len(lo)
    out["log1"] = _log_arrays(*out["log1"], dim)
    out["log2"] = _log_arrays(*out["log2"], dim)
    out["final_ids"] = np.asarray(out["final_ids"], dtype=np.int64)
    out["final_coords"] = np.asarray(out["final_coords"], dtype=np.float64).reshape(-1, dim)
    out["final_in1"] = np.asarray(out["final_in1"], dtype=bool)
    return out
