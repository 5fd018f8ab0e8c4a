"""Shared grid file format, deterministic RNG, and parallel-map plumbing.

File format (extension .pgrid, shared by every module):
  line 1: a JSON object {"kind": ..., "meta": {...}, "shape": [...], "dtype": "<f8"}
  then:   raw little-endian float64 array data, C order.
The header is self-describing; `meta` carries whatever the producing module
needs to reconstruct its object (grid origin, spacings, M0, ladders, ...).
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np
from scipy.special import ndtri

# ---------------------------------------------------------------------------
# grid files
# ---------------------------------------------------------------------------


def save_grid(path, kind: str, meta: dict, array) -> None:
    array = np.ascontiguousarray(array, dtype="<f8")
    header = {"kind": kind, "meta": meta, "shape": list(array.shape), "dtype": "<f8"}
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(array.tobytes())


def load_grid(path):
    """Returns (kind, meta, array)."""
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        data = fh.read()
    arr = np.frombuffer(data, dtype=header["dtype"]).reshape(header["shape"]).copy()
    return header["kind"], header["meta"], arr


def save_graph(path, g) -> None:
    meta = {"origin_x": list(g.origin.x), "origin_t": g.origin.t,
            "hx": g.hx, "ht": g.ht, "M0": g.M0, "n": g.n}
    save_grid(path, "graph", meta, g.values)


def load_graph(path):
    from .pargeom import BasePoint, GraphFn
    kind, meta, arr = load_grid(path)
    if kind != "graph":
        raise ValueError(f"expected a graph grid file, got kind={kind!r}")
    return GraphFn(BasePoint(meta["origin_x"], meta["origin_t"]),
                   meta["hx"], arr, meta["M0"], meta["n"])


# ---------------------------------------------------------------------------
# counter-based deterministic RNG
#
# Draws are a pure function of (seed, *counters); no state, so any thread
# schedule or path compaction produces identical streams.  SplitMix64-style
# finalizer, then uniforms via the top 53 bits, normals via inverse CDF.
# ---------------------------------------------------------------------------

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)


def _mix(z):
    z = z ^ (z >> np.uint64(30))
    z = z * _MIX1
    z = z ^ (z >> np.uint64(27))
    z = z * _MIX2
    z = z ^ (z >> np.uint64(31))
    return z


def counter_hash(seed, *counters):
    """Hash (seed, c1, c2, ...) -> uint64, broadcasting over array counters."""
    with np.errstate(over="ignore"):
        state = _mix(np.uint64(seed) * _GOLDEN + _GOLDEN)
        for c in counters:
            c = np.asarray(c).astype(np.uint64)
            state = _mix((state ^ c) * _GOLDEN + _GOLDEN)
    return state


def uniform01(seed, *counters):
    """Uniform draws on the open interval (0, 1)."""
    h = counter_hash(seed, *counters)
    return (h >> np.uint64(11)).astype(np.float64) * 2.0 ** -53 + 2.0 ** -54


def normal(seed, *counters):
    return ndtri(uniform01(seed, *counters))


# ---------------------------------------------------------------------------
# deterministic parallel map
# ---------------------------------------------------------------------------


def thread_count(default: int = 1) -> int:
    return int(os.environ.get("PARREG_THREADS", default))


def ordered_parallel_map(fn, items, max_workers=None):
    """map() preserving input order; thread count never affects the result.

    Workers must not mutate shared state.  max_workers <= 1 degrades to the
    serial map, which is bit-identical to any parallel schedule by design.
    """
    items = list(items)
    if max_workers is None:
        max_workers = thread_count()
    if max_workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=max_workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# deterministic JSON emission (reports must be byte-identical across runs)
# ---------------------------------------------------------------------------


def _pyify(obj):
    if isinstance(obj, dict):
        return {str(k): _pyify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_pyify(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_pyify(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def dump_json(obj, path=None) -> str:
    """Canonical JSON: sorted keys, LF endings, round-trip float repr."""
    text = json.dumps(_pyify(obj), sort_keys=True, indent=2)
    if path is not None:
        with open(path, "w", newline="\n") as fh:
            fh.write(text + "\n")
    return text
