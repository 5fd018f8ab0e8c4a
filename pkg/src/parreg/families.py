"""Generators for the Lip(1,1/2) graph families used across the test batteries.

Families: flat, affine-in-x, smooth sinusoid, (smoothed) spatial kink, and a
lacunary time series sum_{j<=J} 2^-j * a0 * cos(4^j t) that is uniformly
Lip(1,1/2) in J but increasingly rough in every "regularity" gauge.

All generators emit GraphFn objects on a lateral torus [-Lx/2, Lx/2) with the
parabolic grid coupling ht = hx^2, and declare M0 from the measured discrete
seminorm (plus a tiny slack), so the GraphFn validator stays honest.
"""

from __future__ import annotations

import numpy as np

from .pargeom import BasePoint, GraphFn, lip_seminorm

FAMILIES = ("flat", "affine", "smooth", "kink", "lacunary")


def _coords(nx: int, nt: int, hx: float):
    x = (np.arange(nx) - nx // 2) * hx
    t = np.arange(nt) * hx * hx
    return x[:, None], t[None, :]


def _wrap(values, hx: float, m0: float = None) -> GraphFn:
    nx = values.shape[0]
    origin = BasePoint(x=(-(nx // 2) * hx,), t=0.0)
    if m0 is not None:
        return GraphFn(origin, hx, values, M0=m0)
    g = GraphFn(origin, hx, values, M0=20.0)  # provisional, retightened below
    s = lip_seminorm(g)
    return GraphFn(origin, hx, values, M0=1.0 + s + 1e-9)


def flat_graph(nx: int = 64, nt: int = 512, hx: float = 1 / 64, level: float = 0.0):
    x, t = _coords(nx, nt, hx)
    return _wrap(np.full((nx, nt), level), hx, m0=1.0)


def affine_graph(slope: float = 0.5, nx: int = 64, nt: int = 512, hx: float = 1 / 64):
    x, t = _coords(nx, nt, hx)
    return _wrap((slope * x) + 0.0 * t, hx)


def smooth_graph(amp: float = 0.1, freq: float = 1.0,
                 nx: int = 64, nt: int = 512, hx: float = 1 / 64):
    """t-independent sinusoid amp*sin(2*pi*freq*x); periodic on the torus."""
    x, t = _coords(nx, nt, hx)
    return _wrap(amp * np.sin(2.0 * np.pi * freq * x) + 0.0 * t, hx)


def kink_graph(slope: float = 1.0, nx: int = 64, nt: int = 512, hx: float = 1 / 64):
    """slope*|x| with the corner rounded at two-cell scale (keeps C^1 at 0
    without changing the Lipschitz budget)."""
    x, t = _coords(nx, nt, hx)
    delta = 2.0 * hx
    vals = slope * (np.sqrt(x * x + delta * delta) - delta) + 0.0 * t
    return _wrap(vals, hx, m0=1.0 + abs(slope))


def lacunary_graph(J: int = 5, a0: float = 0.1,
                   nx: int = 64, nt: int = 512, hx: float = 1 / 64):
    """sum_{j=1..J} 2^-j * a0 * cos(4^j t): uniformly Lip(1,1/2) in J."""
    x, t = _coords(nx, nt, hx)
    vals = np.zeros((nx, nt))
    for j in range(1, J + 1):
        vals += (2.0 ** -j) * a0 * np.cos((4.0 ** j) * t)
    return _wrap(vals + 0.0 * x, hx)


def gen_graph(family: str, *, nx: int = 64, nt: int = 512, hx: float = 1 / 64,
              amp: float = None, slope: float = None, J: int = None,
              freq: float = 1.0, level: float = 0.0) -> GraphFn:
    if family == "flat":
        return flat_graph(nx, nt, hx, level=level)
    if family == "affine":
        return affine_graph(0.5 if slope is None else slope, nx, nt, hx)
    if family == "smooth":
        return smooth_graph(0.1 if amp is None else amp, freq, nx, nt, hx)
    if family == "kink":
        return kink_graph(1.0 if slope is None else slope, nx, nt, hx)
    if family == "lacunary":
        return lacunary_graph(5 if J is None else J, 0.1 if amp is None else amp,
                              nx, nt, hx)
    raise ValueError(f"unknown family {family!r}; choose from {FAMILIES}")
