"""Parabolic metric geometry.

Points, the parabolic norm |x| + |t|^(1/2) and its smooth companion, cubes and
surface boxes, corkscrew points, sampled Lip(1,1/2) graphs, and the product
surface measure dy ds.  Everything downstream (solvers, beta numbers, singular
integrals) consumes these conventions, so they are defined exactly once here.

Grid convention: a graph sample lives on a uniform lattice with time spacing
locked to the square of the lateral spacing (ht = hx^2), so one "scale level"
halves both parabolic dimensions coherently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_NEIGHBOR_TOL = 1e-6


@dataclass(frozen=True)
class BasePoint:
    """A point (x, t) of the base space: lateral coordinates plus time."""

    x: tuple
    t: float

    def __post_init__(self):
        object.__setattr__(self, "x", tuple(float(v) for v in np.atleast_1d(self.x)))
        object.__setattr__(self, "t", float(self.t))
        if not all(math.isfinite(v) for v in self.x) or not math.isfinite(self.t):
            raise ValueError("BasePoint components must be finite")

    @property
    def xarr(self) -> np.ndarray:
        return np.asarray(self.x, dtype=float)


@dataclass(frozen=True)
class AmbientPoint:
    """A point (x0, x, t): graph coordinate stacked on a base point."""

    x0: float
    base: BasePoint

    def __post_init__(self):
        object.__setattr__(self, "x0", float(self.x0))
        if not math.isfinite(self.x0):
            raise ValueError("AmbientPoint x0 must be finite")

    @property
    def spatial(self) -> np.ndarray:
        return np.concatenate([[self.x0], self.base.xarr])

    @property
    def t(self) -> float:
        return self.base.t


@dataclass(frozen=True)
class ParabolicCube:
    """Q_R(center): lateral half-width R, time half-width R^2."""

    center: BasePoint
    R: float

    def __post_init__(self):
        if not (self.R > 0):
            raise ValueError("cube scale R must be positive")

    def contains(self, x, t):
        """Vectorized membership for lateral coords x (..., n-1) and times t."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        dx = np.max(np.abs(x - self.center.xarr), axis=-1)
        dt = np.abs(np.asarray(t, dtype=float) - self.center.t)
        return (dx < self.R) & (dt < self.R ** 2)


@dataclass(frozen=True)
class SurfaceBox:
    """Vertically elongated box I_R around a graph point; Delta_R is its trace on the graph.

    The vertical half-height is 3*M0*sqrt(n)*R, tall enough that the graph
    cannot escape through the top or bottom over the base cube Q_R.
    """

    center: AmbientPoint
    R: float
    M0: float

    def __post_init__(self):
        if not (self.R > 0):
            raise ValueError("box scale R must be positive")
        if self.M0 < 1.0:
            raise ValueError("M0 is 1 + seminorm, so M0 >= 1")

    @property
    def n(self) -> int:
        return len(self.center.base.x) + 1

    @property
    def half_height(self) -> float:
        return 3.0 * self.M0 * math.sqrt(self.n) * self.R

    @property
    def base_cube(self) -> ParabolicCube:
        return ParabolicCube(self.center.base, self.R)


class GraphFn:
    """A Lip(1,1/2) function sampled on a uniform parabolic grid.

    values[i..., j] = psi(origin.x + i*hx, origin.t + j*ht) with ht = hx^2.
    M0 = 1 + (declared) Lip(1,1/2) seminorm; construction verifies the
    nearest-neighbor discrete seminorm against it.
    """

    def __init__(self, origin: BasePoint, hx: float, values, M0: float, n: int = 2):
        values = np.asarray(values, dtype=float)
        if n < 2:
            raise ValueError("need n >= 2")
        if values.ndim != n:
            raise ValueError(f"values must have {n} axes (lateral x {n-1}, time)")
        if not np.all(np.isfinite(values)):
            raise ValueError("graph samples must be finite")
        if M0 < 1.0:
            raise ValueError("M0 is 1 + seminorm, so M0 >= 1")
        self.origin = origin
        self.hx = float(hx)
        self.ht = float(hx) ** 2
        self.values = values
        self.values.setflags(write=False)
        self.M0 = float(M0)
        self.n = int(n)
        nb = self._neighbor_seminorm()
        if nb > self.M0 - 1.0 + _NEIGHBOR_TOL:
            raise ValueError(
                f"declared M0={M0} too small: neighbor Lip(1,1/2) estimate {nb:.6g}")

    # -- geometry -------------------------------------------------------------

    @property
    def shape(self):
        return self.values.shape

    @property
    def nt(self) -> int:
        return self.values.shape[-1]

    def x_coords(self, axis=0):
        nx = self.values.shape[axis]
        return self.origin.x[axis] + self.hx * np.arange(nx)

    def t_coords(self):
        return self.origin.t + self.ht * np.arange(self.nt)

    def _neighbor_seminorm(self) -> float:
        best = 0.0
        for ax in range(self.n - 1):
            d = np.abs(np.diff(self.values, axis=ax))
            if d.size:
                best = max(best, d.max() / self.hx)
        dt = np.abs(np.diff(self.values, axis=-1))
        if dt.size:
            best = max(best, dt.max() / math.sqrt(self.ht))
        return best

    def value_at(self, x, t):
        """Multilinear interpolation of psi at lateral coords x and times t."""
        x = np.asarray(x, dtype=float)
        t = np.asarray(t, dtype=float)
        if self.n != 2:
            raise NotImplementedError("interpolation implemented for n = 2")
        xi = (x - self.origin.x[0]) / self.hx
        ti = (t - self.origin.t) / self.ht
        xi = np.clip(xi, 0, self.shape[0] - 1)
        ti = np.clip(ti, 0, self.nt - 1)
        i0 = np.clip(np.floor(xi).astype(int), 0, self.shape[0] - 2)
        j0 = np.clip(np.floor(ti).astype(int), 0, self.nt - 2)
        fx = xi - i0
        ft = ti - j0
        v = self.values
        return ((1 - fx) * (1 - ft) * v[i0, j0] + fx * (1 - ft) * v[i0 + 1, j0]
                + (1 - fx) * ft * v[i0, j0 + 1] + fx * ft * v[i0 + 1, j0 + 1])

    def point_on_graph(self, x, t) -> AmbientPoint:
        base = BasePoint(np.atleast_1d(x), t)
        return AmbientPoint(float(self.value_at(base.x[0], t)), base)

    def grid_tol(self) -> float:
        return self.hx + math.sqrt(self.ht)


# ---------------------------------------------------------------------------
# metric operations
# ---------------------------------------------------------------------------

def _split_point(p, t):
    """Normalize the (point) / (spatial magnitude, t) dual calling convention."""
    if t is None:
        if isinstance(p, AmbientPoint):
            return np.linalg.norm(p.spatial), p.t
        if isinstance(p, BasePoint):
            return np.linalg.norm(p.xarr), p.t
        raise TypeError("single-argument form needs a BasePoint or AmbientPoint")
    return np.asarray(p, dtype=float), np.asarray(t, dtype=float)


def pnorm(p, t=None):
    """Parabolic length |X| + |t|^(1/2).

    Either pnorm(point) on a BasePoint/AmbientPoint, or pnorm(spatial, t)
    where `spatial` is the (nonnegative) Euclidean spatial magnitude --
    the vectorized form used in bulk computations.
    """
    r, tt = _split_point(p, t)
    return r + np.sqrt(np.abs(tt))


def pdist_smooth(p, t=None):
    """Smooth parabolic distance: the positive s with |x|^2/s^2 + t^2/s^4 = 1.

    Closed form 2^(-1/2) * (sqrt(|x|^4 + 4 t^2) + |x|^2)^(1/2).  Undefined at
    the origin (raises).
    """
    r, tt = _split_point(p, t)
    # rescale by parabolic homogeneity so the squared terms cannot
    # overflow or underflow: s(m*r, m^2*t) = m * s(r, t)
    m = np.maximum(r, np.sqrt(np.abs(tt)))
    if np.any(m == 0.0):
        raise ValueError("pdist_smooth undefined at the origin")
    rn = r / m
    tn = tt / m / m
    r2 = np.square(rn)
    return m * np.sqrt(0.5 * (np.hypot(r2, 2.0 * tn) + r2))


def project_pi(Y: AmbientPoint) -> AmbientPoint:
    """Drop the graph coordinate: (y0, y, s) -> (0, y, s)."""
    return AmbientPoint(0.0, Y.base)


def corkscrew(X: AmbientPoint, R: float, direction: str, M0: float = None,
              g: GraphFn = None) -> AmbientPoint:
    """Corkscrew point over a graph point: (x0 + 2*M0*R, x, t +/- 2*R^2).

    direction is "plus" (time forward), "minus" (time backward) or "zero"
    (no time shift).  When a GraphFn is supplied, X is checked to sit on the
    graph to grid tolerance and M0 is taken from it.
    """
    if not (R > 0):
        raise ValueError("corkscrew scale R must be positive")
    if g is not None:
        psi = float(g.value_at(X.base.x[0], X.t))
        if abs(X.x0 - psi) > g.grid_tol():
            raise ValueError("corkscrew center is not on the graph")
        M0 = g.M0
    if M0 is None:
        raise ValueError("need M0 (directly or through a GraphFn)")
    if direction == "plus":
        dt = 2.0 * R * R
    elif direction == "minus":
        dt = -2.0 * R * R
    elif direction == "zero":
        dt = 0.0
    else:
        raise ValueError(f"unknown corkscrew direction {direction!r}")
    return AmbientPoint(X.x0 + 2.0 * M0 * R, BasePoint(X.base.x, X.base.t + dt))


def dist_to_graph(X: AmbientPoint, g: GraphFn) -> float:
    """Parabolic distance from a point above the graph down to the graph.

    Uses the bracket (x0 - psi)/M0 <= dist <= x0 - psi to bound the search
    window, then minimizes over grid samples inside it.  Accurate to about
    one grid cell (hx + sqrt(ht)).
    """
    if g.n != 2:
        raise NotImplementedError("implemented for n = 2")
    psi_here = float(g.value_at(X.base.x[0], X.t))
    gap = X.x0 - psi_here
    if gap < 0:
        raise ValueError("point lies below the graph")
    if gap == 0:
        return 0.0
    ub = gap  # vertical candidate
    xs = g.x_coords()
    ts = g.t_coords()
    # candidates can only beat ub inside this window
    selx = np.abs(xs - X.base.x[0]) <= ub
    selt = np.abs(ts - X.base.t) <= ub * ub
    if not selx.any() or not selt.any():
        return ub
    dx = np.abs(xs[selx, None] - X.base.x[0])
    dt = np.abs(ts[None, selt] - X.base.t)
    dpsi = X.x0 - g.values[np.ix_(selx, selt)]
    cand = np.sqrt(dx ** 2 + dpsi ** 2) + np.sqrt(dt)
    return float(min(ub, cand.min()))


def surface_measure(region, g: GraphFn) -> float:
    """Surface measure sigma of a region, as Lebesgue measure of its base projection.

    Accepts a SurfaceBox or ParabolicCube (product formula, exact: for a
    surface box Delta_R this gives 2^n R^(n+1)), or a boolean base-grid mask
    (cell counting).  Regions reaching outside the sampled base grid raise.
    """
    if region is None:
        return 0.0
    if isinstance(region, np.ndarray) and region.dtype == bool:
        if region.shape != g.shape:
            raise ValueError("mask shape does not match the graph grid")
        return float(region.sum()) * g.hx ** (g.n - 1) * g.ht
    if isinstance(region, SurfaceBox):
        cube = region.base_cube
    elif isinstance(region, ParabolicCube):
        cube = region
    else:
        raise TypeError(f"cannot measure region of type {type(region).__name__}")
    xs = g.x_coords()
    ts = g.t_coords()
    c = cube.center
    if (c.x[0] - cube.R < xs[0] - g.hx / 2 or c.x[0] + cube.R > xs[-1] + g.hx / 2
            or c.t - cube.R ** 2 < ts[0] - g.ht / 2 or c.t + cube.R ** 2 > ts[-1] + g.ht / 2):
        raise ValueError("region extends outside the sampled base grid")
    return (2.0 * cube.R) ** (g.n - 1) * 2.0 * cube.R ** 2


def lip_seminorm(g: GraphFn, exhaustive_limit: int = 4096) -> float:
    """Discrete Lip(1,1/2) seminorm: sup |psi(a) - psi(b)| / ||a - b||.

    Exact over all sample pairs when the grid has at most `exhaustive_limit`
    nodes; otherwise all nearest neighbors plus a deterministic geometric
    ladder of long-range offsets.  Always a lower bound for the true seminorm.
    """
    if g.n != 2:
        raise NotImplementedError("implemented for n = 2")
    v = g.values
    nx, nt = v.shape
    if nx * nt <= exhaustive_limit:
        xs = g.x_coords()
        ts = g.t_coords()
        X, T = np.meshgrid(xs, ts, indexing="ij")
        pts = np.column_stack([X.ravel(), T.ravel(), v.ravel()])
        best = 0.0
        for i in range(len(pts) - 1):
            rest = pts[i + 1:]
            dist = np.abs(rest[:, 0] - pts[i, 0]) + np.sqrt(np.abs(rest[:, 1] - pts[i, 1]))
            dv = np.abs(rest[:, 2] - pts[i, 2])
            nz = dist > 0
            if nz.any():
                best = max(best, float((dv[nz] / dist[nz]).max()))
        return best

    def ladder(limit):
        out, step = [], 1
        while step < limit:
            out.append(step)
            step *= 2
        return out

    best = 0.0
    offsets = [(dx, dt) for dx in [0] + ladder(nx) for dt in [0] + ladder(nt)
               if (dx, dt) != (0, 0)]
    for dx, dt in offsets:
        a = v[dx:, dt:] if dt else v[dx:, :]
        b = v[:nx - dx, :nt - dt] if dt else v[:nx - dx, :]
        dist = dx * g.hx + math.sqrt(dt * g.ht)
        dv = np.abs(a - b)
        if dv.size:
            best = max(best, float(dv.max()) / dist)
    return best
