"""Level sets of the normalized Green function and the geometry built on top
of them: regularized distance to a good set, sawtooth and star regions,
parabolic Whitney covers with a partition of unity, and the two square-
function integrals that quantify how flat the level-set family is.

Conventions used throughout:

  * fields handed to the extraction routines are expected to be scaled to
    unit corkscrew rate (``ng.u.scaled(1/ng.unit_rate)``), so a rung value
    ``r`` is literally the field level looked up in a column;
  * base lattices (for the regularized distance and the mollifier) carry the
    graph's own parabolic coupling ht = hx^2; the solver lattice does not,
    which is why the ambient Whitney floor sits at sqrt(ht) rather than h;
  * analysis windows are desk-truncated in time to ``|s - t0| <= R^2/2``.
    The desk pole sits only 2 R^2 above the anchor, and the field's
    corkscrew rate decays enough across a deeper window that the upper
    rungs stop being attainable in the far columns.  The shrunken window
    keeps every column's peak at least ~1.4x above the top rung.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .constants import DESK, PipelineConstants
from .gridio import dump_json, load_grid, save_grid
from .heatfield import DomainGrid, FieldGrid
from .pargeom import ParabolicCube


__all__ = [
    "LevelSetFamily", "DerivativeBundle", "RegularizedDistance",
    "SawtoothRegion", "StarDomains", "WhitneyCube", "WhitneyCover",
    "ContourBundle", "extract_level_sets", "default_ladder",
    "level_set_derivatives", "square_function_integral",
    "green_square_integral", "whitney_decompose", "regularized_distance",
    "pou_accumulate", "sawtooth_region", "check_h_comparability",
    "contour_functions", "littlewood_paley_check", "parabolic_mollify",
    "save_family", "load_family", "save_distance", "load_distance",
    "cover_to_json", "cover_from_json",
]


# ---------------------------------------------------------------------------
# level-set family
# ---------------------------------------------------------------------------

@dataclass
class LevelSetFamily:
    """Heights psi_r(y, s) of a monotone stack of field level sets.

    ``heights[i, j, k]`` is the vertical coordinate where the field first
    crosses ``rungs[i]`` going up the (y[j], t[k]) column.  ``graph`` holds
    the boundary height itself, which acts as the r = 0 rung for
    interpolation purposes.
    """

    rungs: np.ndarray
    y: np.ndarray
    t: np.ndarray
    heights: np.ndarray
    graph: np.ndarray
    scale: float
    residual_max: float = 0.0

    def __post_init__(self):
        self.rungs = np.asarray(self.rungs, dtype=float)
        if self.rungs.ndim != 1 or self.rungs.size < 2:
            raise ValueError("need at least two rungs")
        if np.any(np.diff(self.rungs) <= 0):
            raise ValueError("rungs must be strictly increasing")
        if self.heights.shape != (self.rungs.size, self.y.size, self.t.size):
            raise ValueError("heights shape mismatch")
        if not np.all(self.heights > self.graph[None, :, :]):
            raise ValueError("a level set dips to or below the graph")
        if np.any(np.diff(self.heights, axis=0) < 0):
            raise ValueError("heights must be nondecreasing in r at every node")

    @property
    def spacing(self) -> tuple:
        return (float(self.y[1] - self.y[0]), float(self.t[1] - self.t[0]))

    def interp_rung(self, r_vals: np.ndarray) -> np.ndarray:
        """Interpolate heights in r (nodewise linear), including the r = 0
        graph rung.  ``r_vals`` may be scalar, (ny, ns), or (m, ny, ns)."""
        r_vals = np.asarray(r_vals, dtype=float)
        squeeze = r_vals.ndim < 3
        if r_vals.ndim == 0:
            r_vals = np.full((1,) + self.graph.shape, float(r_vals))
        elif r_vals.ndim == 2:
            r_vals = r_vals[None]
        grid = np.concatenate([[0.0], self.rungs])
        stack = np.concatenate([self.graph[None], self.heights], axis=0)
        if r_vals.min() < -1e-15 or r_vals.max() > self.rungs[-1] + 1e-12:
            raise ValueError("rung lookup outside [0, top rung]")
        idx = np.clip(np.searchsorted(grid, r_vals, side="right") - 1,
                      0, grid.size - 2)
        g_lo, g_hi = grid[idx], grid[idx + 1]
        w = (r_vals - g_lo) / (g_hi - g_lo)
        lo = np.take_along_axis(stack, idx, axis=0)
        hi = np.take_along_axis(stack, idx + 1, axis=0)
        out = lo * (1.0 - w) + hi * w
        return out[0] if squeeze else out


def _window_indices(dom: DomainGrid, window) -> tuple:
    """Node index sets of an analysis window.

    ``window`` is a ParabolicCube (lateral half R, time half R^2) or an
    explicit (y_lo, y_hi, t_lo, t_hi) tuple -- the pipeline passes tuples
    because of the desk time truncation."""
    if isinstance(window, ParabolicCube):
        y0 = window.center.x[0]
        t0 = window.center.t
        R = window.R
        y_lo, y_hi, t_lo, t_hi = y0 - R, y0 + R, t0 - R * R, t0 + R * R
    else:
        y_lo, y_hi, t_lo, t_hi = window
    jsel = np.where((dom.y >= y_lo - 1e-12) & (dom.y <= y_hi + 1e-12))[0]
    ksel = np.where((dom.t >= t_lo - 1e-12) & (dom.t <= t_hi + 1e-12))[0]
    if jsel.size < 3 or ksel.size < 3:
        raise ValueError("window selects fewer than 3 nodes on an axis")
    return jsel, ksel


def extract_level_sets(u: FieldGrid, window, rungs,
                       residual_tol: float = 1e-8) -> LevelSetFamily:
    """Extract the monotone family of level-set heights over a window.

    Per column the root of ``u = r`` is bracketed by a count over the
    strictly increasing stretch of stored values (equivalent to a bisection
    down to one cell) and then polished with a single Newton step using the
    cell slope; for the piecewise-linear reconstruction of ``u`` that step
    is exact, which is what makes monotonicity in r hold without ties.

    Raises when a rung is not attainable inside the monotone stretch of
    some column, naming the offending column.
    """
    dom = u.dom
    rungs = np.asarray(rungs, dtype=float)
    if np.any(np.diff(rungs) <= 0) or rungs[0] <= 0:
        raise ValueError("rungs must be positive and strictly increasing")
    jsel, ksel = _window_indices(dom, window)
    v = u.values[:, jsel][:, :, ksel]
    m = dom.mask[:, jsel][:, :, ksel]
    nx0 = v.shape[0]
    ifirst = m.argmax(axis=0)
    step = np.arange(nx0 - 1)[:, None, None]
    dips = (np.diff(v, axis=0) <= 0.0) & (step >= ifirst[None])
    peak = np.where(dips.any(axis=0), dips.argmax(axis=0), nx0 - 1)
    v_first = np.take_along_axis(v, ifirst[None], axis=0)[0]
    v_peak = np.take_along_axis(v, peak[None], axis=0)[0]

    if rungs[-1] >= v_peak.min():
        j, k = np.unravel_index(np.argmin(v_peak), v_peak.shape)
        raise ValueError(
            f"rung {rungs[-1]:.6g} exceeds the monotone range of the column "
            f"at (y={dom.y[jsel[j]]:.4g}, t={dom.t[ksel[k]]:.4g}); the stored "
            f"values stop increasing at height {dom.x0[peak[j, k]]:.4g}")
    if rungs[0] <= v_first.max():
        j, k = np.unravel_index(np.argmax(v_first), v_first.shape)
        raise ValueError(
            f"rung {rungs[0]:.6g} falls below the first interior node of the "
            f"column at (y={dom.y[jsel[j]]:.4g}, t={dom.t[ksel[k]]:.4g}); "
            f"raise the ladder floor above {v_first.max():.6g}")

    iall = np.arange(nx0)[:, None, None]
    inwin = (iall >= ifirst[None]) & (iall <= peak[None])
    heights = np.empty((rungs.size, jsel.size, ksel.size))
    res_max = 0.0
    for a, lev in enumerate(rungs):
        cnt = ((v < lev) & inwin).sum(axis=0)
        lo = ifirst + cnt - 1
        v_lo = np.take_along_axis(v, lo[None], axis=0)[0]
        v_hi = np.take_along_axis(v, (lo + 1)[None], axis=0)[0]
        x_lin = dom.x0[lo] + dom.h * (lev - v_lo) / (v_hi - v_lo)
        # one Newton polish with the cell slope; a fixed point of the
        # piecewise-linear reconstruction, kept explicit so the residual
        # below measures something real
        slope = (v_hi - v_lo) / dom.h
        u_lin = v_lo + slope * (x_lin - dom.x0[lo])
        x_new = x_lin - (u_lin - lev) / slope
        heights[a] = x_new
        res = np.abs(u_lin - lev).max()
        res_max = max(res_max, float(res))
        if res >= residual_tol * lev:
            raise ValueError(f"residual {res:.3g} exceeds tolerance at rung {lev:.6g}")
    psi_graph = dom.psi[jsel][:, ksel]
    return LevelSetFamily(rungs=rungs, y=dom.y[jsel].copy(), t=dom.t[ksel].copy(),
                          heights=heights, graph=psi_graph.copy(),
                          scale=float(rungs[-1] * 4.0), residual_max=res_max)


def default_ladder(u: FieldGrid, window, R: float,
                   consts: PipelineConstants = DESK,
                   spacing: Optional[float] = None,
                   floor_mult: float = 1.25) -> np.ndarray:
    """Linear rung ladder (floor, R/Lambda1] fitted to the window.

    The floor clears the first interior cell of every column with a
    ``floor_mult`` margin; the top is the sawtooth ceiling R/Lambda1."""
    dom = u.dom
    jsel, ksel = _window_indices(dom, window)
    m = dom.mask[:, jsel][:, :, ksel]
    v = u.values[:, jsel][:, :, ksel]
    ifirst = m.argmax(axis=0)
    v_first = np.take_along_axis(v, ifirst[None], axis=0)[0]
    hgt = dom.x0[ifirst] - dom.psi[jsel][:, ksel]
    rate = v_first / hgt
    floor_r = floor_mult * 2.0 * dom.h * float(rate.max())
    top = R / consts.Lambda1_desk
    dr = spacing if spacing is not None else dom.h / 2.0
    lo = int(np.ceil(floor_r / dr))
    hi = int(np.floor(top / dr + 1e-9))
    if hi - lo < 1:
        raise ValueError("window too coarse for a two-rung ladder")
    return np.arange(lo, hi + 1) * dr


# ---------------------------------------------------------------------------
# derivatives on the family lattice
# ---------------------------------------------------------------------------

@dataclass
class DerivativeBundle:
    """First derivatives of psi_r by both routes plus the discrepancy."""

    fd: dict
    implicit: dict
    rel_l2: dict

    @property
    def worst(self) -> float:
        return max(self.rel_l2.values())


def _interp_vertical_sub(f: np.ndarray, heights: np.ndarray, dom: DomainGrid,
                         jsel: np.ndarray, ksel: np.ndarray) -> np.ndarray:
    """Evaluate a (possibly sub-blocked) solver-lattice field at the
    level-set points (heights, y[jsel], t[ksel]); linear in the vertical."""
    xi = (heights - dom.x0[0]) / dom.h
    lo = np.clip(xi.astype(int), 0, dom.x0.size - 2)
    w = xi - lo
    fw = f[:, jsel][:, :, ksel]
    return (np.take_along_axis(fw, lo, axis=0) * (1.0 - w)
            + np.take_along_axis(fw, lo + 1, axis=0) * w)


def level_set_derivatives(family: LevelSetFamily, u: FieldGrid,
                          tol: float = 0.10) -> DerivativeBundle:
    """Cross-checked first derivatives of the family.

    Route one: centered differences of the stored heights on the
    (r, y, s) lattice (one-sided at the edges).  Route two: the implicit-
    function formulas evaluated from the field's own finite-difference
    gradient at the level-set points,

        d_r psi = 1 / u_x0,   d_y psi = -u_y / u_x0,   d_s psi = -u_t / u_x0.

    Edge layers are excluded from the comparison.  Raises when the vertical
    derivative degenerates or when the two routes disagree by more than
    ``tol`` in relative L^2 on any component.
    """
    dom = u.dom
    jsel = np.searchsorted(dom.y, family.y)
    ksel = np.searchsorted(dom.t, family.t)
    hy = family.y[1] - family.y[0]
    ht = family.t[1] - family.t[0]
    psi = family.heights
    fd = {
        "r": np.gradient(psi, family.rungs, axis=0),
        "y": np.gradient(psi, hy, axis=1),
        "s": np.gradient(psi, ht, axis=2),
    }
    # differentiate on a haloed sub-block rather than the full solver array
    jlo, jhi = max(jsel[0] - 1, 0), min(jsel[-1] + 2, dom.y.size)
    klo, khi = max(ksel[0] - 1, 0), min(ksel[-1] + 2, dom.t.size)
    sub = u.values[:, jlo:jhi, klo:khi]
    u_x = np.gradient(sub, dom.h, axis=0)
    u_y = np.gradient(sub, dom.h, axis=1)
    u_t = np.gradient(sub, dom.ht, axis=2)
    js, ks = jsel - jlo, ksel - klo
    ux_r = _interp_vertical_sub(u_x, psi, dom, js, ks)
    uy_r = _interp_vertical_sub(u_y, psi, dom, js, ks)
    ut_r = _interp_vertical_sub(u_t, psi, dom, js, ks)
    if ux_r.min() <= 1e-12 * np.abs(u.values).max():
        a = np.unravel_index(np.argmin(ux_r), ux_r.shape)
        raise ValueError(
            f"vertical field derivative degenerates at rung {family.rungs[a[0]]:.4g}, "
            f"(y={family.y[a[1]]:.4g}, t={family.t[a[2]]:.4g})")
    imp = {"r": 1.0 / ux_r, "y": -uy_r / ux_r, "s": -ut_r / ux_r}
    core = (slice(1, -1),) * 3
    rel = {}
    for key in fd:
        diff = (imp[key] - fd[key])[core]
        ref = fd[key][core]
        denom = float(np.sqrt((ref ** 2).sum()))
        rel[key] = float(np.sqrt((diff ** 2).sum()) / denom) if denom > 0 else 0.0
    bundle = DerivativeBundle(fd=fd, implicit=imp, rel_l2=rel)
    if bundle.worst >= tol:
        raise ValueError(f"derivative routes disagree: {rel}")
    return bundle


# ---------------------------------------------------------------------------
# square-function integrals
# ---------------------------------------------------------------------------

def square_function_integral(family: LevelSetFamily,
                             region: Optional[np.ndarray] = None) -> dict:
    """Midpoint quadrature of the level-set square function over the family.

    Integrand: |r d_s psi|^2 + |r D^2_{y,r} psi|^2 + |r^2 D_{y,r} d_s psi|^2
    with measure (dr/r) dy ds.  Edge layers of the lattice are excluded;
    ``region`` (same shape as heights) further restricts the nodes.  The
    value is also returned normalized by R^(n+2) with R = top rung * Lambda1.
    """
    rl = family.rungs
    hy, ht = family.spacing
    psi = family.heights
    p_r = np.gradient(psi, rl, axis=0)
    p_y = np.gradient(psi, hy, axis=1)
    p_s = np.gradient(psi, ht, axis=2)
    p_rr = np.gradient(p_r, rl, axis=0)
    p_ry = np.gradient(p_r, hy, axis=1)
    p_yy = np.gradient(p_y, hy, axis=1)
    p_sr = np.gradient(p_s, rl, axis=0)
    p_sy = np.gradient(p_s, hy, axis=1)
    r3 = rl[:, None, None]
    integ = ((r3 * p_s) ** 2
             + r3 ** 2 * (p_rr ** 2 + 2.0 * p_ry ** 2 + p_yy ** 2)
             + r3 ** 4 * (p_sr ** 2 + p_sy ** 2))
    w = (np.gradient(rl) / rl)[:, None, None] * hy * ht
    keep = np.zeros(psi.shape, bool)
    keep[1:-1, 1:-1, 1:-1] = True
    if region is not None:
        keep &= region
    val = float((integ * w)[keep].sum())
    R = family.scale
    return {
        "value": val,
        "per_Rd": val / R ** 3,
        "pointwise_rds": float(np.abs(r3 * p_s)[keep].max()) if keep.any() else 0.0,
        "nodes": int(keep.sum()),
    }


def green_square_integral(u: FieldGrid, region: np.ndarray, R: float,
                          stride: int = 1) -> dict:
    """Field-weighted square integral u (|d_s u|^2 + |D^2_Y u|^2) over a
    solver-lattice region, chunked over time for memory.

    ``stride`` evaluates the same quadrature on the 2^k-subsampled lattice
    (with correspondingly coarser differences); comparing stride 1 and 2 is
    the refinement-stability check.
    """
    dom = u.dom
    vals = u.values
    if region.shape != vals.shape:
        raise ValueError("region mask must live on the solver lattice")
    h, ht = dom.h * stride, dom.ht * stride
    ks = np.where(region.any(axis=(0, 1)))[0][::stride]
    nt = dom.t.size
    total = 0.0
    for k in ks:
        k0, k1 = max(k - stride, 0), min(k + stride, nt - 1)
        uc = vals[:, :, k]
        du_s = (vals[:, :, k1] - vals[:, :, k0]) / (dom.t[k1] - dom.t[k0])
        uxx = np.zeros_like(uc)
        uyy = np.zeros_like(uc)
        uxy = np.zeros_like(uc)
        s = stride
        uxx[s:-s, :] = (uc[2 * s:, :] - 2 * uc[s:-s, :] + uc[:-2 * s, :]) / h ** 2
        uyy[:, s:-s] = (uc[:, 2 * s:] - 2 * uc[:, s:-s] + uc[:, :-2 * s]) / h ** 2
        uxy[s:-s, s:-s] = (uc[2 * s:, 2 * s:] - uc[2 * s:, :-2 * s]
                           - uc[:-2 * s, 2 * s:] + uc[:-2 * s, :-2 * s]) / (4 * h ** 2)
        sel = region[:, :, k].copy()
        sel[:s, :] = sel[-s:, :] = False
        sel[:, :s] = sel[:, -s:] = False
        sel = sel[::stride, ::stride]
        blk = (uc[::stride, ::stride] * (du_s[::stride, ::stride] ** 2
               + uxx[::stride, ::stride] ** 2
               + 2 * uxy[::stride, ::stride] ** 2
               + uyy[::stride, ::stride] ** 2))
        total += float(blk[sel].sum()) * h * h * ht
    return {"value": total, "per_Rd": total / R ** 3}


# ---------------------------------------------------------------------------
# parabolic Whitney decomposition
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WhitneyCube:
    """Dyadic cube: 2^m nodes per lateral axis, 4^m in time; owns the
    half-open node ranges [lo, hi)."""

    m: int
    L: float
    lo: tuple
    hi: tuple
    at_floor: bool = False


@dataclass
class WhitneyCover:
    cubes: list
    shape: tuple
    spacings: tuple
    theta: float

    def __len__(self):
        return len(self.cubes)

    def counts(self) -> np.ndarray:
        """Node multiplicity; exactly 1 on the region, 0 off it."""
        out = np.zeros(self.shape, np.int32)
        for c in self.cubes:
            out[tuple(slice(a, b) for a, b in zip(c.lo, c.hi))] += 1
        return out

    def overlap_counts(self, factor: float = 10.0) -> np.ndarray:
        """Node multiplicity of the factor-dilated cubes."""
        out = np.zeros(self.shape, np.int32)
        half = (factor - 1.0) / 2.0
        for c in self.cubes:
            sl = []
            for ax, (a, b) in enumerate(zip(c.lo, c.hi)):
                ext = int(np.ceil(half * (b - a)))
                sl.append(slice(max(a - ext, 0), min(b + ext, self.shape[ax])))
            out[tuple(sl)] += 1
        return out

    def distance_ratios(self, comp_mask: np.ndarray,
                        sample: Optional[int] = None,
                        rng: Optional[np.random.Generator] = None) -> dict:
        """Measured two-sided Whitney ratios dist/diam with diam = 2L.

        ``lower`` is dist(2J, complement)/diam over non-floor cubes (the
        acceptance guarantee); ``upper`` is dist(J, complement)/diam over
        all cubes.  Exact parabolic point distances against the complement
        nodes inside a local window; cubes whose window is empty are
        reported at the window radius (a lower bound on their distance).
        """
        nd = comp_mask.ndim
        sp = self.spacings
        cubes = self.cubes
        if sample is not None and sample < len(cubes):
            rng = rng or np.random.default_rng(0)
            cubes = [cubes[i] for i in rng.choice(len(cubes), sample, replace=False)]
        lows, ups = [], []
        for c in cubes:
            diam = 2.0 * c.L
            for which, grow in (("2J", 0.5), ("J", 0.0)):
                lo = [a - int(np.ceil(grow * (b - a))) for a, b in zip(c.lo, c.hi)]
                hi = [b + int(np.ceil(grow * (b - a))) for a, b in zip(c.lo, c.hi)]
                cap = 16.0 * diam / self.theta
                wl = int(np.ceil(cap / sp[0])) + 1
                wt = int(np.ceil(cap ** 2 / sp[-1])) + 1
                win = tuple(slice(max(l - (wl if ax < nd - 1 else wt), 0),
                                  min(h + (wl if ax < nd - 1 else wt), self.shape[ax]))
                            for ax, (l, h) in enumerate(zip(lo, hi)))
                cand = np.argwhere(comp_mask[win])
                if cand.size == 0:
                    d = cap
                else:
                    cand = cand + np.array([w.start for w in win])
                    acc = np.zeros(cand.shape[0])
                    for ax in range(nd - 1):
                        gap = np.maximum.reduce([
                            (lo[ax] - cand[:, ax]).astype(float),
                            (cand[:, ax] - (hi[ax] - 1)).astype(float),
                            np.zeros(cand.shape[0])])
                        acc += (gap * sp[ax]) ** 2
                    gap_t = np.maximum.reduce([
                        (lo[-1] - cand[:, -1]).astype(float),
                        (cand[:, -1] - (hi[-1] - 1)).astype(float),
                        np.zeros(cand.shape[0])])
                    d = float((np.sqrt(acc) + np.sqrt(gap_t * sp[-1])).min())
                if which == "2J":
                    if not c.at_floor:
                        lows.append(d / diam)
                else:
                    ups.append(d / diam)
        return {"lower": (min(lows), max(lows)) if lows else None,
                "upper": (min(ups), max(ups))}


def _block_any(arr: np.ndarray, blocks: Sequence[int]) -> np.ndarray:
    pads = [(0, (-s) % b) for s, b in zip(arr.shape, blocks)]
    a = np.pad(arr, pads, constant_values=False)
    for ax, b in enumerate(blocks):
        sh = a.shape[:ax] + (a.shape[ax] // b, b) + a.shape[ax + 1:]
        a = a.reshape(sh).any(axis=ax + 1)
    return a


def whitney_decompose(mask: np.ndarray, spacings, theta: float = 0.2,
                      outside_is_boundary: bool = False) -> WhitneyCover:
    """Greedy top-down parabolic dyadic subdivision of a node-lattice region.

    A cube of side L (time side L^2) is accepted when no complement node
    lies inside the rectangle hull of the (2L/theta)-expansion of its
    double -- a superset of the parabolic ball, so accepted cubes always
    satisfy the two-sided distance bracket from below.  Cells that cannot
    accept even at one-node size are kept as floor cubes and flagged;
    they hug the boundary at lattice pitch and are exactly the nodes whose
    true Whitney cube would live below the grid.

    ``spacings``: one lateral pitch per axis plus the time pitch last; the
    lattice must satisfy ht = hlat^2 for the floor to be parabolic (pass
    the graph lattice, not the solver lattice, unless the coarse sqrt(ht)
    floor is intended -- then set the lateral pitch to sqrt(ht)).
    """
    if theta >= 1.0 or theta <= 0.0:
        raise ValueError("theta must lie in (0, 1): the expansion must "
                         "exceed the cube itself for acceptance to mean anything")
    nd = mask.ndim
    spacings = tuple(float(s) for s in spacings)
    hlat, htt = spacings[0], spacings[-1]
    shape = mask.shape
    comp = ~mask
    if not mask.any():
        return WhitneyCover(cubes=[], shape=shape, spacings=spacings, theta=theta)
    M = 0
    while (2 ** M < max(shape[:-1])) or (4 ** M < shape[-1]):
        M += 1
    cubes = []
    pend = None
    for m in range(M, -1, -1):
        bl, bt = 2 ** m, 4 ** m
        blocks = [bl] * (nd - 1) + [bt]
        occ = _block_any(mask, blocks)
        near_src = _block_any(comp, blocks)
        L = bl * hlat
        thresh = 2.0 * L / theta
        wl = 1 + int(np.ceil(thresh / (bl * hlat)))
        wt = 1 + int(np.ceil(thresh ** 2 / (bt * htt)))
        size = [2 * wl + 1] * (nd - 1) + [2 * wt + 1]
        near = ndimage.maximum_filter(near_src, size=size, mode="constant", cval=False)
        if outside_is_boundary:
            for ax, w in enumerate([wl] * (nd - 1) + [wt]):
                sl = [slice(None)] * nd
                sl[ax] = slice(0, w)
                near[tuple(sl)] = True
                sl[ax] = slice(near.shape[ax] - w, None)
                near[tuple(sl)] = True
        if pend is None:
            pend = np.ones(occ.shape, bool)
        ok = pend & occ & (~near if m > 0 else True)
        for cell in np.argwhere(ok):
            anchor = tuple(int(c) * b for c, b in zip(cell, blocks))
            hi = tuple(min(a + b, s) for a, b, s in zip(anchor, blocks, shape))
            cubes.append(WhitneyCube(m=m, L=L, lo=anchor, hi=hi,
                                     at_floor=(m == 0 and bool(near[tuple(cell)]))))
        if m > 0:
            nxt = pend & occ & near
            for ax, r in enumerate([2] * (nd - 1) + [4]):
                nxt = np.repeat(nxt, r, axis=ax)
            tgt_blocks = [2 ** (m - 1)] * (nd - 1) + [4 ** (m - 1)]
            tgt_shape = tuple(-(-s // b) for s, b in zip(shape, tgt_blocks))
            pend = nxt[tuple(slice(0, t) for t in tgt_shape)]
    return WhitneyCover(cubes=cubes, shape=shape, spacings=spacings, theta=theta)


# ---------------------------------------------------------------------------
# partition of unity and regularized distance
# ---------------------------------------------------------------------------

def _quartic(z: np.ndarray) -> np.ndarray:
    out = np.zeros_like(z)
    inside = np.abs(z) < 1.0
    out[inside] = (1.0 - z[inside] ** 2) ** 2
    return out


def pou_accumulate(cover: WhitneyCover, support: float = 0.95,
                   weights: Optional[Sequence[float]] = None) -> tuple:
    """Accumulated (sum w_J phi_J, sum phi_J) for quartic bumps supported on
    ``support`` times each cube's double.  With weights = L(J) the quotient
    is the regularized distance; with weights = 1 the quotient is the
    constant 1 wherever any bump is positive (the partition-of-unity sum)."""
    nd = len(cover.shape)
    sp = cover.spacings
    coords = [np.arange(s) * p for s, p in zip(cover.shape, sp)]
    num = np.zeros(cover.shape)
    den = np.zeros(cover.shape)
    for ci, c in enumerate(cover.cubes):
        w = c.L if weights is None else weights[ci]
        half = [support * c.L] * (nd - 1) + [support * c.L ** 2]
        ctr = [(coords[ax][c.lo[ax]] + coords[ax][c.hi[ax] - 1] + sp[ax]) / 2.0
               for ax in range(nd)]
        sl = tuple(slice(max(int(np.floor((ctr[ax] - half[ax]) / sp[ax])), 0),
                         min(int(np.ceil((ctr[ax] + half[ax]) / sp[ax])) + 1,
                             cover.shape[ax]))
                   for ax in range(nd))
        phi = np.ones([s.stop - s.start for s in sl])
        for ax in range(nd):
            z = (coords[ax][sl[ax]] - ctr[ax]) / half[ax]
            shp = [1] * nd
            shp[ax] = z.size
            phi = phi * _quartic(z).reshape(shp)
        num[sl] += w * phi
        den[sl] += phi
    return num, den


@dataclass
class RegularizedDistance:
    """Smoothed distance to the good set F: h = sum_J L(J) eta_J over the
    Whitney cubes of the complement; identically zero on F because the bump
    supports stay strictly inside the doubled cubes."""

    values: np.ndarray
    cover: Optional[WhitneyCover]   # None after a file round-trip
    F_mask: np.ndarray
    spacings: tuple

    @property
    def sup(self) -> float:
        return float(self.values.max()) if self.values.size else 0.0

    def derivative_constants(self) -> dict:
        """Measured scale-invariant derivative bounds at orders k <= 2:
        max of dist^{k-1} |grad^k h| and dist^{2k-1} |d_t^k h| over the
        region where h > 0, using h itself as the distance proxy
        (comparable to the true distance by construction)."""
        h = self.values
        hy, ht = self.spacings[0], self.spacings[-1]
        live = h > 0
        if not live.any():
            return {k: 0.0 for k in ("grad1", "grad2", "dt1", "dt2")}
        d1 = np.gradient(h, hy, axis=0)
        d2 = np.gradient(d1, hy, axis=0)
        t1 = np.gradient(h, ht, axis=-1)
        t2 = np.gradient(t1, ht, axis=-1)
        return {
            "grad1": float(np.abs(d1[live]).max()),
            "grad2": float((h[live] * np.abs(d2[live])).max()),
            "dt1": float((h[live] * np.abs(t1[live])).max()),
            "dt2": float((h[live] ** 3 * np.abs(t2[live])).max()),
        }


def regularized_distance(F_mask: np.ndarray, spacings,
                         theta: float = 0.2,
                         support: float = 0.95) -> RegularizedDistance:
    """Whitney-cube construction of the regularized distance to F.

    ``F_mask`` True marks good-set nodes on the graph's base lattice.  The
    complement is Whitney-decomposed, each cube contributes L(J) eta_J, and
    the result vanishes identically on F (verified a posteriori by the
    callers, but structurally guaranteed: supports never reach F nodes)."""
    F_mask = np.asarray(F_mask, dtype=bool)
    if not F_mask.any():
        raise ValueError("good set is empty; the distance would be infinite")
    omega = ~F_mask
    cover = whitney_decompose(omega, spacings, theta=theta)
    if not omega.any():
        return RegularizedDistance(values=np.zeros(F_mask.shape), cover=cover,
                                   F_mask=F_mask, spacings=tuple(spacings))
    num, den = pou_accumulate(cover, support=support)
    h = np.zeros(F_mask.shape)
    pos = den > 0
    h[pos] = num[pos] / den[pos]
    h[F_mask] = 0.0
    return RegularizedDistance(values=h, cover=cover, F_mask=F_mask,
                               spacings=tuple(spacings))


# ---------------------------------------------------------------------------
# sawtooth and star regions
# ---------------------------------------------------------------------------

@dataclass
class StarDomains:
    """Four nested graph-neighborhood domains over growing lateral boxes.

    Level k in 0..3 uses the offset c1 h / 2^k above the graph, the lateral
    half-width mults[k] * R, and the vertical cap 2 M0 mults[k] R; all four
    share the desk-truncated time window.  ``masks`` (when materialized on
    a solver lattice) are nested increasing in k."""

    offsets: tuple
    mults: tuple
    caps: tuple          # vertical extents per unit M0 R; grow with mults
    R: float
    t_center: float
    t_half: float
    masks: Optional[list] = None

    def materialize(self, dom: DomainGrid, h_on_dom: np.ndarray) -> list:
        """Indicators on a solver lattice; h_on_dom is the regularized
        distance sampled at (dom.y, dom.t).  The nesting shells exist in
        every direction: offsets shrink while boxes and caps grow.  Caps
        stay below the pole height 2 M0 R, where the field's linear growth
        gives out."""
        out = []
        M0 = dom.g.M0
        for off, mult, cap in zip(self.offsets, self.mults, self.caps):
            lat = np.abs(dom.y)[None, :, None] <= mult * self.R + 1e-12
            tim = np.abs(dom.t - self.t_center)[None, None, :] <= self.t_half + 1e-12
            gap = dom.x0[:, None, None] - dom.psi[None, :, :]
            band = ((gap > off * h_on_dom[None, :, :] + 1e-12)
                    & (gap < cap * M0 * self.R))
            out.append(lat & tim & band & dom.mask)
        self.masks = out
        return out


@dataclass
class SawtoothRegion:
    """Indicator of {h(y,s) < r < R/Lambda1} on the family lattice, plus the
    nested star domains whose first member contains the level-set image."""

    mask: np.ndarray
    family: LevelSetFamily
    h_vals: np.ndarray
    R: float
    ceiling: float
    c1: float
    stars: StarDomains

    def image_in_first_star(self) -> bool:
        """Every sawtooth point (r, y, s) maps to (psi_r(y,s), y, s); check
        the image height clears the first star offset psi + c1 h."""
        lift = np.broadcast_to(
            self.family.graph[None] + self.c1 * self.h_vals[None],
            self.family.heights.shape)
        return bool(np.all(self.family.heights[self.mask] > lift[self.mask]))


def sawtooth_region(h_vals: np.ndarray, family: LevelSetFamily, R: float,
                    c1: float, consts: PipelineConstants = DESK,
                    t_half: Optional[float] = None) -> SawtoothRegion:
    """Sawtooth region over a good set together with its star domains.

    ``h_vals`` is the regularized distance sampled on the family's (y, t)
    nodes.  Precondition: sup h within the window must not exceed the desk
    budget R/(8 Lambda1); a violation means the good set is too sparse at
    this scale and the caller should shrink the band threshold epsilon
    (grow F) or reduce R.
    """
    if h_vals.shape != family.graph.shape:
        raise ValueError("h must be sampled on the family lattice")
    budget = consts.suph_budget_desk * R
    if h_vals.max() > budget:
        raise ValueError(
            f"sup h = {h_vals.max():.4g} exceeds the window budget {budget:.4g}; "
            "shrink the good-set band threshold epsilon or reduce R")
    if not (np.isfinite(c1) and c1 > 0.0):
        # at desk scale the measured lift constant can exceed 1 (the field's
        # corkscrew rate is only unit within a band), so only positivity is
        # structural
        raise ValueError("c1 must be a measured positive constant; "
                         "run check_h_comparability")
    ceiling = R / consts.Lambda1_desk
    r3 = family.rungs[:, None, None]
    mask = (h_vals[None] < r3) & (r3 < ceiling)
    offsets = tuple(c1 / 2.0 ** k for k in range(4))
    # the boxes' vertical extents carry the same divisor as the pole height,
    # so each stays below the level where the field's linear growth turns over
    caps = tuple(2.0 * consts.M1_desk * m for m in consts.star_mults_desk)
    stars = StarDomains(offsets=offsets, mults=tuple(consts.star_mults_desk),
                        caps=caps, R=R,
                        t_center=float(0.5 * (family.t[0] + family.t[-1])),
                        t_half=float(t_half if t_half is not None
                                     else 0.5 * (family.t[-1] - family.t[0])))
    return SawtoothRegion(mask=mask, family=family, h_vals=h_vals, R=R,
                          ceiling=ceiling, c1=c1, stars=stars)


def check_h_comparability(family: LevelSetFamily, h_vals: np.ndarray) -> tuple:
    """Band of (psi(h(y); y) - psi(y)) / h(y) over {h > 0}.

    The lower edge is the measured c1: how much of the regularized distance
    the level-set lift retains.  Interpolation in r includes the r = 0
    graph rung, so h below the ladder floor is handled by the first-rung
    slope rather than extrapolation."""
    live = h_vals > 0
    if not live.any():
        raise ValueError("h vanishes identically; nothing to compare")
    lifted = family.interp_rung(np.where(live, h_vals, 0.0))
    ratio = (lifted[live] - family.graph[live]) / h_vals[live]
    return float(ratio.min()), float(ratio.max())


# ---------------------------------------------------------------------------
# parabolic mollifier and contour functions
# ---------------------------------------------------------------------------

def _plateau(z: np.ndarray) -> np.ndarray:
    a = np.abs(z)
    out = np.zeros_like(a)
    out[a <= 0.5] = 1.0
    taper = (a > 0.5) & (a < 1.0)
    out[taper] = (1.0 - (2.0 * (a[taper] - 0.5)) ** 2) ** 2
    return out


def parabolic_mollify(f: np.ndarray, r: float, spacings) -> np.ndarray:
    """P_r f: separable parabolic approximate identity, lateral width r and
    time width r^2, from an even plateau profile (1 on [-1/2, 1/2], quartic
    taper to 0 at 1).  Kernels are sampled on the lattice and normalized to
    unit mass, so constants are reproduced exactly; below one lattice pitch
    an axis degenerates to the identity."""
    if r <= 0:
        return np.asarray(f, dtype=float).copy()
    f = np.asarray(f, dtype=float)
    nd = f.ndim
    out = f.copy()
    for ax in range(nd):
        sp = spacings[ax]
        width = r if ax < nd - 1 else r * r
        n = int(np.ceil(width / sp))
        if n < 1:
            continue
        kern = _plateau(np.arange(-n, n + 1) * sp / width)
        s = kern.sum()
        if s <= 0:
            continue
        kern = kern / s
        mode = "constant" if ax < nd - 1 else "nearest"
        out = ndimage.convolve1d(out, kern, axis=ax, mode=mode, cval=0.0)
    return out


@dataclass
class ContourBundle:
    """Graph-following contour psi^h and its mollified-lift family.

    ``psi_tilde[i]`` is the height of the level set at the composite rung
    contour_rungs[i] + P_{gamma r} h; row 0 is the exact r = 0 case, which
    reproduces psi^h by the same code path."""

    contour_rungs: np.ndarray
    psi_h: np.ndarray
    psi_tilde: np.ndarray
    composite: np.ndarray
    gamma: float

    def lemma_bounds(self, hy: float, ht: float, window=None) -> dict:
        """Measured sup of |r d_r^2 psi~|, |r d_t psi~|, |r^2 d_t d_r psi~|
        over the positive rungs (edges excluded), plus the L^2 versions
        normalized by the window measure."""
        rl = self.contour_rungs
        pt = self.psi_tilde
        d_r = np.gradient(pt, rl, axis=0)
        d_rr = np.gradient(d_r, rl, axis=0)
        d_t = np.gradient(pt, ht, axis=2)
        d_tr = np.gradient(d_t, rl, axis=0)
        r3 = rl[:, None, None]
        q1 = np.abs(r3 * d_rr)
        q2 = np.abs(r3 * d_t)
        q3 = np.abs(r3 ** 2 * d_tr)
        core = np.zeros(pt.shape, bool)
        core[1:-1, 1:-1, 1:-1] = True
        if window is not None:
            core &= window
        area = max(core.any(axis=0).sum() * hy * ht, 1e-300)
        w = (np.gradient(rl) / np.maximum(rl, rl[1]))[:, None, None] * hy * ht
        return {
            "sup": float(np.maximum(np.maximum(q1, q2), q3)[core].max()),
            "l2_per_area": float(((q1 ** 2 + q2 ** 2 + q3 ** 2) * w)[core].sum() / area),
        }


def contour_functions(family: LevelSetFamily, h_vals: np.ndarray, R: float,
                      consts: PipelineConstants = DESK,
                      n_rungs: int = 40,
                      gamma: Optional[float] = None) -> ContourBundle:
    """psi^h and the mollified composite family on r in [0, 10 lam R].

    Preconditions checked: the mollified lift must stay within a quarter
    rung of h (|h - P_{gamma r} h| <= r/4), and every composite rung must
    stay below the sawtooth ceiling R/Lambda1 -- both are consequences of
    the admissibility rule lam = 1/(16 Lambda1) at desk scale and fail
    loudly if the caller passes an h that is too rough for its window."""
    gamma = consts.gamma_desk if gamma is None else gamma
    hy, ht = family.spacing
    r_top = 10.0 * consts.lam_desk * R
    rl = np.linspace(0.0, r_top, n_rungs + 1)
    comp = np.empty((rl.size,) + h_vals.shape)
    for i, r in enumerate(rl):
        ph = parabolic_mollify(h_vals, gamma * r, (hy, ht))
        if r > 0:
            drift = np.abs(h_vals - ph).max()
            if drift > 0.25 * r + 1e-12:
                raise ValueError(
                    f"mollified lift drifts {drift:.4g} > r/4 at r = {r:.4g}; "
                    "h is too rough for the admissibility rule")
        comp[i] = r + ph
    top_ok = comp.max() < R / consts.Lambda1_desk
    if not top_ok:
        raise ValueError("composite rung exceeds the sawtooth ceiling; "
                         "the lam rule is violated for this window")
    if comp.max() > family.rungs[-1] + 1e-12:
        raise ValueError("composite rung exceeds the extracted ladder; "
                         "extend the family to R/Lambda1 before calling")
    psi_tilde = family.interp_rung(comp.reshape(rl.size, *h_vals.shape))
    psi_h = psi_tilde[0]
    return ContourBundle(contour_rungs=rl, psi_h=psi_h, psi_tilde=psi_tilde,
                         composite=comp, gamma=gamma)


# ---------------------------------------------------------------------------
# file interfaces (shared grid format / cover JSON)
# ---------------------------------------------------------------------------

def save_family(path, family: LevelSetFamily) -> None:
    """Family in the shared grid format: the graph rides along as the r = 0
    layer, the rung ladder goes in the header."""
    stack = np.concatenate([family.graph[None], family.heights], axis=0)
    meta = {"rungs": [float(r) for r in family.rungs],
            "y0": float(family.y[0]), "hy": float(family.y[1] - family.y[0]),
            "t0": float(family.t[0]), "ht": float(family.t[1] - family.t[0]),
            "scale": family.scale, "residual_max": family.residual_max}
    save_grid(path, "levelset_family", meta, stack)


def load_family(path) -> LevelSetFamily:
    kind, meta, stack = load_grid(path)
    if kind != "levelset_family":
        raise ValueError(f"expected a level-set family file, got kind={kind!r}")
    rungs = np.asarray(meta["rungs"])
    ny, ns = stack.shape[1:]
    return LevelSetFamily(
        rungs=rungs, y=meta["y0"] + meta["hy"] * np.arange(ny),
        t=meta["t0"] + meta["ht"] * np.arange(ns),
        heights=stack[1:], graph=stack[0], scale=meta["scale"],
        residual_max=meta["residual_max"])


def save_distance(path, rd: RegularizedDistance) -> None:
    """h and its good set in the shared grid format (two stacked layers);
    the Whitney cover itself travels separately as JSON when needed."""
    stack = np.stack([rd.values, rd.F_mask.astype(float)])
    save_grid(path, "regularized_distance",
              {"spacings": [float(s) for s in rd.spacings]}, stack)


def load_distance(path) -> RegularizedDistance:
    kind, meta, stack = load_grid(path)
    if kind != "regularized_distance":
        raise ValueError(f"expected a distance file, got kind={kind!r}")
    return RegularizedDistance(values=stack[0], cover=None,
                               F_mask=stack[1] > 0.5,
                               spacings=tuple(meta["spacings"]))


def cover_to_json(cover: WhitneyCover, path=None) -> str:
    return dump_json({
        "theta": cover.theta, "shape": list(cover.shape),
        "spacings": list(cover.spacings),
        "cubes": [{"m": c.m, "L": c.L, "lo": list(c.lo), "hi": list(c.hi),
                   "at_floor": c.at_floor} for c in cover.cubes],
    }, path)


def cover_from_json(text: str) -> WhitneyCover:
    d = json.loads(text)
    cubes = [WhitneyCube(m=c["m"], L=c["L"], lo=tuple(c["lo"]),
                         hi=tuple(c["hi"]), at_floor=c["at_floor"])
             for c in d["cubes"]]
    return WhitneyCover(cubes=cubes, shape=tuple(d["shape"]),
                        spacings=tuple(d["spacings"]), theta=d["theta"])


# ---------------------------------------------------------------------------
# Littlewood-Paley check for the mollified distance
# ---------------------------------------------------------------------------

def littlewood_paley_check(h_vals: np.ndarray, spacings, center: tuple,
                           ell: float, min_pitch_mult: float = 2.0) -> dict:
    """Dyadic-in-r square integrals of the mollifier acting on h over one
    parabolic cube (lateral half ell, time half ell^2), normalized by the
    cube measure:

      (i)   |(P_r - I) h / r|^2
      (ii)  |d_r P_r h|^2
      (iii) |r d_t P_r h|^2 + |r grad^2 P_r h|^2

    integrated with dr/r from the cube scale down to the lattice pitch
    (below which P_r is the identity and the integrand vanishes).  Also
    reports the pointwise sup of |(P_r - I) h| / r."""
    hy, ht = spacings[0], spacings[-1]
    j0, k0 = center
    jw, kw = int(round(ell / hy)), int(round(ell * ell / ht))
    if jw < 1 or kw < 1:
        raise ValueError("cube below lattice pitch")
    Q = (slice(j0 - jw, j0 + jw + 1), slice(k0 - kw, k0 + kw + 1))
    if Q[0].start < 0 or Q[1].start < 0 or Q[0].stop > h_vals.shape[0] \
            or Q[1].stop > h_vals.shape[1]:
        raise ValueError("cube sticks out of the lattice")
    area = (2 * ell) * (2 * ell * ell)
    rs = ell / 2.0 ** np.arange(0, 40)
    rs = rs[rs >= min_pitch_mult * hy]
    dlog = np.log(2.0)
    out = {"i": 0.0, "ii": 0.0, "iii": 0.0, "pointwise": 0.0, "rungs": len(rs)}
    eps = 0.02
    for r in rs:
        ph = parabolic_mollify(h_vals, r, spacings)
        pp = parabolic_mollify(h_vals, r * (1 + eps), spacings)
        pm = parabolic_mollify(h_vals, r * (1 - eps), spacings)
        g1 = (ph - h_vals) / r
        g2 = (pp - pm) / (2 * eps * r)
        lap = np.gradient(np.gradient(ph, hy, axis=0), hy, axis=0)
        dtp = np.gradient(ph, ht, axis=1)
        out["i"] += float((g1[Q] ** 2).mean()) * area * dlog
        out["ii"] += float((g2[Q] ** 2).mean()) * area * dlog
        out["iii"] += float(((r * lap[Q]) ** 2 + (r * dtp[Q]) ** 2).mean()) * area * dlog
        out["pointwise"] = max(out["pointwise"], float(np.abs(g1[Q]).max()))
    for key in ("i", "ii", "iii"):
        out[key] /= area
    return out
