"""Scale-invariant comparability diagnostics for estimated boundary measures.

The lateral boundary window is partitioned into SurfaceCells; an estimated
measure assigns each cell a mass (adjoint or Monte Carlo caloric estimates,
or any synthetic weight) and the cells' base-rectangle areas play the role
of surface measure.  Everything below compares the two set functions across
dyadic scales: per-cell densities, reverse-Holder ratios and dual-exponent
products over cubes, truncated maximal ratios, the good set where both
maximal fields are pinned to a band, the Marcinkiewicz double sum over the
complement of that set, and the John-Stromberg exceedance ladder for
half-order time derivatives.

Surface boxes follow the BoundaryMeasure.of_box rule: radius rho collects
the cells whose centers lie in the open rectangle of half-widths
(rho, rho^2).  All reductions are fixed-order numpy sums, so identical
inputs give bitwise-identical reports regardless of thread count.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .heatfield import SurfaceCells

__all__ = [
    "AInftyParams",
    "CellWeight",
    "GoodSet",
    "box_mask",
    "density_k",
    "density_stderr",
    "scale_to_box",
    "reverse_holder_check",
    "ap_duality_check",
    "truncated_maximal",
    "construct_good_set",
    "marcinkiewicz_check",
    "john_stromberg_check",
]


@dataclass(frozen=True)
class AInftyParams:
    """Comparability exponents: the power-mean exponent q with its measured
    constant, and the dual exponent p whose reciprocal is the mass-gain
    exponent in the subset implication."""

    q: float
    c_star: float
    p: float

    def __post_init__(self):
        if not (self.q > 1.0):
            raise ValueError("the reverse-Holder exponent q must exceed 1")
        if not (self.p > 1.0):
            raise ValueError("the dual exponent p must exceed 1")

    @property
    def theta_exp(self) -> float:
        return 1.0 / self.p


@dataclass(frozen=True)
class CellWeight:
    """A nonnegative set function on surface cells.

    Structurally compatible with BoundaryMeasure where only (cells, mass,
    stderr) are consumed; synthetic weights carry no pole and are not capped
    at unit total mass.
    """

    cells: SurfaceCells
    mass: np.ndarray
    stderr: np.ndarray = None

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=float).ravel()
        object.__setattr__(self, "mass", m)
        if m.shape != (self.cells.count,):
            raise ValueError("one mass entry per cell")
        if not np.all(np.isfinite(m)) or np.any(m < 0):
            raise ValueError("cell masses must be finite and nonnegative")

    @staticmethod
    def surface(cells: SurfaceCells) -> "CellWeight":
        """The surface measure itself, as a weight."""
        return CellWeight(cells, cells.sigma())


def box_parts(cells: SurfaceCells, y_c: float, t_c: float, rho: float):
    """Per-axis center selectors of the surface box Delta_rho(y_c, t_c)."""
    yc, tc = cells.centers()
    return np.abs(yc - y_c) < rho, np.abs(tc - t_c) < rho * rho


def box_mask(cells: SurfaceCells, y_c: float, t_c: float, rho: float) -> np.ndarray:
    """Flattened cell mask of the surface box (same rule as of_box)."""
    my, mt = box_parts(cells, y_c, t_c, rho)
    return (my[:, None] & mt[None, :]).ravel()


# ---------------------------------------------------------------------------
# densities
# ---------------------------------------------------------------------------

def density_k(omega) -> np.ndarray:
    """Per-cell density mass/area of an estimated measure.

    Multiplying back by the cell areas reproduces the masses exactly, so the
    density is a lossless reparametrization of the estimate.
    """
    sig = omega.cells.sigma()
    dead = np.flatnonzero(sig <= 0)
    if dead.size:
        raise ValueError(f"cells without surface measure: {dead.tolist()[:8]}")
    return omega.mass / sig


def density_stderr(omega) -> np.ndarray:
    """Per-cell standard error of the density (zero for exact estimators)."""
    err = getattr(omega, "stderr", None)
    if err is None:
        return np.zeros(omega.cells.count)
    return np.asarray(err, dtype=float).ravel() / omega.cells.sigma()


def scale_to_box(omega, box) -> CellWeight:
    """Rescale a measure so its density averages to one over the given box.

    Estimated measures carry probability normalization, not surface
    normalization; band thresholds on the density only make sense after
    pinning the box average, which this helper does without touching the
    relative cell weights.
    """
    sel = box_mask(omega.cells, *box)
    m = float(omega.mass[sel].sum())
    if m <= 0:
        raise ValueError("measure vanishes on the normalization box")
    lam = float(omega.cells.sigma()[sel].sum()) / m
    err = getattr(omega, "stderr", None)
    return CellWeight(omega.cells, omega.mass * lam,
                      None if err is None else np.asarray(err, dtype=float).ravel() * lam)


# ---------------------------------------------------------------------------
# cube-level checks
# ---------------------------------------------------------------------------

def reverse_holder_check(k, cells: SurfaceCells, sel, q: float,
                         k_stderr=None) -> dict:
    """Ratio of the q-th power mean of k to the q-th power of its mean, both
    area-weighted over the selected cells.

    This is the empirical reverse-Holder constant of the cube: exactly 1 for
    constant k (the power-mean inequality saturates) and strictly larger
    otherwise.  When per-cell stderr is supplied, the ratio's standard error
    is propagated to first order.
    """
    if q <= 1.0:
        raise ValueError("the comparison exponent must exceed 1")
    sel = np.asarray(sel, dtype=bool).ravel()
    if not sel.any():
        raise ValueError("empty cube selection")
    kk = np.asarray(k, dtype=float).ravel()[sel]
    w = cells.sigma()[sel]
    w = w / w.sum()
    mean_k = float(w @ kk)
    mean_kq = float(w @ kk ** q)
    if mean_k <= 0:
        raise ValueError("the measure vanishes on the cube")
    ratio = mean_kq / mean_k ** q
    out = {"q": float(q), "mean": mean_k, "mean_pow": mean_kq,
           "ratio": ratio, "stderr": 0.0}
    if k_stderr is not None:
        se = np.asarray(k_stderr, dtype=float).ravel()[sel]
        grad = ratio * w * (q * kk ** (q - 1.0) / mean_kq - q / mean_k)
        out["stderr"] = float(np.sqrt(((grad * se) ** 2).sum()))
    return out


def ap_duality_check(k, cells: SurfaceCells, sel, p: float,
                     subsets: int = 20, seed: int = 0) -> dict:
    """Dual-exponent product (mean k) * (mean k^(1-p'))^(p-1) over the cube,
    plus a randomized audit of the implication it buys.

    For each of `subsets` random cell subsets E the area fraction of E must
    not exceed C times the mass fraction to the power 1/p, where C is the
    p-th root of the product (Holder applied to 1_E = 1_E k^(1/p) k^(-1/p)).
    Violations can only come from bugs, so the minimal margin is reported
    and flagged rather than silently dropped.
    """
    if p <= 1.0:
        raise ValueError("the dual exponent must exceed 1")
    sel = np.asarray(sel, dtype=bool).ravel()
    idx = np.flatnonzero(sel)
    if idx.size == 0:
        raise ValueError("empty cube selection")
    kk = np.asarray(k, dtype=float).ravel()[idx]
    zero = idx[kk <= 0]
    if zero.size:
        raise ValueError("dual power of the density undefined on zero-mass "
                         f"cells {zero.tolist()[:8]}")
    w = cells.sigma()[idx]
    w = w / w.sum()
    pprime = p / (p - 1.0)
    mean_k = float(w @ kk)
    mean_dual = float(w @ kk ** (1.0 - pprime))
    product = mean_k * mean_dual ** (p - 1.0)
    constant = product ** (1.0 / p)
    rng = np.random.default_rng(seed)
    margins = np.empty(subsets)
    for i in range(subsets):
        keep = rng.random(idx.size) < 0.5
        if not keep.any():
            keep[int(rng.integers(idx.size))] = True
        sig_frac = float(w[keep].sum())
        mass_frac = float((w * kk)[keep].sum()) / mean_k
        margins[i] = constant * mass_frac ** (1.0 / p) - sig_frac
    return {"p": float(p), "product": product, "constant": constant,
            "subsets": int(subsets),
            "subset_margin_min": float(margins.min()),
            "subsets_pass": bool(margins.min() >= -1e-12)}


# ---------------------------------------------------------------------------
# truncated maximal ratios and the good set
# ---------------------------------------------------------------------------

def truncated_maximal(omega, r_max: float, sigma=None, r_min: float = None,
                      r_max_nominal: float = None) -> dict:
    """Truncated maximal ratios of the two set functions at every cell center.

    For each center and each radius of the dyadic ladder r_max, r_max/2, ...
    (down to the cell pitch by default, so the per-cell ratio itself is the
    last rung) the surface box collects cells by the of_box rule; the fields
    are the sups over the ladder of mass/area and of area/mass.  A box
    without mass sends the second field to infinity -- such centers can
    never join a good set.

    `r_max_nominal`, when given, is recorded next to the radius actually
    used; the working radius replaces a product-constant prescription that
    falls below the cell pitch at desk grid sizes.
    """
    cells = omega.cells
    ny = cells.y_edges.size - 1
    nt = cells.nt_cells
    M = omega.mass.reshape(ny, nt)
    S = (cells.sigma() if sigma is None
         else np.asarray(sigma, dtype=float).ravel()).reshape(ny, nt)
    yc, tc = cells.centers()
    if r_min is None:
        pitch_y = float(np.diff(yc).min()) if ny > 1 else math.inf
        pitch_t = math.sqrt(float(np.diff(tc).min())) if nt > 1 else math.inf
        r_min = min(pitch_y, pitch_t)
        if not math.isfinite(r_min):
            r_min = float(r_max)
    ladder = []
    r = float(r_max)
    while r >= r_min * (1.0 - 1e-12):
        ladder.append(r)
        r *= 0.5
    if not ladder:
        ladder = [float(r_max)]
    m_so = np.full((ny, nt), -np.inf)
    m_os = np.full((ny, nt), -np.inf)
    for r in ladder:
        my = (np.abs(yc[:, None] - yc[None, :]) < r).astype(float)
        mt = (np.abs(tc[:, None] - tc[None, :]) < r * r).astype(float)
        box_mass = my @ M @ mt.T
        box_area = my @ S @ mt.T
        ok = box_area > 0
        with np.errstate(divide="ignore", invalid="ignore"):
            rat = np.where(ok, box_mass / box_area, -np.inf)
            inv = np.where(ok & (box_mass > 0), box_area / box_mass,
                           np.where(ok, np.inf, -np.inf))
        m_so = np.maximum(m_so, rat)
        m_os = np.maximum(m_os, inv)
    return {"m_sigma_omega": m_so.ravel(), "m_omega_sigma": m_os.ravel(),
            "ladder": [float(v) for v in ladder], "r_max": float(r_max),
            "r_max_nominal": None if r_max_nominal is None else float(r_max_nominal),
            "cells": cells}


@dataclass
class GoodSet:
    """Cells whose truncated maximal ratios both stay inside [1/M, M].

    Surface cells are indexed by their base rectangles, so the base shadow
    of the good set reuses the same index list; `member` is the per-cell
    indicator, already restricted to the working window.
    """

    cells: SurfaceCells
    member: np.ndarray
    threshold: float
    deficit: float
    window: tuple
    inner_fraction: float = None

    def indices(self) -> np.ndarray:
        return np.flatnonzero(self.member)

    def to_json(self) -> str:
        return json.dumps({
            "threshold": self.threshold,
            "deficit": self.deficit,
            "window": [float(v) for v in self.window],
            "inner_fraction": self.inner_fraction,
            "cells": self.indices().tolist(),
        }, sort_keys=True)


def construct_good_set(maximal: dict, M: float, eps: float, window,
                       inner=None) -> GoodSet:
    """Band both maximal fields into [1/M, M] inside the window box.

    The deficit is the area fraction of the window not retained; it is
    enforced against the budget here because a failing deficit means the
    band must widen, not that downstream stages should limp on.  When an
    inner box is given, the fraction of it left uncovered is recorded as
    well (callers assert their own budget, typically one eighth).
    """
    if M <= 1.0:
        raise ValueError("the density band needs M > 1")
    cells = maximal["cells"]
    f1 = maximal["m_sigma_omega"]
    f2 = maximal["m_omega_sigma"]
    band = (f1 >= 1.0 / M) & (f1 <= M) & (f2 >= 1.0 / M) & (f2 <= M)
    wsel = box_mask(cells, *window)
    member = band & wsel
    sig = cells.sigma()
    denom = float(sig[wsel].sum())
    if denom <= 0:
        raise ValueError("window selects no cells")
    deficit = float(sig[wsel & ~member].sum()) / denom
    inner_fraction = None
    if inner is not None:
        isel = box_mask(cells, *inner)
        iden = float(sig[isel].sum())
        if iden <= 0:
            raise ValueError("inner box selects no cells")
        inner_fraction = float(sig[isel & ~member].sum()) / iden
    if deficit > eps:
        raise ValueError(f"good-set deficit {deficit:.4g} exceeds the budget "
                         f"{eps:.4g}; increase the band threshold M")
    return GoodSet(cells, member, float(M), deficit, tuple(window),
                   inner_fraction)


# ---------------------------------------------------------------------------
# Marcinkiewicz double sum
# ---------------------------------------------------------------------------

def marcinkiewicz_check(cells: SurfaceCells, member, inner, outer) -> dict:
    """Distance-weighted interaction of the good set with its complement.

    value = (1/|inner|) * sum over good centers x in the inner box of
            sigma_x * sum over centers y of (outer box minus good set) of
            dist(y, F) * sigma_y / gap(x, y)^4,

    where gap is the parabolic base distance |dy| + sqrt|dt|, dist(y, F) is
    the smallest gap from y to any good center, and the exponent is one more
    than the parabolic homogeneous dimension of the boundary (one lateral
    direction plus two for time).  Since every x lies in F, dist(y, F) never
    exceeds gap(x, y); the code asserts that exactly.
    """
    member = np.asarray(member, dtype=bool).ravel()
    if member.shape != (cells.count,):
        raise ValueError("one membership flag per cell")
    if not member.any():
        raise ValueError("the good set is empty")
    yc, tc = cells.centers()
    Y = np.repeat(yc, cells.nt_cells)
    T = np.tile(tc, yc.size)
    sig = cells.sigma()
    isel = box_mask(cells, *inner)
    xsel = member & isel
    if not xsel.any():
        raise ValueError("no good cells inside the inner box")
    area_inner = float(sig[isel].sum())
    bsel = box_mask(cells, *outer) & ~member
    out = {"exponent": 4, "inner_cells": int(xsel.sum()),
           "region_cells": int(bsel.sum()), "area_inner": area_inner}
    if not bsel.any():
        out["value"] = 0.0
        return out
    by, bt, bs = Y[bsel], T[bsel], sig[bsel]
    fy, ft = Y[member], T[member]
    dist = np.empty(by.size)
    step = max(1, int(2e6) // max(fy.size, 1))
    for a in range(0, by.size, step):
        sl = slice(a, min(a + step, by.size))
        dist[sl] = (np.abs(by[sl, None] - fy[None, :])
                    + np.sqrt(np.abs(bt[sl, None] - ft[None, :]))).min(axis=1)
    xy, xt, xs = Y[xsel], T[xsel], sig[xsel]
    weighted = dist * bs
    total = 0.0
    step = max(1, int(2e6) // by.size)
    for a in range(0, xy.size, step):
        sl = slice(a, min(a + step, xy.size))
        gaps = (np.abs(xy[sl, None] - by[None, :])
                + np.sqrt(np.abs(xt[sl, None] - bt[None, :])))
        if not np.all(dist[None, :] <= gaps):
            raise AssertionError("distance to the good set exceeded a "
                                 "pairwise gap")
        total += float(xs[sl] @ (weighted[None, :] / gaps ** 4).sum(axis=1))
    out["value"] = total / area_inner
    return out


# ---------------------------------------------------------------------------
# John-Stromberg exceedance ladder
# ---------------------------------------------------------------------------

def john_stromberg_check(field, x, t, box, ladder, localized=None,
                         member=None, candidates: int = 101) -> dict:
    """Minimized median-oscillation exceedance of a base-grid field.

    For each level N of the ladder, the exceedance is the smallest area of
    {|field - C| > N} on the box over candidate constants C; the candidates
    are `candidates` sample quantiles of the field on the box, which bracket
    the true minimizer between neighbors.  Reports the smallest ladder level
    whose exceedance is at most a quarter of the box area, and -- when a
    localized field is supplied -- its box average of absolute values over
    the membered nodes.
    """
    field = np.asarray(field, dtype=float)
    x = np.asarray(x, dtype=float)
    t = np.asarray(t, dtype=float)
    if field.shape != (x.size, t.size):
        raise ValueError("field must be sampled on the (x, t) node grid")
    dx = float(np.diff(x).mean()) if x.size > 1 else 1.0
    dt = float(np.diff(t).mean()) if t.size > 1 else 1.0
    x_c, t_c, R = box
    sel = (np.abs(x - x_c) < R)[:, None] & (np.abs(t - t_c) < R * R)[None, :]
    n_sel = int(sel.sum())
    if n_sel == 0:
        raise ValueError("box selects no nodes")
    vals = field[sel]
    cand = np.quantile(vals, np.linspace(0.0, 1.0, candidates))
    dev = np.sort(np.abs(vals[None, :] - cand[:, None]), axis=1)
    quarter_nodes = n_sel / 4.0
    exceed = []
    n_star = None
    const_at = None
    for N in ladder:
        counts = np.array([n_sel - int(np.searchsorted(dev[i], N, side="right"))
                           for i in range(cand.size)])
        j = int(counts.argmin())
        exceed.append(float(counts[j]) * dx * dt)
        if n_star is None and counts[j] <= quarter_nodes:
            n_star = float(N)
            const_at = float(cand[j])
    out = {"ladder": [float(N) for N in ladder], "exceedance": exceed,
           "area": n_sel * dx * dt, "quarter": n_sel * dx * dt / 4.0,
           "n_star": n_star, "constant": const_at}
    if localized is not None:
        loc = np.asarray(localized, dtype=float)
        if member is None:
            lsel = sel
        else:
            mem = np.asarray(member, dtype=bool)
            if mem.shape != field.shape:
                mem = mem.reshape(field.shape)
            lsel = sel & mem
        out["localized_average"] = float(np.abs(loc[lsel]).sum() / n_sel)
    return out
