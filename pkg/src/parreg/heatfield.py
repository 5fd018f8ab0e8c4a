"""Heat and adjoint-heat solves on graph domains, Green functions, caloric
measure (deterministic and Monte Carlo), and the boundary-estimate checks.

The solver is backward Euler with a 5-point Laplacian on the staircase
interior mask {x0 > psi(y, t)} inside a truncated box.  Backward Euler is an
M-matrix scheme: the discrete maximum principle and positivity hold for every
time step, which the downstream comparability checks rely on.  The time step
of the solver is decoupled from the spatial grid (implicit scheme); the CFL
inequality is only enforced when an explicit scheme is requested.

Caloric measure comes in three mutually checking routes:
  * forward:    solve with indicator data on a boundary patch, read u(Y);
  * adjoint:    march the transposed system from a unit vector at the pole
                and accumulate per-cell boundary flux -- the discrete duality
                is exact, so forward and adjoint agree to rounding;
  * montecarlo: backward Euler-Maruyama paths, bisection refinement of the
                graph crossing along the straight step segment, counter-based
                RNG, every path binned exactly once.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse import csc_matrix
from scipy.sparse.linalg import splu

from .constants import DESK
from .gridio import normal
from .pargeom import AmbientPoint, GraphFn, SurfaceBox, corkscrew, surface_measure

_NEIGHBOR_SHIFTS = ((1, 0), (-1, 0), (0, 1), (0, -1))


# ---------------------------------------------------------------------------
# domain and field containers
# ---------------------------------------------------------------------------

class DomainGrid:
    """Box window around a graph piece with a staircase interior mask.

    Vertical nodes x0 (spacing h = the graph's own lateral spacing), lateral
    nodes y (a subrange of the graph lattice), solver times t (spacing ht,
    chosen independently of h^2 when the scheme is implicit).  The outermost
    node layer is forced exterior so Dirichlet data always has a place to
    live; the graph itself must stay at least two cells above the box floor.
    """

    def __init__(self, g: GraphFn, x0_lo: float, x0_hi: float,
                 y_lo: float, y_hi: float, t_lo: float, t_hi: float,
                 ht: float, scheme: str = "implicit"):
        if scheme not in ("implicit", "explicit"):
            raise ValueError("scheme must be 'implicit' or 'explicit'")
        h = g.hx
        if scheme == "explicit" and ht > h * h / (2.0 * g.n):
            raise ValueError("explicit scheme violates the CFL bound ht <= h^2/(2n)")
        self.g = g
        self.h = h
        self.ht = float(ht)
        self.scheme = scheme
        self.x0 = x0_lo + h * np.arange(int(round((x0_hi - x0_lo) / h)) + 1)
        ys = g.x_coords()
        keep = (ys >= y_lo - 1e-12) & (ys <= y_hi + 1e-12)
        if int(keep.sum()) < 5:
            raise ValueError("lateral window too narrow")
        self.y = ys[keep]
        nt = int(round((t_hi - t_lo) / ht)) + 1
        if nt < 3:
            raise ValueError("time window too short")
        self.t = t_lo + ht * np.arange(nt)
        # psi sampled on (lateral, solver-time) nodes; solver times outside
        # the graph's sampled span clamp to its ends, so graphs that do not
        # depend on time extend to any solver span
        tg = np.clip(self.t, g.origin.t, g.t_coords()[-1])
        if bool(np.all(g.values == g.values[..., :1])):
            # one bitwise-identical column per time keeps the interior mask
            # (and with it the exact-duality route) time-independent
            col = np.asarray(g.value_at(self.y, np.full(self.y.size, tg[0])))
            self.psi = np.repeat(col[:, None], nt, axis=1)
        else:
            self.psi = g.value_at(self.y[:, None], tg[None, :])
        if self.psi.min() < self.x0[0] + 2.0 * h - 1e-12:
            raise ValueError("box floor must sit at least two cells below the graph")
        if self.psi.max() > self.x0[-1] - 2.0 * h + 1e-12:
            raise ValueError("box ceiling must clear the graph by two cells")
        mask = self.x0[:, None, None] > self.psi[None, :, :] + 1e-12
        mask[0, :, :] = mask[-1, :, :] = False
        mask[:, 0, :] = mask[:, -1, :] = False
        self.mask = mask
        self._factors: dict = {}
        self._tindep = bool(np.all(self.psi == self.psi[:, :1]))

    # -- indexing helpers ---------------------------------------------------

    @property
    def shape(self):
        return (self.x0.size, self.y.size, self.t.size)

    def index_of(self, X: AmbientPoint):
        i = int(round((X.x0 - self.x0[0]) / self.h))
        j = int(round((X.base.x[0] - self.y[0]) / self.h))
        k = int(round((X.base.t - self.t[0]) / self.ht))
        if not (0 <= i < self.x0.size and 0 <= j < self.y.size
                and 0 <= k < self.t.size):
            raise ValueError("point outside the domain window")
        return i, j, k

    def vertical_dist(self):
        """x0 - psi on every node (positive strictly inside)."""
        return self.x0[:, None, None] - self.psi[None, :, :]

    def graph_boundary(self, k: int):
        """Exterior nodes at or below the graph with an interior neighbor."""
        m = self.mask[:, :, k]
        below = self.x0[:, None] <= self.psi[None, :, k] + 1e-12
        adj = np.zeros_like(m)
        for di, dj in _NEIGHBOR_SHIFTS:
            adj |= np.roll(m, (di, dj), axis=(0, 1))
        return (~m) & adj & below

    # -- implicit stepper ---------------------------------------------------

    def _factor(self, k: int):
        key = 0 if self._tindep else k
        if key in self._factors:
            return self._factors[key]
        m = self.mask[:, :, key]
        nint = int(m.sum())
        if nint == 0:
            raise ValueError("empty interior slice")
        idx = -np.ones(m.shape, dtype=np.int64)
        idx[m] = np.arange(nint)
        lam = self.ht / (self.h * self.h)
        rows = [np.arange(nint)]
        cols = [np.arange(nint)]
        vals = [np.full(nint, 1.0 + 4.0 * lam)]
        ii, jj = np.nonzero(m)
        for di, dj in _NEIGHBOR_SHIFTS:
            ni, nj = ii + di, jj + dj
            ok = m[ni, nj]          # the frame is exterior, so ni, nj stay in range
            rows.append(idx[ii[ok], jj[ok]])
            cols.append(idx[ni[ok], nj[ok]])
            vals.append(np.full(int(ok.sum()), -lam))
        A = csc_matrix((np.concatenate(vals),
                        (np.concatenate(rows), np.concatenate(cols))),
                       shape=(nint, nint))
        fac = (splu(A), idx, m, lam)
        self._factors[key] = fac
        return fac

    def _boundary_gather(self, m, values2d, lam):
        """lam * sum of `values2d` over exterior neighbors, per interior node."""
        out = np.zeros(m.shape)
        for di, dj in _NEIGHBOR_SHIFTS:
            nb = np.roll(values2d, (-di, -dj), axis=(0, 1))
            nb_ext = ~np.roll(m, (-di, -dj), axis=(0, 1))
            out += np.where(nb_ext, nb, 0.0)
        return lam * out[m]


@dataclass
class FieldGrid:
    """Scalar space-time field on a DomainGrid; read-only once constructed."""

    dom: DomainGrid
    values: np.ndarray
    direction: str = "forward"

    def __post_init__(self):
        if not np.all(np.isfinite(self.values)):
            raise ValueError("field values must be finite")
        self.values.setflags(write=False)

    def value_at(self, X: AmbientPoint) -> float:
        """Trilinear interpolation; clips to the window edge."""
        d = self.dom
        fi = float(np.clip((X.x0 - d.x0[0]) / d.h, 0, d.x0.size - 1))
        fj = float(np.clip((X.base.x[0] - d.y[0]) / d.h, 0, d.y.size - 1))
        fk = float(np.clip((X.base.t - d.t[0]) / d.ht, 0, d.t.size - 1))
        i0 = int(min(math.floor(fi), d.x0.size - 2))
        j0 = int(min(math.floor(fj), d.y.size - 2))
        k0 = int(min(math.floor(fk), d.t.size - 2))
        wi, wj, wk = fi - i0, fj - j0, fk - k0
        acc = 0.0
        for di, wgt_i in ((0, 1 - wi), (1, wi)):
            for dj, wgt_j in ((0, 1 - wj), (1, wj)):
                for dk, wgt_k in ((0, 1 - wk), (1, wk)):
                    acc += wgt_i * wgt_j * wgt_k * self.values[i0 + di, j0 + dj, k0 + dk]
        return float(acc)

    def scaled(self, c: float) -> "FieldGrid":
        return FieldGrid(self.dom, c * self.values, self.direction)


# ---------------------------------------------------------------------------
# boundary cells and measures
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceCells:
    """Partition of the lateral boundary window into (y, t) rectangles."""

    y_edges: np.ndarray
    t_edges: np.ndarray

    def __post_init__(self):
        for e in (self.y_edges, self.t_edges):
            if e.size < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("cell edges must be strictly increasing")

    @property
    def count(self) -> int:
        return (self.y_edges.size - 1) * (self.t_edges.size - 1)

    @property
    def nt_cells(self) -> int:
        return self.t_edges.size - 1

    def sigma(self) -> np.ndarray:
        """Surface measure of each cell (base-rectangle area), flattened."""
        dy = np.diff(self.y_edges)[:, None]
        dt = np.diff(self.t_edges)[None, :]
        return (dy * dt).ravel()

    def centers(self):
        yc = 0.5 * (self.y_edges[1:] + self.y_edges[:-1])
        tc = 0.5 * (self.t_edges[1:] + self.t_edges[:-1])
        return yc, tc

    def locate(self, yv, tv):
        """Flattened cell index for points (yv, tv); -1 when outside."""
        yv = np.asarray(yv, dtype=float)
        tv = np.asarray(tv, dtype=float)
        iy = np.searchsorted(self.y_edges, yv, side="right") - 1
        it = np.searchsorted(self.t_edges, tv, side="right") - 1
        # points exactly on the top edges belong to the last cell
        iy = np.where(yv == self.y_edges[-1], self.y_edges.size - 2, iy)
        it = np.where(tv == self.t_edges[-1], self.t_edges.size - 2, it)
        ok = (iy >= 0) & (iy <= self.y_edges.size - 2) \
            & (it >= 0) & (it <= self.t_edges.size - 2)
        return np.where(ok, iy * self.nt_cells + it, -1)


def default_cells(dom: DomainGrid, ny_cells: int = 16, nt_cells: int = 16) -> SurfaceCells:
    return SurfaceCells(np.linspace(dom.y[0], dom.y[-1], ny_cells + 1),
                        np.linspace(dom.t[0], dom.t[-1], nt_cells + 1))


@dataclass
class BoundaryMeasure:
    """Caloric measure of the surface cells as seen from `pole`.

    `mass` holds the measure of each cell of the lateral graph boundary;
    `side_mass` collects exits through the box walls and ceiling,
    `bottom_mass` the weight left on the initial slice.  Together they
    account for all of the unit mass started at the pole.
    """

    cells: SurfaceCells
    mass: np.ndarray
    pole: AmbientPoint
    estimator: str
    side_mass: float = 0.0
    bottom_mass: float = 0.0
    graph_other_mass: float = 0.0
    stderr: np.ndarray = None
    paths: int = None
    counts: np.ndarray = None

    def __post_init__(self):
        if self.mass.shape != (self.cells.count,):
            raise ValueError("one mass entry per cell")
        if np.any(self.mass < -1e-12):
            raise ValueError("cell masses must be nonnegative")
        if self.total() > 1.0 + 1e-8:
            raise ValueError(f"total mass {self.total()} exceeds 1")

    def total(self) -> float:
        return float(self.mass.sum() + self.side_mass + self.bottom_mass
                     + self.graph_other_mass)

    def graph_mass(self) -> float:
        return float(self.mass.sum() + self.graph_other_mass)

    def sigma(self) -> np.ndarray:
        return self.cells.sigma()

    def of_box(self, y_c: float, t_c: float, rho: float) -> float:
        """Measure of the surface box Delta_rho(y_c, t_c): the sum over cells
        whose centers fall in the open base rectangle of half-widths
        (rho, rho^2).  Meaningful when the cells resolve rho."""
        yc, tc = self.cells.centers()
        sel = ((np.abs(yc[:, None] - y_c) < rho)
               & (np.abs(tc[None, :] - t_c) < rho * rho)).ravel()
        return float(self.mass[sel].sum())

    def stderr_of_box(self, y_c: float, t_c: float, rho: float) -> float:
        """Binomial standard error of of_box (zero for exact estimators)."""
        if self.stderr is None or self.paths is None:
            return 0.0
        p = self.of_box(y_c, t_c, rho)
        return math.sqrt(max(p * (1.0 - p), 0.0) / self.paths)


@dataclass(frozen=True)
class ParabolaRegion:
    """Space-time parabola attached to a vertex point: points whose full
    spatial offset is at most kappa*sqrt(time gap), the time gap being at
    least 16 r^2 in the prescribed direction."""

    vertex: AmbientPoint
    kappa: float
    r: float
    sign: int = +1

    def __post_init__(self):
        if not (self.r > 0 and self.kappa > 0):
            raise ValueError("kappa and r must be positive")
        if self.sign not in (+1, -1):
            raise ValueError("sign must be +1 or -1")

    def contains(self, Y: AmbientPoint) -> bool:
        dt = self.sign * (Y.base.t - self.vertex.base.t)
        if dt < 16.0 * self.r * self.r:
            return False
        dsp = math.hypot(Y.x0 - self.vertex.x0,
                         float(np.linalg.norm(Y.base.xarr - self.vertex.base.xarr)))
        return dsp <= self.kappa * math.sqrt(dt)


def default_kappa(M0: float, n: int = 2) -> float:
    """Aperture wide enough that corkscrew chains stay inside the parabola."""
    return 40.0 * M0 * math.sqrt(n)


# ---------------------------------------------------------------------------
# core solves
# ---------------------------------------------------------------------------

def _march(dom: DomainGrid, data: np.ndarray, direction: str, k0: int) -> np.ndarray:
    """Backward-Euler march from slice k0 to the far end.

    Slices behind the start (in march order) are returned as `data` says; the
    start slice itself is adopted verbatim.  Exterior nodes carry `data` at
    every step (Dirichlet), interior nodes are solved.
    """
    nt = dom.t.size
    u = data.copy()
    steps = range(k0 + 1, nt) if direction == "forward" else range(k0 - 1, -1, -1)
    prev = k0
    for k in steps:
        lu, idx, m, lam = dom._factor(k)
        rhs = u[:, :, prev][m] + dom._boundary_gather(m, data[:, :, k], lam)
        sl = data[:, :, k].copy()
        sl[m] = lu.solve(rhs)
        u[:, :, k] = sl
        prev = k
    return u


def solve_heat(dom: DomainGrid, data: np.ndarray, direction: str = "forward") -> FieldGrid:
    """Solve the heat equation (forward) or its adjoint (backward in time)
    with Dirichlet values and the initial slice taken from `data`."""
    if direction not in ("forward", "adjoint"):
        raise ValueError("direction must be 'forward' or 'adjoint'")
    data = np.asarray(data, dtype=float)
    if data.shape != dom.shape:
        raise ValueError(f"data shape {data.shape} != domain shape {dom.shape}")
    k0 = 0 if direction == "forward" else dom.t.size - 1
    return FieldGrid(dom, _march(dom, data, direction, k0), direction)


def indicator_data(dom: DomainGrid, y_c: float = None, t_c: float = None,
                   rho: float = None, cells: SurfaceCells = None,
                   cell_id: int = None) -> np.ndarray:
    """Data field that is 1 on part of the graph boundary and 0 elsewhere.

    Either an open surface box Delta_rho(y_c, t_c) (half-widths rho, rho^2),
    or -- when `cells` and `cell_id` are given -- exactly one partition cell,
    with membership decided by the same locate() rule the duality route bins
    with, so the two routes see the same node set.
    """
    if (cells is None) == (rho is None):
        raise ValueError("give either a box (y_c, t_c, rho) or a cell id")
    data = np.zeros(dom.shape)
    hit = False
    for k in range(1, dom.t.size):
        gb = dom.graph_boundary(k)
        if cells is not None:
            mem = cells.locate(dom.y, np.full(dom.y.size, dom.t[k])) == cell_id
            sel = gb & mem[None, :]
        else:
            if abs(dom.t[k] - t_c) >= rho * rho:
                continue
            sel = gb & (np.abs(dom.y[None, :] - y_c) < rho)
        if sel.any():
            hit = True
            data[:, :, k][sel] = 1.0
    if not hit:
        raise ValueError("boundary patch does not meet the domain window")
    return data


def caloric_measure_forward(dom: DomainGrid, y_c: float, t_c: float,
                            rho: float) -> FieldGrid:
    """Caloric measure of the surface box Delta_rho(y_c, t_c), for every
    observation point at once (a single forward solve)."""
    return solve_heat(dom, indicator_data(dom, y_c, t_c, rho), "forward")


def caloric_measure_adjoint(dom: DomainGrid, Y: AmbientPoint,
                            cells: SurfaceCells = None) -> BoundaryMeasure:
    """Caloric measure from pole Y by exact discrete duality.

    One march of the transposed stepper from a unit vector at Y.  After m
    solves the vector couples to Dirichlet data at time slice kY - m + 1; the
    flux absorbed by each boundary node there is lam * (sum of the vector
    over that node's interior neighbors), binned into the cell holding
    (y_node, t_slice).  Summing a cell's bins reproduces the forward solve
    with that cell's indicator data exactly (same symmetric matrix, reversed
    order), so the cross-route tests can demand agreement to rounding rather
    than to discretization error.
    """
    if cells is None:
        cells = default_cells(dom)
    if not dom._tindep:
        raise NotImplementedError(
            "the adjoint-flux route needs a time-independent interior mask; "
            "use the forward or Monte Carlo route for moving graphs")
    iY, jY, kY = dom.index_of(Y)
    if not dom.mask[iY, jY, kY]:
        raise ValueError("pole must be an interior node")
    if kY < 1:
        raise ValueError("pole must sit above the initial slice")
    lu, idx, m, lam = dom._factor(0)
    gb = dom.graph_boundary(0)
    adj = np.zeros_like(m)
    for di, dj in _NEIGHBOR_SHIFTS:
        adj |= np.roll(m, (di, dj), axis=(0, 1))
    side = (~m) & adj & ~gb
    gi, gj = np.nonzero(gb)
    si, sj = np.nonzero(side)
    w = np.zeros(int(m.sum()))
    w[idx[iY, jY]] = 1.0
    mass = np.zeros(cells.count)
    graph_other = 0.0
    side_mass = 0.0
    full = np.zeros(m.shape)
    for mm in range(1, kY + 1):
        w = lu.solve(w)
        full[m] = w
        acc = np.zeros(m.shape)
        for di, dj in _NEIGHBOR_SHIFTS:
            nb = np.roll(full, (-di, -dj), axis=(0, 1))
            nb_int = np.roll(m, (-di, -dj), axis=(0, 1))
            acc += np.where(nb_int, nb, 0.0)
        t_k = dom.t[kY - mm + 1]
        flux = lam * acc[gi, gj]
        cid = cells.locate(dom.y[gj], np.full(gj.size, t_k))
        inpart = cid >= 0
        np.add.at(mass, cid[inpart], flux[inpart])
        graph_other += float(flux[~inpart].sum())
        side_mass += lam * float(acc[si, sj].sum())
    bottom = float(w.sum())
    return BoundaryMeasure(cells=cells, mass=mass, pole=Y, estimator="adjoint",
                           side_mass=side_mass, bottom_mass=bottom,
                           graph_other_mass=graph_other)


# ---------------------------------------------------------------------------
# Monte Carlo route
# ---------------------------------------------------------------------------

def caloric_measure_mc(dom: DomainGrid, Y: AmbientPoint, n_paths: int,
                       seed: int, ht_mc: float = 1e-4,
                       cells: SurfaceCells = None, bisect_iters: int = 40,
                       chunk: int = 50000) -> BoundaryMeasure:
    """Caloric measure by backward Euler-Maruyama sampling.

    Each path steps (x0, y) += sqrt(2*ht_mc) * xi while t decreases by ht_mc.
    Exits through the box faces and floor are located exactly on the straight
    step segment; a sign change of x0 - psi along the segment is refined by
    bisection and binned by the crossing's (y, t).  Every path exits (the
    floor is a hard deadline), so integer exit counts conserve the path count
    exactly.  Draws are a pure function of (seed, path, step, coordinate), so
    chunking and thread schedule never change the result.
    """
    if cells is None:
        cells = default_cells(dom)
    if n_paths <= 0 or ht_mc <= 0:
        raise ValueError("need n_paths > 0 and ht_mc > 0")
    g = dom.g
    t_lo = dom.t[0]
    tg_lo, tg_hi = g.origin.t, float(g.t_coords()[-1])
    y_lo, y_hi = float(dom.y[0]), float(dom.y[-1])
    x0_hi = float(dom.x0[-1])
    sig = math.sqrt(2.0 * ht_mc)

    def psi_at(yv, tv):
        return g.value_at(np.clip(yv, y_lo, y_hi), np.clip(tv, tg_lo, tg_hi))

    counts = np.zeros(cells.count, dtype=np.int64)
    n_side = 0
    n_bottom = 0
    n_other = 0
    for start in range(0, n_paths, chunk):
        pid = np.arange(start, min(start + chunk, n_paths), dtype=np.uint64)
        x0 = np.full(pid.size, Y.x0)
        yv = np.full(pid.size, Y.base.x[0])
        tv = np.full(pid.size, Y.base.t)
        if np.any(x0 - psi_at(yv, tv) <= 0):
            raise ValueError("pole must lie strictly above the graph")
        active = np.ones(pid.size, dtype=bool)
        step = 0
        max_steps = int(math.ceil((Y.base.t - t_lo) / ht_mc)) + 2
        while active.any():
            step += 1
            if step > max_steps:
                raise RuntimeError("a path survived past the floor deadline")
            a = np.nonzero(active)[0]
            dx0 = sig * normal(seed, pid[a], np.uint64(step), np.uint64(0))
            dy = sig * normal(seed, pid[a], np.uint64(step), np.uint64(1))
            # earliest box-face / floor exit along the segment, s in (0, 1]
            s_exit = np.full(a.size, np.inf)
            with np.errstate(divide="ignore", invalid="ignore"):
                s_top = np.where(dx0 > 0, (x0_hi - x0[a]) / dx0, np.inf)
                s_rgt = np.where(dy > 0, (y_hi - yv[a]) / dy, np.inf)
                s_lft = np.where(dy < 0, (y_lo - yv[a]) / dy, np.inf)
            for s_face in (s_top, s_rgt, s_lft):
                s_exit = np.minimum(s_exit, np.where(s_face > 0, s_face, np.inf))
            s_bot = (tv[a] - t_lo) / ht_mc
            s_end = np.minimum(1.0, np.minimum(s_exit, s_bot))
            f_end = (x0[a] + s_end * dx0) - psi_at(yv[a] + s_end * dy,
                                                   tv[a] - s_end * ht_mc)
            crossed = f_end <= 0
            if crossed.any():
                c = a[crossed]
                lo_s = np.zeros(c.size)
                hi_s = s_end[crossed]
                dxc, dyc = dx0[crossed], dy[crossed]
                for _ in range(bisect_iters):
                    mid = 0.5 * (lo_s + hi_s)
                    fm = (x0[c] + mid * dxc) - psi_at(yv[c] + mid * dyc,
                                                      tv[c] - mid * ht_mc)
                    above = fm > 0
                    lo_s = np.where(above, mid, lo_s)
                    hi_s = np.where(above, hi_s, mid)
                s_star = 0.5 * (lo_s + hi_s)
                cid = cells.locate(yv[c] + s_star * dyc, tv[c] - s_star * ht_mc)
                inpart = cid >= 0
                np.add.at(counts, cid[inpart], 1)
                n_other += int((~inpart).sum())
                active[c] = False
            rest = ~crossed
            if rest.any():
                r = a[rest]
                hit_side = s_exit[rest] <= np.minimum(1.0, s_bot[rest])
                hit_bot = (~hit_side) & (s_bot[rest] <= 1.0)
                n_side += int(hit_side.sum())
                n_bottom += int(hit_bot.sum())
                done = hit_side | hit_bot
                active[r[done]] = False
                keep = ~done
                x0[r[keep]] += dx0[rest][keep]
                yv[r[keep]] += dy[rest][keep]
                tv[r[keep]] -= ht_mc
    if int(counts.sum()) + n_side + n_bottom + n_other != n_paths:
        raise RuntimeError("exit accounting lost a path")
    mass = counts / float(n_paths)
    stderr = np.sqrt(np.maximum(mass * (1.0 - mass), 0.0) / n_paths)
    return BoundaryMeasure(cells=cells, mass=mass, pole=Y, estimator="montecarlo",
                           side_mass=n_side / float(n_paths),
                           bottom_mass=n_bottom / float(n_paths),
                           graph_other_mass=n_other / float(n_paths),
                           stderr=stderr, paths=n_paths, counts=counts)


# ---------------------------------------------------------------------------
# Green functions
# ---------------------------------------------------------------------------

def green_function(dom: DomainGrid, pole: AmbientPoint,
                   direction: str = "adjoint", clearance: int = 4) -> FieldGrid:
    """Green function of the window with a grid delta (weight 1/h^2) at `pole`.

    direction="forward" marches up in time: the field is the Green function
    with its source argument frozen at the pole, nonzero only after it.
    direction="adjoint" marches down: the field is the Green function with
    its observation argument frozen at the pole, nonzero only before it --
    the orientation the normalized construction uses.  The pole must clear
    the boundary by `clearance` cells in space and in march steps.
    """
    if direction not in ("forward", "adjoint"):
        raise ValueError("direction must be 'forward' or 'adjoint'")
    i, j, k = dom.index_of(pole)
    c = clearance
    win = dom.mask[i - c:i + c + 1, j - c:j + c + 1, k]
    if win.shape != (2 * c + 1, 2 * c + 1) or not win.all():
        raise ValueError(f"pole needs {c} cells of interior clearance")
    if direction == "forward" and k > dom.t.size - 1 - c:
        raise ValueError(f"pole needs {c} steps of forward march room")
    if direction == "adjoint" and k < c:
        raise ValueError(f"pole needs {c} steps of backward march room")
    data = np.zeros(dom.shape)
    data[i, j, k] = 1.0 / (dom.h * dom.h)
    return FieldGrid(dom, _march(dom, data, direction, k), direction)


@dataclass
class NormalizedGreen:
    """Green function and caloric measure from the high corkscrew pole,
    scaled so the reference surface box sets the unit."""

    u: FieldGrid                 # sigma_star * Green(pole, .), adjoint orientation
    omega: BoundaryMeasure       # raw (probability) caloric measure from the pole
    sigma_star: float            # surface measure of the reference box
    pole: AmbientPoint
    X0: AmbientPoint             # surface base point
    R: float
    M1R: float                   # reference box scale
    unit_rate: float             # median of u(A+_rho)/rho over the sampled band
    rate_band: tuple             # (min, max) of the sampled ratios

    def omega_normalized(self, y_c: float, t_c: float, rho: float) -> float:
        return self.sigma_star * self.omega.of_box(y_c, t_c, rho)


def normalized_green(dom: DomainGrid, X0: AmbientPoint, R: float,
                     consts=DESK, cells: SurfaceCells = None,
                     rate_rhos=None) -> NormalizedGreen:
    """Normalized Green function of the window over the surface point X0.

    The reference box has scale M1R = M1_desk * R; the pole is the forward
    corkscrew at scale 4*M1R (its time sits 2*(4*M1R)^2 above X0) and the
    field is sigma(reference box) times the adjoint-orientation Green
    function: a nonnegative field below the pole, vanishing on the graph,
    solving the adjoint equation there.  unit_rate is the median of
    u(A+_rho(X0))/rho over a dyadic band -- the discrete stand-in for the
    unit linear growth the normalization is designed to produce.
    """
    g = dom.g
    M1R = consts.M1_desk * R
    if M1R < 2 * g.hx:
        raise ValueError("reference box below grid resolution")
    box = SurfaceBox(X0, M1R, g.M0)
    sigma_star = surface_measure(box, g)
    pole = corkscrew(X0, 4.0 * M1R, "plus", g=g)
    gf = green_function(dom, pole, "adjoint")
    omega = caloric_measure_adjoint(dom, pole, cells)
    u = gf.scaled(sigma_star)
    if rate_rhos is None:
        lo = max(R / 32.0, 2.0 * g.hx)
        rate_rhos = []
        rho = R / 4.0
        while rho >= lo - 1e-12:
            rate_rhos.append(rho)
            rho /= 2.0
    ratios = []
    for rho in rate_rhos:
        A = corkscrew(X0, rho, "plus", g=g)
        ratios.append(u.value_at(A) / rho)
    ratios = np.array(ratios)
    if ratios.size == 0 or np.any(ratios <= 0):
        raise ValueError("growth-rate band is empty or not positive")
    return NormalizedGreen(u=u, omega=omega, sigma_star=sigma_star, pole=pole,
                           X0=X0, R=R, M1R=M1R,
                           unit_rate=float(np.median(ratios)),
                           rate_band=(float(ratios.min()), float(ratios.max())))


# ---------------------------------------------------------------------------
# boundary-estimate checks
# ---------------------------------------------------------------------------

def _window_nodes(dom: DomainGrid, X0: AmbientPoint, R: float, frac: float = 1.0):
    """Interior nodes of the surface window I_{frac*R}(X0), plus vertical gaps."""
    r = frac * R
    half_h = 3.0 * dom.g.M0 * math.sqrt(dom.g.n) * r
    sel = dom.mask.copy()
    sel &= (np.abs(dom.y[None, :, None] - X0.base.x[0]) < r)
    sel &= (np.abs(dom.t[None, None, :] - X0.base.t) < r * r)
    sel &= np.abs(dom.x0[:, None, None] - X0.x0) < half_h
    return sel, dom.vertical_dist()


def far_field(dom: DomainGrid, X0: AmbientPoint, R: float) -> FieldGrid:
    """Solution with data 0 on the graph patch Delta_2R(X0) and 1 on the rest
    of the parabolic boundary: nonnegative, bounded by one, and vanishing
    exactly where the decay and interior-control checks need it to."""
    data = np.ones(dom.shape)
    for k in range(dom.t.size):
        if abs(dom.t[k] - X0.base.t) < 4.0 * R * R:
            gb = dom.graph_boundary(k)
            patch = gb & (np.abs(dom.y[None, :] - X0.base.x[0]) < 2.0 * R)
            sl = data[:, :, k]
            sl[patch] = 0.0
            data[:, :, k] = sl
    return solve_heat(dom, data, "forward")


def check_holder_decay(field: FieldGrid, X0: AmbientPoint, R: float,
                       min_scales: int = 4) -> dict:
    """Fit sup of the field on dyadic distance bands against the band scale.

    The field must vanish on the graph patch Delta_2R(X0).  Bands are
    rho_m = R * 2^-m with nodes at vertical gap in [rho/sqrt2, rho*sqrt2);
    the log-log slope is the measured decay exponent.
    """
    dom = field.dom
    sel, vert = _window_nodes(dom, X0, R)
    rhos, sups = [], []
    rho = R
    while True:
        band = sel & (vert >= rho / math.sqrt(2.0)) & (vert < rho * math.sqrt(2.0))
        if not band.any():
            break
        s = float(field.values[band].max())
        if s <= 0:
            break
        rhos.append(rho)
        sups.append(s)
        rho /= 2.0
        if rho < dom.h:
            break
    if len(rhos) < min_scales:
        raise ValueError(f"only {len(rhos)} usable scales, need {min_scales}")
    lx, ly = np.log(rhos), np.log(sups)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = float(np.sqrt(np.mean((ly - (slope * lx + intercept)) ** 2)))
    return {"alpha": float(slope), "residual": resid,
            "rhos": rhos, "sups": sups, "scales": len(rhos)}


def check_carleson_estimate(field: FieldGrid, X0: AmbientPoint, R: float) -> dict:
    """sup of the field over the surface window I_R(X0) against its value at
    the forward corkscrew A+_R(X0)."""
    dom = field.dom
    sel, _ = _window_nodes(dom, X0, R)
    if not sel.any():
        raise ValueError("window does not meet the domain interior")
    sup = float(field.values[sel].max())
    at_cork = field.value_at(corkscrew(X0, R, "plus", g=dom.g))
    if at_cork <= 0:
        raise ValueError("field vanishes at the corkscrew point")
    return {"sup": sup, "at_corkscrew": at_cork, "ratio": sup / at_cork}


def check_cfms(dom: DomainGrid, X0: AmbientPoint, R: float,
               pole_mult: float = 4.0, cells: SurfaceCells = None,
               measure: BoundaryMeasure = None) -> dict:
    """Compare scale^n * Green against caloric measure of the matching box.

    The observation pole Y is the forward corkscrew at scale pole_mult*R --
    far enough up to sit inside the forward parabola region of the default
    aperture.  Both corkscrew poles A+-_R(X0) are probed: the Green values
    come from forward marches out of those poles, the measure from the
    exact-duality route out of Y, all on one window.
    """
    g = dom.g
    Y = corkscrew(X0, pole_mult * R, "plus", g=g)
    region = ParabolaRegion(X0, default_kappa(g.M0, g.n), R, +1)
    if measure is None:
        measure = caloric_measure_adjoint(dom, Y, cells)
    om = measure.of_box(X0.base.x[0], X0.base.t, R)
    out = {"pole": Y, "in_parabola": region.contains(Y), "omega": om}
    for tag in ("plus", "minus"):
        A = corkscrew(X0, R, tag, g=g)
        gf = green_function(dom, A, "forward")
        gval = gf.value_at(Y)
        out[f"green_{tag}"] = gval
        out[f"ratio_{tag}"] = (R ** g.n) * gval / om if om > 0 else math.inf
    return out


def check_doubling(measure: BoundaryMeasure, centers, rhos) -> dict:
    """Mass ratios of doubled surface boxes, max/min over centers and scales."""
    rows = []
    for (y_c, t_c) in centers:
        for rho in rhos:
            m1 = measure.of_box(y_c, t_c, rho)
            m2 = measure.of_box(y_c, t_c, 2.0 * rho)
            if m1 <= 0:
                raise ValueError("inner box carries no mass; refine the cells")
            rows.append({"y": y_c, "t": t_c, "rho": rho, "ratio": m2 / m1})
    ratios = [r["ratio"] for r in rows]
    return {"rows": rows, "max_ratio": max(ratios), "min_ratio": min(ratios)}


def check_backward_harnack(fields: dict, X0: AmbientPoint, r: float,
                           g: GraphFn) -> dict:
    """Ratios u(A+_r)/u(A-_r) per named field: bounded both ways exactly when
    the backward-in-time comparison holds for that field."""
    Ap = corkscrew(X0, r, "plus", g=g)
    Am = corkscrew(X0, r, "minus", g=g)
    out = {}
    for name, f in fields.items():
        up, um = f.value_at(Ap), f.value_at(Am)
        if um <= 0 or up <= 0:
            raise ValueError(f"field {name!r} not positive at the corkscrew pair")
        out[name] = {"up": up, "down": um, "ratio": up / um}
    return out


def check_nondegeneracy(field: FieldGrid, X0: AmbientPoint, R: float,
                        etas=(0.05, 0.1, 0.2)) -> dict:
    """Vertical-derivative ratios near the graph, scanned over band widths.

    Over interior nodes of I_{R/4}(X0) with vertical gap below eta*R (and at
    least two cells, so centered differences never touch exterior values):
      rate_ratio  = d_vert u * gap / u      (linear-growth comparison)
      align_ratio = d_vert u / |grad u|     (gradient direction)
    Reports min/max of both per eta; the widest nonempty band drives the
    headline numbers.
    """
    dom = field.dom
    u = field.values
    sel, vert = _window_nodes(dom, X0, R, frac=0.25)
    safe = dom.mask.copy()
    for di, dj in _NEIGHBOR_SHIFTS:
        safe &= np.roll(dom.mask, (di, dj), axis=(0, 1))
    du0 = np.zeros_like(u)
    duy = np.zeros_like(u)
    du0[1:-1, :, :] = (u[2:, :, :] - u[:-2, :, :]) / (2.0 * dom.h)
    duy[:, 1:-1, :] = (u[:, 2:, :] - u[:, :-2, :]) / (2.0 * dom.h)
    out = {"etas": {}}
    for eta in sorted(etas):
        band = sel & safe & (vert < eta * R) & (vert >= 2.0 * dom.h) & (u > 0)
        if not band.any():
            out["etas"][eta] = None
            continue
        g0 = du0[band]
        gy = duy[band]
        gap = vert[band]
        vals = u[band]
        rate = g0 * gap / vals
        grad = np.hypot(g0, gy)
        align = np.divide(g0, grad, out=np.zeros_like(g0), where=grad > 0)
        out["etas"][eta] = {
            "nodes": int(band.sum()),
            "rate_min": float(rate.min()), "rate_max": float(rate.max()),
            "align_min": float(align.min()), "align_max": float(align.max()),
        }
    usable = [e for e, v in out["etas"].items() if v is not None]
    if not usable:
        raise ValueError("no nodes in any nondegeneracy band; widen the window")
    top = out["etas"][max(usable)]
    out.update({"eta": max(usable), "rate_min": top["rate_min"],
                "rate_max": top["rate_max"], "align_min": top["align_min"],
                "align_max": top["align_max"]})
    return out


def check_bourgain(ng: NormalizedGreen) -> dict:
    """Measured mass of the quarter reference box from the normalized pole."""
    q = ng.omega.of_box(ng.X0.base.x[0], ng.X0.base.t, ng.M1R / 4.0)
    ref = ng.omega.of_box(ng.X0.base.x[0], ng.X0.base.t, ng.M1R)
    return {"quarter_mass": q, "reference_mass": ref,
            "fraction": q / ref if ref > 0 else math.inf}
