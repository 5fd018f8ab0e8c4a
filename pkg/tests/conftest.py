"""Shared session fixtures for the level-set and acceptance suites.

Everything expensive lives here: the three scaled Green-field solves over
the flat stack, the unit-slope kink solve, and the Whitney lattices reused
by several modules.  All of it is deterministic, so session scope is safe.
"""

import numpy as np
import pytest

from parreg.constants import DESK
from parreg.families import flat_graph, kink_graph
from parreg.heatfield import DomainGrid, FieldGrid, normalized_green
from parreg.levelset import (
    StarDomains,
    default_ladder,
    extract_level_sets,
    regularized_distance,
    whitney_decompose,
)
from parreg.pargeom import AmbientPoint, BasePoint

H = 1.0 / 64.0
T0 = 0.1
X0 = AmbientPoint(0.0, BasePoint((0.0,), T0))


def green_pack(g, R, ceiling_mult=6.0):
    """Normalized adjoint field anchored at X0 plus its default ladder.

    The box extends ceiling_mult*R above the floor, 4.2*R sideways and
    (-1.05, +2.1)*R^2 in time, enough air for the scale-R corkscrew and the
    centered extraction window (+-2R, +-R^2/2).
    """
    dom = DomainGrid(g, -2.0 * g.hx, ceiling_mult * R, -4.2 * R, 4.2 * R,
                     T0 - 1.05 * R * R, T0 + 2.1 * R * R, ht=1.0 / 64.0)
    ng = normalized_green(dom, X0, R)
    u = ng.u.scaled(1.0 / ng.unit_rate)
    window = (-2.0 * R, 2.0 * R, T0 - 0.5 * R * R, T0 + 0.5 * R * R)
    rungs = default_ladder(u, window, R)
    family = extract_level_sets(u, window, rungs)
    return {"dom": dom, "u": u, "window": window, "rungs": rungs,
            "family": family, "unit_rate": ng.unit_rate, "R": R}


@pytest.fixture(scope="session")
def flat_stack():
    """One flat graph, three extraction scales on a shared h = 1/64 lattice."""
    g = flat_graph(nx=576, nt=704, hx=H)
    return {R: green_pack(g, R) for R in (1.0, 0.5, 0.25)}


@pytest.fixture(scope="session")
def kink_pack():
    """Unit-slope corner graph at R = 0.5; the ceiling sits at 12R so the
    pole keeps the same absolute air as the flat R = 1 run."""
    g = kink_graph(slope=1.0, nx=288, nt=2624, hx=H)
    return green_pack(g, 0.5, ceiling_mult=12.0)


@pytest.fixture(scope="session")
def surrogate_pack():
    """u = max(x0, 0) on a coarse box: heights land on binary-exact rungs,
    every curvature term vanishes identically."""
    g = flat_graph(nx=96, nt=96, hx=1.0 / 32.0)
    dom = DomainGrid(g, -2.0 / 32.0, 1.0, -0.6, 0.6, 0.01, 0.08, ht=1.0 / 256.0)
    vals = np.broadcast_to(np.maximum(dom.x0, 0.0)[:, None, None],
                           (dom.x0.size, dom.y.size, dom.t.size)).copy()
    u = FieldGrid(dom, vals, "adjoint")
    rungs = np.arange(4, 15) / 64.0
    window = (-0.5, 0.5, 0.02, 0.07)
    family = extract_level_sets(u, window, rungs)
    return {"dom": dom, "u": u, "window": window, "rungs": rungs,
            "family": family}


@pytest.fixture(scope="session")
def slot_pack(flat_stack):
    """Distance to the complement of a five-row slot near y = 0.3, sampled
    onto the R = 1 family lattice as a time-constant h field."""
    ny, ns = 257, 4097
    yb = (np.arange(ny) - 128) * H
    F = np.ones((ny, ns), dtype=bool)
    j0 = int(np.argmin(np.abs(yb - 0.3)))
    F[j0 - 2: j0 + 3, :] = False
    rd = regularized_distance(F, (H, H * H))
    fam = flat_stack[1.0]["family"]
    col = rd.values[np.searchsorted(yb, fam.y), ns // 2]
    h_fam = np.tile(col[:, None], (1, fam.t.size))
    return {"F": F, "rd": rd, "h": h_fam, "yb": yb, "j0": j0}


@pytest.fixture(scope="session")
def halfgrid_pack():
    """Distance to the lower half y <= 0 of the base lattice: a big
    complement with cubes at several dyadic levels."""
    ny, ns = 257, 4097
    F = np.zeros((ny, ns), dtype=bool)
    F[:129, :] = True
    rd = regularized_distance(F, (H, H * H))
    return {"F": F, "rd": rd}


@pytest.fixture(scope="session")
def ambient_pack():
    """Space-time Whitney cover of the region above the flat graph at
    R = 0.25, together with the nested star masks driven by a slot h.

    The cover is built over the raw staircase (x0 > psi), not the solver
    mask, because the solver forces its outermost node layers exterior and
    those would read as fake boundary.  The time pitch 1/4096 = hx^2 keeps
    the smallest cubes parabolic.
    """
    R, C1 = 0.25, 1.3638
    g = flat_graph(nx=160, nt=576, hx=H)
    dom = DomainGrid(g, -2.0 * H, 0.625, -1.05, 1.05,
                     T0 - 0.0328125, T0 + 0.0328125, ht=1.0 / 4096.0)
    F = np.ones((dom.y.size, dom.t.size), dtype=bool)
    j0 = int(np.argmin(np.abs(dom.y - 0.3)))
    F[j0 - 2: j0 + 3, :] = False
    rd = regularized_distance(F, (H, 1.0 / 4096.0))
    stars = StarDomains(offsets=(C1, C1 / 2, C1 / 4, C1 / 8),
                        mults=DESK.star_mults_desk,
                        caps=tuple(2.0 * DESK.M1_desk * m
                                   for m in DESK.star_mults_desk),
                        R=R, t_center=T0, t_half=R * R / 2.0)
    masks = stars.materialize(dom, rd.values)
    mask_a = dom.x0[:, None, None] > dom.psi[None, :, :] + 1e-12
    cover = whitney_decompose(mask_a, (H, H, 1.0 / 4096.0), theta=0.4)
    k_w = np.where(np.abs(dom.t - T0) <= R * R / 2.0 + 1e-12)[0]
    return {"dom": dom, "rd": rd, "stars": stars, "masks": masks,
            "mask_a": mask_a, "cover": cover,
            "k_lo": int(k_w[0]), "k_hi": int(k_w[-1]), "R": R}
