"""Pipeline constant schedule.

Every named constant of the construction lives in one validated record, in two
columns: the *nominal* values used by the underlying comparison arguments
(astronomically conservative -- they guarantee scale separations that no finite
grid can host) and the *desk* values actually used on sampled grids.  Reports
print both columns plus the divisors, so a reader can always tell how far a
desk run sits from the nominal regime.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field


@dataclass(frozen=True)
class PipelineConstants:
    """Typed record of every pipeline constant.

    Parameters with a ``_desk`` suffix are the grid-feasible stand-ins; the
    nominal counterparts are exposed as properties.  ``validate()`` is called
    on construction and raises on an inconsistent schedule.
    """

    n: int = 2                     # ambient spatial dimension (graph coord + lateral)
    M0: float = 1.0                # 1 + Lip(1,1/2) seminorm of the graph
    eta: float = 0.1               # nondegeneracy band parameter
    Lambda0: float = 100.0         # level-set existence scale (nominal)
    Lambda1: float = 1000.0        # sawtooth aspect constant (nominal)
    gamma: float = 0.005           # smoothing fraction for the composite contour
    theta: float = 0.2             # Whitney separation parameter
    eps_budget: float = 0.05       # allowed good-set deficit
    M_threshold: float = 64.0      # two-sided density band [1/M, M]
    q_exp: float = 2.0             # reverse-Holder exponent
    p_exp: float = 2.0             # dual A_p exponent
    c1: float = 0.0                # measured graph-shift comparability (0 = not yet measured)

    # -- desk-scale stand-ins ------------------------------------------------
    Lambda1_desk: float = 4.0
    M1_desk: float = 0.25
    gamma_desk: float = 0.25
    lam_rule_desk: float = 16.0    # lambda_desk = 1/(lam_rule_desk * Lambda1_desk)
    suph_rule_desk: float = 8.0    # sup h <= R/(suph_rule_desk * Lambda1_desk)
    star_mults_desk: tuple = (2.0, 2.5, 3.0, 3.5)
    goodset_window_desk: float = 2.0   # the "50R" window becomes this multiple of R
    outer_window_desk: float = 2.0     # the "20R" window becomes this multiple of R

    def __post_init__(self):
        self.validate()

    # -- nominal (construction) values ---------------------------------------

    @property
    def kappa(self) -> float:
        """Aperture of the space-time parabolas, 40*M0*sqrt(n)."""
        return 40.0 * self.M0 * math.sqrt(self.n)

    @property
    def M1_nominal(self) -> float:
        return 32000.0 * self.M0 ** 2 * self.n / self.eta

    @property
    def lam_nominal(self) -> float:
        return 1.0 / (1000.0 * self.Lambda1)

    @property
    def lam_desk(self) -> float:
        return 1.0 / (self.lam_rule_desk * self.Lambda1_desk)

    @property
    def star_mults_nominal(self) -> tuple:
        return (100.0, 125.0, 150.0, 175.0)

    @property
    def theta_exp(self) -> float:
        """Subset-implication exponent 1/p."""
        return 1.0 / self.p_exp

    @property
    def suph_budget_desk(self) -> float:
        """sup_h budget per unit R at desk scale."""
        return 1.0 / (self.suph_rule_desk * self.Lambda1_desk)

    # -- divisors, for reports -----------------------------------------------

    @property
    def divisors(self) -> dict:
        return {
            "M1": self.M1_nominal / self.M1_desk,
            "Lambda1": self.Lambda1 / self.Lambda1_desk,
            "gamma": self.gamma_desk / self.gamma,
            "star_boxes": self.star_mults_nominal[0] / self.star_mults_desk[0],
            "goodset_window": 50.0 / self.goodset_window_desk,
            "outer_window": 20.0 / self.outer_window_desk,
        }

    def validate(self):
        if self.n < 2:
            raise ValueError("need n >= 2")
        if self.M0 < 1.0:
            raise ValueError("M0 is 1 + seminorm, so M0 >= 1")
        if not (0 < self.eta <= 1):
            raise ValueError("eta must lie in (0, 1]")
        if self.gamma > 0.01:
            raise ValueError("nominal gamma must be << 1/100")
        if not (0 < self.theta <= 0.25):
            raise ValueError("Whitney theta must lie in (0, 1/4]")
        if abs(self.lam_nominal * 1000.0 * self.Lambda1 - 1.0) > 1e-12:
            raise ValueError("nominal lambda rule violated")
        if self.q_exp <= 1 or self.p_exp <= 1:
            raise ValueError("exponents q, p must exceed 1")
        for name in ("Lambda1_desk", "M1_desk", "gamma_desk", "lam_rule_desk",
                     "suph_rule_desk", "goodset_window_desk", "outer_window_desk"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if list(self.star_mults_desk) != sorted(self.star_mults_desk):
            raise ValueError("star multipliers must be increasing")
        if len(self.star_mults_desk) != 4:
            raise ValueError("exactly four nested star boxes")

    def as_report_dict(self) -> dict:
        """Both columns plus divisors, ready for JSON emission."""
        return {
            "nominal": {
                "M0": self.M0, "n": self.n, "eta": self.eta,
                "kappa": self.kappa, "M1": self.M1_nominal,
                "Lambda0": self.Lambda0, "Lambda1": self.Lambda1,
                "lambda": self.lam_nominal, "gamma": self.gamma,
                "star_mults": list(self.star_mults_nominal),
                "goodset_window": 50.0, "outer_window": 20.0,
            },
            "desk": {
                "M1": self.M1_desk, "Lambda1": self.Lambda1_desk,
                "lambda": self.lam_desk, "gamma": self.gamma_desk,
                "star_mults": list(self.star_mults_desk),
                "goodset_window": self.goodset_window_desk,
                "outer_window": self.outer_window_desk,
                "suph_budget_per_R": self.suph_budget_desk,
            },
            "shared": {
                "theta": self.theta, "eps_budget": self.eps_budget,
                "M_threshold": self.M_threshold, "q": self.q_exp,
                "p": self.p_exp, "theta_exp": self.theta_exp, "c1": self.c1,
            },
            "divisors": self.divisors,
        }


DESK = PipelineConstants()
