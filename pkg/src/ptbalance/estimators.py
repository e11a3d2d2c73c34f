"""Point estimators, robust standard errors, and normal-approximation CIs.

Five methods: N (difference in means), F (additive adjustment), L (fully
interacted adjustment), and the preliminary-test composites PT_F / PT_L that
fall back to N when the realized allocation passes the balance test.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import ndtri

from . import ols
from .design import Assignment, BalanceReport, balance_test
from .errors import DimensionMismatch
from .population import FinitePopulation

METHODS = ("N", "F", "L", "PT_F", "PT_L")


@dataclass(frozen=True)
class ObservedTrial:
    """Realized data from one assignment: the only input to the analysis path."""

    z: Assignment
    y: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y = np.asarray(self.y, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        n = self.z.n_units
        if y.shape != (n,) or x.shape[0] != n:
            raise DimensionMismatch("z, y, x must share the number of units")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "x", x)

    @classmethod
    def realize(cls, pop: FinitePopulation, assignment: Assignment) -> "ObservedTrial":
        """Reveal one potential outcome per unit."""
        zb = assignment.z.astype(bool)
        y = np.where(zb, pop.y1, pop.y0)
        return cls(z=assignment, y=y, x=pop.x)


@dataclass(frozen=True)
class EstimateReport:
    method: str
    tau_hat: float
    se_hat: float
    ci: tuple
    alpha: float
    balance: Optional[BalanceReport] = None
    adjusted_arm_used: Optional[str] = None  # "unadjusted" / "adjusted"


def _report(method: str, tau_hat: float, se_hat: float, alpha: float,
            **kw) -> EstimateReport:
    q = float(ndtri(1.0 - alpha / 2.0))
    ci = (tau_hat - q * se_hat, tau_hat + q * se_hat)
    return EstimateReport(method=method, tau_hat=tau_hat, se_hat=se_hat,
                          ci=ci, alpha=alpha, **kw)


def _design_n(trial: ObservedTrial) -> np.ndarray:
    n = trial.z.n_units
    return np.column_stack([np.ones(n), trial.z.z.astype(np.float64)])


def _design_f(trial: ObservedTrial) -> np.ndarray:
    return np.column_stack([_design_n(trial), trial.x])


def _design_l(trial: ObservedTrial) -> np.ndarray:
    # Interactions use covariates re-centered at the full-sample mean; the
    # Z coefficient targets the average effect only under this coding.
    xc = trial.x - trial.x.mean(axis=0)
    zcol = trial.z.z.astype(np.float64)[:, None]
    n = trial.z.n_units
    return np.column_stack([np.ones(n), zcol, xc, zcol * xc])


def estimate_N(trial: ObservedTrial, hc: str = "HC2",
               alpha: float = 0.05) -> EstimateReport:
    """Difference in means via lm(Y ~ 1 + Z)."""
    f = ols.fit(_design_n(trial), trial.y, hc)
    return _report("N", float(f.coefficients[1]), f.se(1), alpha)


def estimate_F(trial: ObservedTrial, hc: str = "HC2",
               alpha: float = 0.05) -> EstimateReport:
    """Additive adjustment via lm(Y ~ 1 + Z + x)."""
    f = ols.fit(_design_f(trial), trial.y, hc)
    return _report("F", float(f.coefficients[1]), f.se(1), alpha)


def estimate_L(trial: ObservedTrial, hc: str = "HC2",
               alpha: float = 0.05) -> EstimateReport:
    """Fully interacted adjustment via lm(Y ~ 1 + Z + x + Z*x)."""
    f = ols.fit(_design_l(trial), trial.y, hc)
    return _report("L", float(f.coefficients[1]), f.se(1), alpha)


def estimate_PT(trial: ObservedTrial, a: float, arm: str = "L",
                hc: str = "HC2", alpha: float = 0.05) -> EstimateReport:
    """Preliminary-test composite: N when balanced, F or L when not."""
    if arm not in ("F", "L"):
        raise ValueError(f"arm must be 'F' or 'L', got {arm!r}")
    balance = balance_test(trial.x, trial.z, a)
    if balance.phi == 1:
        base = estimate_N(trial, hc, alpha)
        used = "unadjusted"
    else:
        base = estimate_F(trial, hc, alpha) if arm == "F" else estimate_L(trial, hc, alpha)
        used = "adjusted"
    return EstimateReport(method=f"PT_{arm}", tau_hat=base.tau_hat,
                          se_hat=base.se_hat, ci=base.ci, alpha=alpha,
                          balance=balance, adjusted_arm_used=used)


def estimate(trial: ObservedTrial, method: str, a: float = np.inf,
             hc: str = "HC2", alpha: float = 0.05) -> EstimateReport:
    """Dispatch by method tag."""
    if method == "N":
        return estimate_N(trial, hc, alpha)
    if method == "F":
        return estimate_F(trial, hc, alpha)
    if method == "L":
        return estimate_L(trial, hc, alpha)
    if method in ("PT_F", "PT_L"):
        return estimate_PT(trial, a, method[-1], hc, alpha)
    raise ValueError(f"unknown method {method!r}")


def adjustment_slopes(trial: ObservedTrial) -> dict:
    """Slope vectors behind the correction identity tau_* = tau_N - g' tau_x.

    Returns {"F": gamma_F_hat, "L": gamma_L_hat} where gamma_L_hat weights
    the arm-specific slopes as e0 * slope(treated) + e1 * slope(control).
    """
    n = trial.z.n_units
    f_fit = ols.fit(_design_f(trial), trial.y)
    gamma_f = f_fit.coefficients[2:]

    zb = trial.z.z.astype(bool)
    e1 = trial.z.n1 / n
    e0 = 1.0 - e1
    slopes = {}
    for arm, mask in ((1, zb), (0, ~zb)):
        xa = trial.x[mask]
        xa = np.column_stack([np.ones(mask.sum()), xa])
        fit_a = ols.fit(xa, trial.y[mask])
        slopes[arm] = fit_a.coefficients[1:]
    gamma_l = e0 * slopes[1] + e1 * slopes[0]
    return {"F": gamma_f, "L": gamma_l}
