"""Finite-population science tables and their true (oracle) parameters.

A :class:`FinitePopulation` stores the complete potential-outcome schedule
{Y_i(0), Y_i(1), x_i}, which only simulations can see.  The analysis path
works exclusively on :class:`~ptbalance.estimators.ObservedTrial`.

Covariate columns are always centered at construction; all downstream
formulas assume mean-zero covariates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import rng as rngmod
from .errors import ConfigError, DegenerateAnchor, SingularCovariates

RECIPES = ("efficiency", "coverage", "frt_p1", "frt_p2")

_ANCHOR_TOL = 1e-6


@dataclass(frozen=True)
class FinitePopulation:
    """Science table: both potential outcomes and covariates for N units."""

    y0: np.ndarray
    y1: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        y0 = np.asarray(self.y0, dtype=np.float64)
        y1 = np.asarray(self.y1, dtype=np.float64)
        x = np.asarray(self.x, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError("x must be a 2-D array")
        n = x.shape[0]
        if y0.shape != (n,) or y1.shape != (n,):
            raise ConfigError("y0, y1, x must share the number of rows")
        if x.shape[1] < 1:
            raise ConfigError("need at least one covariate column")
        # Center covariates so the mean-zero assumption holds exactly.
        x = x - x.mean(axis=0)
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "x", x)

    @property
    def n_units(self) -> int:
        return self.x.shape[0]

    @property
    def n_covariates(self) -> int:
        return self.x.shape[1]

    @property
    def tau(self) -> float:
        """Average treatment effect."""
        return float(np.mean(self.y1 - self.y0))


@dataclass(frozen=True)
class TrueParameters:
    """Population-level constants of the asymptotic theory.

    Suffixes follow the estimator family: ``n`` unadjusted, ``f`` additive
    adjustment, ``l`` fully interacted adjustment.
    """

    tau: float
    gamma0: np.ndarray
    gamma1: np.ndarray
    gamma_f: np.ndarray
    s2_z: dict = field(repr=False)       # (z, family) -> S^2_{z,*}
    s2_tau: dict = field(repr=False)     # family -> S^2_{tau,*}
    v: dict = field(repr=False)          # family -> v_*
    kappa: dict = field(repr=False)      # family -> kappa_*
    rho: dict = field(repr=False)        # family -> rho_*
    c: dict = field(repr=False)          # family -> c_* vector
    s2_x: np.ndarray = field(repr=False)
    e0: float = 0.5
    e1: float = 0.5


def _slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Slope vector of the theoretical fit of y on (1, x), x centered."""
    n = x.shape[0]
    s2x = x.T @ x / (n - 1)
    sxy = x.T @ (y - y.mean()) / (n - 1)
    try:
        return np.linalg.solve(s2x, sxy)
    except np.linalg.LinAlgError as exc:
        raise SingularCovariates(str(exc)) from None


def true_parameters(pop: FinitePopulation, e1: float) -> TrueParameters:
    """Compute the oracle constants for a given treated fraction.

    All finite-population variances use divisor N - 1.

    Raises
    ------
    SingularCovariates
        If the covariate covariance matrix is singular.
    ConfigError
        If e1 is not in (0, 1) or N * e1 is not an integer.
    """
    n = pop.n_units
    if not 0.0 < e1 < 1.0:
        raise ConfigError(f"e1 must be in (0, 1), got {e1}")
    if abs(e1 * n - round(e1 * n)) > 1e-9:
        raise ConfigError(f"N * e1 = {e1 * n} is not an integer")
    e0 = 1.0 - e1
    x = pop.x
    s2x = x.T @ x / (n - 1)
    if np.linalg.cond(s2x) > 1e12:
        raise SingularCovariates("covariate covariance matrix is singular")

    gamma0 = _slopes(x, pop.y0)
    gamma1 = _slopes(x, pop.y1)
    gamma_f = e0 * gamma0 + e1 * gamma1

    # Adjusted potential outcomes per family.
    adj = {
        "N": (pop.y0, pop.y1),
        "F": (pop.y0 - x @ gamma_f, pop.y1 - x @ gamma_f),
        "L": (pop.y0 - x @ gamma0, pop.y1 - x @ gamma1),
    }
    tau = pop.tau
    s2_z, s2_tau, v = {}, {}, {}
    for fam, (a0, a1) in adj.items():
        s2_z[(0, fam)] = float(np.var(a0, ddof=1))
        s2_z[(1, fam)] = float(np.var(a1, ddof=1))
        s2_tau[fam] = float(np.var(a1 - a0, ddof=1))
        v[fam] = s2_z[(0, fam)] / e0 + s2_z[(1, fam)] / e1 - s2_tau[fam]

    kappa = {fam: v[fam] / (v[fam] + s2_tau[fam]) if v[fam] + s2_tau[fam] > 0
             else 1.0 for fam in v}
    rho = {fam: v["L"] / v[fam] if v[fam] > 0 else 1.0 for fam in v}
    c = {
        "N": s2x @ (gamma0 / e0 + gamma1 / e1),
        "F": s2x @ ((1.0 / e1 - 1.0 / e0) * (gamma1 - gamma0)),
        "L": np.zeros(pop.n_covariates),
    }
    return TrueParameters(tau=tau, gamma0=gamma0, gamma1=gamma1, gamma_f=gamma_f,
                          s2_z=s2_z, s2_tau=s2_tau, v=v, kappa=kappa, rho=rho,
                          c=c, s2_x=s2x, e0=e0, e1=e1)


def _anchored_noise(rng: np.random.Generator, x: np.ndarray,
                    sigma: float, max_redraws: int = 100) -> np.ndarray:
    """Draw eps with eps_1 solving sum_i eps_i * x_i = 0 for scalar x.

    Redraws x's pairing unit (by rotating the anchor index) is not an option
    because x is fixed, so redraw the noise substream if the anchor covariate
    is degenerate, and fail only if every unit is near zero.
    """
    xv = x[:, 0]
    anchor = int(np.argmax(np.abs(xv)))
    if abs(xv[anchor]) < _ANCHOR_TOL:
        raise DegenerateAnchor("all covariate values are near zero")
    n = x.shape[0]
    eps = sigma * rng.standard_normal(n)
    rest = np.delete(np.arange(n), anchor)
    eps[anchor] = -float(eps[rest] @ xv[rest]) / float(xv[anchor])
    return eps


def generate_population(recipe: str, seed: int,
                        sigma_eps: float | None = None) -> FinitePopulation:
    """Generate one of the four benchmark populations.

    Parameters
    ----------
    recipe : {"efficiency", "coverage", "frt_p1", "frt_p2"}
        efficiency: N=500, J=5, x ~ U(-1,1),
            Y(0) ~ N(-sum x^3, 0.1^2), Y(1) ~ N(sum x^3, 0.4^2).
        coverage: N=2000, J=1, x ~ N(0,1),
            Y(0) = -2.5 x + eps, Y(1) = x + eps, with the noise constrained
            to be exactly orthogonal to x in sample.  Requires sigma_eps.
        frt_p1: N=100, J=1, x ~ U(-1,1), Y(1) ~ N(x^3, 1),
            Y(0) ~ N(-x^3, 0.5^2); both arms recentered so tau = 0.
        frt_p2: N=100, J=1, x ~ N(0,1), Y(1) = eps, Y(0) = x + eps with
            noise orthogonal to x; both arms recentered so tau = 0.
    seed : int
        Root seed; the population stream is derived from it.
    sigma_eps : float, optional
        Noise scale for the coverage recipe.
    """
    if recipe not in RECIPES:
        raise ConfigError(f"unknown recipe {recipe!r}; choose from {RECIPES}")
    rng = rngmod.stream(seed, rngmod.POPULATION)

    if recipe == "efficiency":
        n, j = 500, 5
        x = rng.uniform(-1.0, 1.0, size=(n, j))
        x = x - x.mean(axis=0)
        signal = np.sum(x ** 3, axis=1)
        y0 = -signal + 0.1 * rng.standard_normal(n)
        y1 = signal + 0.4 * rng.standard_normal(n)
        return FinitePopulation(y0=y0, y1=y1, x=x)

    if recipe == "coverage":
        if sigma_eps is None or sigma_eps <= 0:
            raise ConfigError("coverage recipe requires sigma_eps > 0")
        n = 2000
        x = rng.standard_normal((n, 1))
        x = x - x.mean(axis=0)
        eps = _anchored_noise(rng, x, sigma_eps)
        y0 = -2.5 * x[:, 0] + eps
        y1 = x[:, 0] + eps
        return FinitePopulation(y0=y0, y1=y1, x=x)

    n = 100
    if recipe == "frt_p1":
        x = rng.uniform(-1.0, 1.0, size=(n, 1))
        x = x - x.mean(axis=0)
        cube = x[:, 0] ** 3
        y1 = cube + rng.standard_normal(n)
        y0 = -cube + 0.5 * rng.standard_normal(n)
    else:  # frt_p2
        x = rng.standard_normal((n, 1))
        x = x - x.mean(axis=0)
        eps = _anchored_noise(rng, x, 1.0)
        y1 = eps.copy()
        y0 = x[:, 0] + eps
    # Recenter each arm so the average effect is exactly zero.
    y0 = y0 - y0.mean()
    y1 = y1 - y1.mean()
    return FinitePopulation(y0=y0, y1=y1, x=x)
