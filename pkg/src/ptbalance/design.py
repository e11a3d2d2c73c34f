"""Assignment mechanisms and the Mahalanobis balance test.

The balance statistic uses the *known* design covariance of the difference
in covariate means, cov = S^2_x / (N e0 e1), which is exact under complete
randomization.  This also lets the randomization test recompute M for
permuted assignments without refitting anything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AcceptanceExhausted, InvalidSizes, SingularCovariates


@dataclass(frozen=True)
class Assignment:
    """One realized allocation: z_i = 1 for treated units."""

    z: np.ndarray
    n1: int
    n0: int

    @classmethod
    def from_vector(cls, z) -> "Assignment":
        z = np.asarray(z, dtype=np.int8)
        if not np.isin(z, (0, 1)).all():
            raise InvalidSizes("assignment vector must be binary")
        n1 = int(z.sum())
        n0 = int(z.size - n1)
        if n1 < 1 or n0 < 1:
            raise InvalidSizes("both arms must be nonempty")
        return cls(z=z, n1=n1, n0=n0)

    @property
    def n_units(self) -> int:
        return self.n1 + self.n0


@dataclass(frozen=True)
class BalanceReport:
    """Covariate-mean difference, its Mahalanobis distance, and the verdict."""

    tau_x: np.ndarray
    m: float
    a: float
    phi: int  # 1 = balanced (M < a), 0 = unbalanced


def complete_randomization(n_units: int, n1: int,
                           rng: np.random.Generator) -> Assignment:
    """Draw uniformly from all C(N, n1) assignments."""
    if not 1 <= n1 <= n_units - 1:
        raise InvalidSizes(f"need 1 <= n1 <= N-1, got n1={n1}, N={n_units}")
    z = np.zeros(n_units, dtype=np.int8)
    z[rng.permutation(n_units)[:n1]] = 1
    return Assignment(z=z, n1=n1, n0=n_units - n1)


def balance_inverse_cov(x: np.ndarray, n1: int) -> np.ndarray:
    """Inverse of the exact design covariance of the covariate-mean difference.

    cov(tau_x) = S^2_x / (N e0 e1) with S^2_x over the full sample
    (divisor N - 1).  Precompute once per trial; M is then a cheap
    quadratic form for any permuted assignment.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    e1 = n1 / n
    e0 = 1.0 - e1
    xc = x - x.mean(axis=0)
    s2x = xc.T @ xc / (n - 1)
    cov = s2x / (n * e0 * e1)
    if np.linalg.cond(cov) > 1e12:
        raise SingularCovariates("covariate covariance matrix is singular")
    return np.linalg.inv(cov)


def mahalanobis(x: np.ndarray, z: np.ndarray, inv_cov: np.ndarray) -> tuple:
    """(tau_x, M) for one assignment, given the precomputed inverse covariance."""
    zb = np.asarray(z, dtype=bool)
    tau_x = x[zb].mean(axis=0) - x[~zb].mean(axis=0)
    m = float(tau_x @ inv_cov @ tau_x)
    return tau_x, m


def balance_test(x: np.ndarray, assignment: Assignment, a: float) -> BalanceReport:
    """Mahalanobis balance test with strict threshold: balanced iff M < a."""
    inv_cov = balance_inverse_cov(x, assignment.n1)
    tau_x, m = mahalanobis(np.asarray(x, dtype=np.float64), assignment.z, inv_cov)
    return BalanceReport(tau_x=tau_x, m=m, a=float(a), phi=int(m < a))


def rem_randomization(x: np.ndarray, n1: int, a: float,
                      rng: np.random.Generator,
                      max_attempts: int = 10 ** 6) -> tuple:
    """Rerandomize until the Mahalanobis criterion M < a holds.

    Returns (assignment, attempts).  Plain rejection sampling; raises
    AcceptanceExhausted if the threshold admits no draw in max_attempts.
    """
    if a <= 0:
        raise InvalidSizes("rerandomization requires a > 0")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    inv_cov = balance_inverse_cov(x, n1) if np.isfinite(a) else None
    for attempt in range(1, max_attempts + 1):
        assignment = complete_randomization(n, n1, rng)
        if not np.isfinite(a):
            return assignment, attempt
        _, m = mahalanobis(x, assignment.z, inv_cov)
        if m < a:
            return assignment, attempt
    raise AcceptanceExhausted(
        f"no assignment with M < {a} found in {max_attempts} attempts")
