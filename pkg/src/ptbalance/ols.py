"""Dense least squares with heteroskedasticity-robust covariance.

The single numeric kernel shared by every estimator.  Solves via a thin QR
factorization (never the normal equations) so that rank problems surface as
explicit errors rather than silently unstable coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

from .errors import DimensionMismatch, LeverageOne, RankDeficient

HC_VARIANTS = ("HC0", "HC1", "HC2", "HC3")

# Relative rank tolerance.  Fixed (not configurable) so results are
# bit-reproducible across runs and machines.
_RANK_RTOL = 1e-10


@dataclass(frozen=True)
class RegressionFit:
    """Least-squares fit with sandwich covariance.

    Attributes
    ----------
    coefficients : (p,) ndarray
    robust_cov : (p, p) ndarray
        Eicker-Huber-White sandwich covariance of the coefficients.
    residuals : (n,) ndarray
    hat_diagonals : (n,) ndarray
    n, p : int
    """

    coefficients: np.ndarray
    robust_cov: np.ndarray
    residuals: np.ndarray
    hat_diagonals: np.ndarray
    n: int
    p: int

    def se(self, index: int) -> float:
        """Robust standard error of one coefficient."""
        return float(np.sqrt(max(self.robust_cov[index, index], 0.0)))


def fit(design_matrix: np.ndarray, response: np.ndarray,
        hc_variant: str = "HC2") -> RegressionFit:
    """Fit ordinary least squares with a sandwich covariance.

    Parameters
    ----------
    design_matrix : (n, p) array
        Must have full column rank (smallest singular value greater than
        1e-10 times the largest) and n > p.
    response : (n,) array
    hc_variant : {"HC0", "HC1", "HC2", "HC3"}
        Residual weight in the sandwich meat: 1, n/(n-p), 1/(1-h_ii), or
        1/(1-h_ii)^2 respectively.

    Raises
    ------
    DimensionMismatch, RankDeficient, LeverageOne
    """
    X = np.asarray(design_matrix, dtype=np.float64)
    y = np.asarray(response, dtype=np.float64)
    if X.ndim != 2:
        raise DimensionMismatch(f"design matrix must be 2-D, got {X.ndim}-D")
    n, p = X.shape
    if y.shape != (n,):
        raise DimensionMismatch(f"response shape {y.shape} != ({n},)")
    if n <= p:
        raise RankDeficient(f"need n > p, got n={n}, p={p}")
    if hc_variant not in HC_VARIANTS:
        raise ValueError(f"unknown hc_variant {hc_variant!r}")

    Q, R = np.linalg.qr(X, mode="reduced")
    svals = np.linalg.svd(R, compute_uv=False)
    if svals[-1] <= _RANK_RTOL * svals[0]:
        raise RankDeficient(
            f"singular value ratio {svals[-1] / svals[0]:.3e} below {_RANK_RTOL:.0e}")

    beta = solve_triangular(R, Q.T @ y, lower=False)
    residuals = y - X @ beta
    h = np.einsum("ij,ij->i", Q, Q)
    # Clip tiny negative / >1 round-off; true leverage lies in [0, 1].
    h = np.clip(h, 0.0, 1.0)

    if hc_variant == "HC0":
        omega = np.ones(n)
    elif hc_variant == "HC1":
        omega = np.full(n, n / (n - p))
    else:
        one_minus_h = 1.0 - h
        if np.any(one_minus_h <= 1e-12):
            raise LeverageOne("a unit has leverage 1; HC2/HC3 undefined")
        omega = 1.0 / one_minus_h
        if hc_variant == "HC3":
            omega = omega ** 2

    # (X'X)^{-1} = R^{-1} R^{-T}
    r_inv = solve_triangular(R, np.eye(p), lower=False)
    xtx_inv = r_inv @ r_inv.T
    meat = (X * (omega * residuals ** 2)[:, None]).T @ X
    cov = xtx_inv @ meat @ xtx_inv
    cov = 0.5 * (cov + cov.T)

    return RegressionFit(coefficients=beta, robust_cov=cov, residuals=residuals,
                         hat_diagonals=h, n=n, p=p)
