"""Reference laws of the asymptotic theory.

Covers the chi-square balance probability pi_a, the constrained normals
(first coordinate of a standard J-normal conditioned inside or outside the
ball D'D < a), the normal + truncated-normal mixture laws that describe the
preliminary-test estimators, and the plug-in confidence intervals built from
those laws.

All quantile/CDF queries are seeded Monte Carlo: one code path covers every
mixture that appears in the theory, and a fixed seed makes each query
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammainc

from . import rng as rngmod
from .errors import AcceptanceExhausted

KINDS = ("inside", "outside", "unconstrained")

DEFAULT_DRAWS = 10 ** 6


def pi_a(j: int, a: float) -> float:
    """P(chi^2_J < a) via the regularized incomplete gamma function."""
    if j < 1:
        raise ValueError("j must be >= 1")
    if a <= 0:
        return 0.0
    if not np.isfinite(a):
        return 1.0
    return float(gammainc(j / 2.0, a / 2.0))


@dataclass(frozen=True)
class TruncatedGaussianComponent:
    """First coordinate of D ~ N(0, I_J) conditioned on the ball D'D < a.

    kind "inside" conditions on D'D < a, "outside" on D'D >= a,
    "unconstrained" is a plain standard normal.
    """

    kind: str
    dof: int = 1
    a: float = np.inf

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")


def sample_truncated(component: TruncatedGaussianComponent, n: int,
                     rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample n draws of the constrained first coordinate."""
    if component.kind == "unconstrained":
        return rng.standard_normal(n)
    out = np.empty(n)
    filled = 0
    attempted = 0
    batch = max(4 * n, 1024)
    while filled < n:
        d = rng.standard_normal((batch, component.dof))
        r2 = np.einsum("ij,ij->i", d, d)
        mask = r2 < component.a if component.kind == "inside" else r2 >= component.a
        hits = d[mask, 0]
        take = min(hits.size, n - filled)
        out[filled:filled + take] = hits[:take]
        filled += take
        attempted += batch
        if attempted >= 10 ** 6 and filled / attempted < 1e-6:
            raise AcceptanceExhausted(
                f"acceptance below 1e-6 for {component.kind} region, a={component.a}")
    return out


@dataclass(frozen=True)
class MixtureComponent:
    """One branch: weight * law(scale_eps * eps + scale_trunc * T)."""

    weight: float
    scale_eps: float
    scale_trunc: float
    trunc: TruncatedGaussianComponent


@dataclass(frozen=True)
class MixtureReference:
    """Computable mixture of normal + constrained-normal convolutions."""

    components: tuple
    sample_count: int = DEFAULT_DRAWS
    seed: int = 0

    def __post_init__(self):
        w = np.array([c.weight for c in self.components])
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        if any(c.scale_eps < 0 or c.scale_trunc < 0 for c in self.components):
            raise ValueError("scales must be nonnegative")

    def draws(self) -> np.ndarray:
        """Seeded Monte Carlo sample; deterministic for a fixed seed."""
        rng = rngmod.stream(self.seed, rngmod.REFDIST)
        n = self.sample_count
        w = np.array([c.weight for c in self.components])
        idx = rng.choice(len(self.components), size=n, p=w)
        eps = rng.standard_normal(n)
        vals = np.empty(n)
        for k, comp in enumerate(self.components):
            mask = idx == k
            m = int(mask.sum())
            if m == 0:
                continue
            t = (sample_truncated(comp.trunc, m, rng)
                 if comp.scale_trunc > 0 else np.zeros(m))
            vals[mask] = comp.scale_eps * eps[mask] + comp.scale_trunc * t
        return vals


def mixture_quantile(ref: MixtureReference, p) -> np.ndarray:
    """Empirical quantile(s) of the mixture at probability p in (0, 1)."""
    p = np.asarray(p, dtype=np.float64)
    if np.any(p <= 0) or np.any(p >= 1):
        raise ValueError("p must lie strictly inside (0, 1)")
    return np.quantile(ref.draws(), p)


def pt_mixture(v_n: float, v_adj: float, v_l: float, j: int, a: float,
               arm: str = "L", sample_count: int = DEFAULT_DRAWS,
               seed: int = 0) -> MixtureReference:
    """Unconditional mixture law of the scaled preliminary-test estimator.

    Balanced branch (weight pi_a): sqrt(v_L) eps + sqrt(v_N - v_L) L with L
    conditioned inside the ball.  Unbalanced branch: sqrt(v_L) eps +
    sqrt(v_adj - v_L) L' outside the ball; for arm L the second scale is 0.
    Negative variance gaps from plug-in noise are clamped to 0.
    """
    w = pi_a(j, a)
    s_in = np.sqrt(max(v_n - v_l, 0.0))
    s_out = 0.0 if arm == "L" else np.sqrt(max(v_adj - v_l, 0.0))
    root_vl = np.sqrt(max(v_l, 0.0))
    comps = (
        MixtureComponent(w, root_vl, s_in,
                         TruncatedGaussianComponent("inside", j, a)),
        MixtureComponent(1.0 - w, root_vl, s_out,
                         TruncatedGaussianComponent("outside", j, a)),
    )
    return MixtureReference(components=comps, sample_count=sample_count, seed=seed)


def pt_specific_ci(tau_hat: float, v_n: float, v_adj: float, v_l: float,
                   j: int, a: float, phi: int, arm: str, alpha: float,
                   n_units: int, sample_count: int = DEFAULT_DRAWS,
                   seed: int = 0) -> tuple:
    """Plug-in confidence interval from the conditional reference law.

    Balanced (phi = 1): central 1-alpha range of
    sqrt(v_L) eps + sqrt(v_N - v_L) L.  Unbalanced with arm F: the same with
    sqrt(v_adj - v_L) L'.  Unbalanced with arm L: plain N(0, v_L).
    Scales are divided by sqrt(N) around the point estimate.
    """
    if phi == 1:
        comp = MixtureComponent(1.0, np.sqrt(max(v_l, 0.0)),
                                np.sqrt(max(v_n - v_l, 0.0)),
                                TruncatedGaussianComponent("inside", j, a))
    elif arm == "F":
        comp = MixtureComponent(1.0, np.sqrt(max(v_l, 0.0)),
                                np.sqrt(max(v_adj - v_l, 0.0)),
                                TruncatedGaussianComponent("outside", j, a))
    else:
        comp = MixtureComponent(1.0, np.sqrt(max(v_l, 0.0)), 0.0,
                                TruncatedGaussianComponent("unconstrained", j, a))
    ref = MixtureReference(components=(comp,), sample_count=sample_count, seed=seed)
    lo, hi = mixture_quantile(ref, [alpha / 2.0, 1.0 - alpha / 2.0])
    scale = np.sqrt(n_units)
    return (tau_hat - hi / scale, tau_hat - lo / scale)


@dataclass(frozen=True)
class StudentizedPTReference:
    """Plug-in null law of |tau_pt| / se_pt used for prepivoting.

    Mixture of kappa^{1/2} |rho_N^{1/2} eps + (1 - rho_N)^{1/2} L| and
    kappa^{1/2} |rho_adj^{1/2} eps + (1 - rho_adj)^{1/2} L'| with weights
    (pi_a, 1 - pi_a) and the plug-ins kappa = 1, rho = v_L / v.
    """

    j: int
    a: float
    n_draws: int
    # Base variates split by mixture branch so CDF queries are two cheap
    # rescale-and-count passes (evaluated once per permutation in the FRT).
    eps_in: np.ndarray = field(repr=False)
    trunc_in: np.ndarray = field(repr=False)
    eps_out: np.ndarray = field(repr=False)
    trunc_out: np.ndarray = field(repr=False)

    @classmethod
    def build(cls, j: int, a: float, n_draws: int,
              seed: int) -> "StudentizedPTReference":
        """Draw the reusable base variates once; scales plug in per query."""
        rng = rngmod.stream(seed, rngmod.REFDIST)
        w = pi_a(j, a)
        balanced = rng.random(n_draws) < w
        eps = rng.standard_normal(n_draws)
        inside = sample_truncated(TruncatedGaussianComponent("inside", j, a),
                                  n_draws, rng)
        outside = sample_truncated(TruncatedGaussianComponent("outside", j, a),
                                   n_draws, rng)
        return cls(j=j, a=a, n_draws=n_draws,
                   eps_in=eps[balanced], trunc_in=inside[balanced],
                   eps_out=eps[~balanced], trunc_out=outside[~balanced])

    def _scales(self, rho_n: float, rho_adj: float, studentized: bool,
                v_n: float, v_adj: float, v_l: float):
        if studentized:
            return (np.sqrt(rho_n), np.sqrt(max(1.0 - rho_n, 0.0)),
                    np.sqrt(rho_adj), np.sqrt(max(1.0 - rho_adj, 0.0)))
        root_vl = np.sqrt(max(v_l, 0.0))
        return (root_vl, np.sqrt(max(v_n - v_l, 0.0)),
                root_vl, np.sqrt(max(v_adj - v_l, 0.0)))

    def _values(self, rho_n: float, rho_adj: float,
                studentized: bool, v_n: float, v_adj: float,
                v_l: float) -> np.ndarray:
        s_eps_in, s_t_in, s_eps_out, s_t_out = self._scales(
            rho_n, rho_adj, studentized, v_n, v_adj, v_l)
        return np.abs(np.concatenate([
            s_eps_in * self.eps_in + s_t_in * self.trunc_in,
            s_eps_out * self.eps_out + s_t_out * self.trunc_out]))

    def cdf(self, t: float, v_n: float, v_adj: float, v_l: float,
            arm: str, studentized: bool) -> float:
        """F_hat(t) under the plug-in null law; t on the |statistic| scale."""
        v_l = min(v_l, v_n, v_adj)  # clamp plug-in noise
        v_adj_eff = v_l if arm == "L" else v_adj
        rho_n = v_l / v_n if v_n > 0 else 1.0
        rho_adj = v_l / v_adj_eff if v_adj_eff > 0 else 1.0
        s_eps_in, s_t_in, s_eps_out, s_t_out = self._scales(
            rho_n, rho_adj, studentized, v_n, v_adj_eff, v_l)
        count = np.count_nonzero(
            np.abs(s_eps_in * self.eps_in + s_t_in * self.trunc_in) <= t)
        count += np.count_nonzero(
            np.abs(s_eps_out * self.eps_out + s_t_out * self.trunc_out) <= t)
        return count / self.n_draws
