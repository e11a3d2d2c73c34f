"""Fisher randomization tests: unconditional, conditional, and prepivoted.

The permutation engine recomputes the balance statistic and whichever
regressions the chosen statistic needs for every permuted assignment, so
preliminary-test statistics genuinely switch estimators permutation by
permutation.  Two-sided statistics are compared through their absolute
values; prepivoted statistics are one-sided on the CDF scale.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Optional

import numpy as np

from scipy.linalg import solve_triangular

from . import ols
from .design import balance_inverse_cov, mahalanobis
from .errors import AcceptanceExhausted, RankDeficient
from .estimators import ObservedTrial
from .population import FinitePopulation
from .refdist import StudentizedPTReference

STATISTICS = (
    "tau_N", "tau_F", "tau_L", "tau_PT_F", "tau_PT_L",
    "t_N", "t_F", "t_L", "t_PT_F", "t_PT_L",
    "prepivot_PT_F", "prepivot_PT_L", "prepivot_t_PT_F", "prepivot_t_PT_L",
)


@dataclass(frozen=True)
class FRTSpec:
    statistic: str
    mode: str = "unconditional"
    reps: int = 500
    enumeration_cap: int = 20000
    a: float = np.inf
    alpha: float = 0.05
    hc: str = "HC2"
    refdraws: int = 1000       # Monte Carlo size of the prepivot CDF
    refdist_seed: int = 0      # shared seed for the prepivot reference draws

    def __post_init__(self):
        if self.statistic not in STATISTICS:
            raise ValueError(f"unknown statistic {self.statistic!r}")
        if self.mode not in ("unconditional", "conditional"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.reps < 100:
            raise ValueError("reps must be >= 100 for Monte Carlo p-values")
        if self.mode == "conditional" and not np.isfinite(self.a):
            # a = inf conditions on nothing; treat as unconditional instead.
            object.__setattr__(self, "mode", "unconditional")


@dataclass(frozen=True)
class FRTResult:
    p_value: float
    observed_stat: float
    reps_used: int
    exact: bool
    phi_observed: Optional[int] = None


@dataclass(frozen=True)
class RandomizationReference:
    """Limits of the randomization distribution of the PT statistics.

    Diagnostic constants of the pseudo finite population built by imputing
    the sharp null; computable only where the science table is known.
    """

    v_tilde_n: float
    v_tilde_l: float
    rho_tilde_n: float


def randomization_reference(pop: FinitePopulation, e1: float) -> RandomizationReference:
    """v-tilde constants: arm variances enter with swapped weights, plus tau^2."""
    from .population import true_parameters

    p = true_parameters(pop, e1)
    e0 = 1.0 - e1
    tau2 = p.tau ** 2
    v_n = p.s2_z[(0, "N")] / e1 + p.s2_z[(1, "N")] / e0 + tau2
    v_l = p.s2_z[(0, "F")] / e1 + p.s2_z[(1, "F")] / e0 + tau2
    return RandomizationReference(v_tilde_n=v_n, v_tilde_l=v_l,
                                  rho_tilde_n=v_l / v_n)


def _needed_fits(statistic: str) -> set:
    s = statistic
    need = set()
    if s in ("tau_N", "t_N") or "PT" in s:
        need.add("N")
    if s in ("tau_F", "t_F") or s.endswith("PT_F"):
        need.add("F")
    if s in ("tau_L", "t_L") or s.endswith("PT_L"):
        need.add("L")
    if s.startswith("prepivot"):
        need.update({"N", "F", "L"})
    return need


class PermutationEngine:
    """Evaluates one or more statistics on arbitrary reassignments of a trial.

    Shares the balance kernel and the prepivot reference draws across
    permutations; regressions are refit per permutation through a lean
    QR path that reuses design buffers.  One engine instance serves one
    thread; create separate engines for parallel work.
    """

    def __init__(self, trial: ObservedTrial, statistics, a: float = np.inf,
                 hc: str = "HC2", refdraws: int = 1000, refdist_seed: int = 0):
        self.statistics = tuple(statistics)
        for s in self.statistics:
            if s not in STATISTICS:
                raise ValueError(f"unknown statistic {s!r}")
        self.a = float(a)
        self.hc = hc
        self.y = trial.y
        self.x = trial.x
        self.n = trial.z.n_units
        self.n1 = trial.z.n1
        self.j = trial.x.shape[1]
        self.xc = self.x - self.x.mean(axis=0)
        self._ones = np.ones(self.n)
        self.need = set()
        for s in self.statistics:
            self.need |= _needed_fits(s)
        self.need_phi = any("PT" in s for s in self.statistics)
        self.inv_cov = (balance_inverse_cov(self.x, self.n1)
                        if np.isfinite(self.a) else None)
        self.ref = None
        if any(s.startswith("prepivot") for s in self.statistics):
            self.ref = StudentizedPTReference.build(self.j, self.a, refdraws,
                                                    refdist_seed)
        # Reusable design buffers; only the z-dependent columns are rewritten
        # per permutation.
        self._designs = {}
        if "N" in self.need:
            self._designs["N"] = np.column_stack([self._ones,
                                                  np.zeros(self.n)])
        if "F" in self.need:
            self._designs["F"] = np.column_stack([self._ones,
                                                  np.zeros(self.n), self.x])
        if "L" in self.need:
            self._designs["L"] = np.column_stack(
                [self._ones, np.zeros(self.n), self.xc,
                 np.zeros((self.n, self.j))])

    def _fit(self, kind: str, zcol: np.ndarray):
        """Z coefficient and its robust SE, via the same QR solve as the
        shared kernel but without forming the full sandwich matrix."""
        X = self._designs[kind]
        X[:, 1] = zcol
        if kind == "L":
            X[:, 2 + self.j:] = zcol[:, None] * self.xc
        q, r = np.linalg.qr(X, mode="reduced")
        d = np.abs(np.diagonal(r))
        if d.min() <= 1e-10 * d.max():
            raise RankDeficient(f"degenerate {kind} design under permutation")
        beta = solve_triangular(r, q.T @ self.y, lower=False,
                                check_finite=False)
        resid = self.y - X @ beta
        if self.hc in ("HC2", "HC3"):
            one_minus_h = 1.0 - np.einsum("ij,ij->i", q, q)
            if np.any(one_minus_h <= 1e-12):
                raise RankDeficient("a unit has leverage 1 under permutation")
            omega = 1.0 / one_minus_h
            if self.hc == "HC3":
                omega = omega ** 2
        elif self.hc == "HC1":
            omega = np.full(self.n, self.n / (self.n - X.shape[1]))
        else:
            omega = 1.0
        # se(1)^2 = sum_i omega_i e_i^2 u_i^2 with u = X (X'X)^{-1} e_1
        e1 = np.zeros(X.shape[1])
        e1[1] = 1.0
        u = q @ solve_triangular(r, e1, lower=False, trans="T",
                                 check_finite=False)
        se2 = float(np.dot(omega * resid ** 2, u * u))
        return float(beta[1]), np.sqrt(max(se2, 0.0))

    def values(self, zb: np.ndarray) -> dict:
        """Oriented statistic values for one assignment (bool vector).

        Raises RankDeficient if any required regression is degenerate;
        callers decide whether that aborts (observed data) or counts as
        maximally extreme (permuted data).
        """
        zcol = zb.astype(np.float64)
        fits = {k: self._fit(k, zcol) for k in self.need}
        phi = None
        if self.need_phi or np.isfinite(self.a):
            if np.isfinite(self.a):
                _, m = mahalanobis(self.x, zb, self.inv_cov)
                phi = int(m < self.a)
            else:
                phi = 1  # M < inf always

        def pt(arm):
            if phi == 1:
                return fits["N"]
            return fits[arm]

        out = {}
        for s in self.statistics:
            if s.startswith("prepivot"):
                studentized = s.startswith("prepivot_t")
                arm = s[-1]
                tau_pt, se_pt = pt(arm)
                v_n = self.n * fits["N"][1] ** 2
                v_f = self.n * fits["F"][1] ** 2
                v_l = self.n * fits["L"][1] ** 2
                v_adj = v_f if arm == "F" else v_l
                if studentized:
                    t = _safe_t(tau_pt, se_pt)
                else:
                    t = np.sqrt(self.n) * abs(tau_pt)
                out[s] = self.ref.cdf(t, v_n, v_adj, v_l, arm, studentized)
            elif s.startswith("tau_PT"):
                out[s] = abs(pt(s[-1])[0])
            elif s.startswith("t_PT"):
                tau_pt, se_pt = pt(s[-1])
                out[s] = _safe_t(tau_pt, se_pt)
            elif s.startswith("tau_"):
                out[s] = abs(fits[s[-1]][0])
            else:  # t_N / t_F / t_L
                tau_hat, se_hat = fits[s[-1]]
                out[s] = _safe_t(tau_hat, se_hat)
        if phi is not None:
            out["_phi"] = phi
        return out


def at_least(val: float, obs: float) -> bool:
    """val >= obs with a tie tolerance.

    Recomputing the same statistic under a reordering of the units can
    perturb the last bits; without slack, exact ties would flip to strict
    misses and break permutation invariance.  The slack only ever adds to
    the count, so p-values stay valid (conservative).
    """
    return val >= obs - 1e-12 * max(1.0, abs(obs))


def _safe_t(tau_hat: float, se_hat: float) -> float:
    """|t| with the 0/0 case (constant outcomes) defined as 0."""
    if se_hat == 0.0:
        return 0.0 if tau_hat == 0.0 else np.inf
    return abs(tau_hat) / se_hat


def _enumerate_assignments(n: int, n1: int):
    base = np.zeros(n, dtype=bool)
    for treated in itertools.combinations(range(n), n1):
        zb = base.copy()
        zb[list(treated)] = True
        yield zb


def _draw_permutation(rng: np.random.Generator, zb: np.ndarray) -> np.ndarray:
    return zb[rng.permutation(zb.size)]


def _permuted_value(engine: PermutationEngine, zb: np.ndarray, statistic: str):
    """(value, phi) with rank-deficient permutations counted as +inf."""
    try:
        vals = engine.values(zb)
    except RankDeficient:
        return np.inf, None
    return vals[statistic], vals.get("_phi")


def run_frt(trial: ObservedTrial, spec: FRTSpec,
            rng: np.random.Generator) -> FRTResult:
    """Unconditional randomization p-value for one statistic.

    Enumerates all C(N, n1) distinct assignments when that count is within
    the enumeration cap; otherwise uses `reps` random permutations and the
    add-one p-value (1 + k) / (R + 1).
    """
    engine = PermutationEngine(trial, [spec.statistic], spec.a, spec.hc,
                               spec.refdraws, spec.refdist_seed)
    zb_obs = trial.z.z.astype(bool)
    obs_vals = engine.values(zb_obs)  # RankDeficient here aborts
    obs = obs_vals[spec.statistic]
    phi_obs = obs_vals.get("_phi")

    n_assignments = comb(trial.z.n_units, trial.z.n1)
    if n_assignments <= spec.enumeration_cap:
        count = 0
        for zb in _enumerate_assignments(trial.z.n_units, trial.z.n1):
            val, _ = _permuted_value(engine, zb, spec.statistic)
            if at_least(val, obs):
                count += 1
        return FRTResult(p_value=count / n_assignments, observed_stat=obs,
                         reps_used=n_assignments, exact=True,
                         phi_observed=phi_obs)

    count = 0
    for _ in range(spec.reps):
        zb = _draw_permutation(rng, zb_obs)
        val, _ = _permuted_value(engine, zb, spec.statistic)
        if at_least(val, obs):
            count += 1
    return FRTResult(p_value=(1 + count) / (spec.reps + 1), observed_stat=obs,
                     reps_used=spec.reps, exact=False, phi_observed=phi_obs)


def run_conditional_frt(trial: ObservedTrial, spec: FRTSpec,
                        rng: np.random.Generator) -> FRTResult:
    """Randomization p-value over assignments sharing the observed balance status."""
    if not np.isfinite(spec.a):
        return run_frt(trial, spec, rng)
    engine = PermutationEngine(trial, [spec.statistic], spec.a, spec.hc,
                               spec.refdraws, spec.refdist_seed)
    zb_obs = trial.z.z.astype(bool)
    obs_vals = engine.values(zb_obs)
    obs = obs_vals[spec.statistic]
    _, m_obs = mahalanobis(trial.x, zb_obs, engine.inv_cov)
    phi_obs = int(m_obs < spec.a)

    n_assignments = comb(trial.z.n_units, trial.z.n1)
    if n_assignments <= spec.enumeration_cap:
        count = 0
        total = 0
        for zb in _enumerate_assignments(trial.z.n_units, trial.z.n1):
            _, m = mahalanobis(trial.x, zb, engine.inv_cov)
            if int(m < spec.a) != phi_obs:
                continue
            total += 1
            val, _ = _permuted_value(engine, zb, spec.statistic)
            if at_least(val, obs):
                count += 1
        return FRTResult(p_value=count / total, observed_stat=obs,
                         reps_used=total, exact=True, phi_observed=phi_obs)

    count = 0
    accepted = 0
    attempts = 0
    max_attempts = 100 * spec.reps + 10000
    while accepted < spec.reps:
        if attempts >= max_attempts or (attempts >= 5000 and accepted == 0):
            raise AcceptanceExhausted(
                f"conditioning set acceptance too low: {accepted}/{attempts}")
        zb = _draw_permutation(rng, zb_obs)
        attempts += 1
        _, m = mahalanobis(trial.x, zb, engine.inv_cov)
        if int(m < spec.a) != phi_obs:
            continue
        accepted += 1
        val, _ = _permuted_value(engine, zb, spec.statistic)
        if at_least(val, obs):
            count += 1
    return FRTResult(p_value=(1 + count) / (spec.reps + 1), observed_stat=obs,
                     reps_used=spec.reps, exact=False, phi_observed=phi_obs)


def prepivot_statistic(trial: ObservedTrial, base: str, arm: str, a: float,
                       hc: str = "HC2", refdraws: int = 1000,
                       seed: int = 0) -> float:
    """Prepivoted statistic T' = F_hat(T) on the observed trial.

    base "abs_tau_PT" starts from sqrt(N) |tau_pt|; "abs_t_PT" from
    |tau_pt| / se_pt.  T' always lies in [0, 1].
    """
    if base not in ("abs_tau_PT", "abs_t_PT"):
        raise ValueError(f"unknown base {base!r}")
    stat = ("prepivot_t_PT_" if base == "abs_t_PT" else "prepivot_PT_") + arm
    engine = PermutationEngine(trial, [stat], a, hc, refdraws, seed)
    return engine.values(trial.z.z.astype(bool))[stat]


def run(trial: ObservedTrial, spec: FRTSpec, rng: np.random.Generator) -> FRTResult:
    """Dispatch on spec.mode."""
    if spec.mode == "conditional":
        return run_conditional_frt(trial, spec, rng)
    return run_frt(trial, spec, rng)
