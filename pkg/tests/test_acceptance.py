"""End-to-end acceptance suite.

One test per criterion; each prints a single pass/fail line (visible with
-v / -s) and enforces its runtime budget. Heavy Monte Carlo runs are shared
through module-scoped fixtures.
"""

import itertools
import json
import time

import numpy as np
import pytest
from scipy.integrate import quad

from ptbalance import rng as rngmod
from ptbalance.design import Assignment, balance_inverse_cov, mahalanobis
from ptbalance.estimators import ObservedTrial, adjustment_slopes, estimate_N
from ptbalance.frt import PermutationEngine, at_least
from ptbalance.population import FinitePopulation, true_parameters
from ptbalance.refdist import (
    MixtureComponent,
    MixtureReference,
    TruncatedGaussianComponent,
    mixture_quantile,
    pi_a,
    pt_mixture,
    pt_specific_ci,
    sample_truncated,
)
from ptbalance.simharness import (
    SimulationConfig,
    chi2_quantile,
    frt_type1_study,
    rem_vs_cr_overlay,
    run_simulation,
)

NON_PREPIVOT_STATISTICS = (
    "tau_N", "tau_F", "tau_L", "tau_PT_F", "tau_PT_L",
    "t_N", "t_F", "t_L", "t_PT_F", "t_PT_L",
)


def report(num: int, ok: bool, detail: str):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num}: {detail}"
    print(line)
    assert ok, line


def enumeration_70(pop):
    out = []
    for treated in itertools.combinations(range(8), 4):
        zb = np.zeros(8, dtype=np.int8)
        zb[list(treated)] = 1
        out.append(zb)
    return out


# ---------------------------------------------------------------- criterion 1

def test_criterion_1_exactness_oracle():
    start = time.perf_counter()
    g = np.random.default_rng(101)
    y = g.standard_normal(8)
    x = g.standard_normal((8, 1))
    pop = FinitePopulation(y0=y, y1=y.copy(), x=x)  # sharp null holds
    a = chi2_quantile(0.5, 1)

    assignments = enumeration_70(pop)
    trial0 = ObservedTrial.realize(pop, Assignment.from_vector(assignments[0]))
    engine = PermutationEngine(trial0, NON_PREPIVOT_STATISTICS, a=a)
    values = [engine.values(zb.astype(bool)) for zb in assignments]

    worst = ""
    ok = True
    for stat in NON_PREPIVOT_STATISTICS:
        col = np.array([v[stat] for v in values])
        ps = np.array([np.mean([at_least(vj, vi) for vj in col])
                       for vi in col])
        for alpha in np.unique(ps):
            if np.mean(ps <= alpha) > alpha + 1e-12:
                ok = False
                worst = f"{stat} violates P(p<=a)<=a at a={alpha:.4f}"
    elapsed = time.perf_counter() - start
    ok = ok and elapsed < 5.0
    report(1, ok, worst or
           f"all 10 statistics exactly super-uniform over 70 assignments "
           f"({elapsed:.2f}s)")


# ---------------------------------------------------------------- criterion 2

def test_criterion_2_unbiasedness_and_variance_oracle():
    g = np.random.default_rng(102)
    x = g.standard_normal((8, 1))
    y0 = 1.5 * x[:, 0] + g.standard_normal(8)
    y1 = -0.5 * x[:, 0] + 2.0 + g.standard_normal(8)
    pop = FinitePopulation(y0=y0, y1=y1, x=x)

    taus = []
    for zb in enumeration_70(pop):
        trial = ObservedTrial.realize(pop, Assignment.from_vector(zb))
        taus.append(estimate_N(trial).tau_hat)
    taus = np.array(taus)

    mean_err = abs(taus.mean() - pop.tau)
    e1 = 0.5
    s2_0 = np.var(pop.y0, ddof=1)
    s2_1 = np.var(pop.y1, ddof=1)
    s2_t = np.var(pop.y1 - pop.y0, ddof=1)
    neyman = s2_0 / (8 * (1 - e1)) + s2_1 / (8 * e1) - s2_t / 8
    var_err = abs(taus.var() - neyman)
    p = true_parameters(pop, e1)
    v_err = abs(8 * taus.var() - p.v["N"])

    ok = mean_err < 1e-12 and var_err < 1e-10 and v_err < 1e-9
    report(2, ok, f"mean err {mean_err:.2e}, Neyman variance err {var_err:.2e}")


# ---------------------------------------------------------------- criterion 3

def test_criterion_3_identity_suite():
    from ptbalance.design import complete_randomization
    from ptbalance.estimators import estimate_F, estimate_L

    max_err = 0.0
    for i in range(1000):
        g = np.random.default_rng(1000 + i)
        n = 30
        x = g.standard_normal((n, 2))
        x = x - x.mean(axis=0)
        y = g.standard_normal(n) + x @ g.standard_normal(2)
        z = complete_randomization(n, 15, rngmod.stream(i, rngmod.ASSIGNMENT))
        trial = ObservedTrial(z=z, y=y, x=x)
        zb = z.z.astype(bool)
        tau_x = x[zb].mean(axis=0) - x[~zb].mean(axis=0)
        tau_n = estimate_N(trial).tau_hat
        slopes = adjustment_slopes(trial)
        err_f = abs(estimate_F(trial).tau_hat - (tau_n - slopes["F"] @ tau_x))
        err_l = abs(estimate_L(trial).tau_hat - (tau_n - slopes["L"] @ tau_x))
        max_err = max(max_err, err_f, err_l)
    ok = max_err < 1e-10
    report(3, ok, f"max identity error over 1000 trials: {max_err:.2e}")


# ---------------------------------------------------------- criteria 4 and 6

@pytest.fixture(scope="module")
def efficiency_runs():
    runs = {}
    t0 = time.perf_counter()
    for q in (0.2, 0.8):
        cfg = SimulationConfig(recipe="efficiency", n1=100,
                               replications=10 ** 4, seed=20, a_quantile=q,
                               conditional_breakdown=True)
        runs[q] = rem_vs_cr_overlay(cfg)
    runs["elapsed"] = time.perf_counter() - t0
    return runs


def sd_se(sd, r):
    return sd / np.sqrt(2.0 * (r - 1))


def test_criterion_4_figure2_sd_ordering(efficiency_runs):
    r = 10 ** 4
    checks = []
    for q in (0.2, 0.8):
        pm = efficiency_runs[q].per_method
        sd_l, sd_pt, sd_n = (pm["L"]["sd"], pm["PT_L"]["sd"], pm["N"]["sd"])
        gap1 = sd_pt - sd_l
        gap2 = sd_n - sd_pt
        se1 = np.hypot(sd_se(sd_l, r), sd_se(sd_pt, r))
        se2 = np.hypot(sd_se(sd_n, r), sd_se(sd_pt, r))
        checks.append(gap1 > 3 * se1 and gap2 > 3 * se2)
    pt02 = efficiency_runs[0.2].per_method["PT_L"]["sd"]
    pt08 = efficiency_runs[0.8].per_method["PT_L"]["sd"]
    se_inc = np.hypot(sd_se(pt02, r), sd_se(pt08, r))
    increasing = (pt08 - pt02) > 3 * se_inc
    elapsed = efficiency_runs["elapsed"]
    ok = all(checks) and increasing and elapsed < 120.0
    report(4, ok,
           f"sd(L) < sd(PT_L) < sd(N) at both thresholds, "
           f"sd(PT_L): {pt02:.4f} -> {pt08:.4f} increasing in a "
           f"({elapsed:.0f}s)")


def test_criterion_6_rem_duality(efficiency_runs):
    s = efficiency_runs[0.2]
    pm = s.per_method
    r = 10 ** 4
    r1 = s.n_phi1
    sd_l, rem_l = pm["L"]["sd"], pm["L"]["rem_sd"]
    within5 = abs(rem_l - sd_l) / sd_l < 0.05
    sd_n, rem_n = pm["N"]["sd"], pm["N"]["rem_sd"]
    se = np.hypot(sd_se(sd_n, r), sd_se(rem_n, r1))
    tightens = (sd_n - rem_n) > 3 * se
    ok = within5 and tightens
    report(6, ok,
           f"sd(L|M<a)/sd(L) = {rem_l / sd_l:.3f}; "
           f"sd(N|M<a) = {rem_n:.4f} < sd(N) = {sd_n:.4f}")


# ---------------------------------------------------------------- criterion 5

def test_criterion_5_coverage_table():
    start = time.perf_counter()
    results = {}
    for q in (0.75, 0.80, 0.85):
        cfg = SimulationConfig(recipe="coverage", n1=100,
                               replications=10 ** 4, seed=1, sigma_eps=1.5,
                               a_quantile=q, conditional_breakdown=True)
        s = run_simulation(cfg)
        pm = s.per_method
        results[q] = (pm["PT_F"]["coverage"], pm["F"]["coverage_phi0"],
                      pm["N"]["coverage"])
    elapsed = time.perf_counter() - start

    ok = all(pt < 0.948 and f0 < 0.90 and n > 0.96
             for pt, f0, n in results.values())
    pt, f0, n = results[0.75]
    row1 = (abs(pt - 0.940) <= 0.015 and abs(f0 - 0.819) <= 0.015
            and abs(n - 0.968) <= 0.015)
    ok = ok and row1 and elapsed < 600.0
    report(5, ok,
           f"pi_a=0.75 coverages PT_F/F|phi0/N = "
           f"{100 * pt:.1f}/{100 * f0:.1f}/{100 * n:.1f} "
           f"(targets 94.0/81.9/96.8 within 1.5); bands hold for "
           f"pi_a in {{0.75,0.80,0.85}} ({elapsed:.0f}s)")


# ---------------------------------------------------------------- criterion 7

def test_criterion_7_frt_validity_bands():
    start = time.perf_counter()
    rates = {}
    specs = {
        "frt_p1": ("tau_PT_F", "tau_PT_L", "t_L", "prepivot_PT_F",
                   "prepivot_PT_L", "prepivot_t_PT_F", "prepivot_t_PT_L"),
        "frt_p2": ("t_PT_F", "t_PT_L", "t_L", "prepivot_PT_F",
                   "prepivot_PT_L", "prepivot_t_PT_F", "prepivot_t_PT_L"),
    }
    for recipe, stats in specs.items():
        cfg = SimulationConfig(recipe=recipe, n1=10, replications=1000,
                               seed=31, a_quantile=0.75, frt_statistics=stats,
                               frt_reps=500, threads=4)
        s = frt_type1_study(cfg)
        rates[recipe] = {k: v["reject_0.05"] for k, v in s.per_method.items()}
    elapsed = time.perf_counter() - start

    p1, p2 = rates["frt_p1"], rates["frt_p2"]
    invalid_p1 = p1["tau_PT_F"] > 0.065 and p1["tau_PT_L"] > 0.065
    invalid_p2 = p2["t_PT_F"] > 0.065 and p2["t_PT_L"] > 0.065
    t_l_ok = all(0.03 <= r["t_L"] <= 0.07 for r in (p1, p2))
    prepivot_ok = all(0.02 <= r[s] <= 0.07
                      for r in (p1, p2)
                      for s in ("prepivot_PT_F", "prepivot_PT_L",
                                "prepivot_t_PT_F", "prepivot_t_PT_L"))
    ok = invalid_p1 and invalid_p2 and t_l_ok and prepivot_ok
    ok = ok and elapsed < 900.0
    report(7, ok,
           f"P1 tau_PT {p1['tau_PT_F']:.3f}/{p1['tau_PT_L']:.3f} > 0.065; "
           f"P2 t_PT {p2['t_PT_F']:.3f}/{p2['t_PT_L']:.3f} > 0.065; "
           f"t_L in band: {t_l_ok}; prepivots in [0.02,0.07]: {prepivot_ok} "
           f"({elapsed:.0f}s)")


# ---------------------------------------------------------------- criterion 8

def test_criterion_8_reference_distribution_suite():
    # pi_a vs quadrature oracle to 1e-8.
    from math import gamma
    def chi2_cdf(j, a):
        dens = lambda t: t ** (j / 2 - 1) * np.exp(-t / 2) / (
            2 ** (j / 2) * gamma(j / 2))
        return quad(dens, 0, a, epsabs=1e-12)[0]
    pi_ok = all(abs(pi_a(j, a) - chi2_cdf(j, a)) < 1e-8
                for j, a in [(1, 0.8), (3, 2.0), (5, 11.07)])

    # Var(L) < 1 < Var(L') at 3-sigma with 1e6 draws.
    a = chi2_quantile(0.5, 1)
    g = rngmod.stream(801, rngmod.REFDIST)
    v_in = sample_truncated(TruncatedGaussianComponent("inside", 1, a),
                            10 ** 6, g).var()
    v_out = sample_truncated(TruncatedGaussianComponent("outside", 1, a),
                             10 ** 6, g).var()
    band = 3 * np.sqrt(2.0 / 10 ** 6) * 3  # generous 3-sigma envelope
    var_ok = v_in < 1.0 - band / 10 and v_out > 1.0 + band / 10

    # Symmetric and monotone quantiles.
    ref = pt_mixture(3.0, 1.5, 1.0, j=2, a=chi2_quantile(0.6, 2), arm="F",
                     sample_count=10 ** 6, seed=802)
    ps = [0.05, 0.25, 0.5, 0.75, 0.95]
    qs = mixture_quantile(ref, ps)
    mono_ok = bool(np.all(np.diff(qs) > 0))
    sym_ok = all(abs(q + mixture_quantile(ref, 1 - p)) < 0.02
                 for p, q in zip(ps, qs))

    # pt_specific_ci collapses to normal CIs in the degenerate-scale cases.
    half = 1.959964 * np.sqrt(2.0 / 100)
    lo, hi = pt_specific_ci(0.0, 2.0, 2.0, 2.0, 1, chi2_quantile(0.75, 1),
                            1, "F", 0.05, 100, sample_count=10 ** 6, seed=803)
    c1 = abs(hi - half) < 0.01 and abs(lo + half) < 0.01
    lo, hi = pt_specific_ci(0.0, 5.0, 2.0, 2.0, 1, chi2_quantile(0.75, 1),
                            0, "F", 0.05, 100, sample_count=10 ** 6, seed=804)
    c2 = abs(hi - half) < 0.01 and abs(lo + half) < 0.01
    ci_ok = c1 and c2

    ok = pi_ok and var_ok and mono_ok and sym_ok and ci_ok
    report(8, ok,
           f"pi_a quadrature match: {pi_ok}; Var(L)={v_in:.3f} < 1 < "
           f"Var(L')={v_out:.3f}; monotone: {mono_ok}; symmetric: {sym_ok}; "
           f"CI collapse: {ci_ok}")


# ---------------------------------------------------------------- criterion 9

def test_criterion_9_determinism_across_threads(tmp_path):
    digests = {}
    for threads in (1, 8):
        base = tmp_path / f"est{threads}"
        cfg = SimulationConfig(recipe="coverage", n1=100, replications=400,
                               seed=9, sigma_eps=1.5, a_quantile=0.75,
                               conditional_breakdown=True, threads=threads,
                               output_path=str(base))
        run_simulation(cfg)
        fbase = tmp_path / f"frt{threads}"
        fcfg = SimulationConfig(recipe="frt_p1", n1=10, replications=12,
                                seed=9, a_quantile=0.5, threads=threads,
                                frt_statistics=("t_PT_L", "prepivot_t_PT_L"),
                                frt_reps=200, output_path=str(fbase))
        frt_type1_study(fcfg)
        digests[threads] = tuple(
            (tmp_path / name).read_bytes()
            for name in (f"est{threads}.csv", f"est{threads}.json",
                         f"frt{threads}.csv", f"frt{threads}.json"))
    ok = digests[1] == digests[8]
    report(9, ok, "CSV and JSON byte-identical at 1 and 8 threads "
                  "(estimation and FRT studies)")
