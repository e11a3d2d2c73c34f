"""Config-driven Monte Carlo studies over repeated randomizations.

One population is drawn per study (the science table stays fixed across
replications); each replication draws an assignment from its own RNG
substream, so results are byte-identical at any thread count.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.special import gammaincinv, ndtri

from . import rng as rngmod
from .design import complete_randomization
from .errors import ConfigError, EmptyConditionSet, RankDeficient
from .estimators import METHODS, ObservedTrial, estimate_F, estimate_L, estimate_N
from .frt import STATISTICS, PermutationEngine, _draw_permutation, at_least
from .design import mahalanobis
from .population import RECIPES, generate_population, true_parameters

ALPHA_GRID = (0.01, 0.05, 0.10)

SCHEMA_VERSION = 1


def chi2_quantile(p: float, j: int) -> float:
    """Inverse chi-square CDF, used to translate "chi2_quantile(p)" thresholds."""
    if not 0.0 < p < 1.0:
        raise ConfigError(f"quantile probability must be in (0,1), got {p}")
    return float(2.0 * gammaincinv(j / 2.0, p))


@dataclass(frozen=True)
class SimulationConfig:
    recipe: str
    n1: int
    replications: int
    seed: int
    sigma_eps: Optional[float] = None
    a: Optional[float] = None              # direct threshold
    a_quantile: Optional[float] = None     # or chi-square quantile level
    methods: tuple = ("N", "F", "L", "PT_F", "PT_L")
    conditional_breakdown: bool = False
    alpha: float = 0.05
    hc: str = "HC2"
    threads: int = 1
    output_path: Optional[str] = None
    config_id: Optional[str] = None
    # FRT study knobs
    frt_statistics: tuple = ()
    frt_mode: str = "unconditional"
    frt_reps: int = 500
    frt_refdraws: int = 1000
    population_redraws: int = 1

    def __post_init__(self):
        if self.recipe not in RECIPES:
            raise ConfigError(f"unknown recipe {self.recipe!r}")
        if self.replications < 1:
            raise ConfigError("replications must be >= 1")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}")
        for s in self.frt_statistics:
            if s not in STATISTICS:
                raise ConfigError(f"unknown statistic {s!r}")
        if self.a is None and self.a_quantile is None:
            object.__setattr__(self, "a", float("inf"))
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "frt_statistics", tuple(self.frt_statistics))
        if self.config_id is None:
            object.__setattr__(
                self, "config_id", f"{self.recipe}-n1{self.n1}-seed{self.seed}")

    def resolve_a(self, j: int) -> float:
        if self.a_quantile is not None:
            return chi2_quantile(self.a_quantile, j)
        return float(self.a)

    @classmethod
    def from_dict(cls, d: dict) -> "SimulationConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)


@dataclass
class SimulationSummary:
    config: dict
    seed: int
    tau_true: float
    a_threshold: float
    n_phi1: int
    n_phi0: int
    runtime_seconds: float
    alpha_grid: tuple
    per_method: dict = field(default_factory=dict)
    p_values: Optional[dict] = None  # statistic -> list, FRT studies only

    def to_json(self) -> str:
        payload = {"schema_version": SCHEMA_VERSION, **asdict(self)}
        # Serialized artifacts must be byte-identical across reruns and
        # thread counts, so wall time and execution knobs stay out.
        payload.pop("runtime_seconds")
        payload["config"] = {k: v for k, v in payload["config"].items()
                             if k not in ("threads", "output_path")}
        return json.dumps(payload, indent=2, sort_keys=True)

    def csv_rows(self):
        """Long-format rows: (config_id, method, metric, value, mc_se)."""
        cid = self.config.get("config_id", "")
        rows = []
        r_total = self.n_phi1 + self.n_phi0
        for method, metrics in self.per_method.items():
            for metric, value in metrics.items():
                mc_se = ""
                if metric.startswith(("coverage", "reject")):
                    p = value
                    denom = r_total
                    if metric.endswith("phi1"):
                        denom = self.n_phi1
                    elif metric.endswith("phi0"):
                        denom = self.n_phi0
                    if denom > 0 and not np.isnan(p):
                        mc_se = repr(float(np.sqrt(p * (1 - p) / denom)))
                rows.append((cid, method, metric,
                             "" if value is None or (isinstance(value, float)
                                                     and np.isnan(value))
                             else repr(float(value)), mc_se))
        return rows

    def write(self, path: str):
        """Write <path>.csv and <path>.json deterministically."""
        lines = ["config_id,method,metric,value,mc_se"]
        lines += [",".join(map(str, row)) for row in self.csv_rows()]
        with open(path + ".csv", "w") as fh:
            fh.write("\n".join(lines) + "\n")
        with open(path + ".json", "w") as fh:
            fh.write(self.to_json() + "\n")


def _build_population(config: SimulationConfig):
    return generate_population(config.recipe, config.seed,
                               sigma_eps=config.sigma_eps)


def _chunked_indices(n: int, chunks: int):
    bounds = np.linspace(0, n, chunks + 1).astype(int)
    return [(int(bounds[k]), int(bounds[k + 1])) for k in range(chunks)
            if bounds[k + 1] > bounds[k]]


def _run_estimation_replications(config: SimulationConfig, pop):
    """Per-replication estimates for all base methods plus the balance flag."""
    n = pop.n_units
    j = pop.n_covariates
    a = config.resolve_a(j)
    reps = config.replications
    base_methods = {"N", "F", "L"}
    tau = {m: np.empty(reps) for m in base_methods}
    se = {m: np.empty(reps) for m in base_methods}
    phi = np.empty(reps, dtype=np.int8)
    m_stat = np.empty(reps)

    from .design import balance_inverse_cov
    inv_cov = balance_inverse_cov(pop.x, config.n1)

    def work(lo, hi):
        for i in range(lo, hi):
            arng = rngmod.stream(config.seed, rngmod.ASSIGNMENT, i)
            assignment = complete_randomization(n, config.n1, arng)
            trial = ObservedTrial.realize(pop, assignment)
            _, m = mahalanobis(pop.x, assignment.z.astype(bool), inv_cov)
            m_stat[i] = m
            phi[i] = int(m < a)
            rn = estimate_N(trial, config.hc, config.alpha)
            rf = estimate_F(trial, config.hc, config.alpha)
            rl = estimate_L(trial, config.hc, config.alpha)
            for tag, rep in (("N", rn), ("F", rf), ("L", rl)):
                tau[tag][i] = rep.tau_hat
                se[tag][i] = rep.se_hat

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(work, lo, hi)
                       for lo, hi in _chunked_indices(reps, config.threads)]
            for f in futures:
                f.result()
    else:
        work(0, reps)

    # Preliminary-test composites are exact mixtures of the base columns.
    for arm in ("F", "L"):
        tau[f"PT_{arm}"] = np.where(phi == 1, tau["N"], tau[arm])
        se[f"PT_{arm}"] = np.where(phi == 1, se["N"], se[arm])
    return tau, se, phi, m_stat, a


def _method_metrics(tau: np.ndarray, se: np.ndarray, phi: np.ndarray,
                    tau_true: float, alpha: float,
                    conditional: bool) -> dict:
    q = float(ndtri(1.0 - alpha / 2.0))
    lo = tau - q * se
    hi = tau + q * se
    cover = ((lo <= tau_true) & (tau_true <= hi)).astype(float)
    reps = tau.size
    b1 = phi == 1
    b0 = ~b1
    n1, n0 = int(b1.sum()), int(b0.sum())
    centered = tau - tau_true
    out = {
        "mean": float(tau.mean()),
        "sd": float(tau.std(ddof=1)) if reps > 1 else 0.0,
        "bias": float(tau.mean() - tau_true),
        "coverage": float(cover.mean()),
        "mean_ci_length": float((hi - lo).mean()),
        # Empirical 0.025 / 0.975 quantiles of tau_hat - tau (spread bands).
        "q025_centered": float(np.quantile(centered, 0.025)),
        "q975_centered": float(np.quantile(centered, 0.975)),
    }
    if conditional:
        cov1 = float(cover[b1].mean()) if n1 else float("nan")
        cov0 = float(cover[b0].mean()) if n0 else float("nan")
        out["coverage_phi1"] = cov1
        out["coverage_phi0"] = cov0
        out["sd_phi1"] = float(tau[b1].std(ddof=1)) if n1 > 1 else float("nan")
        out["sd_phi0"] = float(tau[b0].std(ddof=1)) if n0 > 1 else float("nan")
        if n1:
            out["q025_centered_phi1"] = float(np.quantile(centered[b1], 0.025))
            out["q975_centered_phi1"] = float(np.quantile(centered[b1], 0.975))
    for a_level in ALPHA_GRID:
        qa = float(ndtri(1.0 - a_level / 2.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = np.where(se > 0, np.abs(tau) / se, np.where(tau == 0, 0.0, np.inf))
        out[f"reject_{a_level:g}"] = float(np.mean(t > qa))
    return out


def run_simulation(config: SimulationConfig) -> SimulationSummary:
    """Estimate-level Monte Carlo study (efficiency / coverage designs)."""
    t0 = time.perf_counter()
    pop = _build_population(config)
    params = true_parameters(pop, config.n1 / pop.n_units)
    tau, se, phi, _, a = _run_estimation_replications(config, pop)

    summary = SimulationSummary(
        config=asdict(config), seed=config.seed, tau_true=params.tau,
        a_threshold=a, n_phi1=int((phi == 1).sum()),
        n_phi0=int((phi == 0).sum()), runtime_seconds=0.0,
        alpha_grid=ALPHA_GRID)
    for method in config.methods:
        summary.per_method[method] = _method_metrics(
            tau[method], se[method], phi, params.tau, config.alpha,
            config.conditional_breakdown)
    summary.runtime_seconds = round(time.perf_counter() - t0, 3)
    if config.output_path:
        summary.write(config.output_path)
    return summary


def run_population_redraws(config: SimulationConfig) -> list:
    """Repeat the whole study over independently redrawn populations.

    Each redraw is a full study with its own derived seed, so conclusions
    that depend on the particular science table can be checked for
    population-to-population variability.
    """
    if config.population_redraws < 1:
        raise ConfigError("population_redraws must be >= 1")
    child_seeds = np.random.SeedSequence(config.seed).generate_state(
        config.population_redraws, dtype=np.uint64)
    summaries = []
    for r, s in enumerate(child_seeds):
        sub = SimulationConfig(**{**asdict(config), "seed": int(s),
                                  "population_redraws": 1,
                                  "output_path": None,
                                  "config_id": f"{config.config_id}-pop{r}"})
        summaries.append(run_simulation(sub))
    return summaries


def rem_vs_cr_overlay(config: SimulationConfig) -> SimulationSummary:
    """CR study plus rerandomization columns from the balanced subset.

    The ReM distribution of each estimator is summarized over the complete
    randomization draws that satisfy M < a; no separate rejection sampler.
    """
    cfg = SimulationConfig(**{**asdict(config), "conditional_breakdown": True,
                              "output_path": None})
    summary = run_simulation(cfg)
    if summary.n_phi1 == 0:
        raise EmptyConditionSet("no draw satisfied M < a")
    for method in cfg.methods:
        metrics = summary.per_method[method]
        metrics["rem_sd"] = metrics["sd_phi1"]
        metrics["rem_q025_centered"] = metrics.get("q025_centered_phi1")
        metrics["rem_q975_centered"] = metrics.get("q975_centered_phi1")
    summary.config = asdict(config)
    if config.output_path:
        summary.write(config.output_path)
    return summary


def frt_type1_study(config: SimulationConfig) -> SimulationSummary:
    """Outer loop over assignments, inner randomization test per replication.

    Emits per-replication p-values for every requested statistic plus
    rejection rates on the alpha grid.
    """
    if not config.frt_statistics:
        raise ConfigError("frt_statistics must be nonempty for an FRT study")
    t0 = time.perf_counter()
    pop = _build_population(config)
    n = pop.n_units
    j = pop.n_covariates
    a = config.resolve_a(j)
    reps = config.replications
    stats = config.frt_statistics
    # a = inf conditions on nothing; fall back to the unconditional test.
    conditional = config.frt_mode == "conditional" and np.isfinite(a)
    pvals = {s: np.empty(reps) for s in stats}

    def work(lo, hi):
        for i in range(lo, hi):
            arng = rngmod.stream(config.seed, rngmod.ASSIGNMENT, i)
            assignment = complete_randomization(n, config.n1, arng)
            trial = ObservedTrial.realize(pop, assignment)
            engine = PermutationEngine(trial, stats, a, config.hc,
                                       config.frt_refdraws,
                                       refdist_seed=config.seed)
            zb_obs = assignment.z.astype(bool)
            obs = engine.values(zb_obs)
            phi_obs = obs.get("_phi")
            counts = {s: 0 for s in stats}
            prng = rngmod.stream(config.seed, rngmod.PERMUTATION, i)
            accepted = 0
            attempts = 0
            while accepted < config.frt_reps:
                attempts += 1
                if attempts > 100 * config.frt_reps + 10000:
                    raise EmptyConditionSet("conditional FRT acceptance too low")
                zb = _draw_permutation(prng, zb_obs)
                if conditional:
                    _, m = mahalanobis(pop.x, zb, engine.inv_cov)
                    if int(m < a) != phi_obs:
                        continue
                accepted += 1
                try:
                    vals = engine.values(zb)
                except RankDeficient:
                    vals = {s: np.inf for s in stats}
                for s in stats:
                    if at_least(vals[s], obs[s]):
                        counts[s] += 1
            for s in stats:
                pvals[s][i] = (1 + counts[s]) / (config.frt_reps + 1)

    if config.threads > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            futures = [pool.submit(work, lo, hi)
                       for lo, hi in _chunked_indices(reps, config.threads)]
            for f in futures:
                f.result()
    else:
        work(0, reps)

    params = true_parameters(pop, config.n1 / n)
    summary = SimulationSummary(
        config=asdict(config), seed=config.seed, tau_true=params.tau,
        a_threshold=a, n_phi1=0, n_phi0=0, runtime_seconds=0.0,
        alpha_grid=ALPHA_GRID,
        p_values={s: [float(v) for v in pvals[s]] for s in stats})
    summary.n_phi1 = reps  # p-values are unconditional counts here
    for s in stats:
        metrics = {}
        for a_level in ALPHA_GRID:
            metrics[f"reject_{a_level:g}"] = float(np.mean(pvals[s] <= a_level))
        summary.per_method[s] = metrics
    summary.runtime_seconds = round(time.perf_counter() - t0, 3)
    if config.output_path:
        summary.write(config.output_path)
    return summary


def histogram_rows(p_values: np.ndarray, bins: int = 20):
    """(bin_low, bin_high, count) rows over (0, 1) for p-value histograms."""
    counts, edges = np.histogram(np.asarray(p_values), bins=bins, range=(0.0, 1.0))
    return [(float(edges[k]), float(edges[k + 1]), int(counts[k]))
            for k in range(bins)]


def write_plot_data(summary: SimulationSummary, path: str, bins: int = 20):
    """Emit plot-ready CSV: p-value histograms (FRT studies) or the
    per-method 0.025/0.975 quantile bands (estimation studies)."""
    if summary.p_values:
        lines = ["statistic,bin_low,bin_high,count"]
        for s, p in sorted(summary.p_values.items()):
            for lo, hi, c in histogram_rows(np.asarray(p), bins):
                lines.append(f"{s},{lo!r},{hi!r},{c}")
    else:
        lines = ["method,q025_centered,q975_centered"]
        for m, metrics in summary.per_method.items():
            lines.append(f"{m},{metrics['q025_centered']!r},"
                         f"{metrics['q975_centered']!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
