"""Residual diagnostics (time rescaling, super thinning) and structural checks."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np
from scipy import stats

from . import kernels as K
from .cascades import Cascade
from .model import ComponentParams, intensity
from .simulate import SimConfig, simulate

SMALL_SAMPLE = 35  # below this, KS p-values use the exact distribution
GRID_FRACTION = 1e-3


class PValues(NamedTuple):
    ks: float
    cvm: float


def _pairwise_compensator(params: ComponentParams, cascade: Cascade, t: np.ndarray,
                          marks: np.ndarray) -> np.ndarray:
    times = cascade.times
    out = marks[0] * K.integral(params.kernels.root, np.maximum(t - times[0], 0.0))
    chunk = max(1, 2_000_000 // max(len(times), 1))
    for a in range(0, len(t), chunk):
        lag = np.maximum(t[a:a + chunk, None] - times[None, 1:], 0.0)
        out[a:a + chunk] += K.integral(params.kernels.non_root, lag) @ marks[1:]
    return out


def rescale_times(params: ComponentParams, cascade: Cascade) -> np.ndarray:
    """Compensator ``int_0^{t_i} lambda(s) ds`` at every event time (root included)."""
    return _pairwise_compensator(params, cascade, cascade.times, params.marks_for(cascade))


class SuperThinResult(NamedTuple):
    times: np.ndarray
    k: float
    horizon: float
    n_retained: int
    n_added: int


def super_thin(params: ComponentParams, cascade: Cascade, rng=None,
               k: float | None = None) -> SuperThinResult:
    """Thin observed retweets where the intensity exceeds ``k`` and superpose a
    Poisson process with rate ``max(k - lambda, 0)``.

    Under a correct intensity the joint points form a rate-``k`` Poisson process.
    ``k`` defaults to the midpoint of the intensity's range on ``[0, T]``.
    """
    rng = np.random.default_rng(rng)
    T = cascade.horizon
    m = params.marks_for(cascade)
    grid = np.union1d(np.linspace(0.0, T, int(round(1 / GRID_FRACTION)) + 1), cascade.times)
    lam_grid = intensity(params, cascade, grid, marks=m)
    lo, hi = float(lam_grid.min()), float(lam_grid.max())
    if not hi > 0:
        raise ValueError("insufficient intensity support: intensity vanishes on [0, T]")
    if k is None:
        k = 0.5 * (lo + hi)
    obs = cascade.times[1:]
    lam_obs = intensity(params, cascade, obs, marks=m)
    with np.errstate(divide="ignore"):
        retention_prob = np.where(lam_obs > 0, np.minimum(k / lam_obs, 1.0), 1.0)
    kept = obs[rng.random(len(obs)) < retention_prob]
    n_cand = rng.poisson(k * T)
    cand = np.sort(rng.uniform(0.0, T, n_cand))
    mu = np.maximum(k - intensity(params, cascade, cand, marks=m), 0.0) if n_cand else cand
    added = cand[rng.random(n_cand) * k < mu]
    joint = np.sort(np.concatenate([kept, added]))
    return SuperThinResult(joint, float(k), T, len(kept), len(added))


# ---- tests on a (putatively) homogeneous Poisson sample ---------------------


def _ks_p(x: np.ndarray, cdf) -> float:
    method = "exact" if len(x) < SMALL_SAMPLE else "asymp"
    return float(stats.kstest(x, cdf, method=method).pvalue)


def _cvm_p(x: np.ndarray, cdf) -> float:
    return float(min(max(stats.cramervonmises(x, cdf).pvalue, 0.0), 1.0))


def test_conditional_uniformity(times) -> PValues | None:
    """KS and CvM p-values for ``t_1/t_M, ..., t_{M-1}/t_M`` against Uniform(0, 1).

    Returns None when fewer than 5 events are available.
    """
    t = np.sort(np.asarray(times, dtype=float))
    if len(t) < 5 or not t[-1] > 0:
        return None
    u = t[:-1] / t[-1]
    cdf = stats.uniform().cdf
    return PValues(_ks_p(u, cdf), _cvm_p(u, cdf))


def test_exponential_interarrivals(times, k: float) -> PValues | None:
    """KS and CvM p-values for interarrivals (from 0) against Exponential(rate k)."""
    t = np.sort(np.asarray(times, dtype=float))
    if len(t) < 5:
        return None
    s = np.diff(t, prepend=0.0)
    cdf = stats.expon(scale=1.0 / k).cdf
    return PValues(_ks_p(s, cdf), _cvm_p(s, cdf))


def ljung_box(x, lags: int) -> tuple[float, float]:
    x = np.asarray(x, dtype=float)
    n = len(x)
    d = x - x.mean()
    denom = d @ d
    r = np.array([d[k:] @ d[:-k] for k in range(1, lags + 1)]) / denom
    q = n * (n + 2) * np.sum(r**2 / (n - np.arange(1, lags + 1)))
    return float(q), float(stats.chi2.sf(q, lags))


def test_independence(times) -> float | None:
    """Ljung-Box p-value on interarrival times, ``min(10, n // 5)`` lags."""
    t = np.sort(np.asarray(times, dtype=float))
    if len(t) < 20:
        return None
    s = np.diff(t, prepend=0.0)
    if np.ptp(s) <= 1e-12 * max(abs(s).max(), 1.0):
        return None
    return ljung_box(s, min(10, len(s) // 5))[1]


TEST_NAMES = ("uniformity_ks", "uniformity_cvm", "interarrival_ks", "interarrival_cvm",
              "ljung_box")


def residual_pvalues(params: ComponentParams, cascade: Cascade, rng=None) -> dict:
    st = super_thin(params, cascade, rng)
    u = test_conditional_uniformity(st.times)
    e = test_exponential_interarrivals(st.times, st.k)
    lb = test_independence(st.times)
    nan = float("nan")
    return {
        "id": cascade.id,
        "k": st.k,
        "n_joint": len(st.times),
        "uniformity_ks": u.ks if u else nan,
        "uniformity_cvm": u.cvm if u else nan,
        "interarrival_ks": e.ks if e else nan,
        "interarrival_cvm": e.cvm if e else nan,
        "ljung_box": lb if lb is not None else nan,
    }


@dataclass
class GofReport:
    rows: list = field(default_factory=list)

    def pvalues(self, test: str) -> np.ndarray:
        return np.array([r[test] for r in self.rows], dtype=float)

    def pass_fraction(self, test: str, level: float) -> float:
        p = self.pvalues(test)
        p = p[np.isfinite(p)]
        return float(np.mean(p > level)) if len(p) else float("nan")

    def reject_fraction(self, test: str, level: float) -> float:
        return 1.0 - self.pass_fraction(test, level)

    def n_tested(self, test: str) -> int:
        return int(np.isfinite(self.pvalues(test)).sum())

    def summary(self, levels=(0.01, 0.05)) -> dict:
        return {
            "n_cascades": len(self.rows),
            "n_tested": {t: self.n_tested(t) for t in TEST_NAMES},
            "pass_fraction": {f"{lv:g}": {t: self.pass_fraction(t, lv) for t in TEST_NAMES}
                              for lv in levels},
        }

    def to_dict(self, levels=(0.01, 0.05)) -> dict:
        return {**self.summary(levels), "cascades": self.rows}


def gof_report(params_for, cascades: Sequence[Cascade], seed=0) -> GofReport:
    """Super-thinning tests for each cascade.

    ``params_for`` is a ComponentParams or a callable mapping a cascade to one.
    """
    pick = params_for if callable(params_for) else (lambda c: params_for)
    seeds = np.random.SeedSequence(seed).spawn(len(cascades))
    report = GofReport()
    for c, ss in zip(cascades, seeds):
        try:
            report.rows.append(residual_pvalues(pick(c), c, np.random.default_rng(ss)))
        except ValueError:
            report.rows.append({"id": c.id, **{t: float("nan") for t in TEST_NAMES}})
    return report


# ---- structural statistics and posterior predictive checks ------------------


class StructuralStats(NamedTuple):
    size: int
    max_depth: int
    mean_depth: float
    structural_virality: float
    size_to_depth: float


def subtree_sizes(cascade: Cascade) -> np.ndarray:
    sizes = np.ones(len(cascade))
    par = cascade.parents
    for i in range(len(cascade) - 1, 0, -1):
        sizes[par[i]] += sizes[i]
    return sizes


def structural_virality(cascade: Cascade) -> float:
    """Mean path length over unordered node pairs (Wiener index over pair count)."""
    n = len(cascade)
    if n < 2:
        return 0.0
    s = subtree_sizes(cascade)[1:]
    return float(np.sum(s * (n - s)) / (n * (n - 1) / 2))


def structural_stats(cascade: Cascade) -> StructuralStats:
    depth = cascade.depth
    n = len(cascade)
    max_depth = int(depth.max())
    return StructuralStats(n, max_depth, float(depth.mean()), structural_virality(cascade),
                           n / max_depth if max_depth > 0 else float(n))


PPC_STATS = ("size", "max_depth", "structural_virality", "size_to_depth")


def posterior_predictive_check(fit, observed: Sequence[Cascade], n_sim: int = 500, seed=0,
                               config: SimConfig | None = None) -> dict:
    """Compare structural statistics of observed and simulated cascades.

    ``fit`` is a PosteriorFit (one random draw per simulated cascade) or a
    ComponentParams. Horizons cycle through the observed cascades.
    """
    if n_sim < 100:
        raise ValueError("posterior predictive checks need at least 100 simulated cascades")
    if not observed:
        raise ValueError("no observed cascades")
    config = config or SimConfig()
    rng = np.random.default_rng(seed)
    if isinstance(fit, ComponentParams):
        param_list = [fit]
        pick = np.zeros(n_sim, dtype=int)
    else:
        pick = rng.integers(0, fit.num_draws, n_sim)
        uniq = np.unique(pick)
        cache = {int(d): fit.params_at(fit.draws[d]) for d in uniq}
        param_list = cache
    children = np.random.SeedSequence(seed).spawn(n_sim)
    sims = []
    for i in range(n_sim):
        c_obs = observed[i % len(observed)]
        cfg = SimConfig(c_obs.horizon, config.covariates, config.max_events)
        sims.append(simulate(param_list[int(pick[i])], cfg, np.random.default_rng(children[i]),
                             f"ppc-{i}").cascade)
    obs_stats = np.array([structural_stats(c) for c in observed], dtype=float)
    sim_stats = np.array([structural_stats(c) for c in sims], dtype=float)
    fields = StructuralStats._fields
    out = {}
    for name in PPC_STATS:
        j = fields.index(name)
        res = stats.ks_2samp(obs_stats[:, j], sim_stats[:, j])
        out[name] = {
            "ks_distance": float(res.statistic),
            "ks_pvalue": float(res.pvalue),
            "observed_mean": float(obs_stats[:, j].mean()),
            "simulated_mean": float(sim_stats[:, j].mean()),
        }
    return out
