"""Branching-construction simulator for one marked Hawkes component."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import kernels as K
from .cascades import Cascade, CovariateSchema, covariate_rows
from .model import ComponentParams

log = logging.getLogger(__name__)

EMOTIONS = ("pos_emotion", "neg_emotion", "surprise")

# Synthetic conventions: user counts are log-normal with log-means near the
# corpus summary statistics; emotions share one Dirichlet draw per cascade.
DEFAULT_USER = {
    "followers": ("lognormal", 6.27, 1.5),
    "followees": ("lognormal", 6.38, 1.2),
    "account_age_days": ("lognormal", 6.8, 0.8),
    "engagement": ("lognormal", 2.4, 1.0),
}
DEFAULT_CASCADE = {
    "topic_political": ("bernoulli", 0.58),
}
DEFAULT_EMOTION_CONCENTRATION = {"pos_emotion": 3.3, "neg_emotion": 5.2, "surprise": 1.5}


def _draw(spec: tuple, rng: np.random.Generator, size: int) -> np.ndarray:
    kind = spec[0]
    if kind == "lognormal":
        return np.exp(rng.normal(spec[1], spec[2], size))
    if kind == "normal":
        return rng.normal(spec[1], spec[2], size)
    if kind == "bernoulli":
        return (rng.random(size) < spec[1]).astype(float)
    if kind == "constant":
        return np.full(size, float(spec[1]))
    raise ValueError(f"unknown covariate distribution {kind!r}")


@dataclass(frozen=True)
class CovariateGenerator:
    user: dict = field(default_factory=lambda: dict(DEFAULT_USER))
    cascade: dict = field(default_factory=lambda: dict(DEFAULT_CASCADE))
    emotion_concentration: dict = field(
        default_factory=lambda: dict(DEFAULT_EMOTION_CONCENTRATION))

    def cascade_covariates(self, schema: CovariateSchema, rng) -> np.ndarray:
        emo = [n for n in EMOTIONS if n in schema.cascade_names]
        shares = {}
        if emo:
            conc = [self.emotion_concentration[n] for n in EMOTIONS]
            shares = dict(zip(EMOTIONS, rng.dirichlet(conc)))
        out = np.empty(schema.n_c)
        for j, name in enumerate(schema.cascade_names):
            out[j] = shares[name] if name in shares else _draw(
                self.cascade.get(name, ("normal", 0.0, 1.0)), rng, 1)[0]
        return out

    def user_covariates(self, schema: CovariateSchema, rng, size: int) -> np.ndarray:
        out = np.empty((size, schema.n_u))
        for j, name in enumerate(schema.user_names):
            out[:, j] = _draw(self.user.get(name, ("lognormal", 0.0, 1.0)), rng, size)
        return out


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 168.0
    covariates: CovariateGenerator = field(default_factory=CovariateGenerator)
    max_events: int = 10_000
    seed: int | None = None

    def __post_init__(self):
        if not self.horizon > 0:
            raise ValueError("horizon must be positive")
        if self.max_events < 1:
            raise ValueError("max_events must be >= 1")


class SimulationResult(NamedTuple):
    cascade: Cascade
    capped: bool


def simulate(params: ComponentParams, config: SimConfig, rng=None,
             cascade_id: str = "sim-0") -> SimulationResult:
    """Grow one cascade generation by generation.

    Every event spawns ``Poisson(m * Phi(T - t))`` children whose lags follow
    its kernel truncated to the remaining window.
    """
    rng = np.random.default_rng(config.seed if rng is None else rng)
    schema, T = params.schema, config.horizon
    w = params.marks.weights
    z = config.covariates.cascade_covariates(schema, rng)

    times = [np.zeros(1)]
    parents = [np.full(1, -1)]
    users = [config.covariates.user_covariates(schema, rng, 1)]
    structs = [np.zeros((1, 3))]
    # current generation: global indices and their attributes
    gen_idx = np.zeros(1, dtype=np.int64)
    gen_t, gen_u, gen_y = times[0], users[0], structs[0]
    total, capped = 1, False
    is_root_gen = True
    while len(gen_idx):
        X = params.standardizer(covariate_rows(z, gen_u, gen_y, schema))
        m = np.exp(w[0] + X @ w[1:])
        kern = params.kernels.root if is_root_gen else params.kernels.non_root
        mass = K.integral(kern, T - gen_t)
        n_kids = rng.poisson(m * mass)
        n_new = int(n_kids.sum())
        if n_new == 0:
            break
        if total + n_new > config.max_events:
            capped = True
            n_new = config.max_events - total
            n_kids = np.minimum(n_kids, np.maximum(n_new - np.cumsum(n_kids) + n_kids, 0))
            n_new = int(n_kids.sum())
            if n_new == 0:
                break
        par_local = np.repeat(np.arange(len(gen_idx)), n_kids)
        u = rng.random(n_new) * mass[par_local]
        lag = np.minimum(K.inverse_integral(kern, u), T - gen_t[par_local])
        t_new = gen_t[par_local] + lag
        y_new = np.column_stack([gen_y[par_local, 0] + 1.0, lag, t_new])
        u_new = config.covariates.user_covariates(schema, rng, n_new)
        times.append(t_new)
        parents.append(gen_idx[par_local])
        users.append(u_new)
        structs.append(y_new)
        gen_idx = np.arange(total, total + n_new)
        total += n_new
        gen_t, gen_u, gen_y = t_new, u_new, y_new
        is_root_gen = False
        if capped:
            break
    if capped:
        log.warning("cascade %s hit the %d-event cap", cascade_id, config.max_events)

    t = np.concatenate(times)
    par = np.concatenate(parents)
    child = np.ones(len(t), dtype=np.int64)
    child[0] = 0
    order = np.lexsort((np.arange(len(t)), child, t))
    rank = np.empty_like(order)
    rank[order] = np.arange(len(t))
    p_sorted = par[order]
    p_sorted = np.where(p_sorted < 0, -1, rank[np.maximum(p_sorted, 0)])
    cascade = Cascade(cascade_id, t[order], p_sorted, np.concatenate(users)[order], z, T,
                      params.label, np.concatenate(structs)[order])
    return SimulationResult(cascade, capped)


def simulate_many(params: ComponentParams, config: SimConfig, n: int, seed=None,
                  prefix: str = "sim") -> list[Cascade]:
    """``n`` independent cascades, each with its own child seed of ``seed``."""
    seed = config.seed if seed is None else seed
    children = np.random.SeedSequence(seed).spawn(n)
    return [simulate(params, config, np.random.default_rng(ss), f"{prefix}-{i}").cascade
            for i, ss in enumerate(children)]
