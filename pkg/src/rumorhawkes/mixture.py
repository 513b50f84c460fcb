"""Two-component mixture: training, evidence and veracity scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np
from scipy.special import expit, logsumexp

from .cascades import Cascade, CovariateSchema, Standardizer, truncate
from .inference import PosteriorFit, SamplerConfig, fit_mcmc, map_fit
from .model import CascadeBatch


class VeracityScore(NamedTuple):
    id: str
    p_false: float
    log_evidence_false: float
    log_evidence_true: float
    n_events_used: int
    horizon_used: float

    @property
    def p_true(self) -> float:
        return 1.0 - self.p_false

    def to_dict(self) -> dict:
        return {"id": self.id, "p_false": self.p_false, "log_ev_false": self.log_evidence_false,
                "log_ev_true": self.log_evidence_true, "n_events_used": self.n_events_used,
                "horizon_used": self.horizon_used}


@dataclass(eq=False)
class MixtureModel:
    fit_true: PosteriorFit
    fit_false: PosteriorFit
    schema: CovariateSchema
    standardizer: Standardizer
    prior_false: float = 0.5
    mode: str = "mcmc"

    def __post_init__(self):
        if not 0 < self.prior_false < 1:
            raise ValueError("prior_false must lie in (0, 1)")
        lt, lf = self.fit_true.layout, self.fit_false.layout
        if lt != lf:
            raise ValueError("components must share schema and kernel families")
        if lt.schema != self.schema:
            raise ValueError("component schema differs from the model schema")
        if self.mode not in ("mcmc", "map"):
            raise ValueError(f"unknown scoring mode {self.mode!r}")

    @property
    def families(self) -> tuple[str, str]:
        return self.fit_true.layout.root_family, self.fit_true.layout.non_root_family

    def swapped(self) -> "MixtureModel":
        return MixtureModel(self.fit_false, self.fit_true, self.schema, self.standardizer,
                            self.prior_false, self.mode)


def train(cascades: Sequence[Cascade], config: SamplerConfig = SamplerConfig(),
          schema: CovariateSchema | None = None,
          families: tuple[str, str] = ("power_law", "weibull"),
          prior_false: float = 0.5, mode: str = "mcmc", standardize: bool = True) -> MixtureModel:
    """Fit the false- and true-rumor components on their own label partitions.

    The covariate standardization is estimated once over all training events
    and shared by both components.
    """
    schema = schema or CovariateSchema()
    false = [c for c in cascades if c.label == "false"]
    true = [c for c in cascades if c.label == "true"]
    if not false or not true:
        raise ValueError(f"both labels are required (false={len(false)}, true={len(true)})")
    std = (Standardizer.fit(list(cascades), schema) if standardize
           else Standardizer.identity(len(schema.names)))
    if mode == "map":
        fits = [map_fit(part, schema, families, std, label, seed=config.seed)
                for part, label in ((false, "false"), (true, "true"))]
    else:
        fits = []
        for k, (part, label) in enumerate(((false, "false"), (true, "true"))):
            cfg = SamplerConfig(config.chains, config.warmup, config.samples_per_chain,
                                config.target_accept, config.max_leapfrog,
                                config.seed + 7919 * k)
            fits.append(fit_mcmc(part, cfg, schema, families, std, label))
    return MixtureModel(fits[1], fits[0], schema, std, prior_false, mode)


def _draws(fit: PosteriorFit, mode: str) -> np.ndarray:
    return fit.map_point[None, :] if mode == "map" else fit.draws


def log_evidence_many(fit: PosteriorFit, cascades: Sequence[Cascade], mode: str = "mcmc",
                      standardizer: Standardizer | None = None) -> np.ndarray:
    """Posterior-averaged log-likelihood of each cascade.

    ``log mean_d exp(ll_d)`` over the fit's draws, via logsumexp.
    """
    for c in cascades:
        if c.user.shape[1] < fit.layout.schema.n_u or len(c.z) < fit.layout.schema.n_c:
            raise ValueError(f"cascade {c.id!r} does not conform to the model schema")
    std = standardizer if standardizer is not None else fit.standardizer
    batch = CascadeBatch(cascades, fit.layout, std)
    draws = _draws(fit, mode)
    ll = np.empty((len(draws), len(cascades)))
    for d, theta in enumerate(draws):
        ll[d] = batch.log_likelihood(theta)
    return logsumexp(ll, axis=0) - math.log(len(draws))


def log_evidence(fit: PosteriorFit, cascade: Cascade, mode: str = "mcmc") -> float:
    return float(log_evidence_many(fit, [cascade], mode)[0])


def _p_false(ev_false, ev_true, prior_false):
    return expit(ev_false - ev_true + math.log(prior_false / (1 - prior_false)))


def score_many(model: MixtureModel, cascades: Sequence[Cascade]) -> list[VeracityScore]:
    if not cascades:
        return []
    ev_f = log_evidence_many(model.fit_false, cascades, model.mode, model.standardizer)
    ev_t = log_evidence_many(model.fit_true, cascades, model.mode, model.standardizer)
    p = _p_false(ev_f, ev_t, model.prior_false)
    return [VeracityScore(c.id, float(p[k]), float(ev_f[k]), float(ev_t[k]), len(c), c.horizon)
            for k, c in enumerate(cascades)]


def score(model: MixtureModel, cascade: Cascade) -> VeracityScore:
    return score_many(model, [cascade])[0]


def classify(model_or_score, cascade: Cascade | None = None, threshold: float = 0.5) -> str:
    """``"false"`` (an alarm) iff ``p_false >= threshold``, else ``"true"``."""
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    s = model_or_score if cascade is None else score(model_or_score, cascade)
    p = s.p_false if isinstance(s, VeracityScore) else float(s)
    return "false" if p >= threshold else "true"


def score_partial(model: MixtureModel, cascade: Cascade, time: float | None = None,
                  count: int | None = None) -> VeracityScore:
    return score_partial_many(model, [cascade], time=time, count=count)[0]


def score_partial_many(model: MixtureModel, cascades: Sequence[Cascade],
                       time: float | None = None, count: int | None = None) -> list[VeracityScore]:
    cut = [truncate(c, time=time, count=count) for c in cascades]
    return score_many(model, cut)
