"""One marked Hawkes component: marks, intensity, likelihood and posterior."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import kernels as K
from .cascades import Cascade, CovariateSchema, Standardizer, design_matrix

log = logging.getLogger(__name__)

ZERO_LAG_EPS = 1e-6  # hours; lag floor for kernels whose density diverges at 0
ALPHA_PRIOR_SD = 5.0

_LOG_2PI = math.log(2 * math.pi)


class ModelDomainError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    def __init__(self, message, cascade_id=None, theta=None):
        super().__init__(message)
        self.cascade_id = cascade_id
        self.theta = theta


@dataclass(frozen=True)
class MarkCoefficients:
    alpha: float
    beta_c: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_u: np.ndarray = field(default_factory=lambda: np.zeros(0))
    beta_s: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        for name in ("beta_c", "beta_u", "beta_s"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).ravel())
        if not np.all(np.isfinite(self.weights)):
            raise ValueError("mark coefficients must be finite")

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([[float(self.alpha)], self.beta_c, self.beta_u, self.beta_s])

    @classmethod
    def from_weights(cls, w, schema: CovariateSchema) -> "MarkCoefficients":
        w = np.asarray(w, dtype=float)
        a, b = 1 + schema.n_c, 1 + schema.n_c + schema.n_u
        return cls(float(w[0]), w[1:a], w[a:b], w[b:])

    @classmethod
    def zeros(cls, schema: CovariateSchema, alpha: float = 0.0) -> "MarkCoefficients":
        return cls(alpha, np.zeros(schema.n_c), np.zeros(schema.n_u), np.zeros(schema.n_s))


@dataclass(frozen=True, eq=False)
class ComponentParams:
    """Parameters of one mixture component.

    Coefficients act on standardized covariates; ``standardizer`` defaults to
    the identity so that hand-built parameters act on log1p covariates.
    """

    marks: MarkCoefficients
    kernels: K.KernelPair
    label: str | None = None
    schema: CovariateSchema = field(default_factory=CovariateSchema)
    standardizer: Standardizer | None = None

    def __post_init__(self):
        p = len(self.schema.names)
        if len(self.marks.weights) != 1 + p:
            raise ValueError(f"mark coefficients have length {len(self.marks.weights)}, "
                             f"schema needs {1 + p}")
        if self.standardizer is None:
            object.__setattr__(self, "standardizer", Standardizer.identity(p))

    @property
    def layout(self) -> "ParameterLayout":
        return ParameterLayout(self.schema, self.kernels.root.family, self.kernels.non_root.family)

    def to_vector(self) -> np.ndarray:
        return self.layout.pack(self)

    def covariate_rows(self, cascade: Cascade) -> np.ndarray:
        X = self.standardizer(design_matrix(cascade, self.schema))
        return np.column_stack([np.ones(len(cascade)), X])

    def marks_for(self, cascade: Cascade) -> np.ndarray:
        return np.exp(self.covariate_rows(cascade) @ self.marks.weights)


@dataclass(frozen=True)
class ParameterLayout:
    """Order of the unconstrained parameter vector ``[alpha, betas, root raw, non-root raw]``."""

    schema: CovariateSchema
    root_family: str
    non_root_family: str

    @property
    def n_weights(self) -> int:
        return 1 + len(self.schema.names)

    @property
    def root_slice(self) -> slice:
        a = self.n_weights
        return slice(a, a + len(K.RAW_NAMES[self.root_family]))

    @property
    def non_root_slice(self) -> slice:
        a = self.root_slice.stop
        return slice(a, a + len(K.RAW_NAMES[self.non_root_family]))

    @property
    def dim(self) -> int:
        return self.non_root_slice.stop

    @property
    def names(self) -> list[str]:
        s = self.schema
        names = ["alpha"]
        names += [f"beta_c.{n}" for n in s.cascade_names]
        names += [f"beta_u.{n}" for n in s.user_names]
        names += [f"beta_s.{n}" for n in s.structural_names]
        names += [f"root.{n}" for n in K.RAW_NAMES[self.root_family]]
        names += [f"non_root.{n}" for n in K.RAW_NAMES[self.non_root_family]]
        return names

    def pack(self, params: ComponentParams) -> np.ndarray:
        return np.concatenate([params.marks.weights,
                               K.to_raw(params.kernels.root),
                               K.to_raw(params.kernels.non_root)])

    def unpack(self, theta, label=None, standardizer=None) -> ComponentParams:
        theta = np.asarray(theta, dtype=float)
        return ComponentParams(
            MarkCoefficients.from_weights(theta[: self.n_weights], self.schema),
            K.KernelPair(K.from_raw(self.root_family, theta[self.root_slice]),
                         K.from_raw(self.non_root_family, theta[self.non_root_slice])),
            label, self.schema, standardizer)

    def positive_raw_mask(self) -> np.ndarray:
        mask = np.zeros(self.dim, dtype=bool)
        mask[self.root_slice] = K.POSITIVE_RAW[self.root_family]
        mask[self.non_root_slice] = K.POSITIVE_RAW[self.non_root_family]
        return mask


# ---- single-cascade evaluation ----------------------------------------------


def mark(params: ComponentParams, row) -> float:
    """Mark of one event given its standardized covariate row ``[1, z, x, y]``."""
    row = np.asarray(row, dtype=float)
    w = params.marks.weights
    if row.shape != w.shape:
        raise ModelDomainError(f"covariate row must have length {len(w)}, got {row.shape}")
    if not np.all(np.isfinite(row)):
        raise ModelDomainError("non-finite covariate")
    return float(np.exp(row @ w))


def _kernel_of(params: ComponentParams, i: int) -> K.KernelParams:
    return params.kernels.root if i == 0 else params.kernels.non_root


def intensity(params: ComponentParams, cascade: Cascade, t, marks=None):
    """Conditional intensity at time(s) ``t`` in ``[0, horizon]``."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(t_arr < 0) or np.any(t_arr > cascade.horizon):
        raise ModelDomainError(f"t must lie in [0, {cascade.horizon}]")
    m = params.marks_for(cascade) if marks is None else marks
    out = np.zeros(len(t_arr))
    times = cascade.times
    # root contribution
    act = t_arr > times[0]
    out[act] += m[0] * K.density(params.kernels.root, t_arr[act] - times[0])
    nr = params.kernels.non_root
    chunk = max(1, 2_000_000 // max(len(times), 1))
    for a in range(0, len(t_arr), chunk):
        tt = t_arr[a:a + chunk, None]
        lag = tt - times[None, 1:]
        active = lag > 0
        dens = np.where(active, K.density(nr, np.where(active, lag, 1.0)), 0.0)
        out[a:a + chunk] += dens @ m[1:]
    return float(out[0]) if np.ndim(t) == 0 else out


def log_likelihood_branching(params: ComponentParams, cascade: Cascade) -> float:
    return float(CascadeBatch([cascade], params.layout, params.standardizer)
                 .log_likelihood(params.to_vector())[0])


def log_likelihood_full(params: ComponentParams, cascade: Cascade) -> float:
    """Likelihood without the observed parent attribution (quadratic cost)."""
    m = params.marks_for(cascade)
    t = cascade.times
    total = 0.0
    for i in range(1, len(t)):
        prev = np.flatnonzero(t[:i] < t[i])
        if prev.size == 0:
            return -math.inf
        rate = 0.0
        for j in prev:
            k = _kernel_of(params, j)
            lag = t[i] - t[j]
            if k.singular_at_zero:
                lag = max(lag, ZERO_LAG_EPS)
            rate += m[j] * K.density(k, lag)
        total += math.log(rate)
    rem = cascade.horizon - t
    total -= m[0] * K.integral(params.kernels.root, rem[0])
    total -= float(np.sum(m[1:] * K.integral(params.kernels.non_root, rem[1:])))
    return float(total)


# ---- priors -----------------------------------------------------------------


def log_prior_and_grad(theta, layout: ParameterLayout):
    """Log prior density on the unconstrained vector, including log-Jacobians.

    alpha ~ N(0, 5^2); betas ~ N(0, 1); each positive kernel parameter
    ~ half-Cauchy(0, 1) mapped to its log; the Weibull shape's pre-logit raw
    variable ~ N(0, 1).
    """
    theta = np.asarray(theta, dtype=float)
    grad = np.empty_like(theta)
    nw = layout.n_weights
    alpha, beta = theta[0], theta[1:nw]
    lp = -0.5 * (_LOG_2PI + math.log(ALPHA_PRIOR_SD**2)) - 0.5 * (alpha / ALPHA_PRIOR_SD) ** 2
    grad[0] = -alpha / ALPHA_PRIOR_SD**2
    lp += float(np.sum(-0.5 * _LOG_2PI - 0.5 * beta**2))
    grad[1:nw] = -beta
    raw = theta[nw:]
    pos = layout.positive_raw_mask()[nw:]
    r = raw[pos]
    # log(2/pi) - log(1 + e^{2r}) + r ; logaddexp keeps large |r| finite
    lp += float(np.sum(math.log(2 / math.pi) - np.logaddexp(0.0, 2 * r) + r))
    g = np.empty_like(raw)
    g[pos] = 1.0 - 2.0 / (1.0 + np.exp(-2 * r))
    q = raw[~pos]
    lp += float(np.sum(-0.5 * _LOG_2PI - 0.5 * q**2))
    g[~pos] = -q
    grad[nw:] = g
    return lp, grad


def log_prior(params: ComponentParams) -> float:
    return log_prior_and_grad(params.to_vector(), params.layout)[0]


# ---- batched evaluation -----------------------------------------------------


class CascadeBatch:
    """Sufficient statistics of a set of cascades for the branching likelihood.

    The branching log-likelihood decomposes as
    ``sum_j c_j log m_j + sum_i log phi(lag_i) - sum_j m_j Phi(T - t_j)``
    where ``c_j`` counts the observed children of event ``j``.
    """

    def __init__(self, cascades: Sequence[Cascade], layout: ParameterLayout,
                 standardizer: Standardizer | None = None):
        if not cascades:
            raise ValueError("empty cascade set")
        self.layout = layout
        self.ids = [c.id for c in cascades]
        self.n_cascades = len(cascades)
        std = standardizer or Standardizer.identity(len(layout.schema.names))
        rows, counts, rem, is_root, cid = [], [], [], [], []
        lag_r, lag_r_cid, lag_n, lag_n_cid = [], [], [], []
        for k, c in enumerate(cascades):
            n = len(c)
            rows.append(std(design_matrix(c, layout.schema)))
            counts.append(c.children_counts())
            rem.append(c.horizon - c.times)
            root = np.zeros(n, dtype=bool)
            root[0] = True
            is_root.append(root)
            cid.append(np.full(n, k))
            lags = c.times[1:] - c.times[c.parents[1:]]
            from_root = c.parents[1:] == 0
            lag_r.append(lags[from_root])
            lag_r_cid.append(np.full(from_root.sum(), k))
            lag_n.append(lags[~from_root])
            lag_n_cid.append(np.full((~from_root).sum(), k))
        X = np.concatenate(rows)
        if not np.all(np.isfinite(X)):
            raise ModelDomainError("non-finite covariate in batch")
        self.X = np.column_stack([np.ones(len(X)), X])
        self.counts = np.concatenate(counts).astype(float)
        rem = np.concatenate(rem)
        self.is_root = np.concatenate(is_root)
        self.cid = np.concatenate(cid)
        self.rem_root = rem[self.is_root]
        self.rem_non_root = rem[~self.is_root]
        self.n_clamped = 0
        self.lag_root = self._clamp(np.concatenate(lag_r), layout.root_family)
        self.lag_non_root = self._clamp(np.concatenate(lag_n), layout.non_root_family)
        self.lag_root_cid = np.concatenate(lag_r_cid)
        self.lag_non_root_cid = np.concatenate(lag_n_cid)
        self.count_term = self.counts @ self.X

    def _clamp(self, lags, family):
        if family != "weibull":
            return lags
        small = lags < ZERO_LAG_EPS
        n = int(small.sum())
        if n:
            self.n_clamped += n
            log.info("clamped %d zero lags to %g h", n, ZERO_LAG_EPS)
            lags = np.where(small, ZERO_LAG_EPS, lags)
        return lags

    @property
    def n_events(self) -> int:
        return len(self.counts)

    def _terms(self, theta):
        L = self.layout
        w = theta[: L.n_weights]
        eta = self.X @ w
        m = np.exp(eta)
        rr, rn = theta[L.root_slice], theta[L.non_root_slice]
        lphi_r, glphi_r = K.raw_log_density_grad(L.root_family, rr, self.lag_root)
        lphi_n, glphi_n = K.raw_log_density_grad(L.non_root_family, rn, self.lag_non_root)
        Phi_r, gPhi_r = K.raw_integral_grad(L.root_family, rr, self.rem_root)
        Phi_n, gPhi_n = K.raw_integral_grad(L.non_root_family, rn, self.rem_non_root)
        Phi = np.empty_like(m)
        Phi[self.is_root] = Phi_r
        Phi[~self.is_root] = Phi_n
        return eta, m, Phi, lphi_r, lphi_n, glphi_r, glphi_n, gPhi_r, gPhi_n

    def log_likelihood(self, theta) -> np.ndarray:
        """Per-cascade branching log-likelihoods."""
        theta = np.asarray(theta, dtype=float)
        L = self.layout
        eta = self.X @ theta[: L.n_weights]
        m = np.exp(eta)
        lphi_r, _ = K.raw_log_density_grad(L.root_family, theta[L.root_slice], self.lag_root)
        lphi_n, _ = K.raw_log_density_grad(L.non_root_family, theta[L.non_root_slice],
                                           self.lag_non_root)
        Phi = np.empty_like(m)
        Phi[self.is_root] = K.integral(K.from_raw(L.root_family, theta[L.root_slice]),
                                       self.rem_root) if self.rem_root.size else 0.0
        Phi[~self.is_root] = K.integral(K.from_raw(L.non_root_family, theta[L.non_root_slice]),
                                        self.rem_non_root) if self.rem_non_root.size else 0.0
        per_event = self.counts * eta - m * Phi
        nc = self.n_cascades
        return (np.bincount(self.cid, per_event, nc)
                + np.bincount(self.lag_root_cid, lphi_r, nc)
                + np.bincount(self.lag_non_root_cid, lphi_n, nc))

    def log_likelihood_and_grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        L = self.layout
        eta, m, Phi, lphi_r, lphi_n, glphi_r, glphi_n, gPhi_r, gPhi_n = self._terms(theta)
        mPhi = m * Phi
        ll = float(self.count_term @ theta[: L.n_weights] - mPhi.sum()
                   + lphi_r.sum() + lphi_n.sum())
        grad = np.empty(L.dim)
        grad[: L.n_weights] = self.count_term - mPhi @ self.X
        grad[L.root_slice] = glphi_r.sum(axis=0) - m[self.is_root] @ gPhi_r
        grad[L.non_root_slice] = glphi_n.sum(axis=0) - m[~self.is_root] @ gPhi_n
        return ll, grad


class Posterior:
    """Log-posterior of one component over a fixed training set."""

    def __init__(self, cascades: Sequence[Cascade], layout: ParameterLayout,
                 standardizer: Standardizer | None = None):
        self.batch = CascadeBatch(cascades, layout, standardizer)
        self.layout = layout

    def __call__(self, theta):
        ll, g = self.batch.log_likelihood_and_grad(theta)
        lp, gp = log_prior_and_grad(theta, self.layout)
        value = ll + lp
        if not np.isfinite(value) or not np.all(np.isfinite(g)):
            per = self.batch.log_likelihood(theta)
            bad = np.flatnonzero(~np.isfinite(per))
            cid = self.batch.ids[bad[0]] if bad.size else None
            raise NonFiniteError(f"non-finite log posterior (cascade {cid!r})", cid, theta)
        return value, g + gp


def log_posterior_and_gradient(params: ComponentParams, cascades: Sequence[Cascade]):
    post = Posterior(cascades, params.layout, params.standardizer)
    return post(params.to_vector())
