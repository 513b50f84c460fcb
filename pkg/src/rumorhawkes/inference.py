"""Posterior estimation for one component: MAP and Hamiltonian Monte Carlo."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .cascades import Cascade, CovariateSchema, Standardizer
from .model import ComponentParams, NonFiniteError, ParameterLayout, Posterior

log = logging.getLogger(__name__)

DIVERGENCE_ENERGY = 1000.0
DIVERGENT_WARN_FRACTION = 0.01


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    chains: int = 2
    warmup: int = 1000
    samples_per_chain: int = 3000
    target_accept: float = 0.8
    max_leapfrog: int = 64
    seed: int = 0

    def __post_init__(self):
        for name in ("chains", "warmup", "samples_per_chain", "max_leapfrog"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
        if not 0 < self.target_accept < 1:
            raise ValueError("target_accept must lie in (0, 1)")


@dataclass(frozen=True)
class MapResult:
    point: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool
    n_clamped: int = 0


@dataclass(eq=False)
class PosteriorFit:
    """Posterior draws (chain-major rows) and diagnostics for one component."""

    layout: ParameterLayout
    draws: np.ndarray
    map_point: np.ndarray
    chains: int
    warmup: int
    seed: int
    rhat: np.ndarray = field(default=None)
    ess: np.ndarray = field(default=None)
    n_divergent: int = 0
    accept_rate: float = float("nan")
    step_size: list = field(default_factory=list)
    label: str | None = None
    standardizer: Standardizer | None = None
    n_clamped: int = 0

    def __post_init__(self):
        self.draws = np.atleast_2d(np.asarray(self.draws, dtype=float))
        self.map_point = np.asarray(self.map_point, dtype=float)
        if self.rhat is None or self.ess is None:
            if self.draws.shape[0] >= 10 * self.chains and self.chains >= 1:
                self.rhat, self.ess = diagnostics(self.chain_draws())
            else:
                self.rhat = np.full(self.layout.dim, np.nan)
                self.ess = np.full(self.layout.dim, np.nan)
        self.rhat = np.asarray(self.rhat, dtype=float)
        self.ess = np.asarray(self.ess, dtype=float)

    @property
    def num_draws(self) -> int:
        return self.draws.shape[0]

    def chain_draws(self) -> np.ndarray:
        return self.draws.reshape(self.chains, -1, self.draws.shape[1])

    def params_at(self, theta) -> ComponentParams:
        return self.layout.unpack(theta, self.label, self.standardizer)

    @property
    def map_params(self) -> ComponentParams:
        return self.params_at(self.map_point)

    def interval(self, level: float = 0.95) -> np.ndarray:
        a = (1 - level) / 2
        return np.quantile(self.draws, [a, 1 - a], axis=0).T

    def summary(self) -> dict:
        return {
            "label": self.label,
            "names": self.layout.names,
            "map": self.map_point.tolist(),
            "mean": self.draws.mean(axis=0).tolist(),
            "sd": self.draws.std(axis=0, ddof=1).tolist() if self.num_draws > 1 else None,
            "rhat": self.rhat.tolist(),
            "ess": self.ess.tolist(),
            "chains": self.chains,
            "warmup": self.warmup,
            "num_draws": self.num_draws,
            "n_divergent": self.n_divergent,
            "accept_rate": self.accept_rate,
            "step_size": list(self.step_size),
            "seed": self.seed,
            "n_clamped_lags": self.n_clamped,
        }


# ---- convergence diagnostics ------------------------------------------------


def _autocov(x: np.ndarray) -> np.ndarray:
    n = x.shape[-1]
    x = x - x.mean(axis=-1, keepdims=True)
    nfft = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, nfft, axis=-1)
    acov = np.fft.irfft(f * np.conj(f), nfft, axis=-1)[..., :n]
    return acov / n


def split_rhat(chains: np.ndarray) -> np.ndarray:
    """Split-R-hat for an array of shape ``(chains, draws, dim)``."""
    c, n = chains.shape[:2]
    half = n // 2
    split = np.concatenate([chains[:, :half], chains[:, n - half:]], axis=0)
    m, n = split.shape[:2]
    means = split.mean(axis=1)
    W = split.var(axis=1, ddof=1).mean(axis=0)
    B = n * means.var(axis=0, ddof=1)
    var_plus = (n - 1) / n * W + B / n
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.sqrt(var_plus / W)
    return np.where(W > 0, r, np.where(B > 0, np.inf, 1.0))


def effective_sample_size(chains: np.ndarray) -> np.ndarray:
    """Multi-chain ESS with Geyer's initial monotone sequence estimator."""
    m, n, d = chains.shape
    x = np.moveaxis(chains, 2, 0)  # (d, m, n)
    acov = _autocov(x)
    chain_var = acov[..., 0] * n / (n - 1)
    W = chain_var.mean(axis=1)
    means = x.mean(axis=2)
    B_over_n = means.var(axis=1, ddof=1) if m > 1 else np.zeros(d)
    var_plus = W * (n - 1) / n + B_over_n
    out = np.empty(d)
    for k in range(d):
        if not var_plus[k] > 0:
            out[k] = float(m * n)
            continue
        rho = 1.0 - (W[k] - acov[k].mean(axis=0)) / var_plus[k]
        rho[0] = 1.0
        # pair sums, truncated at the first negative pair and made monotone
        n_pairs = n // 2
        pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
        neg = np.flatnonzero(pairs < 0)
        pairs = pairs[: neg[0]] if neg.size else pairs
        pairs = np.minimum.accumulate(pairs)
        tau = -1.0 + 2.0 * pairs.sum()
        tau = max(tau, 1.0 / math.log10(m * n)) if m * n > 1 else 1.0
        out[k] = m * n / tau
    return out


def diagnostics(chains: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split-R-hat and effective sample size per parameter.

    ``chains`` has shape ``(chains, draws)`` or ``(chains, draws, dim)``.
    """
    chains = np.asarray(chains, dtype=float)
    if chains.ndim == 2:
        chains = chains[:, :, None]
    if chains.ndim != 3:
        raise ValueError("expected an array of shape (chains, draws[, dim])")
    if chains.shape[1] < 10:
        raise ValueError("need at least 10 draws per chain")
    if chains.shape[0] < 2:
        warnings.warn("single chain: R-hat from split halves only has reduced sensitivity",
                      ConvergenceWarning, stacklevel=2)
    return split_rhat(chains), effective_sample_size(chains)


# ---- MAP ---------------------------------------------------------------------


def _fd_hessian(f: Callable, theta: np.ndarray, g0: np.ndarray, h: float = 1e-5) -> np.ndarray:
    d = len(theta)
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (f(theta + e)[1] - f(theta - e)[1]) / (2 * h)
    return 0.5 * (H + H.T)


def maximize(f: Callable, init, tol: float = 1e-5, max_iter: int = 200) -> MapResult:
    """Newton ascent with backtracking line search on ``f(theta) -> (value, grad)``.

    Hessians come from central differences of the analytic gradient; indefinite
    ones are made negative definite by flooring eigenvalue magnitudes.
    """
    theta = np.array(init, dtype=float)
    value, grad = f(theta)
    if not np.isfinite(value):
        raise NonFiniteError("non-finite objective at initialization", theta=theta)
    it = 0
    while it < max_iter and np.linalg.norm(grad) > tol:
        it += 1
        H = _fd_hessian(f, theta, grad)
        evals, evecs = np.linalg.eigh(-H)
        evals = np.maximum(np.abs(evals), 1e-6 * max(1.0, np.abs(evals).max()))
        step = evecs @ ((evecs.T @ grad) / evals)
        # cap wild first steps from poor starting points
        norm = np.linalg.norm(step)
        if norm > 5.0:
            step *= 5.0 / norm
        t = 1.0
        for _ in range(50):
            cand = theta + t * step
            try:
                v, g = f(cand)
            except (NonFiniteError, FloatingPointError, ValueError):
                v, g = -np.inf, None
            if np.isfinite(v) and v >= value + 1e-4 * t * (grad @ step) - 1e-12 * abs(value):
                break
            t *= 0.5
        else:
            log.warning("line search failed at iteration %d", it)
            return MapResult(theta, value, float(np.linalg.norm(grad)), it, False)
        if not np.isfinite(v):
            raise NonFiniteError("non-finite objective during search", theta=cand)
        theta, value, grad = cand, v, g
    converged = bool(np.linalg.norm(grad) <= tol)
    if not converged:
        warnings.warn(f"MAP search stopped after {it} iterations with |grad| = "
                      f"{np.linalg.norm(grad):.3g}", ConvergenceWarning, stacklevel=2)
    return MapResult(theta, float(value), float(np.linalg.norm(grad)), it, converged)


def default_init(cascades: Sequence[Cascade], layout: ParameterLayout) -> np.ndarray:
    """Betas 0, alpha at the log of the mean number of retweets per event, kernel raws 0."""
    n_events = sum(len(c) for c in cascades)
    n_retweets = n_events - len(cascades)
    theta = np.zeros(layout.dim)
    theta[0] = math.log(max(n_retweets, 1) / n_events)
    return theta


def prepare(cascades, schema: CovariateSchema, families: tuple[str, str],
            standardizer: Standardizer | None = None) -> Posterior:
    layout = ParameterLayout(schema, *families)
    return Posterior(cascades, layout, standardizer)


def fit_map(cascades: Sequence[Cascade], schema: CovariateSchema,
            families: tuple[str, str] = ("power_law", "weibull"),
            standardizer: Standardizer | None = None, init=None,
            tol: float = 1e-5, max_iter: int = 200) -> MapResult:
    if not cascades:
        raise ValueError("empty training set")
    post = prepare(cascades, schema, families, standardizer)
    init = default_init(cascades, post.layout) if init is None else init
    return replace(maximize(post, init, tol, max_iter), n_clamped=post.batch.n_clamped)


# ---- Hamiltonian Monte Carlo ------------------------------------------------


class _DualAveraging:
    def __init__(self, eps0: float, target: float, gamma=0.05, t0=10.0, kappa=0.75):
        self.mu = math.log(10 * eps0)
        self.target, self.gamma, self.t0, self.kappa = target, gamma, t0, kappa
        self.h_bar = 0.0
        self.log_eps_bar = 0.0
        self.m = 0

    def update(self, accept_prob: float) -> float:
        self.m += 1
        m = self.m
        eta = 1.0 / (m + self.t0)
        self.h_bar = (1 - eta) * self.h_bar + eta * (self.target - accept_prob)
        log_eps = self.mu - math.sqrt(m) / self.gamma * self.h_bar
        w = m ** (-self.kappa)
        self.log_eps_bar = w * log_eps + (1 - w) * self.log_eps_bar
        return math.exp(log_eps)

    @property
    def final(self) -> float:
        return math.exp(self.log_eps_bar)


def _warmup_windows(n: int) -> tuple[int, int, list[int]]:
    """Initial buffer, terminal buffer and metric-window end points."""
    if n < 20:
        return n, 0, []
    init, term = int(0.15 * n), int(0.1 * n)
    ends, start, size = [], init, max(25, int(0.05 * n))
    stop = n - term
    while start < stop:
        end = start + size
        if end + 2 * size > stop:
            end = stop
        ends.append(end)
        start, size = end, 2 * size
    return init, term, ends


class _Chain:
    def __init__(self, f: Callable, theta: np.ndarray, cov: np.ndarray, rng, max_leapfrog: int):
        self.f = f
        self.rng = rng
        self.max_leapfrog = max_leapfrog
        self.theta = theta
        self.value, self.grad = f(theta)
        self.set_metric(cov)

    def set_metric(self, cov: np.ndarray):
        self.cov = cov
        self.cov_chol = np.linalg.cholesky(cov)
        # momentum ~ N(0, cov^{-1})
        self.prec_chol = np.linalg.cholesky(np.linalg.inv(cov))

    def kinetic(self, p):
        return 0.5 * p @ self.cov @ p

    def _eval(self, q):
        try:
            v, g = self.f(q)
        except (NonFiniteError, FloatingPointError, ValueError, OverflowError):
            return -np.inf, None
        return v, g

    def step(self, eps: float, n_steps: int):
        """One HMC transition; returns (accept probability, divergent)."""
        p = self.prec_chol @ self.rng.standard_normal(len(self.theta))
        h0 = -self.value + self.kinetic(p)
        q, g = self.theta.copy(), self.grad
        v = self.value
        divergent = False
        p = p + 0.5 * eps * g
        for i in range(n_steps):
            q = q + eps * (self.cov @ p)
            v, g = self._eval(q)
            if g is None:
                divergent = True
                break
            if i < n_steps - 1:
                p = p + eps * g
        if not divergent:
            p = p + 0.5 * eps * g
            h1 = -v + self.kinetic(p)
            delta = h1 - h0
            if not np.isfinite(delta) or delta > DIVERGENCE_ENERGY:
                divergent = True
        if divergent:
            return 0.0, True
        accept = min(1.0, math.exp(-delta)) if delta > 0 else 1.0
        if self.rng.random() < accept:
            self.theta, self.value, self.grad = q, v, g
        return accept, False

    def find_step_size(self, eps: float = 0.1) -> float:
        saved = (self.theta, self.value, self.grad)

        def prob(e):
            a, _ = self.step(e, 1)
            self.theta, self.value, self.grad = saved
            return a

        a = prob(eps)
        direction = 1 if a > 0.5 else -1
        for _ in range(50):
            e2 = eps * (2.0 ** direction)
            a = prob(e2)
            if (direction == 1 and a <= 0.5) or (direction == -1 and a > 0.5):
                break
            eps = e2
        return eps


def _n_steps(eps: float, rng, max_leapfrog: int) -> int:
    # integration time pi/2 jittered by +-40%, matched to a unit-scale metric
    t = (math.pi / 2) * rng.uniform(0.6, 1.4)
    return int(min(max_leapfrog, max(1, math.ceil(t / eps))))


def hmc(f: Callable, init: np.ndarray, cov: np.ndarray, n_warmup: int, n_samples: int,
        rng: np.random.Generator, target_accept: float = 0.8, max_leapfrog: int = 64):
    """Run one chain; returns (draws, accept rate, divergences, step size)."""
    chain = _Chain(f, np.array(init, dtype=float), cov, rng, max_leapfrog)
    if not np.isfinite(chain.value):
        raise NonFiniteError("non-finite log posterior at chain start", theta=init)
    eps = chain.find_step_size(0.5)
    da = _DualAveraging(eps, target_accept)
    init_buf, _, ends = _warmup_windows(n_warmup)
    window: list[np.ndarray] = []
    for it in range(n_warmup):
        a, _ = chain.step(eps, _n_steps(eps, rng, max_leapfrog))
        eps = da.update(a)
        if ends and init_buf <= it < ends[-1]:
            window.append(chain.theta)
            if it + 1 in ends:
                X = np.array(window)
                k = len(X)
                S = np.cov(X, rowvar=False).reshape(len(init), len(init))
                S = (k / (k + 5.0)) * S + 1e-3 * (5.0 / (k + 5.0)) * np.eye(len(init))
                try:
                    chain.set_metric(S)
                except np.linalg.LinAlgError:
                    pass
                window = []
                eps = chain.find_step_size(eps)
                da = _DualAveraging(eps, target_accept)
    if n_warmup:
        eps = da.final
    draws = np.empty((n_samples, len(init)))
    acc, div = 0.0, 0
    for it in range(n_samples):
        a, d = chain.step(eps, _n_steps(eps, rng, max_leapfrog))
        acc += a
        div += d
        draws[it] = chain.theta
    return draws, acc / max(n_samples, 1), div, eps


def fit_mcmc(cascades: Sequence[Cascade], config: SamplerConfig = SamplerConfig(),
             schema: CovariateSchema | None = None,
             families: tuple[str, str] = ("power_law", "weibull"),
             standardizer: Standardizer | None = None, label: str | None = None,
             init=None) -> PosteriorFit:
    """Sample one component's posterior.

    Chains start from the MAP point jittered by twice the Laplace covariance
    and use that covariance as their initial metric.
    """
    if not cascades:
        raise ValueError("empty training set")
    schema = schema or CovariateSchema()
    post = prepare(cascades, schema, families, standardizer)
    init = default_init(cascades, post.layout) if init is None else np.asarray(init, float)
    mres = maximize(post, init)
    H = _fd_hessian(post, mres.point, None)
    evals, evecs = np.linalg.eigh(-H)
    evals = np.maximum(evals, 1e-8)
    cov = (evecs / evals) @ evecs.T
    cov = 0.5 * (cov + cov.T)

    seeds = np.random.SeedSequence(config.seed).spawn(config.chains)
    all_draws, accs, divs, steps = [], [], 0, []
    for k, ss in enumerate(seeds):
        rng = np.random.default_rng(ss)
        start = mres.point + 2.0 * (np.linalg.cholesky(cov) @ rng.standard_normal(len(init)))
        draws, acc, div, eps = hmc(post, start, cov, config.warmup, config.samples_per_chain,
                                   rng, config.target_accept, config.max_leapfrog)
        all_draws.append(draws)
        accs.append(acc)
        divs += div
        steps.append(eps)
    total = config.chains * config.samples_per_chain
    if divs == total:
        raise RuntimeError("every post-warmup transition diverged")
    if divs > DIVERGENT_WARN_FRACTION * total:
        warnings.warn(f"{divs} of {total} transitions diverged", ConvergenceWarning, stacklevel=2)
    fit = PosteriorFit(post.layout, np.concatenate(all_draws), mres.point, config.chains,
                       config.warmup, config.seed, n_divergent=divs,
                       accept_rate=float(np.mean(accs)), step_size=steps, label=label,
                       standardizer=standardizer, n_clamped=post.batch.n_clamped)
    if np.any(fit.rhat >= 1.02):
        log.warning("R-hat above 1.02 for %s", [n for n, r in zip(post.layout.names, fit.rhat)
                                                if r >= 1.02])
    return fit


def map_fit(cascades: Sequence[Cascade], schema: CovariateSchema | None = None,
            families: tuple[str, str] = ("power_law", "weibull"),
            standardizer: Standardizer | None = None, label: str | None = None,
            init=None, seed: int = 0) -> PosteriorFit:
    """Point-estimate fit wrapped as a single-draw posterior."""
    schema = schema or CovariateSchema()
    res = fit_map(cascades, schema, families, standardizer, init)
    layout = ParameterLayout(schema, *families)
    return PosteriorFit(layout, res.point[None, :], res.point, 1, 0, seed,
                        rhat=np.full(layout.dim, np.nan), ess=np.full(layout.dim, np.nan),
                        label=label, standardizer=standardizer, n_clamped=res.n_clamped)
