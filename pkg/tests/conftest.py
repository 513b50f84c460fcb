import numpy as np
import pytest

from rumorhawkes.cascades import Cascade, CovariateSchema
from rumorhawkes.kernels import KernelPair, KernelParams
from rumorhawkes.model import ComponentParams, MarkCoefficients

EMPTY = CovariateSchema((), (), (), frozenset())
SMALL = CovariateSchema((), ("engagement",), ("depth",))


def make_cascade(times, parents, schema=CovariateSchema(), horizon=None, label=None,
                 cid="c", rng=None):
    rng = np.random.default_rng(0 if rng is None else rng)
    times = np.asarray(times, dtype=float)
    user = rng.lognormal(1.0, 1.0, (len(times), schema.n_u))
    z = rng.uniform(0, 1, schema.n_c)
    return Cascade(cid, times, parents, user, z, times[-1] if horizon is None else horizon, label)


def random_cascade(n, schema=CovariateSchema(), rng=None, cid="r", label=None):
    rng = np.random.default_rng(rng)
    times = np.concatenate([[0.0], np.sort(rng.exponential(2.0, n - 1).cumsum())])
    parents = np.array([-1] + [int(rng.integers(0, i)) for i in range(1, n)])
    horizon = times[-1] + rng.exponential(1.0)
    return make_cascade(times, parents, schema, horizon, label, cid, rng)


def component(alpha=0.0, schema=EMPTY, root=None, non_root=None, betas=None, label=None):
    w = np.zeros(1 + len(schema.names)) if betas is None else np.concatenate([[0.0], betas])
    w[0] = alpha
    root = root or KernelParams.exponential(1.0)
    non_root = non_root or root
    return ComponentParams(MarkCoefficients.from_weights(w, schema), KernelPair(root, non_root),
                           label, schema)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def recovery_params(alpha=1.64, beta_eng=0.2, beta_depth=-2.84, label=None):
    """Schema (engagement, depth), PowerLaw root and Weibull non-root kernels."""
    return component(alpha, SMALL, KernelParams.power_law(1.2, 0.5),
                     KernelParams.weibull(1.0, 0.6), betas=[beta_eng, beta_depth], label=label)


def fit_from_params(params, draws=None, label=None):
    """A PosteriorFit whose draws are given directly (the truth by default)."""
    from rumorhawkes.inference import PosteriorFit

    theta = params.to_vector()
    draws = theta[None, :] if draws is None else np.atleast_2d(draws)
    nan = np.full(len(theta), np.nan)
    return PosteriorFit(params.layout, draws, theta, 1, 0, 0, rhat=nan, ess=nan,
                        label=label or params.label, standardizer=params.standardizer)


def mixture_from_params(p_false, p_true, mode="mcmc", prior_false=0.5):
    from rumorhawkes.mixture import MixtureModel

    return MixtureModel(fit_from_params(p_true, label="true"),
                        fit_from_params(p_false, label="false"), p_false.schema,
                        p_false.standardizer, prior_false, mode)


def separated_params():
    """Well-separated false/true components differing in intercept, engagement and depth."""
    return (recovery_params(1.6447, -0.0785, -2.8421, "false"),
            recovery_params(2.3440, 0.3738, -3.2102, "true"))


# one line per acceptance criterion, printed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
