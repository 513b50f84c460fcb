import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rumorhawkes import kernels as K
from rumorhawkes.cascades import Cascade, CovariateSchema, Standardizer
from rumorhawkes.kernels import KernelPair, KernelParams
from rumorhawkes.model import (ComponentParams, MarkCoefficients, ModelDomainError,
                               NonFiniteError, ParameterLayout, Posterior, intensity,
                               log_likelihood_branching, log_likelihood_full,
                               log_posterior_and_gradient, log_prior, log_prior_and_grad, mark)

import oracles
from conftest import EMPTY, SMALL, component, make_cascade, random_cascade

SCHEMA = CovariateSchema()


def random_params(rng, schema=SCHEMA, families=None):
    fams = families or (rng.choice(K.FAMILIES), rng.choice(K.FAMILIES))
    layout = ParameterLayout(schema, *fams)
    theta = rng.normal(0, 0.3, layout.dim)
    theta[0] = rng.normal(-0.5, 0.5)
    return layout.unpack(theta)


def test_mark_examples():
    p0 = component(0.0, SCHEMA)
    assert mark(p0, np.r_[1.0, np.random.default_rng(0).normal(size=11)]) == 1.0
    row = np.r_[1.0, np.zeros(11)]
    assert mark(component(1.6447, SCHEMA), row) == pytest.approx(5.180, abs=1e-3)
    assert mark(component(2.3440, SCHEMA), row) == pytest.approx(10.423, abs=1e-3)
    assert mark(component(1.6447, SCHEMA), row) == math.exp(1.6447)
    with pytest.raises(ModelDomainError):
        mark(p0, [1.0, 2.0])


def test_mark_monotone_in_positive_coefficient(rng):
    p = component(0.3, SCHEMA, betas=np.abs(rng.normal(size=11)))
    row = np.r_[1.0, rng.normal(size=11)]
    for j in range(1, 12):
        bumped = row.copy()
        bumped[j] += 0.1
        assert mark(p, bumped) > mark(p, row)


def test_intensity_examples():
    p = component(math.log(2.0))
    root = make_cascade([0.0], [-1], EMPTY, horizon=5.0)
    assert intensity(p, root, 0.0) == 0.0
    assert intensity(p, root, 1.0) == pytest.approx(2 * math.exp(-1), rel=1e-14)
    two = make_cascade([0.0, 1.0], [-1, 0], EMPTY, horizon=5.0)
    one = make_cascade([0.0], [-1], EMPTY, horizon=5.0)
    t = 2.5
    expected = intensity(p, one, t) + 2 * math.exp(-(t - 1.0))
    assert intensity(p, two, t) == pytest.approx(expected, rel=1e-14)


def test_intensity_outside_window():
    with pytest.raises(ModelDomainError):
        intensity(component(), make_cascade([0.0, 1.0], [-1, 0], EMPTY), 3.0)


def test_root_only_likelihood():
    p = component(0.7, root=KernelParams.power_law(1.3, 0.5),
                  non_root=KernelParams.weibull(2.0, 0.6))
    c = make_cascade([0.0], [-1], EMPTY, horizon=4.0)
    expected = -math.exp(0.7) * K.integral(p.kernels.root, 4.0)
    assert log_likelihood_branching(p, c) == pytest.approx(expected, rel=1e-14)
    assert log_likelihood_full(p, c) == log_likelihood_branching(p, c)


def test_chain_closed_form():
    p = component(0.0)
    c = make_cascade([0.0, 1.0], [-1, 0], EMPTY, horizon=2.0)
    expected = -1 - (1 - math.exp(-2)) - (1 - math.exp(-1))
    assert log_likelihood_branching(p, c) == pytest.approx(expected, rel=1e-14)
    assert round(expected, 4) == -2.4968
    assert log_likelihood_full(p, c) == pytest.approx(expected, rel=1e-14)


def test_star_full_vs_branching():
    p = component(0.4, root=KernelParams.exponential(1.5), non_root=KernelParams.exponential(0.5))
    c = make_cascade([0.0, 1.0, 2.0], [-1, 0, 0], EMPTY, horizon=3.0)
    m = math.exp(0.4)
    Delta, delta = 2.0, 1.0
    branch_term = math.log(m * 1.5 * math.exp(-1.5 * Delta))
    full_term = math.log(m * 1.5 * math.exp(-1.5 * Delta) + m * 0.5 * math.exp(-0.5 * delta))
    diff = log_likelihood_full(p, c) - log_likelihood_branching(p, c)
    assert diff == pytest.approx(full_term - branch_term, rel=1e-12)


def test_random_50_event_cascade_vs_oracle(rng):
    for _ in range(5):
        p = random_params(rng)
        c = random_cascade(50, rng=rng)
        ref = oracles.branching_loglik(p, c)
        assert log_likelihood_branching(p, c) == pytest.approx(ref, rel=1e-10)


def test_standardized_marks_vs_oracle(rng):
    cs = [random_cascade(12, rng=rng) for _ in range(4)]
    std = Standardizer.fit(cs, SCHEMA)
    p = random_params(rng)
    p = ComponentParams(p.marks, p.kernels, None, SCHEMA, std)
    for c in cs:
        assert log_likelihood_branching(p, c) == pytest.approx(oracles.branching_loglik(p, c),
                                                               rel=1e-10)


def test_relabel_invariance(rng):
    # swapping two tied siblings permutes indices but not times or the tree
    c = make_cascade([0.0, 1.0, 1.0, 2.5], [-1, 0, 0, 1], EMPTY, horizon=3.0)
    swapped = Cascade("c", [0.0, 1.0, 1.0, 2.5], [-1, 0, 0, 2], c.user[[0, 2, 1, 3]], c.z, 3.0)
    p = component(0.2, root=KernelParams.power_law(1.1, 0.3), non_root=KernelParams.weibull(1, .7))
    assert log_likelihood_branching(p, c) == pytest.approx(log_likelihood_branching(p, swapped),
                                                           rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 20), st.integers(0, 2**31), st.floats(0.01, 10.0))
def test_longer_horizon_lowers_likelihood(n, seed, extra):
    rng = np.random.default_rng(seed)
    c = random_cascade(n, rng=rng)
    longer = Cascade(c.id, c.times, c.parents, c.user, c.z, c.horizon + extra)
    p = random_params(rng)
    assert log_likelihood_branching(p, longer) < log_likelihood_branching(p, c)


def test_weibull_zero_lag_is_clamped():
    p = component(0.0, root=KernelParams.exponential(1.0), non_root=KernelParams.weibull(1.0, 0.5))
    c = make_cascade([0.0, 1.0, 1.0], [-1, 0, 1], EMPTY, horizon=2.0)
    ll = log_likelihood_branching(p, c)
    assert np.isfinite(ll)
    assert ll == pytest.approx(oracles.branching_loglik(p, c), rel=1e-12)


def test_prior_examples():
    layout = ParameterLayout(SCHEMA, "exponential", "exponential")
    theta = np.zeros(layout.dim)
    lp, _ = log_prior_and_grad(theta, layout)
    expected = (-0.5 * math.log(2 * math.pi * 25) + 11 * (-0.5 * math.log(2 * math.pi))
                + 2 * math.log(1 / math.pi))
    assert lp == pytest.approx(expected, rel=1e-14)


def test_prior_per_component_terms():
    layout = ParameterLayout(EMPTY, "exponential", "exponential")
    lp0 = log_prior_and_grad(np.zeros(3), layout)[0]
    alpha_term = -0.5 * math.log(2 * math.pi * 25)
    kernel_term = math.log(1 / math.pi)
    assert lp0 == pytest.approx(alpha_term + 2 * kernel_term, rel=1e-14)
    assert log_prior(component(0.0)) == pytest.approx(lp0)


def test_prior_gradient(rng):
    layout = ParameterLayout(SCHEMA, "power_law", "weibull")
    for _ in range(10):
        theta = rng.normal(0, 2, layout.dim)
        _, g = log_prior_and_grad(theta, layout)
        fd = np.array([(log_prior_and_grad(theta + e, layout)[0]
                        - log_prior_and_grad(theta - e, layout)[0]) / 2e-5
                       for e in np.eye(layout.dim) * 1e-5])
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def posterior_fd(post, theta, h=1e-5):
    return np.array([(post(theta + e)[0] - post(theta - e)[0]) / (2 * h)
                     for e in np.eye(len(theta)) * h])


@pytest.mark.parametrize("families", [("power_law", "weibull"), ("exponential", "power_law"),
                                      ("weibull", "exponential")])
def test_gradient_finite_differences(families, rng):
    cs = [random_cascade(int(rng.integers(1, 25)), rng=rng) for _ in range(6)]
    layout = ParameterLayout(SCHEMA, *families)
    post = Posterior(cs, layout, Standardizer.fit(cs, SCHEMA))
    for _ in range(3):
        theta = rng.normal(0, 0.3, layout.dim)
        _, g = post(theta)
        fd = posterior_fd(post, theta)
        assert np.max(np.abs(g - fd) / np.maximum(np.abs(fd), 1.0)) < 1e-4


def test_empty_schema_gradient_over_alpha_only(rng):
    cs = [random_cascade(10, EMPTY, rng=rng) for _ in range(3)]
    p = component(0.1, EMPTY, KernelParams.exponential(0.7))
    value, g = log_posterior_and_gradient(p, cs)
    assert len(g) == 3  # alpha + one raw rate per kernel
    assert np.isfinite(value)


def test_doubling_data_doubles_likelihood(rng):
    cs = [random_cascade(8, rng=rng) for _ in range(3)]
    p = random_params(rng)
    layout = p.layout
    theta = p.to_vector()
    lp, _ = log_prior_and_grad(theta, layout)
    one = Posterior(cs, layout)(theta)[0] - lp
    two = Posterior(cs + cs, layout)(theta)[0] - lp
    assert two == pytest.approx(2 * one, rel=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_names_cascade():
    layout = ParameterLayout(EMPTY, "exponential", "exponential")
    c = make_cascade([0.0, 1.0], [-1, 0], EMPTY, horizon=2.0, cid="bad")
    post = Posterior([c], layout)
    with pytest.raises(NonFiniteError) as err:
        post(np.array([800.0, 0.0, 0.0]))
    assert err.value.cascade_id == "bad"


def test_layout_roundtrip(rng):
    p = random_params(rng, families=("power_law", "weibull"))
    q = p.layout.unpack(p.to_vector())
    np.testing.assert_allclose(q.to_vector(), p.to_vector(), atol=1e-12)
    assert len(p.layout.names) == p.layout.dim
