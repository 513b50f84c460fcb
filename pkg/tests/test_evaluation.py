import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rumorhawkes.cascades import Cascade, CovariateSchema, preprocess
from rumorhawkes.evaluation import (COUNT_GRID, TIME_GRID, auc, compute_metrics,
                                    cross_validated_proba, extract_features, feature_matrix,
                                    fit_logistic_baseline, sweep_early_detection, sweep_table)
from rumorhawkes.mixture import score_many, train
from rumorhawkes.simulate import SimConfig, simulate_many

import oracles
from conftest import SMALL, make_cascade, mixture_from_params, recovery_params, separated_params


def test_auc_examples():
    assert auc([0.9, 0.8, 0.2, 0.1], ["false", "false", "true", "true"]) == 100.0
    assert auc([0.3] * 6, ["false", "true"] * 3) == 50.0
    m = compute_metrics([0.9, 0.8, 0.6, 0.2], ["false", "true", "false", "true"], 0.5)
    assert m.auc == 75.0
    assert m.sensitivity == 100.0 and m.specificity == 50.0
    assert round(m.precision, 2) == 66.67
    assert (m.tp, m.fp, m.tn, m.fn) == (2, 1, 1, 0)


def test_single_class_rejected():
    with pytest.raises(ValueError, match="single class"):
        compute_metrics([0.1, 0.9], ["true", "true"])


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1),
                          st.booleans()), min_size=2, max_size=200))
def test_auc_equals_pair_counting(items):
    p = [a for a, _ in items]
    y = [b for _, b in items]
    if all(y) or not any(y):
        return
    assert auc(p, y) == oracles.auc_pairs(p, y)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.booleans()), min_size=2, max_size=100),
       st.floats(0.01, 0.99))
def test_metrics_consistent_with_counts(items, thr):
    p = [a for a, _ in items]
    y = [b for _, b in items]
    if all(y) or not any(y):
        return
    m = compute_metrics(p, y, thr)
    sens = 100 * m.tp / (m.tp + m.fn)
    spec = 100 * m.tn / (m.tn + m.fp)
    prec = 100 * m.tp / (m.tp + m.fp) if m.tp + m.fp else 0.0
    assert abs(m.balanced_accuracy - (sens + spec) / 2) < 1e-10
    f1 = 2 * prec * sens / (prec + sens) if prec + sens else 0.0
    assert abs(m.f1 - f1) < 1e-10
    assert m.tp + m.fp + m.tn + m.fn == len(p)


def test_table_has_two_decimals():
    m = compute_metrics([0.9, 0.8, 0.6, 0.2], ["false", "true", "false", "true"])
    assert "66.67" in m.table() and "75.00" in m.table()


def test_features_chain():
    f = extract_features(make_cascade([0.0, 1.0, 2.0], [-1, 0, 1]))
    assert f.size == 3 and f.depth == 2 and f.diffusion_speed == 1.5
    assert f.avg_depth == 1.0 and f.size_to_depth == 1.5


def test_features_zero_duration_guard():
    f = extract_features(make_cascade([0.0] * 5, [-1, 0, 0, 0, 0]))
    assert f.diffusion_speed == 5.0
    assert np.all(np.isfinite(f))


def test_features_emotions_passthrough():
    schema = CovariateSchema()
    c = make_cascade([0.0, 1.0], [-1, 0])
    f = extract_features(c, schema)
    z = dict(zip(schema.cascade_names, c.z))
    assert (f.pos_emotion, f.neg_emotion, f.surprise, f.topic) == (
        z["pos_emotion"], z["neg_emotion"], z["surprise"], z["topic_political"])


def test_features_reorder_invariant():
    c = make_cascade([0.0, 1.0, 1.0, 2.5], [-1, 0, 0, 1])
    swapped = Cascade("c", c.times, [-1, 0, 0, 2], c.user[[0, 2, 1, 3]], c.z, c.horizon)
    np.testing.assert_allclose(extract_features(c), extract_features(swapped), rtol=1e-14)


def test_logistic_separable(rng):
    X = np.r_[rng.normal(-3, 0.5, (30, 2)), rng.normal(3, 0.5, (30, 2))]
    y = np.r_[np.zeros(30, bool), np.ones(30, bool)]
    scorer = fit_logistic_baseline(X, y)
    assert np.all((scorer.predict_proba(X) >= 0.5) == y)


def test_logistic_drops_constant_feature(rng):
    X = np.c_[rng.normal(size=40), np.ones(40)]
    y = rng.random(40) < 0.5
    y[:2] = [True, False]
    with pytest.warns(UserWarning, match="constant"):
        scorer = fit_logistic_baseline(X, y)
    assert list(scorer.keep) == [True, False]


def test_logistic_permutation_null(rng):
    X = rng.normal(size=(200, 5))
    X[:, 0] += np.r_[np.zeros(100), np.ones(100)]
    y = np.r_[np.zeros(100, bool), np.ones(100, bool)]
    aucs = [auc(cross_validated_proba(X, rng.permutation(y), 0.1, seed=k), y) for k in range(20)]
    assert 45 <= np.mean(aucs) <= 55


def test_baseline_below_mixture():
    # components differ in the engagement coefficient only
    pf = recovery_params(1.64, 0.2, -2.84, "false")
    pt = recovery_params(1.64, 0.3, -2.84, "true")
    cfg = SimConfig(horizon=24.0)
    tr = preprocess(simulate_many(pf, cfg, 400, seed=1, prefix="f")
                    + simulate_many(pt, cfg, 400, seed=2, prefix="t"))
    te = preprocess(simulate_many(pf, cfg, 600, seed=3, prefix="F")
                    + simulate_many(pt, cfg, 600, seed=4, prefix="T"))
    y = [c.label for c in te]
    model = train(tr, schema=SMALL, mode="map")
    mix = auc([s.p_false for s in score_many(model, te)], y)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        scorer = fit_logistic_baseline(feature_matrix(tr, SMALL), [c.label for c in tr])
    base = auc(scorer.predict_proba(feature_matrix(te, SMALL)), y)
    assert base < mix


@pytest.fixture(scope="module")
def sweep_setup():
    pf, pt = separated_params()
    cfg = SimConfig(horizon=24.0)
    data = simulate_many(pf, cfg, 150, seed=5, prefix="f") + simulate_many(pt, cfg, 150, seed=6,
                                                                             prefix="t")
    return mixture_from_params(pf, pt), data


def test_sweep_default_grids(sweep_setup):
    model, data = sweep_setup
    res = sweep_early_detection(model, data)
    assert list(res["time"]) == [f"{t:g}" for t in (0.5, 1, 2, 6, 12, 24, 168)]
    assert list(res["count"]) == [str(n) for n in (5, 10, 25, 50, 100, 250, 500)]
    assert TIME_GRID == (0.5, 1.0, 2.0, 6.0, 12.0, 24.0, 168.0)
    assert COUNT_GRID == (5, 10, 25, 50, 100, 250, 500)
    plain = auc([s.p_false for s in score_many(model, data)], [c.label for c in data])
    assert res["full"] == plain
    assert res["time"]["168"] == plain  # window past the horizon is the full cascade
    assert "Full cascade AUC" in sweep_table(res)


def test_sweep_absent_cell(sweep_setup):
    model, data = sweep_setup
    res = sweep_early_detection(model, data, times=(), counts=(10**6,))
    assert res["count"][str(10**6)] is None
    assert "-" in sweep_table(res)


def test_sweep_refit(sweep_setup):
    model, data = sweep_setup
    from rumorhawkes.inference import SamplerConfig

    res = sweep_early_detection(model, data[::2], times=(6.0,), counts=(),
                                refit_train=data[1::2],
                                sampler_config=SamplerConfig(2, 100, 100, seed=1))
    assert 50 < res["time"]["6"] <= 100
