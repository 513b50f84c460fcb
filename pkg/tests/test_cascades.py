import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rumorhawkes.cascades import (Cascade, CovariateSchema, ParseError, Standardizer,
                                  ValidationError, balanced_sample, covariate_rows,
                                  derive_structural, design_matrix, dump, ingest, preprocess,
                                  truncate)
from conftest import make_cascade, random_cascade

SCHEMA = CovariateSchema()


def record(times, parents, cid="x", label="true", horizon=None):
    ev = [{"t": t, "parent": p, "x": {n: 1.0 for n in SCHEMA.user_names}}
          for t, p in zip(times, parents)]
    rec = {"id": cid, "label": label, "z": {n: 0.5 for n in SCHEMA.cascade_names}, "events": ev}
    if horizon is not None:
        rec["horizon_hours"] = horizon
    return json.dumps(rec)


def test_ingest_root_and_two_children():
    [c] = ingest([record([0, 0.5, 1.0], [None, 0, 0])])
    assert len(c) == 3
    assert list(c.depth) == [0, 1, 1]
    assert c.horizon == 1.0  # defaults to the last event


def test_ingest_parent_out_of_range():
    with pytest.raises(ValidationError, match="parent out of range"):
        ingest([record([0, 0.5, 1.0], [None, 0, 5])])


def test_ingest_bad_line_is_reported():
    lines = [record([0, 1], [None, 0], cid=f"c{i}") for i in range(1000)]
    lines[636] = "{not json"
    with pytest.raises(ParseError) as err:
        ingest(lines)
    assert err.value.line == 637


def test_ingest_time_inversion():
    with pytest.raises(ValidationError, match="time inversion"):
        ingest([record([0, 2.0, 1.0], [None, 0, 1])])


def test_ingest_stable_ties():
    # equal times keep record order; parent indices are remapped after sorting
    [c] = ingest([record([0, 3.0, 1.0, 1.0], [None, 2, 0, 0])])
    np.testing.assert_array_equal(c.times, [0, 1, 1, 3])
    np.testing.assert_array_equal(c.parents, [-1, 0, 0, 1])


def test_roundtrip():
    cascades = [random_cascade(n, rng=n, cid=f"r{n}", label="false") for n in (1, 2, 7, 30)]
    buf = io.StringIO()
    dump(cascades, buf)
    back = ingest(buf.getvalue().splitlines())
    for a, b in zip(cascades, back):
        assert a.id == b.id and a.label == b.label and a.horizon == b.horizon
        for f in ("times", "parents", "user", "z", "structural"):
            np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_preprocess_min_size():
    five = make_cascade(np.arange(5.0), [-1, 0, 0, 0, 0])
    six = make_cascade(np.arange(6.0), [-1, 0, 0, 0, 0, 0])
    assert preprocess([five], 6) == []
    assert preprocess([six], 6) == [six]
    assert preprocess([], 6) == []


def test_structural_chain():
    c = derive_structural(make_cascade([0, 1, 3], [-1, 0, 1]))
    np.testing.assert_array_equal(c.structural[2], [2, 2, 3])
    np.testing.assert_array_equal(c.structural[0], [0, 0, 0])


def test_structural_star():
    c = make_cascade([0, 1, 2, 3, 4], [-1, 0, 0, 0, 0])
    assert list(c.depth[1:]) == [1, 1, 1, 1]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 40), st.integers(0, 2**31))
def test_structural_invariants(n, seed):
    c = random_cascade(n, rng=seed)
    y = c.structural
    for i in range(1, n):
        assert y[i, 0] == y[c.parents[i], 0] + 1
    np.testing.assert_array_equal(y[:, 2], c.times)
    assert np.all(y[:, 1] >= 0)


def test_truncate_by_time():
    c = make_cascade([0, 10, 20, 30], [-1, 0, 1, 1], horizon=40)
    t = truncate(c, time=15)
    assert len(t) == 2 and t.horizon == 15
    assert truncate(c, time=40) is c
    assert truncate(c, time=100) is c


def test_truncate_by_count():
    c = make_cascade(np.arange(9.0), [-1] + list(range(8)))
    t = truncate(c, count=5)
    assert len(t) == 6 and t.horizon == 5.0


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31), st.floats(0.01, 50), st.floats(0.01, 50))
def test_truncate_composes(n, seed, t1, t2):
    c = random_cascade(n, rng=seed)
    a = truncate(truncate(c, time=t1), time=t2)
    b = truncate(c, time=min(t1, t2))
    assert a.horizon == b.horizon
    np.testing.assert_array_equal(a.times, b.times)


def test_balanced_sample():
    cs = [make_cascade([0, 1], [-1, 0], label=lab, cid=f"{lab}{i}")
          for lab in ("true", "false") for i in range(100)]
    train, test = balanced_sample(cs, 50, seed=3)
    assert len(train) == 100 and len(test) == 100
    assert sum(c.label == "false" for c in train) == 50
    again, _ = balanced_sample(cs, 50, seed=3)
    assert [c.id for c in train] == [c.id for c in again]
    with pytest.raises(ValueError, match="available"):
        balanced_sample(cs, 101)


def test_log1p_transform():
    schema = CovariateSchema(("topic_political",), ("followers",), ("depth",))
    c = Cascade("a", [0, 1], [-1, 0], [[0.0], [9.0]], [1.0], 2.0)
    X = design_matrix(c, schema)
    np.testing.assert_allclose(X, [[1.0, 0.0, 0.0], [1.0, np.log(10), np.log(2)]])


def test_standardizer_coefficient_maps(rng):
    X = rng.normal(3, 2, (50, 4))
    std = Standardizer(X.mean(0), X.std(0))
    w = rng.normal(size=5)
    raw = std.coefficients_to_raw(w)
    # same linear predictor on both scales
    np.testing.assert_allclose(w[0] + std(X) @ w[1:], raw[0] + X @ raw[1:])
    np.testing.assert_allclose(std.coefficients_from_raw(raw), w)


def test_cascade_arrays_read_only():
    c = make_cascade([0, 1], [-1, 0])
    with pytest.raises(ValueError):
        c.times[0] = 1.0
