import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grfkit.errors import DimensionMismatchError, InvalidArgumentError, InvalidKError
from grfkit.knn import KnnModel, knn_fit, knn_predict, provenance_report
from grfkit.ser import DesignMatrices
from grfkit.signal import SensorSet


def brute_force(X, Y, x, k, weighting="inverse"):
    dist = [math.sqrt(sum((a - b) ** 2 for a, b in zip(row, x))) for row in X]
    order = sorted(range(len(X)), key=lambda i: (dist[i], i))[:k]
    if weighting == "inverse":
        w = [1 / dist[i] for i in order]
    else:
        w = [dist[i] for i in order]
    total = sum(w)
    return sum(wi / total * Y[i] for wi, i in zip(w, order))


def make_design(X, Y):
    n = X.shape[0]
    return DesignMatrices(X, Y, 1, SensorSet.ALL, tuple(("m", i, i + 1) for i in range(n)),
                          tuple((f"m:{i:03d}",) for i in range(n)))


def test_fit_valid_and_invalid_k(rng):
    d = make_design(rng.normal(size=(5, 4)), rng.normal(size=(5, 3)))
    assert knn_fit(d, 5).k == 5
    with pytest.raises(InvalidKError):
        knn_fit(d, 6)
    with pytest.raises(InvalidKError):
        knn_fit(d, 0)
    with pytest.raises(InvalidArgumentError):
        knn_fit(d, 2, "gaussian")


def test_rows_stored_verbatim(rng):
    X, Y = rng.normal(size=(6, 4)), rng.normal(size=(6, 2))
    m = knn_fit(make_design(X, Y), 2)
    assert m.X.tobytes() == X.tobytes() and m.Y.tobytes() == Y.tobytes()


@pytest.mark.parametrize("weighting", ["inverse", "literal"])
def test_brute_force_oracle(rng, weighting):
    X, Y = rng.normal(size=(10, 5)), rng.normal(size=(10, 4))
    m = knn_fit(make_design(X, Y), 3, weighting)
    for _ in range(50):
        x = rng.normal(size=5)
        np.testing.assert_allclose(knn_predict(m, x), brute_force(X, Y, x, 3, weighting), atol=1e-12, rtol=0)


def test_batch_matches_single(rng):
    X, Y = rng.normal(size=(30, 6)), rng.normal(size=(30, 4))
    m = knn_fit(make_design(X, Y), 4)
    Q = rng.normal(size=(8, 6))
    batch = m.predict(Q)
    for i in range(8):
        np.testing.assert_array_equal(batch[i], m.predict(Q[i]))
    np.testing.assert_array_equal(m.predict(Q, k=2)[0], knn_fit(make_design(X, Y), 2).predict(Q[0]))


def test_exact_match_bitwise(rng):
    X, Y = rng.normal(size=(10, 5)), rng.normal(size=(10, 3))
    for weighting in ("inverse", "literal"):
        m = knn_fit(make_design(X, Y), 4, weighting)
        for j in range(10):
            assert m.predict(X[j]).tobytes() == Y[j].tobytes()


def test_equal_distance_mean():
    X = np.array([[1.0, 0.0], [-1.0, 0.0], [5.0, 5.0]])
    Y = np.array([[2.0], [4.0], [100.0]])
    for weighting in ("inverse", "literal"):
        m = KnnModel(X, Y, 2, weighting)
        assert m.predict(np.zeros(2))[0] == pytest.approx(3.0)


def test_tie_break_by_index():
    X = np.array([[1.0], [-1.0], [1.0]])
    Y = np.array([[10.0], [20.0], [30.0]])
    nb = KnnModel(X, Y, 2).neighbors(np.zeros(1))
    assert [n.row for n in nb] == [0, 1]


def test_literal_favours_far():
    X = np.array([[1.0], [3.0]])
    Y = np.array([[0.0], [1.0]])
    assert KnnModel(X, Y, 2, "literal").predict(np.zeros(1))[0] == pytest.approx(0.75)
    assert KnnModel(X, Y, 2, "inverse").predict(np.zeros(1))[0] == pytest.approx(0.25)


def test_provenance_resolves(rng):
    X, Y = rng.normal(size=(12, 4)), rng.normal(size=(12, 2))
    m = knn_fit(make_design(X, Y), 5)
    y, nb = m.predict_with_provenance(rng.normal(size=4))
    assert len(nb) == 5
    assert sum(n.weight for n in nb) == pytest.approx(1.0)
    np.testing.assert_allclose(y, sum(n.weight * Y[n.row] for n in nb), atol=1e-14)
    report = json.loads(provenance_report(nb, m))
    assert all(r["row_id"] == f"m:{r['row']:03d}" for r in report)


def test_permutation_invariance(rng):
    X, Y = rng.normal(size=(20, 3)), rng.normal(size=(20, 2))
    perm = rng.permutation(20)
    x = rng.normal(size=3)
    a = KnnModel(X, Y, 5).predict(x)
    b = KnnModel(X[perm], Y[perm], 5).predict(x)
    np.testing.assert_allclose(a, b, atol=1e-14)


def test_monotone_locality(rng):
    X, Y = rng.normal(size=(10, 3)), rng.normal(size=(10, 2))
    m = KnnModel(X, Y, 4)
    direction = rng.normal(size=3)
    errs = [np.abs(m.predict(X[2] + eps * direction) - Y[2]).max() for eps in (1e-1, 1e-3, 1e-6, 1e-9)]
    assert errs == sorted(errs, reverse=True)
    assert errs[-1] < 1e-6


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**31), st.integers(1, 8), st.sampled_from(["inverse", "literal"]))
def test_convex_combination(seed, k, weighting):
    r = np.random.default_rng(seed)
    X, Y = r.normal(size=(8, 3)), r.normal(size=(8, 4))
    m = KnnModel(X, Y, k, weighting)
    x = r.normal(size=3)
    y = m.predict(x)
    rows = [n.row for n in m.neighbors(x)]
    assert np.all(y >= Y[rows].min(axis=0) - 1e-12)
    assert np.all(y <= Y[rows].max(axis=0) + 1e-12)


def test_dimension_mismatch(rng):
    m = KnnModel(rng.normal(size=(4, 3)), rng.normal(size=(4, 2)), 2)
    with pytest.raises(DimensionMismatchError):
        m.predict(np.zeros(4))


def test_json_round_trip(rng):
    X, Y = rng.normal(size=(7, 3)), rng.normal(size=(7, 2))
    m = knn_fit(make_design(X, Y), 3, "literal")
    back = KnnModel.from_json(m.to_json())
    x = rng.normal(size=3)
    assert back.predict(x).tobytes() == m.predict(x).tobytes()
    assert back.row_ids == m.row_ids and back.weighting == "literal"
