import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tcpdiag.featsel import rank_features
from tcpdiag.preprocess import (
    EmptyDataset,
    NotInSubset,
    ScaleParams,
    apply_scaler,
    encode_label,
    fit_scaler,
)
from tcpdiag.sigdb import DimensionMismatch, select_training_subset


def test_encode_labels():
    assert encode_label({"cf_0"}, "cf_1") == -1
    assert encode_label({"cf_1"}, "cf_1") == 1
    with pytest.raises(NotInSubset):
        encode_label({"cf_3"}, "cf_1")


def test_fit_extrema():
    sp = fit_scaler([[2.0, 5.0], [4.0, 5.0], [10.0, 5.0]])
    assert sp.min_v.tolist() == [2, 5] and sp.max_v.tolist() == [10, 5]


def test_fit_empty():
    with pytest.raises(EmptyDataset):
        fit_scaler(np.zeros((0, 3)))


def test_apply_examples():
    sp = ScaleParams(np.array([2.0, 5.0]), np.array([10.0, 5.0]))
    assert apply_scaler(sp, [4.0, 123.0]).tolist() == [0.25, 0.0]
    assert apply_scaler(sp, [12.0, 5.0]).tolist() == [1.0, 0.0]
    assert apply_scaler(sp, [-3.0, 5.0]).tolist() == [0.0, 0.0]


def test_apply_dimension_mismatch():
    sp = fit_scaler(np.ones((2, 3)))
    with pytest.raises(DimensionMismatch):
        apply_scaler(sp, np.ones(4))


def test_scale_params_round_trip():
    sp = fit_scaler(np.random.default_rng(0).normal(size=(5, 4)))
    back = ScaleParams.from_dict(sp.to_dict())
    assert np.array_equal(back.min_v, sp.min_v) and np.array_equal(back.max_v, sp.max_v)


def test_emulator_subset_extrema(train_db):
    ds = select_training_subset(train_db, "cf_1")
    sp = fit_scaler(ds.X)
    for k in range(ds.X.shape[1]):
        col = [row[k] for row in ds.X]
        assert sp.min_v[k] == min(col) and sp.max_v[k] == max(col)


finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def matrices(min_rows=1):
    return st.tuples(st.integers(min_rows, 12), st.integers(1, 6)).flatmap(
        lambda s: arrays(np.float64, s, elements=finite))


@settings(max_examples=200, deadline=None)
@given(matrices())
def test_training_matrix_in_unit_cube(X):
    Z = apply_scaler(fit_scaler(X), X)
    assert Z.min() >= 0.0 and Z.max() <= 1.0
    const = X.max(axis=0) == X.min(axis=0)
    assert np.all(Z[:, const] == 0.0)


@settings(max_examples=200, deadline=None)
@given(matrices(), arrays(np.float64, 6, elements=st.floats(-1e9, 1e9)))
def test_diagnosis_vector_clamped(X, v):
    z = apply_scaler(fit_scaler(X), v[: X.shape[1]])
    assert np.all((z >= 0.0) & (z <= 1.0))


@settings(max_examples=100, deadline=None)
@given(matrices(min_rows=4), st.floats(0.01, 100), st.floats(-100, 100), st.integers(0, 5))
def test_affine_invariance(X, a, b, col):
    col %= X.shape[1]
    Y = X.copy()
    Y[:, col] = a * Y[:, col] + b
    assume(np.ptp(X[:, col]) > 1e-3 * (1 + np.abs(X[:, col]).max()))
    Zx = apply_scaler(fit_scaler(X), X)
    Zy = apply_scaler(fit_scaler(Y), Y)
    assert np.allclose(Zx, Zy, atol=1e-9)


@settings(max_examples=100, deadline=None)
@given(matrices())
def test_refit_on_scaled_output_is_identity(X):
    Z = apply_scaler(fit_scaler(X), X)
    live = np.ptp(Z, axis=0) > 0
    Z2 = apply_scaler(fit_scaler(Z), Z)
    assert np.allclose(Z2[:, live], Z[:, live], atol=1e-12)
    assert np.all(Z2[:, ~live] == 0)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.1, 50), st.floats(-50, 50))
def test_ranking_invariant_under_affine_rescale(seed, a, b):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(12, 6))
    y = np.array([1.0] * 6 + [-1.0] * 6)
    X[y > 0, 2] += 1.5
    Y = X.copy()
    Y[:, 2] = a * Y[:, 2] + b
    r1 = rank_features(apply_scaler(fit_scaler(X), X), y)
    r2 = rank_features(apply_scaler(fit_scaler(Y), Y), y)
    assert r1.indices == r2.indices
    assert np.allclose(r1.scores, r2.scores, rtol=1e-6)
