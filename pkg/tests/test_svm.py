import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcpdiag.svm import (
    DegenerateLabels,
    DimensionMismatch,
    KernelSpec,
    NoConvergence,
    SvmError,
    SvmModel,
    classify,
    decision_value,
    decision_values,
    kernel_eval,
    kernel_matrix,
    train_l2_svm,
)

from oracles import brute_force_dual, random_svm_problem, scipy_dual

LIN = KernelSpec("linear")
X2 = [[0.0], [1.0]]
Y2 = [-1.0, 1.0]


def test_kernel_values():
    assert kernel_eval(KernelSpec("rbf", 1.0), [1, 2], [1, 2]) == 1.0
    assert kernel_eval(LIN, [1, 2], [3, 4]) == 11
    assert kernel_eval(KernelSpec("rbf", 0.5), [0, 0], [1, 1]) == pytest.approx(np.exp(-1))


def test_kernel_errors():
    with pytest.raises(DimensionMismatch):
        kernel_eval(LIN, [1, 2], [1])
    with pytest.raises(SvmError):
        KernelSpec("rbf")
    with pytest.raises(SvmError):
        KernelSpec("poly", 1.0)


@pytest.mark.parametrize("C", [0.1, 1.0, 10.0, 123.0])
def test_two_point_analytic(C):
    m = train_l2_svm(X2, Y2, C=C, kernel=LIN)
    a = 2 * C / (C + 1)
    assert np.allclose(m.alphas, [a, a], atol=1e-9)
    # margin y f(x) = 1 - a / 2C on both points, and f(x) = a x + b
    assert m.bias == pytest.approx(-(1 - a / (2 * C)), abs=1e-9)


def test_two_point_c1_decision():
    m = train_l2_svm(X2, Y2, C=1.0, kernel=LIN)
    assert m.bias == pytest.approx(-0.5, abs=1e-9)
    assert decision_value(m, [0.5]) == pytest.approx(0.0, abs=1e-12)
    assert decision_value(m, [2.0]) == pytest.approx(1.5)
    assert classify(m, [0.5]) == -1


def test_hard_margin_limit():
    m = train_l2_svm(X2, Y2, C=1e6, kernel=LIN)
    assert np.allclose(m.alphas, 2.0, atol=1e-5)
    assert m.bias == pytest.approx(-1.0, abs=1e-5)


@pytest.mark.parametrize("seed", range(40))
def test_matches_brute_force_oracle(seed):
    X, y, C, k = random_svm_problem(np.random.default_rng(seed))
    m = train_l2_svm(X, y, C=C, kernel=k)
    alpha, obj, b = brute_force_dual(X, y, C, k)
    assert m.dual_objective == pytest.approx(obj, abs=1e-6)
    assert m.bias == pytest.approx(b, abs=1e-6)


@pytest.mark.parametrize("seed", range(5))
def test_matches_scipy(seed):
    rng = np.random.default_rng(100 + seed)
    X = rng.uniform(size=(12, 3))
    y = np.where(X[:, 0] + rng.normal(0, 0.2, 12) > 0.5, 1.0, -1.0)
    y[:2] = [1, -1]
    k = KernelSpec("rbf", 1 / 3)
    m = train_l2_svm(X, y, C=10, kernel=k)
    _, obj = scipy_dual(X, y, 10, k)
    assert m.dual_objective == pytest.approx(obj, abs=1e-6)


def _kkt(m, X, y):
    f = decision_values(m, X)
    return f, y * f


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_kkt_and_feasibility(seed):
    X, y, C, k = random_svm_problem(np.random.default_rng(seed))
    m = train_l2_svm(X, y, C=C, kernel=k)
    assert m.converged and np.all(m.alphas > 0)
    assert abs(m.alphas @ m.sv_labels) < 1e-8
    _, margin = _kkt(m, X, y)
    full = np.zeros(len(y))
    sv_rows = [int(np.flatnonzero((X == s).all(1) & (y == l))[0])
               for s, l in zip(m.support_vectors, m.sv_labels)]
    full[sv_rows] = m.alphas
    shifted = margin + full / (2 * C)
    assert np.all(np.abs(shifted[sv_rows] - 1) <= 1e-3)
    off = np.setdiff1d(np.arange(len(y)), sv_rows)
    assert np.all(shifted[off] >= 1 - 1e-3)


def test_dual_objective_nondecreasing():
    rng = np.random.default_rng(7)
    X = rng.uniform(size=(30, 4))
    y = np.where(X.sum(1) > 2, 1.0, -1.0)
    m = train_l2_svm(X, y, C=10, track=True)
    h = np.array(m.history)
    assert len(h) > 2 and np.all(np.diff(h) >= -1e-12)


def test_duplicate_points_allowed():
    m = train_l2_svm([[0.0], [0.0], [1.0]], [-1, -1, 1], C=1, kernel=LIN)
    assert m.converged and np.allclose(m.alphas[:2], m.alphas[0])


def test_support_vector_scores_positive():
    m = train_l2_svm([[0, 0], [0, 1], [1, 0], [1, 1]], [-1, -1, 1, 1], C=10, kernel=LIN)
    for s, lab in zip(m.support_vectors, m.sv_labels):
        if lab > 0:
            assert decision_value(m, s) > 0


@pytest.mark.parametrize("lam", [0.01, 3.0, 1e4])
def test_classify_invariant_under_positive_scaling(lam):
    m = train_l2_svm([[0.1], [0.4], [0.6], [0.9]], [-1, -1, 1, 1], C=1)
    scaled = SvmModel(m.kernel, m.C, m.support_vectors, m.alphas * lam, m.sv_labels,
                      m.bias * lam, m.dual_objective)
    for x in np.linspace(0, 1, 11):
        assert classify(scaled, [x]) == classify(m, [x])


def test_errors():
    with pytest.raises(DegenerateLabels):
        train_l2_svm([[0], [1]], [1, 1])
    with pytest.raises(DimensionMismatch):
        train_l2_svm([[0], [1]], [1, -1, 1])
    m = train_l2_svm(X2, Y2, kernel=LIN)
    with pytest.raises(DimensionMismatch):
        decision_value(m, [1.0, 2.0])


def test_no_convergence_flagged():
    rng = np.random.default_rng(0)
    X = rng.uniform(size=(40, 2))
    y = np.where(rng.uniform(size=40) > 0.5, 1.0, -1.0)
    with pytest.warns(NoConvergence):
        m = train_l2_svm(X, y, C=10, max_iter=2)
    assert not m.converged and m.iterations == 2


def test_serialization_round_trip():
    rng = np.random.default_rng(3)
    X = rng.uniform(size=(10, 3))
    y = np.r_[np.ones(5), -np.ones(5)]
    m = train_l2_svm(X, y)
    back = SvmModel.from_dict(json.loads(json.dumps(m.to_dict())))
    assert np.array_equal(decision_values(back, X), decision_values(m, X))


def test_kernel_matrix_matches_pairwise():
    rng = np.random.default_rng(5)
    A, B = rng.uniform(size=(4, 3)), rng.uniform(size=(3, 3))
    k = KernelSpec("rbf", 0.7)
    K = kernel_matrix(k, A, B)
    for i in range(4):
        for j in range(3):
            assert K[i, j] == pytest.approx(kernel_eval(k, A[i], B[j]), abs=1e-14)


def test_training_is_deterministic():
    rng = np.random.default_rng(11)
    X = rng.uniform(size=(20, 3))
    y = np.where(X[:, 1] > 0.5, 1.0, -1.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a = json.dumps(train_l2_svm(X, y).to_dict())
    assert a == json.dumps(train_l2_svm(X, y).to_dict())
