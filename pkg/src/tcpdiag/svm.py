"""L2 soft-margin SVM trained with a maximal-violating-pair SMO solver.

The squared-slack primal ``1/2 ||w||^2 + C * sum(xi^2)`` has the dual of a
hard-margin machine on the shifted kernel ``K + I / (2C)``: there is no
upper box bound on the multipliers, only ``alpha >= 0`` and
``sum(alpha * y) = 0``.  The shift is used for training only; inference
uses the plain kernel.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

LINEAR = "linear"
RBF = "rbf"
KERNELS = (LINEAR, RBF)

DEFAULT_C = 10.0
DEFAULT_TOL = 1e-3
DEFAULT_MAX_ITER = 100_000
ALPHA_EPS = 1e-12


class SvmError(ValueError):
    pass


class DimensionMismatch(SvmError):
    pass


class DegenerateLabels(SvmError):
    pass


class NoConvergence(RuntimeWarning):
    pass


@dataclass(frozen=True)
class KernelSpec:
    kind: str = RBF
    gamma: float | None = None

    def __post_init__(self):
        if self.kind not in KERNELS:
            raise SvmError(f"unknown kernel {self.kind!r}")
        if self.kind == RBF and (self.gamma is None or not self.gamma > 0):
            raise SvmError("rbf kernel needs gamma > 0")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "gamma": self.gamma}

    @classmethod
    def from_dict(cls, d: dict) -> "KernelSpec":
        return cls(d["kind"], d.get("gamma"))


def kernel_eval(k: KernelSpec, x, z) -> float:
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape:
        raise DimensionMismatch(f"kernel inputs of shape {x.shape} and {z.shape}")
    if k.kind == LINEAR:
        return float(x @ z)
    d = x - z
    return float(np.exp(-k.gamma * (d @ d)))


def kernel_matrix(k: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(f"kernel inputs of width {A.shape[1]} and {B.shape[1]}")
    if k.kind == LINEAR:
        return A @ B.T
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-k.gamma * np.maximum(sq, 0.0))


@dataclass
class SvmModel:
    kernel: KernelSpec
    C: float
    support_vectors: np.ndarray
    alphas: np.ndarray
    sv_labels: np.ndarray
    bias: float
    dual_objective: float
    converged: bool = True
    iterations: int = 0
    kkt_violation: float = 0.0
    history: list[float] = field(default_factory=list, repr=False, compare=False)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def to_dict(self) -> dict:
        return {
            "kernel": self.kernel.to_dict(),
            "C": self.C,
            "support_vectors": self.support_vectors.tolist(),
            "alphas": self.alphas.tolist(),
            "sv_labels": self.sv_labels.tolist(),
            "bias": self.bias,
            "dual_objective": self.dual_objective,
            "converged": self.converged,
            "iterations": self.iterations,
            "kkt_violation": self.kkt_violation,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        sv = np.asarray(d["support_vectors"], dtype=float)
        return cls(
            kernel=KernelSpec.from_dict(d["kernel"]), C=d["C"],
            support_vectors=sv.reshape(len(d["alphas"]), -1),
            alphas=np.asarray(d["alphas"], dtype=float),
            sv_labels=np.asarray(d["sv_labels"], dtype=float),
            bias=d["bias"], dual_objective=d["dual_objective"],
            converged=d.get("converged", True), iterations=d.get("iterations", 0),
            kkt_violation=d.get("kkt_violation", 0.0),
        )


def dual_objective(alpha: np.ndarray, y: np.ndarray, Kt: np.ndarray) -> float:
    """``sum(alpha) - 1/2 sum_ij alpha_i alpha_j y_i y_j Kt_ij``."""
    ay = alpha * y
    return float(alpha.sum() - 0.5 * ay @ Kt @ ay)


def _violation(alpha, y, G):
    # I_up / I_low without an upper bound on alpha
    score = -y * G
    up = (y > 0) | (alpha > 0)
    low = (y < 0) | (alpha > 0)
    i = int(np.flatnonzero(up)[np.argmax(score[up])])
    j = int(np.flatnonzero(low)[np.argmin(score[low])])
    return i, j, score[i] - score[j]


def _polish(alpha, y, Kt, tol):
    """Solve the equality-constrained KKT system on the current support set.

    Returns the refined multipliers, or None when the refinement is not
    feasible or breaks the margin condition of a non-support point.
    """
    S = np.flatnonzero(alpha > ALPHA_EPS)
    if len(S) == 0:
        return None
    Q = (y[S, None] * y[None, S]) * Kt[np.ix_(S, S)]
    n = len(S)
    A = np.zeros((n + 1, n + 1))
    A[:n, :n] = Q
    A[:n, n] = y[S]
    A[n, :n] = y[S]
    rhs = np.concatenate([np.ones(n), [0.0]])
    try:
        sol = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError:
        return None
    if np.any(sol[:n] <= 0):
        return None
    refined = np.zeros_like(alpha)
    refined[S] = sol[:n]
    G = (y[:, None] * y[None, :] * Kt) @ refined - 1.0
    _, _, gap = _violation(refined, y, G)
    if gap > tol:
        return None
    return refined


def train_l2_svm(X, y, C: float = DEFAULT_C, kernel: KernelSpec | None = None,
                 tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 track: bool = False) -> SvmModel:
    """Train on rows ``X`` with labels ``y`` in {-1, +1}.

    ``kernel`` defaults to RBF with ``gamma = 1 / n_features``.  When the
    iteration cap is hit the model is still returned with
    ``converged=False`` and a ``NoConvergence`` warning.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {y.shape[0]} labels")
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise SvmError("labels must be -1 or +1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise DegenerateLabels("training data needs both classes")
    if not C > 0:
        raise SvmError("C must be positive")
    if kernel is None:
        kernel = KernelSpec(RBF, 1.0 / X.shape[1])

    n = len(y)
    K = kernel_matrix(kernel, X, X)
    Kt = K + np.eye(n) / (2.0 * C)
    Q = (y[:, None] * y[None, :]) * Kt
    alpha = np.zeros(n)
    G = -np.ones(n)  # gradient of 1/2 a'Qa - e'a
    history = [0.0] if track else []

    it = 0
    converged = False
    gap = np.inf
    while it < max_iter:
        i, j, gap = _violation(alpha, y, G)
        if gap <= tol:
            converged = True
            break
        curv = Kt[i, i] + Kt[j, j] - 2.0 * Kt[i, j]
        step = gap / max(curv, 1e-12)
        if y[i] < 0:
            step = min(step, alpha[i])
        if y[j] > 0:
            step = min(step, alpha[j])
        di, dj = y[i] * step, -y[j] * step
        alpha[i] += di
        alpha[j] += dj
        G += Q[:, i] * di + Q[:, j] * dj
        # clip roundoff at the bound
        alpha[alpha < ALPHA_EPS] = 0.0
        it += 1
        if track:
            history.append(dual_objective(alpha, y, Kt))

    if converged:
        refined = _polish(alpha, y, Kt, tol)
        if refined is not None:
            alpha = refined
            G = Q @ alpha - 1.0
            gap = _violation(alpha, y, G)[2]
            if track:
                history.append(dual_objective(alpha, y, Kt))
    else:
        warnings.warn(f"SMO stopped after {it} iterations with KKT violation {gap:.3g}",
                      NoConvergence, stacklevel=2)

    sv = np.flatnonzero(alpha > ALPHA_EPS)
    a_sv, y_sv = alpha[sv], y[sv]
    # f(x_s) = y_s (1 - alpha_s / 2C) on every support vector
    f_nobias = K[np.ix_(sv, sv)] @ (a_sv * y_sv)
    bias = float(np.mean(y_sv * (1.0 - a_sv / (2.0 * C)) - f_nobias))
    return SvmModel(
        kernel=kernel, C=float(C), support_vectors=X[sv].copy(), alphas=a_sv.copy(),
        sv_labels=y_sv.copy(), bias=bias, dual_objective=dual_objective(alpha, y, Kt),
        converged=converged, iterations=it, kkt_violation=float(gap), history=history,
    )


def decision_value(model: SvmModel, x) -> float:
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.shape[0] != model.dim:
        raise DimensionMismatch(f"model expects {model.dim} features, got {x.shape}")
    k = kernel_matrix(model.kernel, model.support_vectors, x[None, :])[:, 0]
    return float(k @ (model.alphas * model.sv_labels) + model.bias)


def decision_values(model: SvmModel, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != model.dim:
        raise DimensionMismatch(f"model expects {model.dim} features, got {X.shape[1]}")
    K = kernel_matrix(model.kernel, X, model.support_vectors)
    return K @ (model.alphas * model.sv_labels) + model.bias


def classify(model: SvmModel, x) -> int:
    """+1 for faulty, -1 for healthy; a zero decision value counts as healthy."""
    return 1 if decision_value(model, x) > 0 else -1


def predict(model: SvmModel, X) -> np.ndarray:
    return np.where(decision_values(model, X) > 0, 1, -1)
