"""Hybrid feature selection: t-test filter ranking, then a CV wrapper over q."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .svm import DEFAULT_C, RBF, KernelSpec, predict, train_l2_svm

# |t| for two zero-variance samples with different means
T_SENTINEL = 1e12

DEFAULT_FOLDS = 5
DEFAULT_Q_MAX = 30


class TooFewSamples(ValueError):
    pass


def t_statistic(a, b) -> float:
    """Welch two-sample t statistic, ``mean(a) - mean(b)`` over its standard error."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise TooFewSamples(f"t-test needs >= 2 samples per side, got {len(a)} and {len(b)}")
    diff = a.mean() - b.mean()
    se2 = a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b)
    if se2 <= 0.0:
        if diff == 0.0:
            return 0.0
        return math.copysign(T_SENTINEL, diff)
    return float(diff / math.sqrt(se2))


@dataclass
class FeatureRanking:
    indices: list[int]
    scores: list[float]

    def top(self, q: int) -> list[int]:
        return self.indices[:q]


def rank_features(X, y) -> FeatureRanking:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    pos, neg = X[y > 0], X[y < 0]
    if len(pos) < 2 or len(neg) < 2:
        raise TooFewSamples(f"need >= 2 samples per class, got {len(pos)} and {len(neg)}")
    scores = [abs(t_statistic(pos[:, k], neg[:, k])) for k in range(X.shape[1])]
    order = sorted(range(len(scores)), key=lambda k: (-scores[k], k))
    return FeatureRanking(order, [scores[k] for k in order])


@dataclass(frozen=True)
class SvmConfig:
    C: float = DEFAULT_C
    kernel: str = RBF
    gamma: float | None = None  # None: 1 / n_features

    def kernel_for(self, q: int) -> KernelSpec:
        if self.kernel == RBF:
            return KernelSpec(RBF, self.gamma if self.gamma is not None else 1.0 / q)
        return KernelSpec(self.kernel)

    def to_dict(self) -> dict:
        return {"C": self.C, "kernel": self.kernel, "gamma": self.gamma}


@dataclass
class SelectionResult:
    q: int
    features: list[int]
    cv_table: list[tuple[int, float, list[float]]] = field(default_factory=list)


def stratified_folds(y, folds: int, seed: int = 0) -> np.ndarray:
    """Fold id per row; each class is shuffled with ``seed`` then dealt round-robin."""
    y = np.asarray(y)
    rng = np.random.default_rng(seed)
    fold_of = np.empty(len(y), dtype=int)
    for cls in (-1, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        fold_of[idx] = np.arange(len(idx)) % folds
    return fold_of


def cv_accuracy(X, y, fold_of: np.ndarray, folds: int, cfg: SvmConfig) -> list[float]:
    accs = []
    q = X.shape[1]
    for f in range(folds):
        test = fold_of == f
        model = train_l2_svm(X[~test], y[~test], C=cfg.C, kernel=cfg.kernel_for(q))
        accs.append(float(np.mean(predict(model, X[test]) == y[test])))
    return accs


def select_q(X, y, ranking: FeatureRanking, q_max: int | None = None,
             folds: int = DEFAULT_FOLDS, svm: SvmConfig | None = None,
             seed: int = 0) -> SelectionResult:
    """Sweep q = 1..q_max over the top-ranked features; keep the smallest best q."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    svm = svm or SvmConfig()
    if folds < 2:
        raise TooFewSamples("cross-validation needs at least 2 folds")
    n_pos, n_neg = int((y > 0).sum()), int((y < 0).sum())
    if min(n_pos, n_neg) < folds:
        raise TooFewSamples(f"{folds}-fold CV needs >= {folds} samples per class, "
                            f"have {n_pos} faulty and {n_neg} healthy")
    if q_max is None:
        q_max = min(DEFAULT_Q_MAX, X.shape[1])
    q_max = max(1, min(q_max, len(ranking.indices)))
    fold_of = stratified_folds(y, folds, seed)

    table = []
    best_q, best_acc = 1, -1.0
    for q in range(1, q_max + 1):
        accs = cv_accuracy(X[:, ranking.top(q)], y, fold_of, folds, svm)
        mean = float(np.mean(accs))
        table.append((q, mean, accs))
        if mean > best_acc:
            best_q, best_acc = q, mean
    return SelectionResult(best_q, ranking.top(best_q), table)
