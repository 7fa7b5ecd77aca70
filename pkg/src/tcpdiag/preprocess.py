"""Label encoding and min-max scaling fitted per classifier."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sigdb import HEALTHY, DimensionMismatch


class NotInSubset(ValueError):
    pass


class EmptyDataset(ValueError):
    pass


def encode_label(labels, fault: str) -> int:
    labels = frozenset([labels] if isinstance(labels, str) else labels)
    if labels == {HEALTHY}:
        return -1
    if labels == {fault}:
        return 1
    raise NotInSubset(f"labels {sorted(labels)} are not part of the {fault} training subset")


@dataclass(frozen=True)
class ScaleParams:
    min_v: np.ndarray
    max_v: np.ndarray

    def __post_init__(self):
        if self.min_v.shape != self.max_v.shape:
            raise DimensionMismatch("min and max vectors differ in length")
        if np.any(self.min_v > self.max_v):
            raise ValueError("min_v exceeds max_v")

    @property
    def m(self) -> int:
        return len(self.min_v)

    def to_dict(self) -> dict:
        return {"min": self.min_v.tolist(), "max": self.max_v.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScaleParams":
        return cls(np.asarray(d["min"], dtype=float), np.asarray(d["max"], dtype=float))


def fit_scaler(X) -> ScaleParams:
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyDataset("need at least one training vector")
    return ScaleParams(X.min(axis=0), X.max(axis=0))


def apply_scaler(sp: ScaleParams, x) -> np.ndarray:
    """Map each feature to [0, 1] using the training extrema.

    Zero-range features map to 0; values outside the training range are
    clamped.  Accepts one vector or a matrix of row vectors.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != sp.m:
        raise DimensionMismatch(f"expected {sp.m} features, got {x.shape[-1]}")
    span = sp.max_v - sp.min_v
    live = span > 0
    out = np.zeros_like(x)
    # far-out-of-range values may overflow to inf; the clamp handles them
    with np.errstate(over="ignore"):
        out[..., live] = (x[..., live] - sp.min_v[live]) / span[live]
    return np.clip(out, 0.0, 1.0)
