"""Signature database: labelled feature vectors stored as JSON Lines.

Line 1 is a header ``{"catalog_version", "m", "features"}``; every further
line is one signature ``{"id", "labels", "meta", "x"}``.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import CATALOG_VERSION, SIGNATURE_FEATURES

HEALTHY = "cf_0"

# fault index -> short name; cf_0 is reserved for healthy clients
_LABELS: dict[str, str] = {
    "cf_0": "healthy",
    "cf_1": "sack_disabled",
    "cf_2": "dsack_disabled",
    "cf_3": "read_buffer_limited",
    "cf_4": "write_buffer_limited",
}


class SignatureError(Exception):
    pass


class DimensionMismatch(SignatureError):
    pass


class DuplicateId(SignatureError):
    pass


class CatalogMismatch(SignatureError):
    pass


class InsufficientSamples(SignatureError):
    pass


class UnknownLabel(SignatureError):
    pass


def register_label(label: str, description: str) -> None:
    """Register a new fault class ``cf_<j>``."""
    if not label.startswith("cf_") or not label[3:].isdigit():
        raise UnknownLabel(f"labels look like cf_<j>, got {label!r}")
    if label == HEALTHY:
        raise UnknownLabel("cf_0 is reserved for healthy")
    if label in _LABELS:
        raise UnknownLabel(f"{label} already registered as {_LABELS[label]}")
    _LABELS[label] = description


def known_labels() -> dict[str, str]:
    return dict(_LABELS)


def fault_labels() -> list[str]:
    return sorted((lab for lab in _LABELS if lab != HEALTHY), key=label_index)


def label_index(label: str) -> int:
    return int(label[3:])


def check_label(label: str) -> str:
    if label not in _LABELS:
        raise UnknownLabel(f"unknown class label {label!r}")
    return label


def normalize_labels(labels) -> frozenset[str]:
    if isinstance(labels, str):
        labels = [labels]
    out = frozenset(check_label(lab) for lab in labels)
    if HEALTHY in out and len(out) > 1:
        raise SignatureError("cf_0 cannot be combined with fault labels")
    return out


@dataclass
class Signature:
    id: str
    x: np.ndarray
    labels: frozenset[str] = frozenset()
    meta: dict = field(default_factory=dict)
    catalog_version: int = CATALOG_VERSION

    def to_record(self) -> dict:
        return {
            "id": self.id,
            "labels": sorted(self.labels, key=label_index),
            "meta": self.meta,
            "x": [float(v) for v in self.x],
        }

    @classmethod
    def from_record(cls, rec: dict, catalog_version: int) -> "Signature":
        return cls(id=rec["id"], x=np.asarray(rec["x"], dtype=float),
                   labels=normalize_labels(rec["labels"]), meta=rec.get("meta", {}),
                   catalog_version=catalog_version)


@dataclass
class LabeledDataset:
    """Rows for one fault's binary problem; ``y`` is -1 healthy, +1 faulty."""

    fault: str
    X: np.ndarray
    y: np.ndarray
    ids: list[str]

    @property
    def n_pos(self) -> int:
        return int((self.y > 0).sum())

    @property
    def n_neg(self) -> int:
        return int((self.y < 0).sum())


@dataclass
class SignatureDB:
    catalog_version: int = CATALOG_VERSION
    features: tuple[str, ...] = SIGNATURE_FEATURES
    rows: list[Signature] = field(default_factory=list)

    @property
    def m(self) -> int:
        return len(self.features)

    def __len__(self) -> int:
        return len(self.rows)

    def header(self) -> dict:
        return {"catalog_version": self.catalog_version, "m": self.m,
                "features": list(self.features)}

    def ids(self) -> set[str]:
        return {r.id for r in self.rows}


def append_signature(db: SignatureDB, sig: Signature) -> SignatureDB:
    if sig.catalog_version != db.catalog_version:
        raise CatalogMismatch(
            f"signature catalog v{sig.catalog_version}, db v{db.catalog_version}")
    if len(sig.x) != db.m:
        raise DimensionMismatch(f"signature has {len(sig.x)} features, db expects {db.m}")
    if not sig.labels:
        raise SignatureError(f"signature {sig.id} has no labels")
    sig.labels = normalize_labels(sig.labels)
    if not all(math.isfinite(v) for v in sig.x):
        raise SignatureError(f"signature {sig.id} has non-finite features")
    if any(r.id == sig.id for r in db.rows):
        raise DuplicateId(sig.id)
    db.rows.append(sig)
    return db


def select_training_subset(db: SignatureDB, fault: str, min_per_class: int = 2) -> LabeledDataset:
    """Pure healthy rows (y=-1) and rows labelled exactly ``{fault}`` (y=+1).

    Multi-label rows never enter a training subset.
    """
    check_label(fault)
    if fault == HEALTHY:
        raise SignatureError("no classifier is trained for cf_0")
    healthy = frozenset([HEALTHY])
    target = frozenset([fault])
    X, y, ids = [], [], []
    for row in db.rows:
        if row.labels == healthy:
            X.append(row.x)
            y.append(-1.0)
        elif row.labels == target:
            X.append(row.x)
            y.append(1.0)
        else:
            continue
        ids.append(row.id)
    n_pos = sum(1 for v in y if v > 0)
    n_neg = len(y) - n_pos
    short = []
    if n_pos < min_per_class:
        short.append(f"{fault}: {n_pos}")
    if n_neg < min_per_class:
        short.append(f"{HEALTHY}: {n_neg}")
    if short:
        raise InsufficientSamples(
            f"need >= {min_per_class} rows per class, have " + ", ".join(short))
    return LabeledDataset(fault, np.vstack(X), np.asarray(y), ids)


# ---------------------------------------------------------------- persistence

def _dumps(obj) -> str:
    # repr-precision floats round-trip exactly through json
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def signature_line(sig: Signature) -> str:
    return _dumps(sig.to_record())


def save_db(db: SignatureDB, path) -> None:
    lines = [_dumps(db.header())] + [signature_line(s) for s in db.rows]
    Path(path).write_text("\n".join(lines) + "\n")


def load_db(path) -> SignatureDB:
    text = Path(path).read_text().splitlines()
    if not text:
        raise SignatureError(f"{path}: empty database file")
    header = json.loads(text[0])
    features = tuple(header["features"])
    if header["m"] != len(features):
        raise DimensionMismatch(f"{path}: header m={header['m']} but {len(features)} names")
    db = SignatureDB(catalog_version=header["catalog_version"], features=features)
    for line in text[1:]:
        if line.strip():
            append_signature(db, Signature.from_record(json.loads(line), db.catalog_version))
    return db


def open_db(path) -> SignatureDB:
    """Load ``path`` if it exists, else a fresh database for the current catalog."""
    if Path(path).exists():
        db = load_db(path)
        if db.catalog_version != CATALOG_VERSION or db.features != SIGNATURE_FEATURES:
            raise CatalogMismatch(
                f"{path}: catalog v{db.catalog_version}, this build uses v{CATALOG_VERSION}")
        return db
    return SignatureDB()


def append_to_file(path, sig: Signature) -> None:
    """Single-writer append; creates the file with a header when missing."""
    path = Path(path)
    db = open_db(path)
    append_signature(db, sig)
    if not path.exists():
        path.write_text(_dumps(db.header()) + "\n")
    with path.open("a") as fh:
        fh.write(signature_line(sig) + "\n")
