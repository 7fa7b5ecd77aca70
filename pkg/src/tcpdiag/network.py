"""The CFD classifier: one independent binary CF-classifier per fault.

Each ``CfModel`` carries its own scaler, selected feature list and SVM, so a
model can be retrained or shipped without touching the others.  A diagnosis
is the union of the faults whose classifier votes +1.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import CATALOG_VERSION, SIGNATURE_FEATURES
from .featsel import DEFAULT_FOLDS, SvmConfig, rank_features, select_q
from .features import signature_from_traces
from .preprocess import ScaleParams, apply_scaler, encode_label, fit_scaler
from .sigdb import (
    HEALTHY,
    CatalogMismatch,
    DimensionMismatch,
    Signature,
    SignatureDB,
    label_index,
    select_training_subset,
    signature_line,
)
from .svm import SvmModel, decision_value, train_l2_svm

UNKNOWN_FAULT_CAVEAT = ("only faults with a trained classifier can be reported; "
                        "an unknown fault may show as healthy or as a spurious finding")


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def db_hash(db: SignatureDB) -> str:
    """SHA-256 over the canonical JSONL form of the database."""
    h = hashlib.sha256(_dumps(db.header()).encode())
    for row in db.rows:
        h.update(b"\n")
        h.update(signature_line(row).encode())
    return h.hexdigest()


@dataclass(frozen=True)
class TrainConfig:
    svm: SvmConfig = SvmConfig()
    q_max: int | None = None
    folds: int = DEFAULT_FOLDS
    seed: int = 0
    # recorded verbatim; left unset so that retraining is bit-identical
    timestamp: str | None = None

    def to_dict(self) -> dict:
        return {"svm": self.svm.to_dict(), "q_max": self.q_max, "folds": self.folds,
                "seed": self.seed}


@dataclass
class CfModel:
    fault: str
    scale: ScaleParams
    features: list[int]
    svm: SvmModel
    training_meta: dict = field(default_factory=dict)
    catalog_version: int = CATALOG_VERSION
    feature_names: tuple[str, ...] = ()

    def __post_init__(self):
        if self.fault == HEALTHY:
            raise ValueError("cf_0 has no classifier")
        label_index(self.fault)
        if not self.feature_names:
            self.feature_names = tuple(SIGNATURE_FEATURES[k] for k in self.features)
        if self.svm.dim != len(self.features):
            raise DimensionMismatch(
                f"svm expects {self.svm.dim} inputs but {len(self.features)} features are listed")

    def decision(self, x) -> float:
        """Decision value for one raw (unscaled) signature vector."""
        z = apply_scaler(self.scale, np.asarray(x, dtype=float))
        return decision_value(self.svm, z[self.features])

    def to_dict(self) -> dict:
        return {
            "fault": self.fault,
            "catalog_version": self.catalog_version,
            "features": list(self.features),
            "feature_names": list(self.feature_names),
            "scale": self.scale.to_dict(),
            "svm": self.svm.to_dict(),
            "training_meta": self.training_meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CfModel":
        return cls(fault=d["fault"], scale=ScaleParams.from_dict(d["scale"]),
                   features=[int(k) for k in d["features"]],
                   svm=SvmModel.from_dict(d["svm"]), training_meta=d.get("training_meta", {}),
                   catalog_version=d["catalog_version"],
                   feature_names=tuple(d.get("feature_names", ())))


def model_filename(fault: str) -> str:
    return f"model_{fault.replace('_', '')}.json"


def save_model(model: CfModel, path) -> Path:
    """Write ``model``; a directory path gets the ``model_cf<j>.json`` name."""
    path = Path(path)
    if path.is_dir():
        path = path / model_filename(model.fault)
    path.write_text(_dumps(model.to_dict()) + "\n")
    return path


def load_model(path) -> CfModel:
    return CfModel.from_dict(json.loads(Path(path).read_text()))


def load_models(directory) -> list[CfModel]:
    paths = sorted(Path(directory).glob("model_cf*.json"))
    return [load_model(p) for p in paths]


def train_cf_classifier(db: SignatureDB, fault: str, config: TrainConfig | None = None) -> CfModel:
    """Subset, encode, scale, select features, then fit the SVM for one fault."""
    config = config or TrainConfig()
    if db.catalog_version != CATALOG_VERSION or tuple(db.features) != SIGNATURE_FEATURES:
        raise CatalogMismatch(f"db catalog v{db.catalog_version}, this build uses v{CATALOG_VERSION}")
    subset = select_training_subset(db, fault)
    rows = {r.id: r for r in db.rows}
    y = np.array([encode_label(rows[i].labels, fault) for i in subset.ids], dtype=float)
    scale = fit_scaler(subset.X)
    Z = apply_scaler(scale, subset.X)
    ranking = rank_features(Z, y)
    sel = select_q(Z, y, ranking, q_max=config.q_max, folds=config.folds,
                   svm=config.svm, seed=config.seed)
    svm = train_l2_svm(Z[:, sel.features], y, C=config.svm.C,
                       kernel=config.svm.kernel_for(sel.q))
    meta = {
        "db_hash": db_hash(db),
        "n_healthy": subset.n_neg,
        "n_faulty": subset.n_pos,
        "ranking": ranking.indices[: max(30, sel.q)],
        "cv_table": [{"q": q, "accuracy": acc, "folds": folds} for q, acc, folds in sel.cv_table],
        "q": sel.q,
        "config": config.to_dict(),
        "timestamp": config.timestamp,
        "catalog_version": db.catalog_version,
    }
    return CfModel(fault=fault, scale=scale, features=list(sel.features), svm=svm,
                   training_meta=meta, catalog_version=db.catalog_version)


# ---------------------------------------------------------------- diagnosis


@dataclass(frozen=True)
class Verdict:
    fault: str
    decision_value: float
    verdict: int

    def to_dict(self) -> dict:
        return {"fault": self.fault, "decision_value": self.decision_value,
                "verdict": self.verdict}


@dataclass
class DiagnosisReport:
    entries: list[Verdict]
    collective: frozenset[str]
    input: dict = field(default_factory=dict)
    caveat: str = UNKNOWN_FAULT_CAVEAT

    @property
    def healthy(self) -> bool:
        return not self.collective

    def to_dict(self) -> dict:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "collective": sorted(self.collective, key=label_index),
            "healthy": self.healthy,
            "input": self.input,
            "caveat": self.caveat,
        }

    def format_table(self) -> str:
        lines = [f"{'classifier':<12}{'decision':>14}  verdict"]
        for e in self.entries:
            lines.append(f"{e.fault:<12}{e.decision_value:>14.6f}  {'+1' if e.verdict > 0 else '-1'}")
        found = ", ".join(sorted(self.collective, key=label_index)) or "none"
        lines.append(f"faults: {found}")
        lines.append("healthy" if self.healthy else "faulty")
        lines.append(f"note: {self.caveat}")
        return "\n".join(lines)


def _check_models(models: list[CfModel], catalog_version: int, m: int) -> None:
    if not models:
        raise ValueError("at least one model is required")
    for mod in models:
        if mod.catalog_version != catalog_version:
            raise CatalogMismatch(
                f"model {mod.fault} uses catalog v{mod.catalog_version}, "
                f"signature uses v{catalog_version}")
        if mod.scale.m != m:
            raise DimensionMismatch(f"model {mod.fault} expects {mod.scale.m} features, got {m}")


def diagnose_signature(models: list[CfModel], sig: Signature, input_meta: dict | None = None
                       ) -> DiagnosisReport:
    _check_models(models, sig.catalog_version, len(sig.x))
    entries = []
    for mod in sorted(models, key=lambda md: label_index(md.fault)):
        f = mod.decision(sig.x)
        entries.append(Verdict(mod.fault, f, 1 if f > 0 else -1))
    collective = frozenset(e.fault for e in entries if e.verdict > 0)
    return DiagnosisReport(entries, collective, dict(input_meta or {}))


def diagnose(models: list[CfModel], client_trace, server_trace,
             input_meta: dict | None = None) -> DiagnosisReport:
    """Classify one client/server trace pair with every model."""
    sig = signature_from_traces(client_trace, server_trace)
    return diagnose_signature(models, sig, input_meta)


# ---------------------------------------------------------------- evaluation


def class_key(labels) -> str:
    faults = sorted((lab for lab in labels if lab != HEALTHY), key=label_index)
    return "+".join(faults) if faults else HEALTHY


@dataclass
class EvalResult:
    per_class: dict[str, dict]  # key -> {n, correct, accuracy}
    confusion: dict[str, dict]  # fault -> {tp, fp, tn, fn}
    mistakes: list[dict] = field(default_factory=list)

    def accuracy(self, key: str) -> float:
        return self.per_class[key]["accuracy"]

    def fault_classes(self) -> list[str]:
        return [k for k in self.per_class if k != HEALTHY]

    def to_dict(self) -> dict:
        return {"per_class": self.per_class, "confusion": self.confusion,
                "mistakes": self.mistakes}

    def format_table(self) -> str:
        lines = [f"{'class':<14}{'n':>5}{'correct':>9}{'accuracy':>11}"]
        for k, row in self.per_class.items():
            lines.append(f"{k:<14}{row['n']:>5}{row['correct']:>9}{100 * row['accuracy']:>10.2f}%")
        lines.append("")
        lines.append(f"{'classifier':<14}{'tp':>5}{'fp':>5}{'tn':>5}{'fn':>5}")
        for f, c in self.confusion.items():
            lines.append(f"{f:<14}{c['tp']:>5}{c['fp']:>5}{c['tn']:>5}{c['fn']:>5}")
        return "\n".join(lines)


def evaluate(models: list[CfModel], signatures: list[Signature]) -> EvalResult:
    """Exact-set accuracy per ground-truth class plus per-classifier confusion counts."""
    groups: dict[str, list[int]] = {}
    confusion = {mod.fault: {"tp": 0, "fp": 0, "tn": 0, "fn": 0}
                 for mod in sorted(models, key=lambda md: label_index(md.fault))}
    mistakes = []
    for sig in signatures:
        report = diagnose_signature(models, sig)
        truth = frozenset(lab for lab in sig.labels if lab != HEALTHY)
        ok = report.collective == truth
        groups.setdefault(class_key(sig.labels), []).append(int(ok))
        if not ok:
            mistakes.append({"id": sig.id, "truth": sorted(truth, key=label_index),
                             "found": sorted(report.collective, key=label_index)})
        for e in report.entries:
            pos = e.fault in truth
            cell = ("tp" if e.verdict > 0 else "fn") if pos else ("fp" if e.verdict > 0 else "tn")
            confusion[e.fault][cell] += 1
    order = sorted(groups, key=lambda k: (k.count("+"), [label_index(x) for x in k.split("+")]))
    per_class = {k: {"n": len(groups[k]), "correct": sum(groups[k]),
                     "accuracy": sum(groups[k]) / len(groups[k])} for k in order}
    return EvalResult(per_class, confusion, mistakes)
