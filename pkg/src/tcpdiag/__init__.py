"""Client-side TCP fault diagnosis from dual-vantage packet traces."""
from .catalog import CATALOG_VERSION, SIGNATURE_FEATURES, TRACE_FEATURES
from .network import CfModel, DiagnosisReport, diagnose, evaluate, train_cf_classifier

__version__ = "0.1.0"

__all__ = [
    "CATALOG_VERSION",
    "SIGNATURE_FEATURES",
    "TRACE_FEATURES",
    "CfModel",
    "DiagnosisReport",
    "diagnose",
    "evaluate",
    "train_cf_classifier",
]
