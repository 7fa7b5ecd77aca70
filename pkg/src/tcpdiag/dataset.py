"""Labelled trace-pair datasets generated with the emulator.

Each sample gets ``<id>_client.pcap``, ``<id>_server.pcap`` and one line in
``manifest.jsonl``.  Per-sample seeds come from the master seed through
``derive_seed(master, class_key, index, attempt)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .emulator import (
    BUFFER_LEVELS_MSS,
    DEFAULT_MSS,
    DEFAULT_TRANSFER,
    FaultConfig,
    LinkConfig,
    SimResult,
    TransferConfig,
    derive_seed,
    simulate_transfer,
)
from .pcap import save_pcap

LEVELS = tuple(BUFFER_LEVELS_MSS)  # small, medium, large

# A duplicate segment must reach the client for a missing D-SACK to be
# observable; samples of that fault are drawn on links with at least this loss.
DSACK_MIN_LOSS_PCT = 5.0
MAX_ATTEMPTS = 64


class IoError(OSError):
    """The dataset directory or one of its files could not be written or read."""


@dataclass(frozen=True)
class LinkProfile:
    rate_Mbps: float = 80.0
    delay_ms: float = 10.0
    loss_pct: float = 0.0


NOMINAL = LinkProfile()

# cycled per sample index; the first three are the nominal access link, then
# longer paths, then light loss
DEFAULT_PROFILES = (
    NOMINAL, NOMINAL, NOMINAL,
    LinkProfile(delay_ms=15.0),
    LinkProfile(delay_ms=30.0),
    LinkProfile(delay_ms=50.0),
    LinkProfile(delay_ms=100.0),
    LinkProfile(loss_pct=1.0),
    LinkProfile(loss_pct=2.0),
    LinkProfile(delay_ms=20.0, loss_pct=1.0),
    LinkProfile(delay_ms=50.0, loss_pct=1.0),
)

SINGLE_FAULT_PLAN = {"cf_0": 11, "cf_1": 11, "cf_2": 11, "cf_3": 11, "cf_4": 11}
MULTI_FAULT_PLAN = {"cf_3+cf_4": 33}


@dataclass
class DatasetSpec:
    plan: dict[str, int] = field(default_factory=lambda: dict(SINGLE_FAULT_PLAN))
    variant: str = "reno"
    profiles: tuple[LinkProfile, ...] = DEFAULT_PROFILES
    transfer_bytes: int = DEFAULT_TRANSFER
    request_bytes: int = DEFAULT_TRANSFER
    mss: int = DEFAULT_MSS
    seed: int = 0
    id_prefix: str = ""
    require_artifact: bool = True


def parse_class_key(key: str) -> frozenset[str]:
    return frozenset(key.split("+"))


def fault_for(labels: frozenset[str], index: int, mss: int = DEFAULT_MSS) -> tuple[FaultConfig, dict]:
    """Fault configuration for the ``index``-th sample of a label set.

    Buffer caps cycle through the small/medium/large levels.
    """
    level = LEVELS[index % len(LEVELS)]
    cap = BUFFER_LEVELS_MSS[level] * mss
    fault = FaultConfig(
        sack_disabled="cf_1" in labels,
        dsack_disabled="cf_2" in labels,
        read_buffer_bytes=cap if "cf_3" in labels else None,
        write_buffer_bytes=cap if "cf_4" in labels else None,
    )
    levels = {}
    if "cf_3" in labels:
        levels["read_buffer"] = level
    if "cf_4" in labels:
        levels["write_buffer"] = level
    return fault, levels


def artifact_observed(fault: FaultConfig, link: LinkConfig, result: SimResult) -> bool:
    """Whether a run exercised what its configuration is meant to show.

    A missing D-SACK is visible only once the client has received a
    duplicate segment.
    """
    if result.stalled:
        return False
    if fault.dsack_disabled:
        return result.client_duplicate_arrivals > 0
    return True


@dataclass
class Sample:
    entry: dict
    result: SimResult


def iter_samples(spec: DatasetSpec):
    """Yield one ``Sample`` per planned trace pair, in plan order."""
    for key, count in spec.plan.items():
        labels = parse_class_key(key)
        if "cf_0" in labels and len(labels) > 1:
            raise ValueError(f"cf_0 cannot be combined with faults: {key}")
        for i in range(count):
            prof = spec.profiles[i % len(spec.profiles)]
            fault, levels = fault_for(labels, i, spec.mss)
            loss = prof.loss_pct
            if fault.dsack_disabled and spec.require_artifact:
                loss = max(loss, DSACK_MIN_LOSS_PCT)
            transfer = TransferConfig(bytes_to_send=spec.transfer_bytes, mss=spec.mss,
                                      tcp_variant=spec.variant,
                                      request_bytes=spec.request_bytes)
            for attempt in range(MAX_ATTEMPTS):
                seed = derive_seed(spec.seed, key, i, attempt)
                link = LinkConfig(rate_Mbps=prof.rate_Mbps, one_way_delay_ms=prof.delay_ms,
                                  loss_pct=loss, seed=seed)
                result = simulate_transfer(link, fault, transfer)
                if not spec.require_artifact or artifact_observed(fault, link, result):
                    break
            entry = {
                "id": f"{spec.id_prefix}{key}_{i:03d}",
                "labels": sorted(labels, key=lambda s: int(s[3:])),
                "tcp_variant": spec.variant,
                "link": link.to_dict(),
                "fault_levels": levels,
                "transfer_bytes": spec.transfer_bytes,
                "request_bytes": spec.request_bytes,
                "seed": seed,
                "attempt": attempt,
                "stalled": result.stalled,
            }
            yield Sample(entry, result)


def gen_dataset(spec: DatasetSpec, outdir) -> list[dict]:
    """Write pcap pairs and ``manifest.jsonl`` into ``outdir``; returns the manifest."""
    out = Path(outdir)
    manifest = []
    try:
        out.mkdir(parents=True, exist_ok=True)
        for sample in iter_samples(spec):
            entry = dict(sample.entry)
            entry["client_pcap"] = f"{entry['id']}_client.pcap"
            entry["server_pcap"] = f"{entry['id']}_server.pcap"
            save_pcap(out / entry["client_pcap"], sample.result.client)
            save_pcap(out / entry["server_pcap"], sample.result.server)
            manifest.append(entry)
        with (out / "manifest.jsonl").open("w") as fh:
            for entry in manifest:
                fh.write(json.dumps(entry, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoError(f"cannot write dataset to {out}: {exc}") from exc
    return manifest


def load_manifest(path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.jsonl"
    try:
        with path.open() as fh:
            return [json.loads(line) for line in fh if line.strip()]
    except OSError as exc:
        raise IoError(f"cannot read manifest {path}: {exc}") from exc


def signature_meta(entry: dict) -> dict:
    """The signature-db ``meta`` record for a manifest entry."""
    return {k: entry[k] for k in ("tcp_variant", "link", "transfer_bytes", "seed",
                                  "fault_levels") if k in entry}
