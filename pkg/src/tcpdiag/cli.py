"""Command-line entry point: ``tcpdiag <subcommand> ...``.

Exit codes: 0 success or healthy, 1 faults diagnosed, 2 usage or runtime error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__
from .catalog import SIGNATURE_FEATURES
from .dataset import (
    MULTI_FAULT_PLAN,
    SINGLE_FAULT_PLAN,
    DatasetSpec,
    gen_dataset,
    load_manifest,
    parse_class_key,
    signature_meta,
)
from .emulator import DEFAULT_TRANSFER, VARIANTS
from .featsel import SvmConfig
from .features import signature_from_traces
from .network import (
    TrainConfig,
    diagnose_signature,
    evaluate,
    load_model,
    load_models,
    save_model,
    train_cf_classifier,
)
from .pcap import load_pcap
from .sigdb import append_to_file, check_label, fault_labels, load_db, normalize_labels
from .svm import KERNELS

log = logging.getLogger("tcpdiag")

EXIT_OK, EXIT_FAULTS, EXIT_ERROR = 0, 1, 2


class UsageError(Exception):
    pass


def _emit(args, payload: dict, text: str) -> None:
    if args.json:
        print(json.dumps(payload, sort_keys=True, indent=2))
    else:
        print(text)


def _parse_plan(raw: str) -> dict[str, int]:
    if raw == "single":
        return dict(SINGLE_FAULT_PLAN)
    if raw == "multi":
        return dict(MULTI_FAULT_PLAN)
    plan = {}
    for part in raw.split(","):
        key, sep, count = part.partition("=")
        if not sep or not count.isdigit():
            raise UsageError(f"bad plan entry {part!r}; expected KEY=COUNT")
        for label in parse_class_key(key):
            check_label(label)
        plan[key] = int(count)
    return plan


def _labels(raw: str) -> frozenset[str]:
    labels = normalize_labels(raw.split(","))
    if "cf_0" in labels and len(labels) > 1:
        raise UsageError("cf_0 cannot be combined with fault labels")
    return labels


def _require_file(path: str, what: str) -> Path:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _signature(client: str, server: str, **kw):
    return signature_from_traces(load_pcap(_require_file(client, "client trace")),
                                 load_pcap(_require_file(server, "server trace")), **kw)


# ---------------------------------------------------------------- subcommands


def cmd_gen(args) -> int:
    plan = _parse_plan(args.plan)
    if args.bytes < 1:
        raise UsageError("--bytes must be positive")
    spec = DatasetSpec(plan=plan, variant=args.variant, transfer_bytes=args.bytes,
                       request_bytes=args.bytes, seed=args.seed, id_prefix=args.prefix)
    manifest = gen_dataset(spec, args.out)
    _emit(args, {"out": str(args.out), "samples": len(manifest)},
          f"wrote {len(manifest)} trace pairs to {args.out}")
    return EXIT_OK


def cmd_extract(args) -> int:
    if args.manifest:
        entries = load_manifest(args.manifest)
        base = Path(args.manifest)
        base = base if base.is_dir() else base.parent
        jobs = [(base / e["client_pcap"], base / e["server_pcap"], e["id"],
                 frozenset(e["labels"]), signature_meta(e)) for e in entries]
    else:
        if not (args.client and args.server and args.label):
            raise UsageError("extract needs --manifest, or --client, --server and --label")
        labels = _labels(args.label)
        sid = args.id or Path(args.client).stem.removesuffix("_client")
        jobs = [(Path(args.client), Path(args.server), sid, labels, {})]
    for client, server, sid, labels, meta in jobs:
        sig = _signature(str(client), str(server), id=sid, labels=labels, meta=meta)
        append_to_file(args.db, sig)
        log.info("appended %s %s", sid, sorted(labels))
    _emit(args, {"db": str(args.db), "appended": len(jobs)},
          f"appended {len(jobs)} signature(s) to {args.db}")
    return EXIT_OK


def cmd_train(args) -> int:
    faults = fault_labels() if args.fault == "all" else [check_label(args.fault)]
    if "cf_0" in faults:
        raise UsageError("cf_0 is the healthy class and has no classifier")
    out = Path(args.out)
    if len(faults) > 1 and not out.is_dir():
        raise UsageError("--out must be an existing directory when training several faults")
    db = load_db(_require_file(args.db, "signature db"))
    cfg = TrainConfig(svm=SvmConfig(C=args.C, kernel=args.kernel, gamma=args.gamma),
                      q_max=args.q_max, folds=args.folds, seed=args.seed)
    results = []
    for fault in faults:
        model = train_cf_classifier(db, fault, cfg)
        path = save_model(model, out)
        results.append({"fault": fault, "path": str(path), "q": len(model.features),
                        "features": list(model.feature_names),
                        "cv_table": model.training_meta["cv_table"] if args.report else None})
    lines = []
    for r in results:
        lines.append(f"{r['fault']}: q={r['q']} {', '.join(r['features'])} -> {r['path']}")
        if args.report:
            lines.append("    q  cv_accuracy")
            lines.extend(f"  {row['q']:>3}  {row['accuracy']:.4f}" for row in r["cv_table"])
    _emit(args, {"models": results}, "\n".join(lines))
    return EXIT_OK


def cmd_diagnose(args) -> int:
    models = load_models(args.models)
    if not models:
        raise UsageError(f"no model_cf*.json files in {args.models}")
    sig = _signature(args.client, args.server)
    report = diagnose_signature(models, sig, {"client": args.client, "server": args.server})
    _emit(args, report.to_dict(), report.format_table())
    return EXIT_OK if report.healthy else EXIT_FAULTS


def cmd_evaluate(args) -> int:
    models = load_models(args.models)
    if not models:
        raise UsageError(f"no model_cf*.json files in {args.models}")
    entries = load_manifest(args.manifest)
    base = Path(args.manifest)
    base = base if base.is_dir() else base.parent
    sigs = [_signature(str(base / e["client_pcap"]), str(base / e["server_pcap"]),
                       id=e["id"], labels=frozenset(e["labels"])) for e in entries]
    result = evaluate(models, sigs)
    _emit(args, result.to_dict(), result.format_table())
    return EXIT_OK


def cmd_inspect(args) -> int:
    if args.model:
        model = load_model(_require_file(args.model, "model"))
        meta = dict(model.training_meta)
        payload = {"fault": model.fault, "catalog_version": model.catalog_version,
                   "features": list(model.feature_names), "C": model.svm.C,
                   "kernel": model.svm.kernel.to_dict(),
                   "support_vectors": len(model.svm.alphas), "bias": model.svm.bias,
                   "training_meta": meta}
        text = "\n".join([
            f"fault            {model.fault}",
            f"catalog_version  {model.catalog_version}",
            f"features         {', '.join(model.feature_names)}",
            f"kernel           {model.svm.kernel.kind} C={model.svm.C}",
            f"support vectors  {len(model.svm.alphas)}",
            f"bias             {model.svm.bias!r}",
            f"trained on       {meta.get('n_faulty')} faulty + {meta.get('n_healthy')} healthy",
            f"db hash          {meta.get('db_hash')}",
        ])
        _emit(args, payload, text)
        return EXIT_OK
    if not (args.client and args.server):
        raise UsageError("inspect needs --model, or --client and --server")
    sig = _signature(args.client, args.server)
    values = {name: float(v) for name, v in zip(SIGNATURE_FEATURES, sig.x)}
    width = max(map(len, SIGNATURE_FEATURES))
    _emit(args, {"features": values},
          "\n".join(f"{k:<{width}}  {v:g}" for k, v in values.items()))
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # subcommands repeat the global flags without defaults so that a value
        # given before the subcommand is not reset
        dflt = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--seed", type=int, default=dflt(0), help="master seed for all randomness")
        p.add_argument("--verbose", "-v", action="store_true", default=dflt(False))
        p.add_argument("--json", action="store_true", default=dflt(False),
                       help="structured output on stdout")
        return p

    common = global_flags(suppress=True)
    ap = argparse.ArgumentParser(prog="tcpdiag", parents=[global_flags(suppress=False)],
                                 description="Diagnose client-side TCP faults from trace pairs.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def add(name, help_):
        return sub.add_parser(name, help=help_, parents=[common])

    p = add("gen", "generate labelled trace pairs with the emulator")
    p.add_argument("--out", required=True)
    p.add_argument("--plan", default="single",
                   help="'single', 'multi', or KEY=COUNT,... e.g. cf_0=11,cf_3+cf_4=5")
    p.add_argument("--variant", choices=VARIANTS, default="reno")
    p.add_argument("--bytes", type=int, default=DEFAULT_TRANSFER)
    p.add_argument("--prefix", default="")
    p.set_defaults(func=cmd_gen)

    p = add("extract", "append signatures of trace pairs to a signature db")
    p.add_argument("--db", required=True)
    p.add_argument("--client")
    p.add_argument("--server")
    p.add_argument("--label", help="comma-separated labels, e.g. cf_3,cf_4")
    p.add_argument("--id")
    p.add_argument("--manifest", help="extract every sample listed in a dataset manifest")
    p.set_defaults(func=cmd_extract)

    p = add("train", "train CF-classifiers from a signature db")
    p.add_argument("--db", required=True)
    p.add_argument("--fault", required=True, help="cf_1..cf_4 or 'all'")
    p.add_argument("--out", required=True, help="model file, or directory")
    p.add_argument("--report", action="store_true", help="print the CV table")
    p.add_argument("--q-max", dest="q_max", type=int, default=None)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--C", dest="C", type=float, default=10.0)
    p.add_argument("--kernel", choices=KERNELS, default="rbf")
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_train)

    p = add("diagnose", "diagnose one client/server trace pair")
    p.add_argument("--client", required=True)
    p.add_argument("--server", required=True)
    p.add_argument("--models", required=True, help="directory of model_cf*.json")
    p.set_defaults(func=cmd_diagnose)

    p = add("evaluate", "score models on a generated dataset")
    p.add_argument("--manifest", required=True, help="dataset directory or manifest.jsonl")
    p.add_argument("--models", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = add("inspect", "dump the features of a trace pair or a model's metadata")
    p.add_argument("--client")
    p.add_argument("--server")
    p.add_argument("--model")
    p.set_defaults(func=cmd_inspect)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        ap.print_usage(sys.stderr)
        print(f"tcpdiag: error: {exc}", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - every failure maps to exit 2
        if args.verbose:
            log.exception("failed")
        print(f"tcpdiag: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
