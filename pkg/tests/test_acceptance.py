"""End-to-end acceptance suite; prints one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``.
"""
import json
import time
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tcpdiag.catalog import SIGNATURE_FEATURES
from tcpdiag.dataset import MULTI_FAULT_PLAN, DatasetSpec, gen_dataset
from tcpdiag.emulator import FaultConfig, LinkConfig, TransferConfig, simulate_transfer
from tcpdiag.featsel import rank_features, select_q
from tcpdiag.features import assemble_flows, extract_trace_features, signature_from_traces
from tcpdiag.network import diagnose_signature, evaluate, train_cf_classifier
from tcpdiag.pcap import TcpFlags, TcpOptionSet, make_packet, read_pcap, write_pcap
from tcpdiag.preprocess import apply_scaler, fit_scaler
from tcpdiag.sigdb import SignatureDB, append_signature, save_db
from tcpdiag.svm import KernelSpec, decision_values, train_l2_svm

from conftest import ACK, PSH, handshake, seg, signatures
from oracles import brute_force_dual, planted_signatures, random_svm_problem

FAULTS = ("cf_1", "cf_2", "cf_3", "cf_4")
EQ3 = ("total_pkts", "ack_pkts", "resets", "rexmt_data_pkts", "zero_window_probe_pkts")
GOLDEN = Path(__file__).parent / "data" / "golden_client.pcap"


@pytest.fixture
def report(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {n}: {detail}")
    return emit


def _db(sigs):
    db = SignatureDB()
    for s in sigs:
        append_signature(db, s)
    return db


def _fault_accuracy(res):
    rows = [res.per_class[k] for k in res.fault_classes()]
    return sum(r["correct"] for r in rows) / sum(r["n"] for r in rows)


# -- 1: desk-scale reproduction of the diagnostic-accuracy figure

def test_c1_diagnostic_accuracy(report):
    t0 = time.perf_counter()
    train = signatures(DatasetSpec(seed=0))
    db = _db(train)
    models = [train_cf_classifier(db, f) for f in FAULTS]
    sets = {
        "a train": train,
        "b reno": signatures(DatasetSpec(seed=1)),
        "c cubic_like": signatures(DatasetSpec(seed=2, variant="cubic_like")),
        "c bic_like": signatures(DatasetSpec(seed=3, variant="bic_like")),
        "d cf_3+cf_4": signatures(DatasetSpec(seed=4, plan=dict(MULTI_FAULT_PLAN))),
    }
    results = {name: evaluate(models, sigs) for name, sigs in sets.items()}
    elapsed = time.perf_counter() - t0

    failures, parts = [], []
    for name, res in results.items():
        if name.startswith("d"):
            acc = res.accuracy("cf_3+cf_4")
            parts.append(f"{name}: exact-set {acc:.3f}")
            if acc < 0.90:
                failures.append(name)
            continue
        fault, healthy = _fault_accuracy(res), res.accuracy("cf_0")
        per = " ".join(f"{k}={res.accuracy(k):.2f}" for k in res.fault_classes())
        parts.append(f"{name}: fault {fault:.3f} healthy {healthy:.3f} ({per})")
        if fault < 0.95 or healthy < 0.85:
            failures.append(name)
    ok = not failures and elapsed < 600
    report(1, ok, f"{elapsed:.1f}s; " + "; ".join(parts))
    for name, res in results.items():
        print(name, res.mistakes)
    assert ok, failures


# -- 2: SVM against the brute-force QP oracle

def test_c2_svm_oracle(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst_obj = worst_kkt = 0.0
    for _ in range(200):
        X, y, C, k = random_svm_problem(rng)
        m = train_l2_svm(X, y, C=C, kernel=k)
        _, obj, _ = brute_force_dual(X, y, C, k)
        worst_obj = max(worst_obj, abs(m.dual_objective - obj))
        # y f(x) = 1 - alpha / 2C on support vectors, >= 1 elsewhere
        alpha = np.zeros(len(y))
        for s, a in zip(m.support_vectors, m.alphas):
            alpha[np.flatnonzero((X == s).all(1))[0]] = a
        shifted = y * decision_values(m, X) + alpha / (2 * C)
        resid = np.where(alpha > 0, np.abs(shifted - 1), np.maximum(0, 1 - shifted))
        worst_kkt = max(worst_kkt, float(resid.max()))
    two = train_l2_svm([[0.0], [1.0]], [-1, 1], C=1.0, kernel=KernelSpec("linear"))
    two_err = max(np.abs(two.alphas - 1.0).max(), abs(two.bias + 0.5))
    elapsed = time.perf_counter() - t0
    ok = worst_obj <= 1e-6 and worst_kkt <= 1e-3 and two_err <= 1e-6 and elapsed < 60
    report(2, ok, f"max |dual gap| {worst_obj:.2e}, max KKT residual {worst_kkt:.2e}, "
                  f"2-point error {two_err:.1e}, {elapsed:.1f}s")
    assert ok


# -- 3: feature-selection recovery of a planted artifact

def test_c3_feature_selection_recovery(report):
    hits = 0
    for seed in range(100):
        X, y = planted_signatures(seed)
        Z = apply_scaler(fit_scaler(X), X)
        ranking = rank_features(Z, y)
        sel = select_q(Z, y, ranking, seed=seed)
        hits += ({3, 17} <= set(ranking.top(3)) and sel.q <= 5 and {3, 17} <= set(sel.features))
    ok = hits >= 95
    report(3, ok, f"{hits}/100 trials recovered both planted features")
    assert ok


# -- 4: preprocessing invariants

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)
mats = st.tuples(st.integers(4, 12), st.integers(1, 6)).flatmap(
    lambda s: arrays(np.float64, s, elements=finite))


def test_c4_preprocessing_invariants(report):
    failures = []

    @settings(max_examples=300, deadline=None)
    @given(mats, arrays(np.float64, 6, elements=st.floats(-1e12, 1e12)))
    def unit_cube(X, v):
        sp = fit_scaler(X)
        Z = apply_scaler(sp, X)
        assert Z.min() >= 0.0 and Z.max() <= 1.0
        assert np.all(Z[:, X.max(0) == X.min(0)] == 0.0)
        z = apply_scaler(sp, v[: X.shape[1]])
        assert np.all((z >= 0) & (z <= 1))

    @settings(max_examples=300, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.floats(0.01, 100), st.floats(-100, 100))
    def affine_ranking(seed, a, b):
        rng = np.random.default_rng(seed)
        X = rng.normal(size=(12, 6))
        y = np.r_[np.ones(6), -np.ones(6)]
        X[y > 0, 1] += 2.0
        Y = a * X + b
        r1 = rank_features(apply_scaler(fit_scaler(X), X), y)
        r2 = rank_features(apply_scaler(fit_scaler(Y), Y), y)
        assert r1.indices == r2.indices

    for prop in (unit_cube, affine_ranking):
        try:
            prop()
        except AssertionError as exc:  # pragma: no cover - reported below
            failures.append(f"{prop.__name__}: {exc}")
    ok = not failures
    report(4, ok, "unit cube, constant columns, clamping, affine-invariant ranking"
           + ("" if ok else f"; {failures}"))
    assert ok


# -- 5: pcap round trip

def _random_packets(rng):
    out = []
    for _ in range(int(rng.integers(0, 12))):
        syn = rng.uniform() < 0.2
        ts = (int(rng.integers(0, 2**32)), int(rng.integers(0, 2**32))) if rng.uniform() < 0.5 else None
        if syn:
            opts = TcpOptionSet(mss=int(rng.integers(536, 9001)),
                                window_scale=int(rng.integers(0, 15)),
                                sack_permitted=bool(rng.integers(0, 2)), timestamps=ts)
            flags = TcpFlags.SYN | (TcpFlags.ACK if rng.uniform() < 0.5 else 0)
        else:
            blocks = []
            for _ in range(int(rng.integers(0, 4 if ts is None else 3))):
                left = int(rng.integers(0, 2**32 - 1))
                blocks.append((left, int(rng.integers(left + 1, 2**32))))
            opts = TcpOptionSet(sack_blocks=tuple(blocks), timestamps=ts)
            flags = TcpFlags.ACK | TcpFlags(int(rng.integers(0, 64)) & ~int(TcpFlags.SYN))
        ip = lambda: ".".join(str(int(v)) for v in rng.integers(1, 255, 4))  # noqa: E731
        out.append(make_packet(int(rng.integers(0, 2**42)), ip(), ip(),
                               int(rng.integers(1, 65536)), int(rng.integers(1, 65536)),
                               int(rng.integers(0, 2**32)), int(rng.integers(0, 2**32)),
                               flags, int(rng.integers(0, 65536)), int(rng.integers(0, 1461)),
                               opts))
    return out


def test_c5_pcap_round_trip(report):
    rng = np.random.default_rng(5)
    bad = 0
    for _ in range(1000):
        pkts = _random_packets(rng)
        data = write_pcap(pkts)
        bad += read_pcap(data) != pkts or write_pcap(read_pcap(data)) != data
    golden = GOLDEN.read_bytes()
    golden_ok = write_pcap(read_pcap(golden)) == golden
    ok = bad == 0 and golden_ok
    report(5, ok, f"{1000 - bad}/1000 random lists round-trip; golden file "
                  f"{'byte-equal' if golden_ok else 'differs'}")
    assert ok


# -- 6: flow-feature fixtures and the five named features

def _feat(pkts):
    return extract_trace_features(assemble_flows(pkts)[0])


def test_c6_flow_feature_fixtures(report, train_sigs):
    checks = {}
    f = _feat(handshake() + [seg(30, True, 1, 1, ACK | PSH, payload=1000),
                             seg(330, True, 1, 1, ACK | PSH, payload=1000),
                             seg(340, False, 1, 1001, ACK)])
    checks["retransmission"] = (f["a2b_rexmt_data_pkts"], f["a2b_rexmt_data_bytes"]) == (1, 1000)
    f = _feat(handshake() + [seg(30, True, 1, 1, ACK | PSH, payload=1000),
                             seg(40, False, 1, 1001, ACK, window=0),
                             seg(240, True, 1001, 1, ACK, payload=1)])
    checks["zero-window probe"] = (f["a2b_zero_window_probe_pkts"], f["a2b_zero_window_probe_bytes"]) == (1, 1)
    f = _feat(handshake() + [seg(30, True, 1, 1, ACK | PSH, payload=1000),
                             seg(40, False, 1, 1001, ACK),
                             seg(50, True, 501, 1, ACK, payload=500),
                             seg(60, False, 1, 1001, ACK,
                                 options=TcpOptionSet(sack_blocks=((501, 1001),)))])
    checks["D-SACK block"] = f["b2a_dsack_blocks_sent"] == 1

    idx = {n: i for i, n in enumerate(SIGNATURE_FEATURES)}
    names = [f"{v}_{d}_{k}" for v in ("cl", "sv") for d in ("a2b", "b2a") for k in EQ3]
    populated = all(n in idx for n in names)
    for s in train_sigs:
        vals = s.x[[idx[n] for n in names]]
        populated &= bool(np.all(np.isfinite(vals)) and np.all(vals >= 0))
        populated &= all(s.x[idx[f"{v}_{d}_{k}"]] > 0
                         for v in ("cl", "sv") for d in ("a2b", "b2a") for k in EQ3[:2])
    checks["named features on 55 emulator traces"] = populated
    ok = all(checks.values())
    report(6, ok, ", ".join(f"{k} {'ok' if v else 'WRONG'}" for k, v in checks.items()))
    assert ok


# -- 7: determinism of every stage

def _stage_outputs(tmp: Path) -> dict[str, bytes]:
    out = {}
    r = simulate_transfer(LinkConfig(loss_pct=3, seed=77), FaultConfig(read_buffer_bytes=8 * 1460),
                          TransferConfig(tcp_variant="bic_like"))
    out["emulator"] = write_pcap(r.client) + write_pcap(r.server)
    out["pcap"] = write_pcap(read_pcap(out["emulator"][: len(write_pcap(r.client))]))
    sig = signature_from_traces(r.client, r.server, id="x", labels={"cf_3"})
    out["features"] = sig.x.tobytes()
    spec = DatasetSpec(plan={"cf_0": 6, "cf_3": 6}, transfer_bytes=60_000, request_bytes=60_000, seed=8)
    gen_dataset(spec, tmp / "data")
    out["dataset"] = b"".join(p.read_bytes() for p in sorted((tmp / "data").iterdir()))
    db = _db(signatures(spec))
    save_db(db, tmp / "sig.jsonl")
    out["sigdb"] = (tmp / "sig.jsonl").read_bytes()
    X = np.array([row.x for row in db.rows])
    y = np.array([1.0 if "cf_3" in row.labels else -1.0 for row in db.rows])
    sp = fit_scaler(X)
    Z = apply_scaler(sp, X)
    out["preprocess"] = json.dumps(sp.to_dict()).encode() + Z.tobytes()
    ranking = rank_features(Z, y)
    sel = select_q(Z, y, ranking, seed=3)
    out["featsel"] = json.dumps([ranking.indices, ranking.scores, sel.q, sel.cv_table]).encode()
    out["svm"] = json.dumps(train_l2_svm(Z[:, sel.features], y).to_dict()).encode()
    model = train_cf_classifier(db, "cf_3")
    out["model"] = json.dumps(model.to_dict(), sort_keys=True).encode()
    out["diagnosis"] = json.dumps(diagnose_signature([model], sig).to_dict()).encode()
    return out


def test_c7_determinism(report, tmp_path):
    first = _stage_outputs(tmp_path / "one")
    second = _stage_outputs(tmp_path / "two")
    differ = [k for k in first if first[k] != second[k]]
    ok = not differ
    report(7, ok, f"{len(first)} stages byte-identical across two runs"
           if ok else f"differ: {differ}")
    assert ok
