import numpy as np
import pytest

from tcpdiag.catalog import SIGNATURE_DIM
from tcpdiag.sigdb import (
    CatalogMismatch,
    DimensionMismatch,
    DuplicateId,
    InsufficientSamples,
    Signature,
    SignatureDB,
    SignatureError,
    UnknownLabel,
    append_signature,
    append_to_file,
    fault_labels,
    load_db,
    normalize_labels,
    register_label,
    save_db,
    select_training_subset,
)


def sig(i, labels, m=SIGNATURE_DIM, value=None):
    x = np.full(m, float(i) if value is None else value)
    return Signature(id=f"s{i}", x=x, labels=frozenset(labels),
                     meta={"tcp_variant": "reno", "seed": i})


def make_db(plan):
    db = SignatureDB()
    i = 0
    for labels, n in plan:
        for _ in range(n):
            append_signature(db, sig(i, labels))
            i += 1
    return db


def test_append_one():
    db = append_signature(SignatureDB(), sig(0, {"cf_0"}))
    assert len(db) == 1 and db.m == 184


def test_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        append_signature(SignatureDB(), sig(0, {"cf_0"}, m=183))


def test_duplicate_id():
    db = append_signature(SignatureDB(), sig(0, {"cf_0"}))
    with pytest.raises(DuplicateId):
        append_signature(db, sig(0, {"cf_1"}))


def test_catalog_version_mismatch():
    s = sig(0, {"cf_0"})
    s.catalog_version = 2
    with pytest.raises(CatalogMismatch):
        append_signature(SignatureDB(), s)


def test_non_finite_rejected():
    with pytest.raises(SignatureError):
        append_signature(SignatureDB(), sig(0, {"cf_0"}, value=float("nan")))


def test_healthy_is_exclusive():
    with pytest.raises(SignatureError):
        normalize_labels({"cf_0", "cf_1"})


def test_unknown_label():
    with pytest.raises(UnknownLabel):
        normalize_labels({"cf_99"})


def test_fifty_five_rows():
    db = make_db([({f"cf_{j}"}, 11) for j in range(5)])
    assert len(db) == 55


def test_subset_counts():
    db = make_db([({"cf_0"}, 11), ({"cf_1"}, 11), ({"cf_3"}, 11)])
    ds = select_training_subset(db, "cf_1")
    assert len(ds.y) == 22 and ds.n_pos == 11 and ds.n_neg == 11
    assert set(np.unique(ds.y)) == {-1.0, 1.0}


def test_multi_fault_rows_never_train():
    db = make_db([({"cf_0"}, 3), ({"cf_3"}, 3), ({"cf_4"}, 3), ({"cf_3", "cf_4"}, 2)])
    multi = {r.id for r in db.rows if len(r.labels) > 1}
    for fault in ("cf_3", "cf_4"):
        ds = select_training_subset(db, fault)
        assert not multi & set(ds.ids)
        assert len(ds.ids) == 6


def test_missing_fault_rows():
    db = make_db([({"cf_0"}, 5), ({"cf_1"}, 5)])
    with pytest.raises(InsufficientSamples, match="cf_2"):
        select_training_subset(db, "cf_2")


def test_short_healthy_side_reported():
    db = make_db([({"cf_0"}, 1), ({"cf_1"}, 5)])
    with pytest.raises(InsufficientSamples, match="cf_0: 1"):
        select_training_subset(db, "cf_1")


def test_partition_of_relevant_rows():
    db = make_db([({"cf_0"}, 4), ({"cf_1"}, 4), ({"cf_2"}, 4), ({"cf_1", "cf_2"}, 2)])
    ds = select_training_subset(db, "cf_1")
    by_id = {r.id: r for r in db.rows}
    for i, y in zip(ds.ids, ds.y):
        assert by_id[i].labels == ({"cf_0"} if y < 0 else {"cf_1"})
    assert len(set(ds.ids)) == len(ds.ids)


def test_save_load_round_trip(tmp_path):
    db = make_db([({"cf_0"}, 2), ({"cf_3", "cf_4"}, 2)])
    db.rows[0].x[5] = 0.1 + 0.2  # needs every digit to survive
    path = tmp_path / "sig.jsonl"
    save_db(db, path)
    back = load_db(path)
    assert back.header() == db.header()
    for a, b in zip(db.rows, back.rows):
        assert (a.id, a.labels, a.meta) == (b.id, b.labels, b.meta)
        assert np.array_equal(a.x, b.x)


def test_append_to_file_creates_header(tmp_path):
    path = tmp_path / "sig.jsonl"
    append_to_file(path, sig(0, {"cf_0"}))
    append_to_file(path, sig(1, {"cf_2"}))
    lines = path.read_text().splitlines()
    assert len(lines) == 3 and '"m":184' in lines[0]
    assert len(load_db(path)) == 2


def test_register_new_label():
    register_label("cf_5", "test_fault")
    try:
        assert "cf_5" in fault_labels()
        assert normalize_labels(["cf_5"]) == {"cf_5"}
    finally:
        from tcpdiag import sigdb
        sigdb._LABELS.pop("cf_5")
