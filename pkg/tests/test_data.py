import numpy as np
import pytest

from fedlearn.services.data_service import (
    DataError,
    DuplicateId,
    LabelError,
    MissingHeader,
    NonNumericCell,
    PartyTable,
    as_pm1,
    as_zero_one,
    attach_labels,
    check_alignment,
    check_id_alignment,
    gen_blobs,
    load_csv,
    load_labels,
    rejoin,
    vertical_split,
    write_csv,
    write_labels,
)


def _write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


def test_load_sorts_by_id(tmp_path):
    path = _write(tmp_path / "a.csv", "id,x,y\n9,1.5,2\n3,0.5,-1\n5,7,8e-3\n")
    table = load_csv(path)
    assert list(table.ids) == [3, 5, 9]
    np.testing.assert_array_equal(table.features, [[0.5, -1.0], [7.0, 8e-3], [1.5, 2.0]])
    assert table.feature_names == ["x", "y"]
    assert table.name == "a"
    assert table.labels is None


def test_load_with_labels(tmp_path):
    path = _write(tmp_path / "b.csv", "id,label,x\n2,1,0.1\n1,-1,0.2\n")
    table = load_csv(path, has_labels=True, name="holder")
    assert table.name == "holder"
    np.testing.assert_array_equal(table.labels, [-1.0, 1.0])
    np.testing.assert_array_equal(table.features[:, 0], [0.2, 0.1])


def test_label_only_table(tmp_path):
    path = _write(tmp_path / "labels.csv", "id,label\n4,1\n1,0\n")
    table = load_csv(path, has_labels=True)
    assert table.n_features == 0
    assert table.features.shape == (2, 0)
    ids, labels = load_labels(path)
    assert list(ids) == [1, 4]
    np.testing.assert_array_equal(labels, [0.0, 1.0])


def test_load_errors(tmp_path):
    with pytest.raises(DuplicateId) as info:
        load_csv(_write(tmp_path / "dup.csv", "id,x\n7,1\n7,2\n"))
    assert info.value.sample_id == 7
    assert str(info.value) == "DuplicateId(7)"

    with pytest.raises(NonNumericCell) as info:
        load_csv(_write(tmp_path / "bad.csv", "id,x,y\n1,1,2\n2,3,abc\n"))
    assert "row 3" in str(info.value) and "'y'" in str(info.value)

    with pytest.raises(NonNumericCell):
        load_csv(_write(tmp_path / "neg.csv", "id,x\n-1,1\n"))
    with pytest.raises(MissingHeader):
        load_csv(_write(tmp_path / "hdr.csv", "key,x\n1,1\n"))
    with pytest.raises(MissingHeader):
        load_csv(_write(tmp_path / "empty.csv", ""))
    with pytest.raises(MissingHeader):
        load_csv(_write(tmp_path / "nolabel.csv", "id,x\n1,1\n"), has_labels=True)
    with pytest.raises(DataError):
        load_csv(_write(tmp_path / "ragged.csv", "id,x\n1,1,2\n"))


def test_attach_labels(tmp_path):
    features = load_csv(_write(tmp_path / "f.csv", "id,x\n1,0.5\n2,0.25\n"))
    with_labels = attach_labels(features, _write(tmp_path / "l.csv", "id,label\n2,1\n1,-1\n"))
    np.testing.assert_array_equal(with_labels.labels, [-1.0, 1.0])
    with pytest.raises(DataError):
        attach_labels(features, _write(tmp_path / "l2.csv", "id,label\n1,1\n3,1\n"))


def test_vertical_split_partitions_columns():
    table = gen_blobs(20, 6, 3.0, seed=1)
    parts = vertical_split(table, 3, seed=4)
    assert [p.n_features for p in parts] == [2, 2, 2]
    names = [n for p in parts for n in p.feature_names]
    assert sorted(names) == table.feature_names
    assert parts[0].labels is not None
    assert all(p.labels is None for p in parts[1:])
    assert all(np.array_equal(p.ids, table.ids) for p in parts)

    again = vertical_split(table, 3, seed=4)
    assert [p.feature_names for p in again] == [p.feature_names for p in parts]

    joined = rejoin(parts, table.feature_names)
    np.testing.assert_array_equal(joined.features, table.features)
    np.testing.assert_array_equal(joined.labels, table.labels)


def test_vertical_split_edges():
    table = gen_blobs(10, 3, 3.0, seed=1)
    (single,) = vertical_split(table, 1, seed=0)
    np.testing.assert_array_equal(single.features, table.features)
    with pytest.raises(DataError):
        vertical_split(table, 4, seed=0)


def test_alignment_reports():
    a = PartyTable("a", [1, 2, 42, 50], np.zeros((4, 1)))
    b = PartyTable("b", [1, 2, 50], np.zeros((3, 1)))
    assert check_alignment([a, a]).ok
    report = check_alignment([a, b])
    assert not report.ok
    assert (report.party, report.position) == ("b", 2)
    empty = PartyTable("e", [], np.zeros((0, 1)))
    report = check_alignment([a, empty])
    assert report.position == 0
    assert check_id_alignment([]).ok


def test_row_index():
    table = PartyTable("t", [5, 9, 12], np.arange(3.0).reshape(3, 1))
    np.testing.assert_array_equal(table.row_index([12, 5]), [2, 0])
    assert table.row_index([]).shape == (0,)
    with pytest.raises(DataError):
        table.row_index([7])
    with pytest.raises(DataError):
        PartyTable("e", [], np.zeros((0, 1))).row_index([1])


def test_blobs():
    far = gen_blobs(4, 2, 100.0, seed=3)
    pos, neg = far.features[far.labels == 1], far.features[far.labels == -1]
    inter = min(np.linalg.norm(p - q) for p in pos for q in neg)
    intra = max(np.linalg.norm(pos[0] - pos[1]), np.linalg.norm(neg[0] - neg[1]))
    assert inter > intra

    assert set(gen_blobs(10, 2, 1.0, 0).labels) == {-1.0, 1.0}
    assert set(gen_blobs(10, 2, 1.0, 0, "zero_one").labels) == {0.0, 1.0}
    for bad in ((3, 2), (0, 2), (4, 0)):
        with pytest.raises(DataError):
            gen_blobs(*bad, 1.0, 0)
    with pytest.raises(DataError):
        gen_blobs(4, 2, 1.0, 0, "binary")


def test_blobs_are_byte_identical_on_disk(tmp_path):
    first = write_csv(gen_blobs(30, 3, 2.0, seed=8), tmp_path / "one.csv")
    second = write_csv(gen_blobs(30, 3, 2.0, seed=8), tmp_path / "two.csv")
    assert first.read_bytes() == second.read_bytes()


def test_csv_round_trip(tmp_path):
    table = gen_blobs(12, 3, 2.0, seed=2)
    loaded = load_csv(write_csv(table, tmp_path / "t.csv"), has_labels=True)
    np.testing.assert_array_equal(loaded.features, table.features)
    np.testing.assert_array_equal(loaded.labels, table.labels)

    ids, labels = load_labels(write_labels(table, tmp_path / "t.labels.csv"))
    np.testing.assert_array_equal(labels, table.labels)
    with pytest.raises(LabelError):
        write_labels(PartyTable("x", [1], np.zeros((1, 1))), tmp_path / "x.csv")


def test_label_conversion():
    np.testing.assert_array_equal(as_pm1(np.array([0.0, 1.0])), [-1.0, 1.0])
    np.testing.assert_array_equal(as_zero_one(np.array([-1.0, 1.0])), [0.0, 1.0])
    np.testing.assert_array_equal(as_zero_one(np.array([1.0, 1.0])), [1.0, 1.0])
    with pytest.raises(LabelError):
        as_pm1(np.array([0.0, 2.0]))
