from dataclasses import replace

import numpy as np
import pytest

import config as cfg
from conftest import SAMPLE_CSV
from datagen import (
    BenchmarkSpec,
    CsvFormatError,
    CsvSchema,
    SpecError,
    class_means,
    generate,
    ingest_csv,
    ood_class_counts,
)


def test_split_sizes(small_spec):
    ds = generate(small_spec)
    assert ds.n_labeled == 30
    assert np.bincount(ds.labeled_y).tolist() == [10, 10, 10]
    assert ds.m_unlabeled == 60
    assert int(ds.ood_mask.sum()) == 30
    assert np.bincount(ds.ground_truth).tolist() == [10, 10, 10, 15, 15]
    assert len(ds.test_y) == 60
    assert len(ds.full_test_y) == 100
    assert ds.ood_classes().tolist() == [3, 4]
    assert ds.ood_fraction() == pytest.approx(0.5)


def test_generate_is_pure(small_spec):
    a, b = generate(small_spec), generate(small_spec)
    np.testing.assert_array_equal(a.unlabeled_x, b.unlabeled_x)
    np.testing.assert_array_equal(a.ground_truth, b.ground_truth)
    c = generate(replace(small_spec, seed=8))
    assert not np.array_equal(a.labeled_x, c.labeled_x)


def test_classes_do_not_depend_on_each_other(small_spec):
    a = generate(small_spec)
    b = generate(replace(small_spec, k_ood=3))
    np.testing.assert_array_equal(class_means(small_spec)[:5], class_means(replace(small_spec, k_ood=3))[:5])
    np.testing.assert_array_equal(a.labeled_x, b.labeled_x)


def test_ood_count_rounds_half_up():
    assert BenchmarkSpec(m_unlabeled=10, mismatch_ratio=0.25).n_ood_unlabeled == 3
    assert BenchmarkSpec(m_unlabeled=10, mismatch_ratio=0.24).n_ood_unlabeled == 2


def test_ood_class_counts():
    assert ood_class_counts(10, 3, 1.0) == [4, 3, 3]
    assert ood_class_counts(10, 3, 4.0) == [6, 3, 1]
    assert ood_class_counts(0, 2, 4.0) == [0, 0]
    assert sum(ood_class_counts(997, 5, 10.0)) == 997


@pytest.mark.parametrize("ratio,n_ood", [(0.0, 0), (1.0, 60)])
def test_mismatch_extremes(small_spec, ratio, n_ood):
    ds = generate(replace(small_spec, mismatch_ratio=ratio))
    assert int(ds.ood_mask.sum()) == n_ood
    assert ds.m_unlabeled == 60


def test_means_have_requested_norm(small_spec):
    np.testing.assert_allclose(np.linalg.norm(class_means(small_spec), axis=1), small_spec.class_separation)


@pytest.mark.parametrize(
    "changes,key",
    [
        ({"mismatch_ratio": 1.5}, "mismatch_ratio"),
        ({"k_id": 1}, "k_id"),
        ({"noise_sigma": 0.0}, "noise_sigma"),
        ({"k_ood": 0}, "k_ood"),
        ({"ood_imbalance_ratio": 0.5}, "ood_imbalance_ratio"),
    ],
)
def test_spec_errors_name_the_field(small_spec, changes, key):
    with pytest.raises(SpecError) as info:
        replace(small_spec, **changes)
    assert info.value.key == key
    assert str(info.value).startswith(f"{key}: ")


def test_spec_from_config():
    cfg.K_ID = 4
    spec = BenchmarkSpec.from_cfg(seed=3)
    assert spec.k_id == 4 and spec.seed == 3
    assert "mismatch_ratio" in BenchmarkSpec.keys()


def test_ingest_sample_csv():
    ds = ingest_csv(SAMPLE_CSV)
    assert ds.k_id == 3 and ds.k_ood == 2 and ds.dim == 3
    assert ds.n_labeled == 6
    assert ds.m_unlabeled == 7
    assert ds.ground_truth.tolist() == [-1, -1, -1, 3, 3, 4, -1]
    assert ds.ood_mask.tolist() == [False, False, False, True, True, True, True]
    assert ds.test_y.tolist() == [0, 1, 2]
    assert ds.full_test_y.tolist() == [0, 1, 2, 3, 4]


def _write(tmp_path, text):
    path = tmp_path / "data.csv"
    path.write_text(text)
    return str(path)


def test_ingest_four_row_file(tmp_path):
    path = _write(tmp_path, "x0,x1,label,split\n0.1,0.2,0,labeled\n0.3,0.4,1,labeled\n0.5,0.6,,unlabeled\n0.7,0.8,1,test\n")
    ds = ingest_csv(path)
    assert ds.k_id == 2
    assert ds.n_labeled == 2 and ds.m_unlabeled == 1 and len(ds.test_y) == 1
    assert not ds.ood_mask.any()


@pytest.mark.parametrize(
    "body,line,message",
    [
        ("0.1,0,labeled\n0.2,1,training\n", 3, "split tag"),
        ("0.1,0,labeled\nabc,1,labeled\n", 3, "non-numeric"),
        ("0.1,0,labeled\n0.2,,test\n", 3, "without label"),
        ("0.1,0,labeled\n0.2,x,labeled\n", 3, "non-integer"),
    ],
)
def test_ingest_errors_name_the_line(tmp_path, body, line, message):
    path = _write(tmp_path, "x0,label,split\n" + body)
    with pytest.raises(CsvFormatError, match=message) as info:
        ingest_csv(path)
    assert info.value.line == line


def test_ingest_missing_columns(tmp_path):
    path = _write(tmp_path, "x0,label\n0.1,0\n")
    with pytest.raises(CsvFormatError, match="missing columns") as info:
        ingest_csv(path)
    assert info.value.line == 1


def test_ingest_flag_disagrees_with_label(tmp_path):
    path = _write(tmp_path, "x0,label,split,ood\n0.1,0,labeled,0\n0.2,1,labeled,0\n0.3,1,unlabeled,1\n")
    with pytest.raises(CsvFormatError, match="disagrees") as info:
        ingest_csv(path)
    assert info.value.line == 4


def test_ingest_explicit_k_id(tmp_path):
    path = _write(tmp_path, "f,y,s\n0.1,0,labeled\n0.2,1,labeled\n0.3,2,unlabeled\n")
    ds = ingest_csv(path, CsvSchema(label_column="y", split_column="s", ood_column=None, feature_columns=["f"], k_id=2))
    assert ds.ood_mask.tolist() == [True]
    assert ds.k_ood == 1
    with pytest.raises(CsvFormatError, match="outside"):
        ingest_csv(path, CsvSchema(label_column="y", split_column="s", feature_columns=["f"], k_id=1))
