"""CEMB format, manifests, schedules, synthetic generator."""

import json
import struct

import numpy as np
import pytest

from conceptcil import data
from conceptcil.errors import DataError, ParseError, ScheduleError


# --- CEMB --------------------------------------------------------------------


def test_roundtrip_is_file_level_bit_identical(tmp_path):
    rng = np.random.default_rng(0)
    mat = rng.normal(size=(7, 5))
    a = tmp_path / "a.cemb"
    b = tmp_path / "b.cemb"
    data.write_embeddings(a, mat)
    data.write_embeddings(b, data.read_embeddings(a))
    assert a.read_bytes() == b.read_bytes()


def test_known_layout_parses_identically(tmp_path):
    # Hand-built file: fixed endianness, no padding.
    blob = b"CEMB" + struct.pack("<III", 1, 2, 3) + struct.pack("<6f", 1, 2, 3, 4, 5, 6)
    path = tmp_path / "h.cemb"
    path.write_bytes(blob)
    mat = data.read_embeddings(path)
    np.testing.assert_array_equal(mat, [[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    assert len(blob) == 16 + 4 * 2 * 3


def test_empty_matrix_is_valid(tmp_path):
    path = tmp_path / "e.cemb"
    data.write_embeddings(path, np.zeros((0, 4)))
    mat = data.read_embeddings(path)
    assert mat.shape == (0, 4)


def test_truncated_payload_names_byte_counts(tmp_path):
    path = tmp_path / "t.cemb"
    data.write_embeddings(path, np.ones((3, 2)))
    path.write_bytes(path.read_bytes()[:-4])
    with pytest.raises(ParseError, match="20 bytes, expected 24"):
        data.read_embeddings(path)


def test_bad_magic_and_version(tmp_path):
    path = tmp_path / "m.cemb"
    path.write_bytes(b"XEMB" + struct.pack("<III", 1, 0, 0))
    with pytest.raises(ParseError, match="magic"):
        data.read_embeddings(path)
    path.write_bytes(b"CEMB" + struct.pack("<III", 9, 0, 0))
    with pytest.raises(ParseError, match="version 9"):
        data.read_embeddings(path)


def test_nonfinite_rejected_on_write(tmp_path):
    with pytest.raises(DataError, match="non-finite"):
        data.write_embeddings(tmp_path / "x.cemb", np.array([[np.nan, 1.0]]))
    with pytest.raises(DataError, match="float32"):
        data.write_embeddings(tmp_path / "y.cemb", np.array([[1e300, 1.0]]))


def test_float32_storage_widened_on_load(tmp_path):
    mat = np.array([[0.1, 0.2]])
    path = tmp_path / "w.cemb"
    data.write_embeddings(path, mat)
    loaded = data.read_embeddings(path)
    assert loaded.dtype == np.float64
    np.testing.assert_array_equal(loaded, mat.astype(np.float32).astype(np.float64))


# --- dataset manifests ----------------------------------------------------------


def test_dataset_roundtrip(tmp_path):
    ds = data.Dataset(
        np.random.default_rng(1).normal(size=(6, 4)),
        np.array([0, 0, 1, 1, 2, 2], dtype=np.int64),
        ["a", "b", "c"],
        "train",
    )
    data.save_dataset(ds, tmp_path, "train")
    loaded = data.load_dataset(tmp_path / "train.json")
    np.testing.assert_array_equal(loaded.labels, ds.labels)
    assert loaded.class_names == ds.class_names
    assert loaded.features.shape == (6, 4)


def test_dataset_label_count_mismatch(tmp_path):
    ds = data.Dataset(np.zeros((2, 2)), np.array([0, 1], dtype=np.int64), ["a", "b"], "t")
    data.save_dataset(ds, tmp_path, "t")
    manifest = json.loads((tmp_path / "t.json").read_text())
    manifest["labels"] = [0]
    (tmp_path / "t.json").write_text(json.dumps(manifest))
    with pytest.raises(DataError, match="1 labels for 2"):
        data.load_dataset(tmp_path / "t.json")


# --- schedules --------------------------------------------------------------------


def test_schedule_valid_two_tasks(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"tasks": [[0, 1], [2, 3]]}))
    schedule = data.load_task_schedule(path, 4)
    assert schedule.n_tasks == 2 and schedule.n_classes == 4


def test_schedule_overlap_names_class(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"tasks": [[0, 1], [1, 2]]}))
    with pytest.raises(ScheduleError, match="class 1"):
        data.load_task_schedule(path)


def test_schedule_gap_names_class(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps({"tasks": [[0], [2]]}))
    with pytest.raises(ScheduleError, match=r"\[1\]"):
        data.load_task_schedule(path, 3)


# --- synthetic generator -------------------------------------------------------------


def test_zero_noise_puts_samples_on_centers():
    spec = data.SyntheticSpec(n_classes=3, dim=4, train_per_class=5, test_per_class=2, sample_noise=0.0)
    bundle = data.generate_synthetic(spec)
    for c in range(3):
        rows = bundle.train.features[bundle.train.labels == c]
        np.testing.assert_allclose(rows, np.broadcast_to(bundle.centers[c], rows.shape))


def test_same_seed_is_bit_identical():
    spec = data.SyntheticSpec(n_classes=4, dim=6, train_per_class=3, test_per_class=2, seed=9)
    a = data.generate_synthetic(spec)
    b = data.generate_synthetic(spec)
    assert np.array_equal(a.train.features, b.train.features)
    assert a.concept_texts == b.concept_texts
    for text in a.concept_embeddings:
        assert np.array_equal(a.concept_embeddings[text], b.concept_embeddings[text])


def test_zero_anchor_noise_nearest_concept_is_own_class():
    spec = data.SyntheticSpec(
        n_classes=5, dim=8, train_per_class=20, test_per_class=5,
        sample_noise=0.05, anchor_noise=0.0, duplicate_fraction=0.0, seed=2,
    )
    bundle = data.generate_synthetic(spec)
    texts_by_class = bundle.concept_texts
    anchor_rows = []
    anchor_class = []
    for c, name in enumerate(bundle.train.class_names):
        for text in texts_by_class[name]:
            anchor_rows.append(bundle.concept_embeddings[text])
            anchor_class.append(c)
    anchors = np.stack(anchor_rows)
    anchor_class = np.array(anchor_class)
    # brute-force nearest neighbour over every sample
    for feats, labels in ((bundle.train.features, bundle.train.labels),
                          (bundle.test.features, bundle.test.labels)):
        for row, label in zip(feats, labels):
            nearest = np.argmin(((anchors - row) ** 2).sum(axis=1))
            assert anchor_class[nearest] == label


def test_low_noise_nearest_centroid_is_perfect():
    spec = data.SyntheticSpec(
        n_classes=6, dim=8, train_per_class=10, test_per_class=5,
        sample_noise=0.02, anchor_noise=0.0, seed=3,
    )
    bundle = data.generate_synthetic(spec)
    preds = np.argmin(
        ((bundle.test.features[:, None, :] - bundle.centers[None, :, :]) ** 2).sum(axis=2), axis=1
    )
    assert np.array_equal(preds, bundle.test.labels)


def test_benchmark_directory_roundtrip(tmp_path):
    spec = data.SyntheticSpec(n_classes=4, dim=6, train_per_class=5, test_per_class=3, seed=1)
    bundle = data.generate_synthetic(spec)
    data.write_benchmark(bundle, tmp_path, 2)
    bench = data.load_benchmark(tmp_path)
    assert bench.schedule.tasks == [[0, 1], [2, 3]]
    assert bench.train.features.shape == (20, 6)
    assert set(bench.concept_texts) == set(bundle.concept_texts)
    for name, texts in bench.concept_texts.items():
        for text in texts:
            assert text in bench.concept_embeddings


def test_duplicate_fraction_exercises_replacement():
    # At least one near-duplicate must land above tau=0.5 in the default bench.
    from conceptcil.concepts import ConceptPool, filter_and_insert

    spec = data.SyntheticSpec(seed=0)
    bundle = data.generate_synthetic(spec)
    pool = ConceptPool(tau=0.5, k=spec.concepts_per_class)
    replaced = 0
    for name in bundle.train.class_names:
        for decision in filter_and_insert(pool, name, bundle.concept_texts[name]):
            replaced += decision.action == "replaced"
    assert replaced >= 1
    assert pool.size == spec.n_classes * spec.concepts_per_class - replaced
