"""Image-folder export: ordering, determinism, skip handling."""

import json

import numpy as np
import pytest
from PIL import Image

from cemb_exporter import ExporterError
from cemb_exporter.encoders import HashEncoder
from cemb_exporter.images import export_image_embeddings


def make_image_tree(root, per_class=3, classes=("cat", "dog")):
    rng = np.random.default_rng(0)
    for name in classes:
        folder = root / name
        folder.mkdir(parents=True)
        for i in range(per_class):
            pixels = rng.integers(0, 255, size=(8, 8, 3), dtype=np.uint8)
            Image.fromarray(pixels).save(folder / f"img_{i}.png")
    return root


def test_labels_follow_sorted_class_folders(tmp_path):
    make_image_tree(tmp_path / "imgs")
    manifest = export_image_embeddings(
        tmp_path / "imgs", HashEncoder(16), tmp_path / "out", "train", "train"
    )
    assert manifest["class_names"] == ["cat", "dog"]
    assert manifest["labels"] == [0, 0, 0, 1, 1, 1]
    assert manifest["dim"] == 16
    assert manifest["skipped"] == []


def test_reexport_is_identical(tmp_path):
    make_image_tree(tmp_path / "imgs")
    export_image_embeddings(tmp_path / "imgs", HashEncoder(16), tmp_path / "a", "t")
    export_image_embeddings(tmp_path / "imgs", HashEncoder(16), tmp_path / "b", "t")
    assert (tmp_path / "a" / "t.cemb").read_bytes() == (tmp_path / "b" / "t.cemb").read_bytes()
    assert (tmp_path / "a" / "t.json").read_bytes() == (tmp_path / "b" / "t.json").read_bytes()


def test_dim_matches_encoder_width(tmp_path):
    make_image_tree(tmp_path / "imgs", per_class=1)
    manifest = export_image_embeddings(
        tmp_path / "imgs", HashEncoder(512), tmp_path / "out", "t"
    )
    assert manifest["dim"] == 512


def test_unreadable_image_skipped_and_recorded(tmp_path, capsys):
    root = make_image_tree(tmp_path / "imgs")
    (root / "cat" / "broken.png").write_bytes(b"this is not an image")
    manifest = export_image_embeddings(root, HashEncoder(16), tmp_path / "out", "t")
    assert manifest["skipped"] == ["cat/broken.png"]
    assert manifest["labels"] == [0, 0, 0, 1, 1, 1]
    assert "skipping unreadable image" in capsys.readouterr().err


def test_empty_folder_rejected(tmp_path):
    (tmp_path / "imgs").mkdir()
    with pytest.raises(ExporterError, match="no class subfolders"):
        export_image_embeddings(tmp_path / "imgs", HashEncoder(16), tmp_path / "out", "t")


def test_manifest_is_valid_json(tmp_path):
    make_image_tree(tmp_path / "imgs")
    export_image_embeddings(tmp_path / "imgs", HashEncoder(16), tmp_path / "out", "t", "test")
    manifest = json.loads((tmp_path / "out" / "t.json").read_text())
    assert manifest["split"] == "test"
    assert manifest["encoder"] == "hash"
