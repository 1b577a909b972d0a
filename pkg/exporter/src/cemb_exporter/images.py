"""Image-folder export: one embedding row per image.

The input directory holds one subfolder per class; labels follow the
class folder names sorted lexicographically, files are visited in sorted
order within each class. Unreadable images are skipped with a warning and
recorded in the manifest.
"""

import json
import sys
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from . import ExporterError
from .cemb import write_embeddings

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tiff", ".webp"}


def scan_class_folders(root):
    root = Path(root)
    if not root.is_dir():
        raise ExporterError(f"{root} is not a directory")
    class_dirs = sorted(d for d in root.iterdir() if d.is_dir())
    if not class_dirs:
        raise ExporterError(f"{root} has no class subfolders")
    return class_dirs


def export_image_embeddings(image_root, encoder, out_dir, stem, split=""):
    """Write <stem>.cemb + <stem>.json for every readable image under root."""
    class_dirs = scan_class_folders(image_root)
    class_names = [d.name for d in class_dirs]
    rows = []
    labels = []
    skipped = []
    for label, class_dir in enumerate(class_dirs):
        files = sorted(
            p for p in class_dir.iterdir()
            if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
        )
        for path in files:
            try:
                with Image.open(path) as img:
                    rows.append(encoder.encode_image(img.convert("RGB")))
            except (UnidentifiedImageError, OSError) as exc:
                print(f"warning: skipping unreadable image {path}: {exc}", file=sys.stderr)
                skipped.append(str(path.relative_to(image_root)))
                continue
            labels.append(label)
    if not rows:
        raise ExporterError(f"no readable images under {image_root}")
    matrix = np.stack(rows)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_embeddings(out_dir / f"{stem}.cemb", matrix)
    manifest = {
        "embeddings_file": f"{stem}.cemb",
        "labels": labels,
        "class_names": class_names,
        "split": split,
        "encoder": encoder.name,
        "dim": int(matrix.shape[1]),
        "skipped": skipped,
    }
    with open(out_dir / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return manifest
