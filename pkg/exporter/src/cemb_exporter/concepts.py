"""Concept-text embedding export, aligned to the training core's pool order."""

import json
from pathlib import Path

from . import AlignmentError, ExporterError
from .cemb import write_embeddings


def load_pool_texts(pool_path):
    """Concept texts from an exported pool file, in pool id order."""
    with open(pool_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        concepts = doc["concepts"]
        texts = [entry["text"] for entry in concepts]
        ids = [entry["id"] for entry in concepts]
    except (KeyError, TypeError) as exc:
        raise ExporterError(f"{pool_path}: not a pool file ({exc})") from exc
    if ids != list(range(len(ids))):
        raise AlignmentError(f"{pool_path}: concept ids are not the contiguous pool order")
    return texts


def load_concept_json_texts(concepts_path):
    """All texts from a {class: [concepts]} JSON, in file order."""
    with open(concepts_path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if not isinstance(doc, dict):
        raise ExporterError(f"{concepts_path}: expected an object mapping classes to concept lists")
    texts = []
    for name, items in doc.items():
        if not isinstance(items, list) or not all(isinstance(t, str) for t in items):
            raise ExporterError(f"{concepts_path}: field {name!r} must be a list of strings")
        texts.extend(items)
    return texts


def export_concept_embeddings(texts, encoder, out_path, expected_count=None):
    """Embed texts (one row each, preserving order) into a CEMB file."""
    if not texts:
        raise ExporterError("no concept texts to embed")
    if expected_count is not None and len(texts) != expected_count:
        raise AlignmentError(f"{len(texts)} concept texts, expected {expected_count}")
    matrix = encoder.encode_texts(texts)
    if matrix.shape[0] != len(texts):
        raise AlignmentError(
            f"encoder produced {matrix.shape[0]} rows for {len(texts)} texts"
        )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    write_embeddings(out_path, matrix)
    return matrix.shape
