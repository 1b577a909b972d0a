"""File formats and the synthetic benchmark generator.

Embeddings travel as CEMB files: a 16-byte header (magic ``CEMB``,
version, n_rows, dim as little-endian u32) followed by exactly
n_rows*dim little-endian float32 values, row-major. Files store float32;
everything is widened to float64 in memory. Datasets pair a CEMB file
with a JSON manifest carrying labels and class names.
"""

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, ParseError, ScheduleError

MAGIC = b"CEMB"
VERSION = 1
_HEADER = struct.Struct("<III")


def write_embeddings(path, matrix):
    """Write a 2-D array as a CEMB file (float32 on disk)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise DataError(f"embeddings must be 2-D, got shape {matrix.shape}")
    if matrix.size and not np.all(np.isfinite(matrix)):
        raise DataError("embeddings contain non-finite values")
    with np.errstate(over="ignore"):
        payload = np.ascontiguousarray(matrix, dtype="<f4")
    if payload.size and not np.all(np.isfinite(payload)):
        raise DataError("embeddings overflow float32")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(VERSION, matrix.shape[0], matrix.shape[1]))
        fh.write(payload.tobytes())


def read_embeddings(path):
    """Read a CEMB file into a float64 array of shape (n_rows, dim)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 16:
        raise ParseError(f"{path}: truncated header, {len(blob)} bytes < 16")
    if blob[:4] != MAGIC:
        raise ParseError(f"{path}: bad magic {blob[:4]!r} at byte 0")
    version, n_rows, dim = _HEADER.unpack(blob[4:16])
    if version != VERSION:
        raise ParseError(f"{path}: unsupported version {version} at byte 4")
    expected = 4 * n_rows * dim
    actual = len(blob) - 16
    if actual != expected:
        raise ParseError(
            f"{path}: payload is {actual} bytes, expected {expected} "
            f"({n_rows} rows x {dim} cols) from byte 16"
        )
    flat = np.frombuffer(blob, dtype="<f4", offset=16)
    matrix = flat.reshape(n_rows, dim).astype(np.float64)
    if matrix.size and not np.all(np.isfinite(matrix)):
        bad = int(np.flatnonzero(~np.isfinite(matrix))[0])
        raise ParseError(f"{path}: non-finite value at flat index {bad}")
    return matrix


@dataclass
class Dataset:
    features: np.ndarray  # (n, D) float64
    labels: np.ndarray  # (n,) int64
    class_names: list
    split: str = ""

    @property
    def dim(self):
        return self.features.shape[1]


def save_dataset(dataset, directory, stem):
    """Write <stem>.cemb plus <stem>.json into directory."""
    directory = Path(directory)
    write_embeddings(directory / f"{stem}.cemb", dataset.features)
    manifest = {
        "embeddings_file": f"{stem}.cemb",
        "labels": [int(x) for x in dataset.labels],
        "class_names": list(dataset.class_names),
        "split": dataset.split,
    }
    with open(directory / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def load_dataset(manifest_path):
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{manifest_path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    for key in ("embeddings_file", "labels", "class_names"):
        if key not in manifest:
            raise ParseError(f"{manifest_path}: missing field {key!r}")
    features = read_embeddings(manifest_path.parent / manifest["embeddings_file"])
    labels = np.asarray(manifest["labels"], dtype=np.int64)
    names = list(manifest["class_names"])
    if labels.shape[0] != features.shape[0]:
        raise DataError(
            f"{manifest_path}: {labels.shape[0]} labels for {features.shape[0]} embedding rows"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= len(names)):
        raise DataError(f"{manifest_path}: label outside [0, {len(names)})")
    return Dataset(features, labels, names, manifest.get("split", ""))


@dataclass
class TaskSchedule:
    tasks: list  # list of lists of class ids

    @property
    def n_tasks(self):
        return len(self.tasks)

    @property
    def n_classes(self):
        return sum(len(t) for t in self.tasks)


def validate_schedule(tasks, n_classes=None):
    seen = {}
    for t, classes in enumerate(tasks):
        for cid in classes:
            if cid in seen:
                raise ScheduleError(
                    f"class {cid} appears in both task {seen[cid]} and task {t}"
                )
            seen[cid] = t
    total = n_classes if n_classes is not None else (max(seen) + 1 if seen else 0)
    missing = sorted(set(range(total)) - set(seen))
    if missing:
        raise ScheduleError(f"schedule does not cover classes {missing}")
    extra = sorted(set(seen) - set(range(total)))
    if extra:
        raise ScheduleError(f"schedule references unknown classes {extra}")
    return TaskSchedule([list(map(int, t)) for t in tasks])


def load_task_schedule(path, n_classes=None):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    if "tasks" not in doc or not isinstance(doc["tasks"], list):
        raise ParseError(f"{path}: missing or invalid field 'tasks'")
    return validate_schedule(doc["tasks"], n_classes)


def save_task_schedule(schedule, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"tasks": schedule.tasks}, fh, indent=2)
        fh.write("\n")


# --- synthetic benchmark ---------------------------------------------------

_WORDS = [
    "amber", "angular", "banded", "blistered", "blotchy", "bristled", "bulbous",
    "chalky", "coarse", "concentric", "crescent", "crimson", "crusted", "curled",
    "dappled", "dark", "dense", "dimpled", "dotted", "dusky", "elongated",
    "faded", "feathery", "fibrous", "flaky", "flattened", "frayed", "fuzzy",
    "glossy", "granular", "greenish", "grooved", "hazy", "hooked", "indigo",
    "inflamed", "jagged", "knotted", "lacy", "layered", "leathery", "lumpy",
    "marbled", "matte", "mottled", "narrow", "netted", "nodular", "oblong",
    "ochre", "oily", "opaque", "pale", "patchy", "pearly", "pitted", "plump",
    "pointed", "porous", "puckered", "raised", "ragged", "ridged", "rippled",
    "rosy", "rough", "rounded", "russet", "scaly", "scalloped", "serrated",
    "shiny", "silvery", "slender", "smooth", "speckled", "spiny", "spiral",
    "splotchy", "spongy", "stippled", "streaked", "striated", "swollen",
    "tangled", "tapered", "tawny", "textured", "threadlike", "translucent",
    "tufted", "twisted", "veined", "velvety", "violet", "warty", "wavy",
    "waxy", "webbed", "wrinkled", "yellowish",
    "band", "blotch", "border", "bump", "cluster", "crease", "crest", "crust",
    "disc", "dot", "edge", "filament", "fleck", "fold", "fringe", "groove",
    "halo", "lesion", "margin", "mesh", "node", "patch", "plaque", "pore",
    "ridge", "ring", "scale", "speck", "spot", "streak", "stripe", "surface",
    "tuft", "vein", "whorl",
]


@dataclass
class SyntheticSpec:
    n_classes: int = 10
    dim: int = 32
    train_per_class: int = 100
    test_per_class: int = 20
    concepts_per_class: int = 3
    center_scale: float = 1.0
    sample_noise: float = 2.0
    anchor_noise: float = 0.1
    duplicate_fraction: float = 0.1
    seed: int = 0

    def validate(self):
        counts = {
            "n_classes": self.n_classes,
            "dim": self.dim,
            "train_per_class": self.train_per_class,
            "test_per_class": self.test_per_class,
            "concepts_per_class": self.concepts_per_class,
        }
        for name, value in counts.items():
            if value < 1:
                raise DataError(f"synthetic spec: {name} must be >= 1, got {value}")
        for name, value in (
            ("center_scale", self.center_scale),
            ("sample_noise", self.sample_noise),
            ("anchor_noise", self.anchor_noise),
        ):
            if value < 0:
                raise DataError(f"synthetic spec: {name} must be >= 0, got {value}")
        if not 0.0 <= self.duplicate_fraction <= 1.0:
            raise DataError("synthetic spec: duplicate_fraction must be in [0, 1]")


@dataclass
class SyntheticBundle:
    train: Dataset
    test: Dataset
    concept_texts: dict  # class name -> list of texts
    concept_embeddings: dict  # text -> (D,) vector
    centers: np.ndarray


_PHRASE_WORDS = 5


def _fresh_phrase(rng, taken):
    while True:
        words = [_WORDS[i] for i in rng.choice(len(_WORDS), size=_PHRASE_WORDS, replace=False)]
        text = " ".join(words)
        if text not in taken:
            return text


def _near_duplicate(rng, source_text, taken):
    # Shares the first 4 of 5 words with the source, which puts the pairwise
    # similarity just above 0.5 and exercises the replacement path.
    words = source_text.split()[: _PHRASE_WORDS - 1]
    while True:
        tail = _WORDS[int(rng.integers(len(_WORDS)))]
        if tail in words:
            continue
        text = " ".join(words + [tail])
        if text not in taken:
            return text


def generate_synthetic(spec):
    """Build a class-incremental benchmark out of Gaussian feature clusters.

    Class centers are drawn from a seeded Gaussian; samples are
    center + noise; each class's concept embeddings are center + anchor
    noise so the concept branch has real signal. A configurable fraction
    of concept texts are near-duplicates of earlier classes' texts to
    exercise the similarity filter.
    """
    spec.validate()
    rng = np.random.default_rng([spec.seed, 101])
    names = [f"class_{i:02d}" for i in range(spec.n_classes)]
    centers = rng.normal(0.0, spec.center_scale, size=(spec.n_classes, spec.dim))
    # Per-class bimodal direction: the within-class noise is Gaussian plus a
    # +/- lobe along a random unit vector (both scaled by sample_noise), so
    # class manifolds are not single Gaussians and feature replay stays an
    # approximation, as it is for real encoder features.
    lobes = rng.normal(0.0, 1.0, size=(spec.n_classes, spec.dim))
    lobes /= np.linalg.norm(lobes, axis=1, keepdims=True)

    def make_split(per_class, split):
        parts = []
        for c in range(spec.n_classes):
            noise = rng.normal(0.0, spec.sample_noise, size=(per_class, spec.dim))
            signs = rng.choice((-1.0, 1.0), size=(per_class, 1))
            parts.append(centers[c] + noise + 2.0 * spec.sample_noise * signs * lobes[c])
        feats = np.concatenate(parts)
        labels = np.repeat(np.arange(spec.n_classes, dtype=np.int64), per_class)
        return Dataset(feats, labels, names, split)

    train = make_split(spec.train_per_class, "train")
    test = make_split(spec.test_per_class, "test")

    texts = {}
    embeddings = {}
    taken = set()
    earlier = []
    for c, name in enumerate(names):
        class_texts = []
        for _ in range(spec.concepts_per_class):
            if earlier and rng.random() < spec.duplicate_fraction:
                text = _near_duplicate(rng, earlier[int(rng.integers(len(earlier)))], taken)
            else:
                text = _fresh_phrase(rng, taken)
            taken.add(text)
            class_texts.append(text)
            embeddings[text] = centers[c] + rng.normal(0.0, spec.anchor_noise, size=spec.dim)
        texts[name] = class_texts
        earlier.extend(class_texts)
    return SyntheticBundle(train, test, texts, embeddings, centers)


def default_schedule(n_classes, n_tasks):
    if not 1 <= n_tasks <= n_classes:
        raise ScheduleError(f"cannot split {n_classes} classes into {n_tasks} tasks")
    chunks = np.array_split(np.arange(n_classes), n_tasks)
    return TaskSchedule([chunk.tolist() for chunk in chunks])


def write_benchmark(bundle, directory, n_tasks):
    """Write a complete benchmark directory (datasets, concepts, schedule)."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_dataset(bundle.train, directory, "train")
    save_dataset(bundle.test, directory, "test")
    with open(directory / "concepts.json", "w", encoding="utf-8") as fh:
        json.dump(bundle.concept_texts, fh, indent=2, ensure_ascii=False)
        fh.write("\n")
    order = [t for name in bundle.train.class_names for t in bundle.concept_texts[name]]
    write_embeddings(
        directory / "concepts.cemb",
        np.stack([bundle.concept_embeddings[t] for t in order]),
    )
    save_task_schedule(default_schedule(len(bundle.train.class_names), n_tasks), directory / "schedule.json")


def load_concept_texts(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"{path}: expected an object mapping class names to concept lists")
    for name, items in doc.items():
        if not isinstance(items, list) or not all(isinstance(t, str) for t in items):
            raise ParseError(f"{path}: field {name!r} must be a list of strings")
    return doc


def load_concept_embedding_source(concepts_path, cemb_path):
    """Map concept text -> embedding row, rows aligned to concepts.json order."""
    texts = load_concept_texts(concepts_path)
    order = [t for items in texts.values() for t in items]
    rows = read_embeddings(cemb_path)
    if rows.shape[0] != len(order):
        raise DataError(
            f"{cemb_path}: {rows.shape[0]} embedding rows for {len(order)} concept texts"
        )
    source = {}
    for text, row in zip(order, rows):
        if text in source and not np.array_equal(source[text], row):
            raise DataError(f"duplicate concept text with conflicting embeddings: {text!r}")
        source[text] = row
    return texts, source


@dataclass
class Benchmark:
    train: Dataset
    test: Dataset
    schedule: TaskSchedule
    concept_texts: dict
    concept_embeddings: dict


def load_benchmark(directory):
    directory = Path(directory)
    train = load_dataset(directory / "train.json")
    test = load_dataset(directory / "test.json")
    if train.class_names != test.class_names:
        raise DataError("train and test manifests disagree on class names")
    schedule = load_task_schedule(directory / "schedule.json", len(train.class_names))
    texts, source = load_concept_embedding_source(
        directory / "concepts.json", directory / "concepts.cemb"
    )
    return Benchmark(train, test, schedule, texts, source)
