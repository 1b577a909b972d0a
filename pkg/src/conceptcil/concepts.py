"""Visual-concept pool with n-gram TF-IDF similarity filtering.

The pool grows as classes arrive. Each incoming concept text is compared
against every pooled concept; if the best similarity reaches the
threshold the class is pointed at that existing concept instead of adding
a near-duplicate, otherwise the text joins the pool. Similarity is the
cosine of TF-IDF vectors built pairwise over the two texts' n-grams
(n from 1 up to the longer text's word count), with raw-count term
frequency and smoothed IDF ln((1+2)/(1+df)) + 1 over the two-document
corpus, so shared terms keep a nonzero weight.
"""

import json
import math
import re
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import AlignmentError, ConceptError, IntegrityError, ParseError, ShapeError

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text):
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


def _ngram_counts(tokens, max_n):
    counts = Counter()
    for n in range(1, max_n + 1):
        for i in range(len(tokens) - n + 1):
            counts[tuple(tokens[i : i + n])] += 1
    return counts


def pairwise_similarity(a, b):
    """TF-IDF cosine similarity of two concept texts, in [0, 1]."""
    ta = tokenize(a)
    tb = tokenize(b)
    if not ta or not tb:
        raise ConceptError(f"concept text tokenizes to nothing: {(a if not ta else b)!r}")
    max_n = max(len(ta), len(tb))
    ca = _ngram_counts(ta, max_n)
    cb = _ngram_counts(tb, max_n)
    if ca == cb:
        return 1.0
    # df is 1 or 2 over the two-document corpus; idf = ln(3/(1+df)) + 1
    idf_shared = math.log(3.0 / 3.0) + 1.0
    idf_unique = math.log(3.0 / 2.0) + 1.0

    def sq_norm(counts, other):
        total = 0.0
        for term in sorted(counts):
            w = counts[term] * (idf_shared if term in other else idf_unique)
            total += w * w
        return total

    # Sorted iteration keeps the accumulation order canonical, so the
    # similarity is exactly symmetric in its arguments.
    dot = 0.0
    for term in sorted(t for t in ca if t in cb):
        dot += (ca[term] * idf_shared) * (cb[term] * idf_shared)
    sim = dot / math.sqrt(sq_norm(ca, cb) * sq_norm(cb, ca))
    return min(max(sim, 0.0), 1.0)


@dataclass
class Concept:
    id: int
    text: str
    origin_class: str
    embedding: "np.ndarray | None" = None


@dataclass
class InsertDecision:
    """Outcome for one submitted concept: added to the pool or replaced
    by an existing near-duplicate."""

    action: str  # "added" | "replaced"
    concept_id: int


@dataclass
class ConceptPool:
    tau: float = 0.5
    k: int = 3
    concepts: list = field(default_factory=list)
    class_map: dict = field(default_factory=dict)

    @property
    def size(self):
        return len(self.concepts)

    def feature_matrix(self):
        """All concept embeddings stacked in id order, shape (N, D)."""
        if any(c.embedding is None for c in self.concepts):
            raise AlignmentError("pool has concepts without embeddings")
        if not self.concepts:
            raise AlignmentError("pool is empty")
        return np.stack([c.embedding for c in self.concepts]).astype(np.float64)

    def concept_ids(self, class_name):
        return sorted(self.class_map[class_name])


def filter_and_insert(pool, class_name, new_concepts):
    """Ingest one class's concepts, deduplicating against the whole pool.

    Concepts are processed in input order and each one is also compared
    against concepts added earlier in the same call, so a class cannot
    introduce near-duplicates of itself. Returns one InsertDecision per
    input text.
    """
    if class_name in pool.class_map:
        raise ConceptError(f"class {class_name!r} was already ingested")
    if len(new_concepts) > pool.k:
        raise ConceptError(
            f"class {class_name!r} submitted {len(new_concepts)} concepts, pool accepts k={pool.k}"
        )
    decisions = []
    ids = set()
    for text in new_concepts:
        if not tokenize(text):
            raise ConceptError(f"class {class_name!r}: concept text tokenizes to nothing: {text!r}")
        best_id = -1
        best_sim = -1.0
        for concept in pool.concepts:
            sim = pairwise_similarity(text, concept.text)
            if sim > best_sim:
                best_sim = sim
                best_id = concept.id
        if best_id >= 0 and best_sim >= pool.tau:
            decisions.append(InsertDecision("replaced", best_id))
            ids.add(best_id)
        else:
            new_id = len(pool.concepts)
            pool.concepts.append(Concept(new_id, text, class_name))
            decisions.append(InsertDecision("added", new_id))
            ids.add(new_id)
    pool.class_map[class_name] = ids
    return decisions


def attach_embeddings(pool, embeddings):
    """Attach one embedding row per concept, in pool id order."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2:
        raise ShapeError(f"embeddings must be 2-D, got shape {embeddings.shape}")
    if embeddings.shape[0] != pool.size:
        raise AlignmentError(
            f"embedding rows ({embeddings.shape[0]}) do not match pool size ({pool.size})"
        )
    for concept, row in zip(pool.concepts, embeddings):
        concept.embedding = np.ascontiguousarray(row)
    return pool


def save_pool(pool, path):
    doc = {
        "version": 1,
        "tau": pool.tau,
        "k": pool.k,
        "concepts": [
            {"id": c.id, "text": c.text, "origin_class": c.origin_class}
            for c in pool.concepts
        ],
        "class_map": {name: sorted(ids) for name, ids in pool.class_map.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def load_pool(path):
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    for key in ("version", "tau", "k", "concepts", "class_map"):
        if key not in doc:
            raise ParseError(f"{path}: missing field {key!r}")
    if doc["version"] != 1:
        raise ParseError(f"{path}: unsupported version {doc['version']!r}")
    pool = ConceptPool(tau=float(doc["tau"]), k=int(doc["k"]))
    for i, entry in enumerate(doc["concepts"]):
        for key in ("id", "text", "origin_class"):
            if key not in entry:
                raise ParseError(f"{path}: concepts[{i}] missing field {key!r}")
        if entry["id"] != i:
            raise IntegrityError(f"{path}: concepts[{i}] has id {entry['id']}, expected {i}")
        if not tokenize(entry["text"]):
            raise IntegrityError(f"{path}: concepts[{i}] text tokenizes to nothing")
        pool.concepts.append(Concept(i, entry["text"], entry["origin_class"]))
    for name, ids in doc["class_map"].items():
        for cid in ids:
            if not isinstance(cid, int) or not 0 <= cid < pool.size:
                raise IntegrityError(f"{path}: class_map[{name!r}] references unknown concept id {cid}")
        pool.class_map[name] = set(ids)
    return pool
