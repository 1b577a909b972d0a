"""The trainable fusion head.

Image features query a cross-attention over concept-text features:

    img_norm   = LN(image_feats)           cpt_norm = LN(concept_feats)
    query      = img_norm @ query_w        key/value = cpt_norm @ key_w / value_w
    attn       = softmax(query @ key.T / sqrt(D))
    fused      = attn @ value
    fused_proj = fused @ out_w

Two linear classifiers produce logits: the image head consumes the raw
image features, the auxiliary head consumes fused_proj. Training
combines both cross-entropies with an attention loss that pushes each
sample's attention mass onto its class's own concepts; inference blends
the two heads' logits with the same weight used in the objective.

Single attention head, no residual, no feed-forward block. The backward
pass is an explicit composition of the hand-derived op gradients from
:mod:`conceptcil.autodiff`.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff
from .autodiff import DEFAULT_LAYERNORM_EPS, ParamTensor
from .data import read_embeddings, write_embeddings
from .errors import ConfigError, ParseError, RangeError, ShapeError

CLASSIFIER_INIT_STD = 0.02
PROJECTION_INIT_STD = 0.02
ATTENTION_FLOOR = 1e-12

# Checkpoint serialization order; also the optimizer's parameter order.
_TENSOR_NAMES = (
    "query_w",
    "key_w",
    "value_w",
    "out_w",
    "ln_img_gain",
    "ln_img_shift",
    "ln_concept_gain",
    "ln_concept_shift",
    "head_w",
    "head_b",
    "aux_head_w",
    "aux_head_b",
)


class FusionParams:
    """All trainable tensors. Class count starts at 0 and only grows."""

    def __init__(self, dim, tensors, ln_eps=DEFAULT_LAYERNORM_EPS):
        self.dim = dim
        self.ln_eps = ln_eps
        for name in _TENSOR_NAMES:
            setattr(self, name, tensors[name])

    @classmethod
    def init(cls, dim, seed, ln_eps=DEFAULT_LAYERNORM_EPS):
        """Seeded init: projections start at identity plus small noise, so
        attention scores begin at the raw embedding-similarity structure;
        layernorms start as identity maps.

        Each projection draws from its own derived stream so the presence
        of one tensor never shifts another's initialization.
        """
        def proj(tag):
            rng = np.random.default_rng([seed, tag])
            return ParamTensor(np.eye(dim) + rng.normal(0.0, PROJECTION_INIT_STD, size=(dim, dim)))

        tensors = {
            "query_w": proj(10),
            "key_w": proj(11),
            "value_w": proj(12),
            "out_w": proj(13),
            "ln_img_gain": ParamTensor(np.ones((1, dim))),
            "ln_img_shift": ParamTensor(np.zeros((1, dim))),
            "ln_concept_gain": ParamTensor(np.ones((1, dim))),
            "ln_concept_shift": ParamTensor(np.zeros((1, dim))),
            "head_w": ParamTensor(np.zeros((dim, 0))),
            "head_b": ParamTensor(np.zeros((1, 0))),
            "aux_head_w": ParamTensor(np.zeros((dim, 0))),
            "aux_head_b": ParamTensor(np.zeros((1, 0))),
        }
        return cls(dim, tensors, ln_eps)

    @property
    def n_classes(self):
        return self.head_w.value.shape[1]

    def tensors(self):
        return [(name, getattr(self, name)) for name in _TENSOR_NAMES]

    def trainable(self, concept_branch=True):
        if concept_branch:
            return [t for _, t in self.tensors()]
        return [self.head_w, self.head_b]


def expand_classes(params, new_class_count, rng):
    """Grow both classifier heads; existing columns are preserved bitwise.

    New weight columns draw from the given generator (image head first,
    then the auxiliary head), new biases are zero.
    """
    current = params.n_classes
    if new_class_count <= current:
        raise RangeError(f"cannot shrink classifier from {current} to {new_class_count} classes")
    n_new = new_class_count - current
    for head_w, head_b in ((params.head_w, params.head_b), (params.aux_head_w, params.aux_head_b)):
        new_cols = rng.normal(0.0, CLASSIFIER_INIT_STD, size=(params.dim, n_new))
        head_w.value = np.ascontiguousarray(np.concatenate([head_w.value, new_cols], axis=1))
        head_w.grad = np.zeros_like(head_w.value)
        head_b.value = np.ascontiguousarray(
            np.concatenate([head_b.value, np.zeros((1, n_new))], axis=1)
        )
        head_b.grad = np.zeros_like(head_b.value)
    return params


@dataclass
class ForwardTrace:
    image_feats: np.ndarray
    attn: np.ndarray
    fused: np.ndarray
    fused_proj: np.ndarray
    logits_img: np.ndarray
    logits_aux: np.ndarray
    scale: float
    ln_img_cache: object
    ln_cpt_cache: object
    query_cache: object
    key_cache: object
    value_cache: object
    out_cache: object
    head_cache: object
    aux_cache: object
    key: np.ndarray
    value: np.ndarray
    query: np.ndarray


def forward(params, image_feats, concept_feats):
    """Full forward pass; the trace carries every backward cache."""
    image_feats = np.ascontiguousarray(image_feats, dtype=np.float64)
    concept_feats = np.ascontiguousarray(concept_feats, dtype=np.float64)
    if image_feats.ndim != 2 or image_feats.shape[1] != params.dim:
        raise ShapeError(f"image features shape {image_feats.shape} != (B, {params.dim})")
    if concept_feats.ndim != 2 or concept_feats.shape[1] != params.dim:
        raise ShapeError(f"concept features shape {concept_feats.shape} != (N, {params.dim})")
    if concept_feats.shape[0] < 1:
        raise ShapeError("need at least one concept feature row")

    img_norm, ln_img_cache = autodiff.layernorm_forward(
        image_feats, params.ln_img_gain, params.ln_img_shift, params.ln_eps
    )
    cpt_norm, ln_cpt_cache = autodiff.layernorm_forward(
        concept_feats, params.ln_concept_gain, params.ln_concept_shift, params.ln_eps
    )
    query, query_cache = autodiff.linear_forward(img_norm, params.query_w)
    key, key_cache = autodiff.linear_forward(cpt_norm, params.key_w)
    value, value_cache = autodiff.linear_forward(cpt_norm, params.value_w)
    scale = 1.0 / math.sqrt(params.dim)
    attn = autodiff.softmax_rows((query @ key.T) * scale)
    fused = attn @ value
    fused_proj, out_cache = autodiff.linear_forward(fused, params.out_w)
    logits_img, head_cache = autodiff.linear_forward(image_feats, params.head_w, params.head_b)
    logits_aux, aux_cache = autodiff.linear_forward(fused_proj, params.aux_head_w, params.aux_head_b)
    return ForwardTrace(
        image_feats=image_feats,
        attn=attn,
        fused=fused,
        fused_proj=fused_proj,
        logits_img=logits_img,
        logits_aux=logits_aux,
        scale=scale,
        ln_img_cache=ln_img_cache,
        ln_cpt_cache=ln_cpt_cache,
        query_cache=query_cache,
        key_cache=key_cache,
        value_cache=value_cache,
        out_cache=out_cache,
        head_cache=head_cache,
        aux_cache=aux_cache,
        key=key,
        value=value,
        query=query,
    )


def backward(params, trace, g_logits_img, g_logits_aux, g_attn=None):
    """Accumulate gradients for every trainable tensor.

    ``g_attn`` carries the attention-loss contribution; the auxiliary
    branch's own attention gradient is added here so both flow through a
    single softmax backward.
    """
    autodiff.linear_backward(trace.head_cache, g_logits_img)  # image feats are frozen inputs
    g_fused_proj = autodiff.linear_backward(trace.aux_cache, g_logits_aux)
    g_fused = autodiff.linear_backward(trace.out_cache, g_fused_proj)

    g_attn_total = g_fused @ trace.value.T
    if g_attn is not None:
        g_attn_total = g_attn_total + g_attn
    g_value = trace.attn.T @ g_fused
    g_scores = autodiff.softmax_backward(trace.attn, g_attn_total) * trace.scale
    g_query = g_scores @ trace.key
    g_key = g_scores.T @ trace.query

    g_img_norm = autodiff.linear_backward(trace.query_cache, g_query)
    g_cpt_norm = autodiff.linear_backward(trace.key_cache, g_key)
    g_cpt_norm = g_cpt_norm + autodiff.linear_backward(trace.value_cache, g_value)
    autodiff.layernorm_backward(trace.ln_img_cache, g_img_norm)
    autodiff.layernorm_backward(trace.ln_cpt_cache, g_cpt_norm)


def attention_loss(attn, concept_sets, include_mask=None, floor=ATTENTION_FLOOR):
    """Negative log attention mass on each sample's own concepts.

    Per sample the loss sums -log(attn_i) over the class's concept ids;
    the batch loss averages over participating samples (``include_mask``
    drops e.g. replayed rows when configured). A floor guards log(0).
    """
    n_rows, n_concepts = attn.shape
    if include_mask is None:
        include_mask = np.ones(n_rows, dtype=bool)
    n_included = int(include_mask.sum())
    grad = np.zeros_like(attn)
    if n_included == 0:
        return 0.0, grad
    total = 0.0
    for row in range(n_rows):
        if not include_mask[row]:
            continue
        ids = np.asarray(concept_sets[row], dtype=np.int64)
        if ids.size == 0:
            raise ConfigError(f"sample {row}: class has no concepts for the attention loss")
        if ids.min() < 0 or ids.max() >= n_concepts:
            raise ConfigError(
                f"sample {row}: concept id outside [0, {n_concepts})"
            )
        vals = attn[row, ids]
        clamped = np.maximum(vals, floor)
        total -= float(np.log(clamped).sum())
        grad[row, ids] = np.where(vals >= floor, -1.0 / clamped, 0.0)
    return total / n_included, grad / n_included


def composite_loss(params, trace, labels, concept_sets, alpha, lam, attn_mask=None):
    """Weighted objective: alpha*CE_img + (1-alpha)*CE_aux + lam*L_attn.

    Runs the full backward pass, accumulating into every ParamTensor.
    Returns (total, parts) where parts holds the unweighted components.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must be in [0, 1], got {alpha}")
    if lam < 0.0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    loss_ce, g_ce = autodiff.cross_entropy(trace.logits_img, labels)
    loss_aux, g_aux = autodiff.cross_entropy(trace.logits_aux, labels)
    if lam != 0.0:
        loss_attn, g_attn = attention_loss(trace.attn, concept_sets, attn_mask)
        g_attn_term = lam * g_attn
    else:
        loss_attn = 0.0
        g_attn_term = None
    total = alpha * loss_ce + (1.0 - alpha) * loss_aux + lam * loss_attn
    backward(params, trace, alpha * g_ce, (1.0 - alpha) * g_aux, g_attn_term)
    return total, {"ce": loss_ce, "aux": loss_aux, "attn": loss_attn}


def image_logits(params, image_feats):
    return image_feats @ params.head_w.value + params.head_b.value


def image_only_loss(params, image_feats, labels):
    """Plain cross-entropy on the image head (concept branch disabled)."""
    logits, cache = autodiff.linear_forward(image_feats, params.head_w, params.head_b)
    loss, grad = autodiff.cross_entropy(logits, labels)
    autodiff.linear_backward(cache, grad)
    return loss


def predict(params, image_feats, concept_feats, alpha):
    """Blend the two heads' logits and take the argmax.

    ``concept_feats=None`` selects the image head alone. Ties break
    toward the lower class index.
    """
    image_feats = np.ascontiguousarray(image_feats, dtype=np.float64)
    if concept_feats is None:
        final = image_logits(params, image_feats)
    else:
        trace = forward(params, image_feats, concept_feats)
        final = alpha * trace.logits_img + (1.0 - alpha) * trace.logits_aux
    return final, np.argmax(final, axis=1)


# --- checkpointing ----------------------------------------------------------


def save_checkpoint(directory, stem, params, concept_feats, class_order, task_index=None, infer_alpha=None):
    """Write <stem>.json + <stem>.cemb (all tensors flattened, float32)."""
    directory = Path(directory)
    entries = params.tensors()
    if concept_feats is None:
        concept_feats = np.zeros((0, params.dim))
    entries = entries + [("concept_features", None)]
    arrays = [t.value for _, t in entries[:-1]] + [np.asarray(concept_feats, dtype=np.float64)]
    manifest_tensors = []
    offset = 0
    for (name, _), arr in zip(entries, arrays):
        manifest_tensors.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.size
    flat = np.concatenate([a.reshape(-1) for a in arrays]) if offset else np.zeros(0)
    write_embeddings(directory / f"{stem}.cemb", flat.reshape(-1, 1))
    manifest = {
        "version": 1,
        "dim": params.dim,
        "n_classes": params.n_classes,
        "pool_size": int(arrays[-1].shape[0]),
        "class_order": [int(c) for c in class_order],
        "concept_branch": bool(arrays[-1].shape[0]),
        "ln_eps": params.ln_eps,
        "task_index": task_index,
        "infer_alpha": infer_alpha,
        "tensors": manifest_tensors,
        "embeddings_file": f"{stem}.cemb",
    }
    with open(directory / f"{stem}.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return directory / f"{stem}.json"


def load_checkpoint(manifest_path):
    """Read a checkpoint; returns (params, concept_feats|None, class_order, manifest)."""
    manifest_path = Path(manifest_path)
    with open(manifest_path, "r", encoding="utf-8") as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ParseError(f"{manifest_path}: invalid JSON at byte {exc.pos}: {exc.msg}") from exc
    for key in ("version", "dim", "tensors", "embeddings_file", "class_order", "ln_eps"):
        if key not in manifest:
            raise ParseError(f"{manifest_path}: missing field {key!r}")
    if manifest["version"] != 1:
        raise ParseError(f"{manifest_path}: unsupported version {manifest['version']!r}")
    flat = read_embeddings(manifest_path.parent / manifest["embeddings_file"]).reshape(-1)
    arrays = {}
    expected_offset = 0
    for entry in manifest["tensors"]:
        rows, cols = entry["shape"]
        if entry["offset"] != expected_offset:
            raise ParseError(
                f"{manifest_path}: tensor {entry['name']!r} offset {entry['offset']} != {expected_offset}"
            )
        arrays[entry["name"]] = flat[expected_offset : expected_offset + rows * cols].reshape(rows, cols)
        expected_offset += rows * cols
    if expected_offset != flat.size:
        raise ParseError(
            f"{manifest_path}: tensor shapes cover {expected_offset} scalars, file has {flat.size}"
        )
    missing = [n for n in _TENSOR_NAMES if n not in arrays]
    if missing or "concept_features" not in arrays:
        raise ParseError(f"{manifest_path}: missing tensors {missing or ['concept_features']}")
    tensors = {name: ParamTensor(arrays[name]) for name in _TENSOR_NAMES}
    params = FusionParams(int(manifest["dim"]), tensors, float(manifest["ln_eps"]))
    concept_feats = arrays["concept_features"]
    if concept_feats.shape[0] == 0:
        concept_feats = None
    return params, concept_feats, [int(c) for c in manifest["class_order"]], manifest
