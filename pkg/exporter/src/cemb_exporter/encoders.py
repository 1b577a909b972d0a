"""Frozen encoders mapping images / texts to embedding rows.

Two implementations:

- ``hash``: a deterministic offline featurizer (content hash seeds a
  Gaussian vector). No model weights, no network; useful for pipeline
  tests and schema plumbing.
- ``clip-vit-b16``: the real vision-language backbone via transformers,
  loaded lazily so the package works without torch installed.
"""

import hashlib

import numpy as np

from . import ExporterError

DEFAULT_CLIP = "openai/clip-vit-base-patch16"


class HashEncoder:
    """Deterministic stand-in encoder: sha256(content) seeds the vector."""

    name = "hash"

    def __init__(self, dim=512):
        self.dim = dim

    def _vector(self, payload):
        digest = hashlib.sha256(payload).digest()
        seed = np.frombuffer(digest, dtype=np.uint32)
        vec = np.random.default_rng(seed).standard_normal(self.dim)
        return vec / np.linalg.norm(vec)

    def encode_image(self, image):
        return self._vector(image.tobytes())

    def encode_texts(self, texts):
        return np.stack([self._vector(t.encode("utf-8")) for t in texts])


class ClipEncoder:
    """CLIP image/text towers with frozen weights."""

    name = "clip-vit-b16"

    def __init__(self, model_name=DEFAULT_CLIP):
        try:
            import torch
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise ExporterError(
                "the clip encoder needs the optional [clip] extra (torch + transformers)"
            ) from exc
        self._torch = torch
        self.model = CLIPModel.from_pretrained(model_name).eval()
        self.processor = CLIPProcessor.from_pretrained(model_name)
        self.dim = self.model.config.projection_dim

    def encode_image(self, image):
        inputs = self.processor(images=image, return_tensors="pt")
        with self._torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return feats[0].numpy().astype(np.float64)

    def encode_texts(self, texts):
        inputs = self.processor(text=list(texts), return_tensors="pt", padding=True)
        with self._torch.no_grad():
            feats = self.model.get_text_features(**inputs)
        return feats.numpy().astype(np.float64)


def get_encoder(name, dim=512):
    if name == "hash":
        return HashEncoder(dim)
    if name in ("clip-vit-b16", DEFAULT_CLIP):
        return ClipEncoder()
    raise ExporterError(f"unknown encoder {name!r} (expected 'hash' or 'clip-vit-b16')")
