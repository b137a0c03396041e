"""Feature encoders backing an export.

An encoder supplies four things for a dataset: per-image pre-projection
visual features, the frozen projection into the cross-modal space,
per-class cross-modal text embeddings under the hand-crafted prompt, and
per-class name embeddings, plus the checkpoint's logit temperature.

``toy`` is a fully deterministic stand-in (seeded random maps over raw
pixels) used for format round-trips and tests: the zero-shot-preservation
property holds for any encoder, so it does not need a real model. ``clip``
requires locally available pretrained weights (``open_clip``) and is only
importable where those exist.
"""
from __future__ import annotations

import hashlib

import numpy as np
from PIL import Image

HAND_CRAFTED_PROMPT = "a photo of a"


class ToyEncoder:
    """Deterministic featurizer: 8x8 grayscale pixels through a fixed seeded
    two-layer map. Same file, same seed, same features, bit for bit."""

    def __init__(self, visual_dim=24, cross_dim=16, embed_dim=32, seed=0):
        self.visual_dim = visual_dim
        self.cross_dim = cross_dim
        self.embed_dim = embed_dim
        self.text_dim = embed_dim  # declared width of the (virtual) text features
        self.temperature = 0.07
        rng = np.random.default_rng(seed)
        self._w1 = rng.standard_normal((64, 2 * visual_dim)) / 8.0
        self._w2 = rng.standard_normal((2 * visual_dim, visual_dim)) / np.sqrt(2 * visual_dim)
        self.visual_proj = rng.standard_normal((visual_dim, cross_dim)) / np.sqrt(visual_dim)

    def encode_image(self, path) -> np.ndarray:
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("L").resize((8, 8)), dtype=np.float64)
        flat = (pixels.reshape(-1) / 255.0) - 0.5
        return np.tanh(flat @ self._w1) @ self._w2

    def _name_rng(self, name: str, tag: str) -> np.random.Generator:
        digest = hashlib.sha256(f"{tag}:{name}".encode()).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def class_name_embedding(self, name: str) -> np.ndarray:
        return self._name_rng(name, "name").standard_normal(self.embed_dim)

    def class_text_embedding(self, name: str) -> np.ndarray:
        # stands in for encoding f"{HAND_CRAFTED_PROMPT} {name}"
        vec = self._name_rng(name, f"text:{HAND_CRAFTED_PROMPT}").standard_normal(self.cross_dim)
        return vec / np.linalg.norm(vec)


class ClipEncoder:  # pragma: no cover - requires local pretrained weights
    """Real export path: pre-projection image features, the checkpoint's
    visual projection and logit temperature, and prompt text embeddings."""

    def __init__(self, model_tag="ViT-B-32", pretrained="openai"):
        try:
            import open_clip
            import torch
        except ImportError as exc:
            raise RuntimeError(
                "the clip encoder needs open_clip and locally available "
                "pretrained weights; use --encoder toy otherwise") from exc
        self._torch = torch
        model, _, preprocess = open_clip.create_model_and_transforms(
            model_tag, pretrained=pretrained)
        model.eval()
        self._model = model
        self._preprocess = preprocess
        self._tokenizer = open_clip.get_tokenizer(model_tag)
        self.visual_proj = model.visual.proj.detach().numpy().astype(np.float64)
        self.visual_dim, self.cross_dim = self.visual_proj.shape
        self.embed_dim = model.token_embedding.weight.shape[1]
        self.text_dim = self.embed_dim
        self.temperature = float(1.0 / model.logit_scale.exp())

    def encode_image(self, path) -> np.ndarray:
        torch = self._torch
        with Image.open(path) as img:
            batch = self._preprocess(img.convert("RGB")).unsqueeze(0)
        with torch.no_grad():
            # features before the cross-modal projection
            feats = self._model.visual.forward_features(batch)
        return feats[0].numpy().astype(np.float64)

    def class_name_embedding(self, name: str) -> np.ndarray:
        torch = self._torch
        tokens = self._tokenizer([name])
        with torch.no_grad():
            emb = self._model.token_embedding(tokens)[0]
        return emb.mean(dim=0).numpy().astype(np.float64)

    def class_text_embedding(self, name: str) -> np.ndarray:
        torch = self._torch
        tokens = self._tokenizer([f"{HAND_CRAFTED_PROMPT} {name}"])
        with torch.no_grad():
            emb = self._model.encode_text(tokens)[0].numpy().astype(np.float64)
        return emb / np.linalg.norm(emb)


ENCODERS = {"toy": ToyEncoder, "clip": ClipEncoder}
