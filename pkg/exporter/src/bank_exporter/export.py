"""Folder scan, feature extraction, zero-shot reference, bank assembly.

The dataset layout is one subdirectory per class, images inside. The
exporter also computes its own zero-shot predictions (cosine argmax of the
projected image features against the class text embeddings); a correct
export makes the consumer's cross-modal prediction reproduce them exactly,
because normalization preserves the cosine argmax.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .sgvb import write_bank

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif")
EVAL_MODES = ("holdout", "zeroshot")


class ExportError(Exception):
    pass


@dataclass(frozen=True)
class ExportManifest:
    """What to export and how.

    ``eval_mode`` picks the train/test partition written into the bank:
    ``holdout`` marks the first image of each class as the labeled (train)
    sample and the rest as test; ``zeroshot`` instead adds one duplicated
    anchor per class as the train sample so that every real image lands in
    the test partition (cross-modal predictions ignore the support set on
    precomputed-text banks, so the anchors carry no information).

    Features from float32 checkpoints are widened to float64 on write; the
    bank format is binary64 throughout.
    """

    images_dir: str
    out_path: str
    encoder: str = "toy"
    eval_mode: str = "holdout"
    seed: int = 0
    encoder_options: dict = field(default_factory=dict)
    expect_dims: dict | None = None  # {"visual": ..., "cross": ...}: abort on mismatch

    def validate(self) -> None:
        if self.eval_mode not in EVAL_MODES:
            raise ExportError(f"unknown eval_mode {self.eval_mode!r}")
        if not Path(self.images_dir).is_dir():
            raise ExportError(f"images_dir {self.images_dir} is not a directory")


def scan_folder(images_dir) -> list[tuple[str, list[Path]]]:
    root = Path(images_dir)
    classes = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        files = sorted(f for f in sub.iterdir()
                       if f.suffix.lower() in IMAGE_SUFFIXES)
        if files:
            classes.append((sub.name, files))
    if len(classes) < 2:
        raise ExportError(f"{images_dir}: need at least two classes with images")
    return classes


def export(manifest: ExportManifest) -> dict:
    """Run the export; returns the zero-shot reference predictions
    {sample_id: class_id} computed independently of the consumer."""
    from .encoders import ENCODERS

    manifest.validate()
    encoder_cls = ENCODERS.get(manifest.encoder)
    if encoder_cls is None:
        raise ExportError(f"unknown encoder {manifest.encoder!r}")
    options = dict(manifest.encoder_options)
    if manifest.encoder == "toy":
        options.setdefault("seed", manifest.seed)
    enc = encoder_cls(**options)

    if manifest.expect_dims is not None:
        for key, attr in (("visual", "visual_dim"), ("cross", "cross_dim")):
            want = manifest.expect_dims.get(key)
            if want is not None and int(want) != getattr(enc, attr):
                raise ExportError(
                    f"manifest expects {key} dim {want}, encoder provides "
                    f"{getattr(enc, attr)}; aborting before write")

    layout = scan_folder(manifest.images_dir)
    class_names = [name for name, _ in layout]
    class_embeddings = np.stack([enc.class_name_embedding(n) for n in class_names])
    class_text = np.stack([enc.class_text_embedding(n) for n in class_names])

    sample_ids: list[str] = []
    sample_classes: list[int] = []
    sample_roles: list[str] = []
    features: list[np.ndarray] = []
    for cid, (name, files) in enumerate(layout):
        for j, path in enumerate(files):
            feat = enc.encode_image(path)
            sample_ids.append(f"{name}/{path.name}")
            sample_classes.append(cid)
            features.append(feat)
            if manifest.eval_mode == "holdout":
                sample_roles.append("train" if j == 0 else "test")
            else:
                sample_roles.append("test")
        if manifest.eval_mode == "zeroshot":
            # duplicated anchor keeps the train partition non-empty while the
            # full image set stays in the test partition
            sample_ids.append(f"{name}/{files[0].name}#anchor")
            sample_classes.append(cid)
            sample_roles.append("train")
            features.append(features[-len(files)])

    feature_mat = np.stack(features)

    write_bank(
        manifest.out_path,
        dims={"visual": enc.visual_dim, "text": enc.text_dim,
              "cross": enc.cross_dim, "class_emb": enc.embed_dim},
        temperature=enc.temperature,
        classes=[{"id": cid, "name": name, "split": None}
                 for cid, name in enumerate(class_names)],
        sample_ids=sample_ids, sample_classes=sample_classes,
        sample_roles=sample_roles,
        class_embeddings=class_embeddings, samples=feature_mat,
        visual_proj=enc.visual_proj, class_text_embeddings=class_text,
    )

    # reference zero-shot argmax over the projected, normalized features
    projected = feature_mat @ enc.visual_proj
    projected /= np.linalg.norm(projected, axis=1, keepdims=True)
    text = class_text / np.linalg.norm(class_text, axis=1, keepdims=True)
    argmax = (projected @ text.T).argmax(axis=1)
    return {sid: int(k) for sid, k in zip(sample_ids, argmax)}


def write_reference(reference: dict, path) -> None:
    Path(path).write_text(json.dumps(reference, indent=2, sort_keys=True) + "\n")
