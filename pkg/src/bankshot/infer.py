"""Prototype construction, similarity vectors, and fused prediction.

A query is scored against two prototype families: vision prototypes (class
means of adapted support features) and cross-modal text prototypes (class
means of the support samples' text-pathway embeddings). The 2N-dimensional
concatenation of both cosine-similarity vectors feeds the fused predictors;
single-space modes use one half.

The fused naive Bayes mode fits a per-dimension Gaussian model on the
support set's own similarity vectors: class-conditional means, one pooled
variance per dimension (floored at 1e-4). With one shot per class there is
no within-class spread, so the variance degenerates to 1 and the score
reduces to negative squared distance to the class mean vector.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .adapter import AdapterParams, adapt, embed_cross_visual
from .bank import EmbeddingBank
from .episodes import Episode
from .errors import ConfigError, ContractError
from .ops import l2_normalize, to_t
from .textpath import PromptSet, encode_support_text

MODES = ("fused_nb", "fused_logsum", "vision_only", "cross_modal_only")
NB_VAR_FLOOR = 1e-4


@dataclass
class PrototypeSet:
    """Per-class unit-norm prototypes, row order matching the episode roster."""

    class_ids: tuple[int, ...]
    vision: torch.Tensor  # [N, visual_dim]
    text: torch.Tensor    # [N, cross_dim]

    @property
    def n_way(self) -> int:
        return len(self.class_ids)


@dataclass
class Prediction:
    """Scores for one query. ``combined`` is [vision sims ‖ cross-modal sims]."""

    vision_sims: np.ndarray
    cross_sims: np.ndarray
    combined: np.ndarray
    class_scores: np.ndarray
    predicted: int
    mode: str


def build_prototypes(episode: Episode, bank: EmbeddingBank,
                     adapter_params: AdapterParams | None = None,
                     prompts: PromptSet | None = None,
                     adapter_enabled: bool = True) -> PrototypeSet:
    """Class prototypes from the episode's support set: means renormalized to
    unit length. Differentiable w.r.t. adapter and prompt parameters."""
    if episode.k_shot < 1:
        raise ContractError("prototypes need at least one support sample per class")
    sup = to_t(bank.features[episode.support])
    if adapter_enabled:
        if adapter_params is None:
            raise ConfigError("adapter enabled but no adapter parameters given")
        sup = adapt(sup, adapter_params)
    per_class = sup.reshape(episode.n_way, episode.k_shot, bank.visual_dim).mean(dim=1)
    vision = l2_normalize(per_class, dim=-1, what="vision prototype")
    text_all = encode_support_text(prompts, episode.class_ids, episode.k_shot, bank)
    text = l2_normalize(text_all.mean(dim=0), dim=-1, what="text prototype")
    return PrototypeSet(class_ids=episode.class_ids, vision=vision, text=text)


def similarity_matrix(features: torch.Tensor, protos: PrototypeSet,
                      bank: EmbeddingBank,
                      adapter_params: AdapterParams | None = None,
                      adapter_enabled: bool = True) -> torch.Tensor:
    """[B, 2N] similarity vectors for raw visual features (vision half first)."""
    feats = features if features.dim() == 2 else features.unsqueeze(0)
    adapted = adapt(feats, adapter_params) if adapter_enabled else feats
    vision_sims = l2_normalize(adapted, dim=-1, what="adapted feature") @ protos.vision.T
    cross_sims = embed_cross_visual(feats, bank) @ protos.text.T
    return torch.cat([vision_sims, cross_sims], dim=-1)


def similarity_vector(query_row: int, protos: PrototypeSet, bank: EmbeddingBank,
                      adapter_params: AdapterParams | None = None,
                      adapter_enabled: bool = True) -> np.ndarray:
    """Single-query convenience form of :func:`similarity_matrix`."""
    feats = to_t(bank.features[query_row]).unsqueeze(0)
    with torch.no_grad():
        sims = similarity_matrix(feats, protos, bank, adapter_params, adapter_enabled)
    return sims[0].numpy()


def _gaussian_nb_scores(query_d: np.ndarray, support_d: np.ndarray,
                        support_labels: np.ndarray, n_way: int) -> np.ndarray:
    dims = support_d.shape[1]
    means = np.zeros((n_way, dims))
    counts = np.zeros(n_way, dtype=np.int64)
    for k in range(n_way):
        rows = support_d[support_labels == k]
        if len(rows) == 0:
            raise ContractError(f"naive Bayes: class {k} has no support vectors")
        means[k] = rows.mean(axis=0)
        counts[k] = len(rows)
    dof = int(counts.sum()) - n_way
    if dof > 0:
        resid = support_d - means[support_labels]
        var = np.maximum((resid ** 2).sum(axis=0) / dof, NB_VAR_FLOOR)
    else:
        var = np.ones(dims)
    diff = query_d[:, None, :] - means[None, :, :]
    return -0.5 * ((diff ** 2) / var + np.log(2.0 * np.pi * var)).sum(axis=-1)


def predict(query_d: np.ndarray, mode: str, *, temperature: float | None = None,
            support_d: np.ndarray | None = None,
            support_labels: np.ndarray | None = None) -> Prediction:
    """Classify one query from its 2N-dim similarity vector."""
    scores = predict_scores(np.asarray(query_d, dtype=np.float64)[None, :], mode,
                            temperature=temperature, support_d=support_d,
                            support_labels=support_labels)[0]
    query_d = np.asarray(query_d, dtype=np.float64)
    n = query_d.shape[0] // 2
    return Prediction(vision_sims=query_d[:n], cross_sims=query_d[n:],
                      combined=query_d, class_scores=scores,
                      predicted=int(np.argmax(scores)), mode=mode)


def predict_scores(query_d: np.ndarray, mode: str, *, temperature: float | None = None,
                   support_d: np.ndarray | None = None,
                   support_labels: np.ndarray | None = None) -> np.ndarray:
    """[B, N] class scores for a batch of 2N-dim similarity vectors."""
    if mode not in MODES:
        raise ConfigError(f"unknown inference mode {mode!r}")
    query_d = np.asarray(query_d, dtype=np.float64)
    n = query_d.shape[1] // 2
    vision, cross = query_d[:, :n], query_d[:, n:]
    if mode == "vision_only":
        return vision.copy()
    if mode == "cross_modal_only":
        return cross.copy()
    if mode == "fused_logsum":
        if temperature is None:
            raise ConfigError("fused_logsum needs the bank temperature")
        return (_log_softmax(vision / temperature) + _log_softmax(cross / temperature))
    if support_d is None or support_labels is None:
        raise ConfigError("fused_nb needs the support set's similarity vectors")
    return _gaussian_nb_scores(query_d, np.asarray(support_d, dtype=np.float64),
                               np.asarray(support_labels), n)


def _log_softmax(x: np.ndarray) -> np.ndarray:
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def classify_episode(episode: Episode, bank: EmbeddingBank,
                     adapter_params: AdapterParams | None,
                     prompts: PromptSet | None,
                     modes=MODES, adapter_enabled: bool = True) -> dict:
    """Evaluate one episode in every requested mode in a single pass.

    Returns {"labels", "query_d", "predicted": {mode: [B]}, "accuracy": {mode: float}}.
    """
    with torch.no_grad():
        protos = build_prototypes(episode, bank, adapter_params, prompts, adapter_enabled)
        sup_d = similarity_matrix(to_t(bank.features[episode.support]), protos, bank,
                                  adapter_params, adapter_enabled).numpy()
        qry_d = similarity_matrix(to_t(bank.features[episode.query]), protos, bank,
                                  adapter_params, adapter_enabled).numpy()
    labels = episode.query_labels
    out = {"labels": labels, "query_d": qry_d, "support_d": sup_d,
           "predicted": {}, "accuracy": {}}
    for mode in modes:
        scores = predict_scores(qry_d, mode, temperature=bank.temperature,
                                support_d=sup_d, support_labels=episode.support_labels)
        pred = scores.argmax(axis=1)
        out["predicted"][mode] = pred
        out["accuracy"][mode] = float((pred == labels).mean())
    return out
