"""Learnable shot-specific prompts and the frozen text pathway.

Each of the K shots in an episode owns one block of L continuous prompt
vectors, shared across classes. A text input is the concatenation of one
prompt block and a class-name embedding; the bank's frozen encoder maps it
to a text feature, which the frozen text projection takes into the
cross-modal space. Only the prompt vectors ever receive gradients.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .bank import EmbeddingBank
from .errors import ValidationError
from .ops import l2_normalize, to_t

PROMPT_INIT_STD = 0.02


@dataclass
class PromptSet:
    """K shot-specific prompt blocks of L learnable vectors each."""

    length: int
    vectors: torch.Tensor  # [K, L, embed_dim] f64

    @property
    def k(self) -> int:
        return int(self.vectors.shape[0])

    def clone(self) -> "PromptSet":
        out = PromptSet(self.length, self.vectors.detach().clone())
        out.vectors.requires_grad_(self.vectors.requires_grad)
        return out


def init_prompts(k: int, length: int, embed_dim: int, seed: int) -> PromptSet:
    """K independent prompt blocks drawn from Gaussian(0, 0.02^2)."""
    if k < 1 or length < 1 or embed_dim < 1:
        raise ValidationError("init_prompts: k, length, embed_dim must be positive")
    rng = np.random.default_rng(seed)
    vectors = torch.from_numpy(
        rng.normal(0.0, PROMPT_INIT_STD, size=(k, length, embed_dim)))
    vectors.requires_grad_(True)
    return PromptSet(length=length, vectors=vectors)


def _stub_forward(bank: EmbeddingBank, flat_inputs: torch.Tensor) -> torch.Tensor:
    enc = bank.text_encoder
    hidden = torch.tanh(flat_inputs @ to_t(enc.w1) + to_t(enc.b1))
    text_feat = hidden @ to_t(enc.w2) + to_t(enc.b2)
    return text_feat @ to_t(enc.text_proj)


def encode_text(prompts: PromptSet, shot_index: int, class_id: int,
                bank: EmbeddingBank) -> torch.Tensor:
    """Cross-modal text embedding for one (shot, class) pair, unit norm.

    Differentiable w.r.t. the prompt vectors; the encoder and projection are
    frozen bank state.
    """
    if bank.text_encoder is None:
        raise ValidationError("bank has precomputed text embeddings; no prompt pathway")
    if prompts.length != bank.text_encoder.prompt_len:
        raise ValidationError(
            f"prompt length {prompts.length} != bank prompt_len {bank.text_encoder.prompt_len}")
    if not 0 <= shot_index < prompts.k:
        raise IndexError(f"shot_index {shot_index} out of range for K={prompts.k}")
    row = bank.class_row(class_id)  # KeyError for unknown ids
    cls_emb = to_t(bank.class_embeddings[row])
    flat = torch.cat([prompts.vectors[shot_index].reshape(-1), cls_emb])
    out = _stub_forward(bank, flat.unsqueeze(0))[0]
    return l2_normalize(out, dim=-1, what="cross-modal text embedding")


def encode_support_text(prompts: PromptSet | None, class_ids, shots: int,
                        bank: EmbeddingBank) -> torch.Tensor:
    """Batch form used by prototype building: returns [shots, N, cross_dim]
    of unit-norm cross-modal text embeddings, shot j of class c at [j, c].

    On precomputed banks the prompt set is ignored and every shot of a class
    yields that class's stored embedding.
    """
    rows = [bank.class_row(cid) for cid in class_ids]
    if bank.text_encoder is None:
        fixed = l2_normalize(to_t(bank.class_text_embeddings[rows]), dim=-1,
                             what="class text embedding")
        return fixed.unsqueeze(0).expand(shots, len(rows), bank.cross_dim)
    if prompts is None:
        raise ValidationError("stub bank requires a prompt set")
    if shots > prompts.k:
        raise ValidationError(f"episode needs {shots} prompt blocks, prompt set has {prompts.k}")
    cls_emb = to_t(bank.class_embeddings[rows])            # [N, embed_dim]
    n = len(rows)
    blocks = prompts.vectors[:shots].reshape(shots, -1)    # [shots, L*embed_dim]
    flat = torch.cat([
        blocks.unsqueeze(1).expand(shots, n, blocks.shape[1]),
        cls_emb.unsqueeze(0).expand(shots, n, bank.embed_dim),
    ], dim=-1).reshape(shots * n, -1)
    out = _stub_forward(bank, flat).reshape(shots, n, bank.cross_dim)
    return l2_normalize(out, dim=-1, what="cross-modal text embedding")
