"""The visual adapting layer: a two-layer MLP with an adaptive residual mix.

The adapter maps frozen visual features to adapted features of the same
width, so the mixed output stays in the original feature space. Projecting
an adapted feature through the bank's frozen visual projection yields its
proxy in the cross-modal space; gradients flow through the projection to the
adapter, the projection itself is never updated.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .bank import EmbeddingBank
from .errors import ShapeError
from .ops import l2_normalize, to_t

DEFAULT_MIX_INIT = (0.2, 0.8)  # near identity but with live gradient into the MLP


@dataclass
class AdapterParams:
    w1: torch.Tensor   # [visual_dim, hidden]
    w2: torch.Tensor   # [hidden, visual_dim]
    mix: torch.Tensor  # [2]: mix[0] scales the MLP branch, mix[1] the input

    @property
    def visual_dim(self) -> int:
        return int(self.w1.shape[0])

    @property
    def hidden_dim(self) -> int:
        return int(self.w1.shape[1])

    def clone(self) -> "AdapterParams":
        out = AdapterParams(self.w1.detach().clone(), self.w2.detach().clone(),
                            self.mix.detach().clone())
        for src, dst in ((self.w1, out.w1), (self.w2, out.w2), (self.mix, out.mix)):
            dst.requires_grad_(src.requires_grad)
        return out


def init_adapter(visual_dim: int, hidden_dim: int, seed: int,
                 mix_init=DEFAULT_MIX_INIT) -> AdapterParams:
    """Fan-in-scaled uniform init for both layers, no biases."""
    rng = np.random.default_rng(seed)
    a1 = 1.0 / np.sqrt(visual_dim)
    a2 = 1.0 / np.sqrt(hidden_dim)
    w1 = torch.from_numpy(rng.uniform(-a1, a1, size=(visual_dim, hidden_dim)))
    w2 = torch.from_numpy(rng.uniform(-a2, a2, size=(hidden_dim, visual_dim)))
    mix = torch.tensor([float(mix_init[0]), float(mix_init[1])], dtype=torch.float64)
    for t in (w1, w2, mix):
        t.requires_grad_(True)
    return AdapterParams(w1=w1, w2=w2, mix=mix)


def adapt(visual: torch.Tensor, params: AdapterParams) -> torch.Tensor:
    """Adapted feature: mix[0] * ReLU(x W1) W2 + mix[1] * x.

    Accepts a single vector or a batch; the input is treated as a constant
    (frozen upstream), only the adapter parameters carry gradients.
    """
    if visual.shape[-1] != params.visual_dim:
        raise ShapeError(
            f"adapt: input width {visual.shape[-1]} != adapter width {params.visual_dim}")
    new_feat = torch.relu(visual @ params.w1) @ params.w2
    return params.mix[0] * new_feat + params.mix[1] * visual


def project_proxy(adapted: torch.Tensor, bank: EmbeddingBank) -> torch.Tensor:
    """Map adapted features into the cross-modal space, unit-normalized.

    The projection weights are frozen; gradients pass through them into the
    adapter output.
    """
    if adapted.shape[-1] != bank.visual_dim:
        raise ShapeError(
            f"project_proxy: input width {adapted.shape[-1]} != bank visual_dim {bank.visual_dim}")
    return l2_normalize(adapted @ to_t(bank.visual_proj), dim=-1, what="cross-modal proxy")


def embed_cross_visual(visual: torch.Tensor, bank: EmbeddingBank) -> torch.Tensor:
    """Frozen cross-modal visual embedding, unit-normalized; constant w.r.t.
    every learnable parameter."""
    if visual.shape[-1] != bank.visual_dim:
        raise ShapeError(
            f"embed_cross_visual: input width {visual.shape[-1]} != bank visual_dim "
            f"{bank.visual_dim}")
    out = visual.detach() @ to_t(bank.visual_proj)
    return l2_normalize(out, dim=-1, what="cross-modal visual embedding")
