"""Small torch helpers shared by the differentiable pipeline.

All differentiable math runs in float64 on CPU; bank arrays are wrapped
zero-copy and never require gradients.
"""
from __future__ import annotations

import numpy as np
import torch

from .errors import DegenerateFeatureError

NORM_EPS = 1e-12


def to_t(arr: np.ndarray) -> torch.Tensor:
    """Frozen f64 view of a bank array (no gradient; shares memory when the
    input is already contiguous float64)."""
    return torch.from_numpy(np.ascontiguousarray(arr, dtype=np.float64))


def l2_normalize(t: torch.Tensor, dim: int = -1, what: str = "vector") -> torch.Tensor:
    """Unit-normalize along ``dim``; reject (near-)zero-norm inputs."""
    norms = torch.linalg.vector_norm(t, dim=dim, keepdim=True)
    if bool((norms < NORM_EPS).any()):
        raise DegenerateFeatureError(f"{what}: zero-norm input, cosine undefined")
    return t / norms
