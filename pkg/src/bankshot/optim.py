"""Parameter registry, SGD-with-momentum updates, and the gradient audit.

Analytic gradients come from reverse-mode differentiation of the (small,
fixed) episode graph; finite differences exist here only as an audit tool,
never as a training mechanism. Frozen bank tensors are not registered, so
no update or decay can ever touch them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .adapter import AdapterParams
from .errors import NumericsError, ValidationError
from .tensorio import read_container, write_container
from .textpath import PromptSet

CHECKPOINT_MAGIC = b"SGVP"
CHECKPOINT_VERSION = 1


@dataclass
class ModelParams:
    """All learnable state: adapter weights and prompt vectors."""

    adapter: AdapterParams | None
    prompts: PromptSet | None
    step_count: int = 0

    def named(self, adapter_enabled: bool = True,
              prompts_learnable: bool = True) -> dict[str, torch.Tensor]:
        """Registry of tensors the optimizer may update."""
        out: dict[str, torch.Tensor] = {}
        if adapter_enabled and self.adapter is not None:
            out["adapter.w1"] = self.adapter.w1
            out["adapter.w2"] = self.adapter.w2
            out["adapter.mix"] = self.adapter.mix
        if prompts_learnable and self.prompts is not None:
            out["prompts"] = self.prompts.vectors
        return out

    def all_named(self) -> dict[str, torch.Tensor]:
        return self.named(adapter_enabled=self.adapter is not None,
                          prompts_learnable=self.prompts is not None)


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 2e-3
    momentum: float = 0.9
    weight_decay: float = 5e-4
    epochs: int = 5
    lr_schedule: str = "cosine"  # or "constant"

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValidationError("lr must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValidationError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be >= 0")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValidationError(f"unknown lr schedule {self.lr_schedule!r}")


def schedule_lr(cfg: OptimConfig, step: int, total_steps: int) -> float:
    if cfg.lr_schedule == "constant" or total_steps <= 1:
        return cfg.lr
    frac = min(max(step / max(total_steps - 1, 1), 0.0), 1.0)
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * frac))


def step(params: ModelParams, grads: dict[str, torch.Tensor], cfg: OptimConfig,
         velocity: dict[str, torch.Tensor], named: dict[str, torch.Tensor] | None = None,
         lr: float | None = None) -> None:
    """One SGD-with-momentum update, in place:

        v <- momentum * v + (grad + weight_decay * param)
        param <- param - lr * v
    """
    if named is None:
        named = params.all_named()
    lr = cfg.lr if lr is None else lr
    with torch.no_grad():
        for name, p in named.items():
            if name not in grads:
                raise ValidationError(f"step: missing gradient for '{name}'")
            g = grads[name]
            if g.shape != p.shape:
                raise ValidationError(f"step: gradient shape mismatch for '{name}'")
            if not torch.isfinite(g).all():
                raise NumericsError(f"step: non-finite gradient in '{name}'")
            v = velocity.get(name)
            if v is None:
                v = torch.zeros_like(p)
            v = cfg.momentum * v + (g + cfg.weight_decay * p)
            velocity[name] = v
            p -= lr * v
            if not torch.isfinite(p).all():
                raise NumericsError(f"step: non-finite parameter in '{name}' after update")
    params.step_count += 1


# -- gradient audit ----------------------------------------------------------


def finite_diff_audit(loss_fn, named_params: dict[str, torch.Tensor],
                      epsilon: float = 1e-5, coords_per_tensor: int = 200,
                      seed: int = 0) -> dict[str, dict]:
    """Central-difference audit of analytic gradients.

    ``loss_fn`` must rebuild the full forward pass on every call so that
    in-place parameter perturbations are observed. For each tensor a random
    subsample of coordinates is probed; the reported relative error is the
    worst absolute discrepancy normalized by the tensor's gradient scale
    (max |analytic| or |numeric| over the sampled coordinates). A tensor the
    loss does not depend on reports zero error: both sides vanish exactly.
    """
    if not 1e-6 <= epsilon <= 1e-4:
        raise ValidationError("epsilon must lie in [1e-6, 1e-4]")
    for p in named_params.values():
        p.grad = None
    loss = loss_fn()
    if loss.requires_grad:
        loss.backward()
    analytic = {name: (p.grad.detach().clone() if p.grad is not None else torch.zeros_like(p))
                for name, p in named_params.items()}
    rng = np.random.default_rng(seed)
    report: dict[str, dict] = {}
    for name, p in named_params.items():
        flat = p.data.reshape(-1)
        an = analytic[name].reshape(-1)
        n = flat.numel()
        count = min(coords_per_tensor, n)
        coords = rng.choice(n, size=count, replace=False) if count < n else np.arange(n)
        worst = 0.0
        scale = 0.0
        with torch.no_grad():
            for c in coords:
                c = int(c)
                orig = float(flat[c])
                flat[c] = orig + epsilon
                plus = float(loss_fn())
                flat[c] = orig - epsilon
                minus = float(loss_fn())
                flat[c] = orig
                fd = (plus - minus) / (2.0 * epsilon)
                err = abs(fd - float(an[c]))
                worst = max(worst, err)
                scale = max(scale, abs(fd), abs(float(an[c])))
        rel = worst / scale if scale > 0 else 0.0
        report[name] = {"max_rel_err": rel, "max_abs_err": worst,
                        "grad_scale": scale, "n_checked": int(count)}
    return report


# -- checkpoints ---------------------------------------------------------------


def save_checkpoint(path, params: ModelParams, velocity: dict[str, torch.Tensor]) -> None:
    meta = {
        "step_count": params.step_count,
        "has_adapter": params.adapter is not None,
        "prompt_len": params.prompts.length if params.prompts is not None else None,
    }
    tensors: dict[str, np.ndarray] = {}
    if params.adapter is not None:
        tensors["adapter.w1"] = params.adapter.w1.detach().numpy()
        tensors["adapter.w2"] = params.adapter.w2.detach().numpy()
        tensors["adapter.mix"] = params.adapter.mix.detach().numpy()
    if params.prompts is not None:
        tensors["prompts"] = params.prompts.vectors.detach().numpy()
    for name, v in velocity.items():
        tensors[f"velocity.{name}"] = v.detach().numpy()
    write_container(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, meta, tensors)


def load_checkpoint(path) -> tuple[ModelParams, dict[str, torch.Tensor]]:
    version, meta, tensors = read_container(path, CHECKPOINT_MAGIC)
    if version != CHECKPOINT_VERSION:
        raise ValidationError(f"unsupported checkpoint version {version}")

    def grad_tensor(name):
        t = torch.from_numpy(np.ascontiguousarray(tensors[name]))
        t.requires_grad_(True)
        return t

    adapter = None
    if meta.get("has_adapter"):
        adapter = AdapterParams(w1=grad_tensor("adapter.w1"),
                                w2=grad_tensor("adapter.w2"),
                                mix=grad_tensor("adapter.mix"))
    prompts = None
    if meta.get("prompt_len") is not None:
        prompts = PromptSet(length=int(meta["prompt_len"]), vectors=grad_tensor("prompts"))
    velocity = {name[len("velocity."):]: torch.from_numpy(np.ascontiguousarray(arr))
                for name, arr in tensors.items() if name.startswith("velocity.")}
    return ModelParams(adapter=adapter, prompts=prompts,
                       step_count=int(meta.get("step_count", 0))), velocity
