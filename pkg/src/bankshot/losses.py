"""Training objectives: two contrastive losses, two distillation variants.

All losses are per-query cross-entropies averaged over the query batch, so
magnitudes do not depend on episode size. Softmax terms go through
log-sum-exp, keeping values finite for logit magnitudes up to 1e4.

Gradient flow is part of each loss's contract:

* cross-modal contrastive: gradients reach the prompt vectors only (the
  query-side embedding is frozen, the prototypes depend on prompts);
* vision contrastive: gradients reach the adapter through both the query
  feature and the prototypes;
* distillation (either variant): the teacher distribution and the
  prototypes are constants, gradients reach the adapter through the student
  side only.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import torch

from .errors import ContractError
from .ops import l2_normalize

UNIT_NORM_TOL = 1e-8


def _check_unit(name: str, t: torch.Tensor) -> None:
    norms = torch.linalg.vector_norm(t.detach(), dim=-1)
    worst = float((norms - 1.0).abs().max())
    if worst > UNIT_NORM_TOL:
        raise ContractError(f"{name}: expected unit-norm rows, worst deviation {worst:.3e}")


def _as_batch(t: torch.Tensor) -> torch.Tensor:
    return t.unsqueeze(0) if t.dim() == 1 else t


def softmax_cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean negative log-softmax of the true entries. ``logits``: [B, N]."""
    logp = torch.log_softmax(logits, dim=-1)
    return -logp[torch.arange(logits.shape[0]), labels].mean()


def cross_modal_contrastive(cross_visual: torch.Tensor, text_protos: torch.Tensor,
                            labels, temperature: float) -> torch.Tensor:
    """Cross-entropy over query-to-text-prototype cosine similarities."""
    cross_visual = _as_batch(cross_visual)
    _check_unit("cross_visual", cross_visual)
    _check_unit("text_protos", text_protos)
    labels = torch.as_tensor(labels, dtype=torch.int64).reshape(-1)
    logits = (cross_visual @ text_protos.T) / temperature
    return softmax_cross_entropy(logits, labels)


def vision_contrastive(adapted: torch.Tensor, vision_protos: torch.Tensor,
                       labels, temperature: float) -> torch.Tensor:
    """Cross-entropy over adapted-feature-to-vision-prototype cosines.

    ``adapted`` is the raw adapter output; it is renormalized here so the
    similarity is a true cosine.
    """
    adapted = _as_batch(adapted)
    _check_unit("vision_protos", vision_protos)
    labels = torch.as_tensor(labels, dtype=torch.int64).reshape(-1)
    logits = (l2_normalize(adapted, dim=-1, what="adapted feature") @ vision_protos.T) / temperature
    return softmax_cross_entropy(logits, labels)


def soft_cross_entropy(teacher_logits: torch.Tensor, student_logits: torch.Tensor,
                       kd_temperature: float) -> torch.Tensor:
    """Cross-entropy of the softened student under the softened teacher.

    The teacher side is detached: it is a supervision signal, never a
    gradient target. Equals the teacher entropy exactly when the softened
    distributions coincide.
    """
    if kd_temperature <= 0:
        raise ContractError("kd_temperature must be positive")
    tea = torch.softmax(teacher_logits.detach() / kd_temperature, dim=-1)
    log_stu = torch.log_softmax(student_logits / kd_temperature, dim=-1)
    return -(tea * log_stu).sum(dim=-1).mean()


def implicit_distillation(cross_visual: torch.Tensor, proxy: torch.Tensor,
                          text_protos: torch.Tensor, temperature: float,
                          kd_temperature: float) -> torch.Tensor:
    """Match the proxy's prototype-similarity distribution to the frozen
    cross-modal one, inside the cross-modal space."""
    cross_visual = _as_batch(cross_visual)
    proxy = _as_batch(proxy)
    _check_unit("cross_visual", cross_visual)
    _check_unit("proxy", proxy)
    _check_unit("text_protos", text_protos)
    protos = text_protos.detach()
    teacher = (cross_visual.detach() @ protos.T) / temperature
    student = (proxy @ protos.T) / temperature
    return soft_cross_entropy(teacher, student, kd_temperature)


def direct_distillation(cross_visual: torch.Tensor, adapted: torch.Tensor,
                        text_protos: torch.Tensor, vision_protos: torch.Tensor,
                        temperature: float, kd_temperature: float) -> torch.Tensor:
    """Baseline variant: KL between cross-modal relations (teacher) and
    vision-space relations (student), across the two spaces."""
    if kd_temperature <= 0:
        raise ContractError("kd_temperature must be positive")
    cross_visual = _as_batch(cross_visual)
    adapted = _as_batch(adapted)
    _check_unit("cross_visual", cross_visual)
    _check_unit("text_protos", text_protos)
    _check_unit("vision_protos", vision_protos)
    teacher_logits = (cross_visual.detach() @ text_protos.detach().T) / temperature
    student_logits = (l2_normalize(adapted, dim=-1, what="adapted feature")
                      @ vision_protos.detach().T) / temperature
    log_tea = torch.log_softmax(teacher_logits / kd_temperature, dim=-1)
    log_stu = torch.log_softmax(student_logits / kd_temperature, dim=-1)
    tea = log_tea.exp()
    return (tea * (log_tea - log_stu)).sum(dim=-1).mean()


@dataclass
class LossBundle:
    """Component losses for one query batch plus parameter gradients."""

    cross_modal: float
    vision: float
    distillation: float
    total: float
    grads: dict[str, torch.Tensor] = field(default_factory=dict)

    @staticmethod
    def from_components(components: dict[str, torch.Tensor],
                        named_params: dict[str, torch.Tensor] | None = None,
                        retain_graph: bool = False) -> "LossBundle":
        """Sum the enabled terms, backpropagate once, collect gradients.

        ``components`` maps {"cross_modal", "vision", "distillation"} to loss
        tensors; absent terms count as zero.
        """
        total = total_loss(components)
        grads: dict[str, torch.Tensor] = {}
        if named_params:
            for p in named_params.values():
                if p.grad is not None:
                    p.grad = None
            if total.requires_grad:
                total.backward(retain_graph=retain_graph)
            for name, p in named_params.items():
                grads[name] = (p.grad.detach().clone() if p.grad is not None
                               else torch.zeros_like(p))
        def value(key):
            v = components.get(key)
            return float(v.detach()) if isinstance(v, torch.Tensor) else 0.0

        return LossBundle(
            cross_modal=value("cross_modal"),
            vision=value("vision"),
            distillation=value("distillation"),
            total=float(total.detach()),
            grads=grads,
        )


def total_loss(components: dict[str, torch.Tensor]) -> torch.Tensor:
    """Unweighted sum of the enabled terms."""
    terms = [v for v in components.values() if v is not None]
    if not terms:
        return torch.zeros((), dtype=torch.float64)
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out
