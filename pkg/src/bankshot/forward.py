"""Differentiable episode forward pass: prototypes plus enabled loss terms."""
from __future__ import annotations

import torch

from .adapter import AdapterParams, adapt, embed_cross_visual, project_proxy
from .bank import EmbeddingBank
from .episodes import Episode
from .errors import ConfigError
from .infer import build_prototypes
from .losses import (cross_modal_contrastive, direct_distillation,
                     implicit_distillation, vision_contrastive)
from .ops import to_t
from .textpath import PromptSet


def episode_losses(bank: EmbeddingBank, episode: Episode,
                   adapter_params: AdapterParams | None,
                   prompts: PromptSet | None, *,
                   enable_cross_modal: bool = True,
                   enable_vision: bool = True,
                   enable_distillation: bool = True,
                   distillation_variant: str = "implicit",
                   kd_temperature: float = 5.0,
                   adapter_enabled: bool = True) -> dict[str, torch.Tensor]:
    """Compute the enabled loss terms on the episode's query batch.

    Returns a dict with any of {"cross_modal", "vision", "distillation"};
    each value is a differentiable scalar averaged over queries.
    """
    protos = build_prototypes(episode, bank, adapter_params, prompts, adapter_enabled)
    qfeats = to_t(bank.features[episode.query])
    labels = torch.from_numpy(episode.query_labels)
    components: dict[str, torch.Tensor] = {}
    cross_visual = embed_cross_visual(qfeats, bank)
    if enable_cross_modal:
        components["cross_modal"] = cross_modal_contrastive(
            cross_visual, protos.text, labels, bank.temperature)
    adapted = adapt(qfeats, adapter_params) if adapter_enabled else qfeats
    if enable_vision:
        components["vision"] = vision_contrastive(
            adapted, protos.vision, labels, bank.temperature)
    if enable_distillation:
        if distillation_variant == "implicit":
            proxy = project_proxy(adapted, bank)
            components["distillation"] = implicit_distillation(
                cross_visual, proxy, protos.text, bank.temperature, kd_temperature)
        elif distillation_variant == "direct":
            components["distillation"] = direct_distillation(
                cross_visual, adapted, protos.text, protos.vision,
                bank.temperature, kd_temperature)
        else:
            raise ConfigError(f"unknown distillation variant {distillation_variant!r}")
    return components


AUDIT_SELECTORS = ("cross_modal", "vision", "distillation_implicit", "distillation_direct")


def audit_closure(bank: EmbeddingBank, episode: Episode,
                  adapter_params: AdapterParams | None, prompts: PromptSet | None,
                  selector: str, *, kd_temperature: float = 5.0,
                  adapter_enabled: bool = True):
    """Zero-argument loss closure for the finite-difference audit.

    Branches the training objective treats as constants (the distillation
    teacher and its prototypes, per the stop-gradient contract) are frozen
    here at their current values, so numeric differentiation probes the same
    function the analytic gradient differentiates. Everything else is rebuilt
    on every call to observe in-place parameter perturbations.
    """
    if selector not in AUDIT_SELECTORS:
        raise ConfigError(f"unknown audit selector {selector!r}")
    qfeats = to_t(bank.features[episode.query])
    labels = torch.from_numpy(episode.query_labels)
    cross_visual = embed_cross_visual(qfeats, bank)

    def adapted_queries():
        return adapt(qfeats, adapter_params) if adapter_enabled else qfeats

    if selector == "cross_modal":
        def fn():
            protos = build_prototypes(episode, bank, adapter_params, prompts, adapter_enabled)
            return cross_modal_contrastive(cross_visual, protos.text, labels, bank.temperature)
        return fn
    if selector == "vision":
        def fn():
            protos = build_prototypes(episode, bank, adapter_params, prompts, adapter_enabled)
            return vision_contrastive(adapted_queries(), protos.vision, labels, bank.temperature)
        return fn
    with torch.no_grad():
        frozen = build_prototypes(episode, bank, adapter_params, prompts, adapter_enabled)
    if selector == "distillation_implicit":
        def fn():
            proxy = project_proxy(adapted_queries(), bank)
            return implicit_distillation(cross_visual, proxy, frozen.text,
                                         bank.temperature, kd_temperature)
        return fn

    def fn():
        return direct_distillation(cross_visual, adapted_queries(), frozen.text,
                                   frozen.vision, bank.temperature, kd_temperature)
    return fn
