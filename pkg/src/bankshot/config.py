"""Experiment configuration: one declarative JSON file plus dotted overrides.

Schema (all fields optional except ``bank``; defaults shown):

    {
      "bank": "path/to/bank.sgvb",
      "scenario": "base_classes",          // base_classes | no_base_classes | all_class
      "seed": 0,
      "sampling": {"n_way": 5, "k_shot": 1, "queries_per_class": 15,
                   "episodes_per_epoch": 20},
      "all_class": {"shots": 1},
      "optim": {"lr": 0.002, "momentum": 0.9, "weight_decay": 0.0005,
                "epochs": 5, "lr_schedule": "cosine"},
      "adapter": {"enabled": true, "hidden_dim": 64, "mix_init": [0.2, 0.8]},
      "prompt": {"length": 4, "shot_specific": true, "learnable": true},
      "loss": {"cross_modal": true, "vision": true, "distillation": true,
               "variant": "implicit", "kd_temperature": 5.0},
      "inference_mode": "fused_nb",
      "eval": {"episode_count": 600, "n_way": 5, "k_shot": 1,
               "queries_per_class": 15},
      "val_episodes": 0
    }

Overrides use dotted paths, e.g. ``--set loss.distillation=false`` or
``--set optim.lr=0.01``; values parse as JSON literals with a plain-string
fallback.
"""
from __future__ import annotations

import copy
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .bank import EmbeddingBank
from .errors import ConfigError
from .infer import MODES as INFERENCE_MODES
from .optim import OptimConfig

SCENARIOS = ("base_classes", "no_base_classes", "all_class")


@dataclass(frozen=True)
class SamplingSection:
    n_way: int = 5
    k_shot: int = 1
    queries_per_class: int = 15
    episodes_per_epoch: int = 20


@dataclass(frozen=True)
class EvalSection:
    episode_count: int = 600
    n_way: int = 5
    k_shot: int = 1
    queries_per_class: int = 15


@dataclass(frozen=True)
class AdapterSection:
    enabled: bool = True
    hidden_dim: int = 64
    mix_init: tuple[float, float] = (0.2, 0.8)


@dataclass(frozen=True)
class PromptSection:
    length: int = 4
    shot_specific: bool = True
    learnable: bool = True


@dataclass(frozen=True)
class LossSection:
    cross_modal: bool = True
    vision: bool = True
    distillation: bool = True
    variant: str = "implicit"  # or "direct"
    kd_temperature: float = 5.0


@dataclass(frozen=True)
class AllClassSection:
    shots: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    bank: str
    scenario: str = "base_classes"
    seed: int = 0
    sampling: SamplingSection = field(default_factory=SamplingSection)
    all_class: AllClassSection = field(default_factory=AllClassSection)
    optim: OptimConfig = field(default_factory=OptimConfig)
    adapter: AdapterSection = field(default_factory=AdapterSection)
    prompt: PromptSection = field(default_factory=PromptSection)
    loss: LossSection = field(default_factory=LossSection)
    inference_mode: str = "fused_nb"
    eval: EvalSection = field(default_factory=EvalSection)
    val_episodes: int = 0

    # -- construction -------------------------------------------------------

    @staticmethod
    def from_dict(raw: dict) -> "ExperimentConfig":
        raw = copy.deepcopy(raw)
        if "bank" not in raw:
            raise ConfigError("config: missing required field 'bank'")

        def section(cls, key):
            data = raw.pop(key, {})
            if not isinstance(data, dict):
                raise ConfigError(f"config: section '{key}' must be an object")
            known = {f for f in cls.__dataclass_fields__}
            bad = set(data) - known
            if bad:
                raise ConfigError(f"config: unknown keys in '{key}': {sorted(bad)}")
            if "mix_init" in data:
                data["mix_init"] = tuple(data["mix_init"])
            return cls(**data)

        cfg = ExperimentConfig(
            bank=str(raw.pop("bank")),
            scenario=raw.pop("scenario", "base_classes"),
            seed=int(raw.pop("seed", 0)),
            sampling=section(SamplingSection, "sampling"),
            all_class=section(AllClassSection, "all_class"),
            optim=section(OptimConfig, "optim"),
            adapter=section(AdapterSection, "adapter"),
            prompt=section(PromptSection, "prompt"),
            loss=section(LossSection, "loss"),
            inference_mode=raw.pop("inference_mode", "fused_nb"),
            eval=section(EvalSection, "eval"),
            val_episodes=int(raw.pop("val_episodes", 0)),
        )
        if raw:
            raise ConfigError(f"config: unknown top-level keys {sorted(raw)}")
        cfg.validate()
        return cfg

    @staticmethod
    def load(path, overrides: list[str] | None = None) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for ov in overrides or []:
            apply_override(raw, ov)
        return ExperimentConfig.from_dict(raw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adapter"]["mix_init"] = list(d["adapter"]["mix_init"])
        return d

    def with_overrides(self, overrides: list[str]) -> "ExperimentConfig":
        raw = self.to_dict()
        for ov in overrides:
            apply_override(raw, ov)
        return ExperimentConfig.from_dict(raw)

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"unknown scenario {self.scenario!r}")
        if self.inference_mode not in INFERENCE_MODES:
            raise ConfigError(f"unknown inference mode {self.inference_mode!r}")
        if self.loss.variant not in ("implicit", "direct"):
            raise ConfigError(f"unknown distillation variant {self.loss.variant!r}")
        if self.loss.kd_temperature <= 0:
            raise ConfigError("kd_temperature must be positive")
        self.optim.validate()
        for name, val in (("sampling.n_way", self.sampling.n_way),
                          ("sampling.k_shot", self.sampling.k_shot),
                          ("eval.episode_count", self.eval.episode_count),
                          ("eval.n_way", self.eval.n_way),
                          ("eval.k_shot", self.eval.k_shot),
                          ("all_class.shots", self.all_class.shots),
                          ("prompt.length", self.prompt.length)):
            if int(val) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.adapter.enabled and self.adapter.hidden_dim < 1:
            raise ConfigError("adapter.hidden_dim must be >= 1")
        if self.scenario == "no_base_classes" and self.eval.k_shot != self.sampling.k_shot:
            raise ConfigError(
                "no_base_classes: eval.k_shot must match sampling.k_shot "
                "(the fixed labeled pool is the only supervision)")

    def prompt_blocks(self) -> int:
        """How many shot-specific prompt blocks a run needs."""
        if not self.prompt.shot_specific:
            return 1
        if self.scenario == "all_class":
            return self.all_class.shots
        return max(self.sampling.k_shot, self.eval.k_shot)

    def validate_with_bank(self, bank: EmbeddingBank) -> None:
        self.validate()
        if self.prompt.learnable and bank.text_encoder is None:
            raise ConfigError(
                "prompt.learnable requires a bank with a text encoder stub "
                "(this bank ships precomputed text embeddings)")
        if bank.text_encoder is not None and self.prompt.length != bank.text_encoder.prompt_len:
            raise ConfigError(
                f"prompt.length {self.prompt.length} != bank prompt_len "
                f"{bank.text_encoder.prompt_len}")
        if self.scenario == "all_class" and bank.sample_roles is None:
            raise ConfigError("all_class scenario needs a bank with a train/test partition")
        if self.scenario == "base_classes":
            if bank.class_split is None:
                raise ConfigError("base_classes scenario needs a bank with a class split")


def apply_override(raw: dict, override: str) -> None:
    """Apply one ``dotted.path=value`` override in place."""
    if "=" not in override:
        raise ConfigError(f"override {override!r} is not of the form key=value")
    path, _, text = override.partition("=")
    keys = [k for k in path.strip().split(".") if k]
    if not keys:
        raise ConfigError(f"override {override!r} has an empty key path")
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        value = text
    node = raw
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"override {override!r}: '{k}' is not a section")
    node[keys[-1]] = value
