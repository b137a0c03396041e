"""Training and evaluation drivers, report emission, and ablation sweeps.

Every run is a pure function of (bank file, config): the root seed is split
into named child streams (adapter init, prompt init, labeled pool, training
episodes, evaluation episodes, all-class support), and all float math runs
single-threaded in f64, so identical inputs give identical reports. Reports
carry their own config echo and content hashes, enough to reproduce the run
exactly; wall time lives in a "volatile" section excluded from the report's
canonical bytes.
"""
from __future__ import annotations

import csv
import hashlib
import itertools
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .adapter import AdapterParams, init_adapter
from .bank import EmbeddingBank, load_bank
from .config import ExperimentConfig
from .episodes import (Episode, SamplingConfig, all_class_episode,
                       all_class_split, build_labeled_pool, sample_episode)
from .errors import ConfigError, NumericsError
from .forward import episode_losses
from .infer import MODES, classify_episode
from .losses import LossBundle
from .optim import (ModelParams, load_checkpoint, save_checkpoint,
                    schedule_lr, step)
from .textpath import init_prompts

CI_Z = 1.96  # normal-approximation 95% interval


def _deterministic_setup() -> None:
    torch.set_num_threads(1)


def _seed_streams(seed: int) -> dict[str, np.random.SeedSequence]:
    names = ("adapter_init", "prompt_init", "labeled_pool",
             "train_episodes", "eval_episodes", "all_class_support")
    children = np.random.SeedSequence(seed).spawn(len(names))
    return dict(zip(names, children))


def _seed_int(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1)[0])


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def config_hash(cfg: ExperimentConfig) -> str:
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


# -- reports -------------------------------------------------------------------


@dataclass
class RunReport:
    """Self-describing record of one train or eval run."""

    kind: str                       # "train" | "eval"
    config: dict
    bank_hash: str
    config_hash: str
    episode_records: list = field(default_factory=list)
    accuracy: dict = field(default_factory=dict)      # mode -> {mean, ci95, per_episode}
    loss_curves: dict = field(default_factory=dict)   # term -> per-step values
    val_curve: list = field(default_factory=list)     # per-epoch validation accuracy
    step_count: int = 0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "config": self.config,
            "bank_hash": self.bank_hash,
            "config_hash": self.config_hash,
            "episodes": self.episode_records,
            "accuracy": self.accuracy,
            "loss_curves": self.loss_curves,
            "val_curve": self.val_curve,
            "step_count": self.step_count,
            "volatile": {"wall_time_s": self.wall_time_s},
        }

    def canonical_bytes(self) -> bytes:
        """Deterministic serialization: everything except the volatile section."""
        payload = self.to_dict()
        payload.pop("volatile", None)
        return json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()

    def report_hash(self) -> str:
        return hashlib.sha256(self.canonical_bytes()).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")


def summarize_accuracy(per_episode: list[float]) -> dict:
    arr = np.asarray(per_episode, dtype=np.float64)
    mean = float(arr.mean()) if len(arr) else 0.0
    ci = float(CI_Z * arr.std(ddof=1) / np.sqrt(len(arr))) if len(arr) > 1 else 0.0
    return {"mean": mean, "ci95": ci, "per_episode": [float(a) for a in arr]}


# -- model assembly ------------------------------------------------------------


def build_model(cfg: ExperimentConfig, bank: EmbeddingBank) -> ModelParams:
    streams = _seed_streams(cfg.seed)
    adapter = None
    if cfg.adapter.enabled:
        adapter = init_adapter(bank.visual_dim, cfg.adapter.hidden_dim,
                               seed=_seed_int(streams["adapter_init"]),
                               mix_init=cfg.adapter.mix_init)
    prompts = None
    if bank.text_encoder is not None:
        prompts = init_prompts(cfg.prompt_blocks(), cfg.prompt.length,
                               bank.embed_dim, seed=_seed_int(streams["prompt_init"]))
        prompts.vectors.requires_grad_(cfg.prompt.learnable)
    return ModelParams(adapter=adapter, prompts=prompts)


def _registry(cfg: ExperimentConfig, params: ModelParams,
              respect_loss_flags: bool = True) -> dict[str, torch.Tensor]:
    """Learnable tensors the optimizer may touch. With loss flags respected,
    a tensor no enabled loss can reach is excluded entirely, so neither
    updates nor weight decay ever move it (the cross-modal term is the only
    path into the prompts; the vision and distillation terms are the only
    paths into the adapter)."""
    adapter_on = cfg.adapter.enabled
    prompts_on = cfg.prompt.learnable and params.prompts is not None
    if respect_loss_flags:
        adapter_on = adapter_on and (cfg.loss.vision or cfg.loss.distillation)
        prompts_on = prompts_on and cfg.loss.cross_modal
    return params.named(adapter_enabled=adapter_on, prompts_learnable=prompts_on)


def _labeled_pool(cfg: ExperimentConfig, bank: EmbeddingBank):
    streams = _seed_streams(cfg.seed)
    return build_labeled_pool(bank, cfg.sampling.k_shot,
                              seed=_seed_int(streams["labeled_pool"]))


def _all_class_support(cfg: ExperimentConfig, bank: EmbeddingBank):
    streams = _seed_streams(cfg.seed)
    return all_class_split(bank, cfg.all_class.shots,
                           seed=_seed_int(streams["all_class_support"]))


def _train_episode_stream(cfg: ExperimentConfig, bank: EmbeddingBank, total: int):
    """Yield the training episodes for the configured scenario, in order."""
    streams = _seed_streams(cfg.seed)
    children = streams["train_episodes"].spawn(total)
    if cfg.scenario == "base_classes":
        scfg = SamplingConfig(mode="meta_train_base", n_way=cfg.sampling.n_way,
                              k_shot=cfg.sampling.k_shot,
                              queries_per_class=cfg.sampling.queries_per_class,
                              episode_count=total, seed=cfg.seed)
        for child in children:
            yield sample_episode(bank, scfg, np.random.default_rng(child))
    elif cfg.scenario == "no_base_classes":
        pool = _labeled_pool(cfg, bank)
        scfg = SamplingConfig(mode="self_support", n_way=min(cfg.sampling.n_way, len(pool)),
                              k_shot=cfg.sampling.k_shot, queries_per_class=1,
                              episode_count=total, seed=cfg.seed, labeled_pool=pool)
        for child in children:
            yield sample_episode(bank, scfg, np.random.default_rng(child))
    else:  # all_class: the full self-supporting task, one step per epoch
        support, _ = _all_class_support(cfg, bank)
        ep = all_class_episode(bank, support)
        for _ in range(total):
            yield ep


def run_train(cfg: ExperimentConfig, out_dir=None, resume=None,
              bank: EmbeddingBank | None = None) -> tuple[ModelParams, RunReport]:
    """Train per the configured scenario; returns params and the train report.

    With ``out_dir`` set, writes checkpoint.sgvp, report.json, losses.csv and
    a loss-curve figure there. A preloaded ``bank`` skips re-reading the file.
    """
    _deterministic_setup()
    t0 = time.perf_counter()
    if bank is None:
        bank = load_bank(cfg.bank)
    cfg.validate_with_bank(bank)

    if resume is not None:
        params, velocity = load_checkpoint(resume)
    else:
        params = build_model(cfg, bank)
        velocity = {}
    registry = _registry(cfg, params)

    if cfg.scenario == "all_class":
        total_steps = cfg.optim.epochs
        per_epoch = 1
    else:
        per_epoch = cfg.sampling.episodes_per_epoch
        total_steps = cfg.optim.epochs * per_epoch

    curves: dict[str, list[float]] = {"total": [], "cross_modal": [],
                                      "vision": [], "distillation": [], "lr": []}
    val_curve: list[float] = []
    step_idx = 0
    for ep_idx, episode in enumerate(_train_episode_stream(cfg, bank, total_steps)):
        if registry:
            components = episode_losses(
                bank, episode, params.adapter, params.prompts,
                enable_cross_modal=cfg.loss.cross_modal,
                enable_vision=cfg.loss.vision,
                enable_distillation=cfg.loss.distillation,
                distillation_variant=cfg.loss.variant,
                kd_temperature=cfg.loss.kd_temperature,
                adapter_enabled=cfg.adapter.enabled)
            bundle = LossBundle.from_components(components, registry)
            lr = schedule_lr(cfg.optim, step_idx, total_steps)
            try:
                step(params, bundle.grads, cfg.optim, velocity, named=registry, lr=lr)
            except NumericsError:
                # abort with the pre-step state preserved for inspection
                if out_dir is not None:
                    out = Path(out_dir)
                    out.mkdir(parents=True, exist_ok=True)
                    save_checkpoint(out / "crash_dump.sgvp", params, velocity)
                raise
        else:
            bundle = LossBundle(0.0, 0.0, 0.0, 0.0)
            lr = 0.0
        curves["total"].append(bundle.total)
        curves["cross_modal"].append(bundle.cross_modal)
        curves["vision"].append(bundle.vision)
        curves["distillation"].append(bundle.distillation)
        curves["lr"].append(lr)
        step_idx += 1
        if cfg.val_episodes > 0 and (ep_idx + 1) % per_epoch == 0:
            val_curve.append(_validation_accuracy(cfg, bank, params))

    report = RunReport(
        kind="train", config=cfg.to_dict(), bank_hash=file_hash(cfg.bank),
        config_hash=config_hash(cfg), loss_curves=curves, val_curve=val_curve,
        step_count=params.step_count, wall_time_s=time.perf_counter() - t0)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(out / "checkpoint.sgvp", params, velocity)
        report.save(out / "report.json")
        _write_loss_csv(curves, out / "losses.csv")
        from . import plots
        plots.save_loss_curves({k: v for k, v in curves.items() if k != "lr"},
                               out / "loss_curve.svg")
    return params, report


def _validation_accuracy(cfg: ExperimentConfig, bank: EmbeddingBank,
                         params: ModelParams) -> float:
    if bank.class_split is None or not bank.classes_in_split("novel_val"):
        return float("nan")
    scfg = SamplingConfig(mode="meta_test_novel", n_way=cfg.eval.n_way,
                          k_shot=cfg.eval.k_shot,
                          queries_per_class=cfg.eval.queries_per_class,
                          episode_count=cfg.val_episodes, seed=cfg.seed,
                          split="novel_val")
    ss = np.random.SeedSequence([cfg.seed, 0x5A1])
    accs = []
    for child in ss.spawn(cfg.val_episodes):
        ep = sample_episode(bank, scfg, np.random.default_rng(child))
        result = classify_episode(ep, bank, params.adapter, params.prompts,
                                  modes=(cfg.inference_mode,),
                                  adapter_enabled=cfg.adapter.enabled)
        accs.append(result["accuracy"][cfg.inference_mode])
    return float(np.mean(accs))


def _eval_episode_stream(cfg: ExperimentConfig, bank: EmbeddingBank):
    streams = _seed_streams(cfg.seed)
    if cfg.scenario == "all_class":
        support, test_rows = _all_class_support(cfg, bank)
        yield all_class_episode(bank, support, query=test_rows)
        return
    pool = _labeled_pool(cfg, bank) if cfg.scenario == "no_base_classes" else None
    scfg = SamplingConfig(mode="meta_test_novel", n_way=cfg.eval.n_way,
                          k_shot=cfg.eval.k_shot,
                          queries_per_class=cfg.eval.queries_per_class,
                          episode_count=cfg.eval.episode_count, seed=cfg.seed,
                          labeled_pool=pool)
    for child in streams["eval_episodes"].spawn(cfg.eval.episode_count):
        yield sample_episode(bank, scfg, np.random.default_rng(child))


def run_eval(cfg: ExperimentConfig, params: ModelParams | None = None,
             checkpoint=None, out_dir=None, dump_predictions=None,
             bank: EmbeddingBank | None = None) -> RunReport:
    """Evaluate over test episodes; all inference modes in one pass.

    Without ``params``/``checkpoint`` the freshly initialized model is
    evaluated (identical to a zero-epoch training run).
    """
    _deterministic_setup()
    t0 = time.perf_counter()
    if bank is None:
        bank = load_bank(cfg.bank)
    cfg.validate_with_bank(bank)
    if params is None:
        params = load_checkpoint(checkpoint)[0] if checkpoint else build_model(cfg, bank)

    per_mode: dict[str, list[float]] = {m: [] for m in MODES}
    records = []
    dump_fh = open(dump_predictions, "w") if dump_predictions else None
    try:
        for idx, episode in enumerate(_eval_episode_stream(cfg, bank)):
            result = classify_episode(episode, bank, params.adapter, params.prompts,
                                      modes=MODES, adapter_enabled=cfg.adapter.enabled)
            for mode in MODES:
                per_mode[mode].append(result["accuracy"][mode])
            records.append({
                "episode": idx,
                "class_ids": [int(c) for c in episode.class_ids],
                "n_queries": int(len(episode.query)),
                "queries_per_class": int(len(episode.query)) // episode.n_way,
                "accuracy": {m: result["accuracy"][m] for m in MODES},
            })
            if dump_fh is not None:
                _dump_episode(dump_fh, idx, bank, episode, result, cfg.inference_mode)
    finally:
        if dump_fh is not None:
            dump_fh.close()

    report = RunReport(
        kind="eval", config=cfg.to_dict(), bank_hash=file_hash(cfg.bank),
        config_hash=config_hash(cfg),
        episode_records=records,
        accuracy={m: summarize_accuracy(per_mode[m]) for m in MODES},
        step_count=params.step_count, wall_time_s=time.perf_counter() - t0)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        report.save(out / "report.json")
        _write_episode_csv(records, out / "episodes.csv")
        from . import plots
        plots.save_mode_bars({m: report.accuracy[m]["mean"] for m in MODES},
                             {m: report.accuracy[m]["ci95"] for m in MODES},
                             out / "accuracy_by_mode.svg")
    return report


def _dump_episode(fh, idx: int, bank: EmbeddingBank, episode: Episode,
                  result: dict, mode: str) -> None:
    from .infer import predict_scores
    scores = predict_scores(result["query_d"], mode, temperature=bank.temperature,
                            support_d=result["support_d"],
                            support_labels=episode.support_labels)
    preds = result["predicted"][mode]
    for q, (row, label) in enumerate(zip(episode.query, episode.query_labels)):
        rec = {
            "episode": idx,
            "query_id": bank.sample_ids[int(row)],
            "d": [float(x) for x in result["query_d"][q]],
            "scores": [float(s) for s in scores[q]],
            "predicted": int(preds[q]),
            "predicted_class": int(episode.class_ids[int(preds[q])]),
            "true": int(label),
            "true_class": int(episode.class_ids[int(label)]),
            "mode": mode,
        }
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _write_episode_csv(records: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "n_queries"] + [f"acc_{m}" for m in MODES])
        for rec in records:
            writer.writerow([rec["episode"], rec["n_queries"]]
                            + [f"{rec['accuracy'][m]:.6f}" for m in MODES])


def _write_loss_csv(curves: dict[str, list[float]], path) -> None:
    keys = list(curves)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step"] + keys)
        for i in range(len(curves["total"])):
            writer.writerow([i] + [f"{curves[k][i]:.9g}" for k in keys])


# -- gradient audit ------------------------------------------------------------


def run_gradcheck(cfg: ExperimentConfig, epsilon: float = 1e-5,
                  coords_per_tensor: int = 200) -> dict[str, dict]:
    """Finite-difference audit of every loss term on one seeded episode.

    Returns {selector: {tensor name: audit stats}} for the four loss terms
    (both distillation variants), covering every registered parameter.
    """
    from .forward import AUDIT_SELECTORS, audit_closure
    from .optim import finite_diff_audit

    _deterministic_setup()
    bank = load_bank(cfg.bank)
    cfg.validate_with_bank(bank)
    params = build_model(cfg, bank)
    registry = _registry(cfg, params, respect_loss_flags=False)
    if not registry:
        raise ConfigError("gradcheck: no learnable parameters under this config")
    episode = next(iter(_train_episode_stream(cfg, bank, 1)))
    return {
        selector: finite_diff_audit(
            audit_closure(bank, episode, params.adapter, params.prompts, selector,
                          kd_temperature=cfg.loss.kd_temperature,
                          adapter_enabled=cfg.adapter.enabled),
            registry, epsilon=epsilon, coords_per_tensor=coords_per_tensor)
        for selector in AUDIT_SELECTORS
    }


# -- ablation sweeps -----------------------------------------------------------


PRESET_AXES = {
    "kd-temperature": [("loss.kd_temperature", [5.0, 10.0, 15.0, 20.0, 25.0])],
    "adapter-prompt": [("adapter.enabled", [True, False]),
                       ("prompt.learnable", [True, False])],
    "shots": [("all_class.shots", [1, 2, 4, 8, 16])],
}


def run_ablation_suite(cfg: ExperimentConfig, axes: list[tuple[str, list]],
                       out_dir, train: bool = True, name: str = "sweep") -> list[dict]:
    """Cartesian sweep over config axes with shared seeds.

    Each combination is trained (optional) and evaluated; rows carry the axis
    values plus per-mode accuracy. Writes ``<name>.csv``, ``<name>.svg`` (for
    single-axis sweeps) and ``<name>.txt`` (rendered table) under ``out_dir``.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if not axes:
        combos = [()]
    else:
        combos = list(itertools.product(*[vals for _, vals in axes]))
    rows = []
    for combo in combos:
        overrides = [f"{key}={json.dumps(val)}" for (key, _), val in zip(axes, combo)]
        run_cfg = cfg.with_overrides(overrides) if overrides else cfg
        params, _ = run_train(run_cfg) if train else (None, None)
        report = run_eval(run_cfg, params=params)
        row = {key: val for (key, _), val in zip(axes, combo)}
        for mode in MODES:
            row[f"acc_{mode}"] = report.accuracy[mode]["mean"]
            row[f"ci_{mode}"] = report.accuracy[mode]["ci95"]
        rows.append(row)

    _write_sweep_csv(rows, out / f"{name}.csv")
    _write_sweep_table(rows, out / f"{name}.txt")
    if len(axes) == 1:
        from . import plots
        key = axes[0][0]
        xs = [row[key] for row in rows]
        series = {m: [row[f"acc_{m}"] for row in rows] for m in MODES}
        plots.save_sweep_lines(key, xs, series, out / f"{name}.svg")
    return rows


def _write_sweep_csv(rows: list[dict], path) -> None:
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=keys)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v)
                             for k, v in row.items()})


def _write_sweep_table(rows: list[dict], path) -> None:
    if not rows:
        return
    keys = list(rows[0])
    widths = {k: max(len(k), max(len(_fmt(r[k])) for r in rows)) for k in keys}
    lines = ["  ".join(k.ljust(widths[k]) for k in keys),
             "  ".join("-" * widths[k] for k in keys)]
    for row in rows:
        lines.append("  ".join(_fmt(row[k]).ljust(widths[k]) for k in keys))
    Path(path).write_text("\n".join(lines) + "\n")


def _fmt(v) -> str:
    return f"{v:.4f}" if isinstance(v, float) else str(v)
