"""Command-line interface.

Every command exits 0 on success; domain errors print a machine-readable
JSON object on stderr and exit nonzero.
"""
from __future__ import annotations

import functools
import json
import sys

import click

from .bank import SyntheticBankSpec, generate_synthetic_bank, load_bank, save_bank
from .config import ExperimentConfig
from .errors import BankshotError
from .harness import (PRESET_AXES, run_ablation_suite, run_eval,
                      run_gradcheck, run_train)


def _fail(exc: BankshotError) -> None:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except BankshotError as exc:
            _fail(exc)
    return wrapper


def _load_config(config_path: str, overrides: tuple[str, ...]) -> ExperimentConfig:
    return ExperimentConfig.load(config_path, list(overrides))


@click.group()
def main():
    """Few-shot classification over frozen embedding banks."""


# -- bank ----------------------------------------------------------------------


@main.group()
def bank():
    """Generate, inspect, and validate embedding bank files."""


@bank.command("gen")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--classes", default=20, show_default=True)
@click.option("--samples-per-class", default=50, show_default=True)
@click.option("--visual-dim", default=32, show_default=True)
@click.option("--text-dim", default=64, show_default=True)
@click.option("--cross-dim", default=24, show_default=True)
@click.option("--embed-dim", default=32, show_default=True)
@click.option("--semantic-dim", default=8, show_default=True)
@click.option("--vision-only-dim", default=8, show_default=True)
@click.option("--noise-sigma", default=0.5, show_default=True)
@click.option("--coupling", default=0.9, show_default=True,
              help="Cross-modal coupling in [0, 1].")
@click.option("--seed", default=0, show_default=True)
@click.option("--prompt-len", default=4, show_default=True)
@handle_errors
def bank_gen(out_path, classes, samples_per_class, visual_dim, text_dim, cross_dim,
             embed_dim, semantic_dim, vision_only_dim, noise_sigma, coupling,
             seed, prompt_len):
    """Generate a synthetic bank with controllable cross-modal structure."""
    spec = SyntheticBankSpec(
        n_classes=classes, samples_per_class=samples_per_class,
        visual_dim=visual_dim, text_dim=text_dim, cross_dim=cross_dim,
        embed_dim=embed_dim, semantic_dim=semantic_dim,
        vision_only_dim=vision_only_dim, noise_sigma=noise_sigma,
        cross_modal_coupling=coupling, seed=seed, prompt_len=prompt_len)
    bank_obj = generate_synthetic_bank(spec)
    save_bank(bank_obj, out_path)
    click.echo(f"wrote {out_path}: {bank_obj.n_samples} samples, "
               f"{bank_obj.n_classes} classes, hash {bank_obj.frozen_hash()[:12]}")


@bank.command("inspect")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def bank_inspect(path):
    """Print a bank's metadata summary."""
    b = load_bank(path)
    split_counts = {}
    if b.class_split:
        for sp in b.class_split.values():
            split_counts[sp] = split_counts.get(sp, 0) + 1
    role_counts = {}
    if b.sample_roles:
        for r in b.sample_roles:
            role_counts[r] = role_counts.get(r, 0) + 1
    info = {
        "samples": b.n_samples,
        "classes": b.n_classes,
        "dims": {"visual": b.visual_dim, "text": b.text_dim,
                 "cross": b.cross_dim, "class_emb": b.embed_dim},
        "temperature": b.temperature,
        "text_mode": b.text_mode,
        "prompt_len": b.text_encoder.prompt_len if b.text_encoder else None,
        "class_split": split_counts or None,
        "sample_roles": role_counts or None,
        "frozen_hash": b.frozen_hash(),
    }
    click.echo(json.dumps(info, indent=2, sort_keys=True))


@bank.command("validate")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@handle_errors
def bank_validate(path):
    """Load a bank and check every invariant; exit nonzero on any violation."""
    b = load_bank(path)
    click.echo(f"OK: {b.n_samples} samples, {b.n_classes} classes, "
               f"text_mode={b.text_mode}")


# -- runs -----------------------------------------------------------------------


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
@click.option("--resume", default=None, type=click.Path(exists=True, dir_okay=False))
@handle_errors
def train(config_path, overrides, out_dir, resume):
    """Train adapter and prompts per the configured scenario."""
    cfg = _load_config(config_path, overrides)
    _, report = run_train(cfg, out_dir=out_dir, resume=resume)
    click.echo(json.dumps({
        "steps": report.step_count,
        "final_total_loss": report.loss_curves["total"][-1] if report.loss_curves["total"] else None,
        "report_hash": report.report_hash(),
        "out": out_dir,
    }, sort_keys=True))


@main.command("eval")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--checkpoint", default=None, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False))
@click.option("--dump-predictions", default=None, type=click.Path(dir_okay=False),
              help="Write per-query prediction records as JSON lines.")
@handle_errors
def eval_cmd(config_path, overrides, checkpoint, out_dir, dump_predictions):
    """Evaluate a checkpoint (or the initialized model) over test episodes."""
    cfg = _load_config(config_path, overrides)
    report = run_eval(cfg, checkpoint=checkpoint, out_dir=out_dir,
                      dump_predictions=dump_predictions)
    summary = {mode: {"mean": round(stats["mean"], 6), "ci95": round(stats["ci95"], 6)}
               for mode, stats in report.accuracy.items()}
    summary["episodes"] = len(report.episode_records)
    summary["report_hash"] = report.report_hash()
    click.echo(json.dumps(summary, sort_keys=True))


def _parse_axis(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise click.BadParameter(f"axis {text!r} must be key=v1,v2,...")
    key, _, values = text.partition("=")
    parsed = []
    for token in values.split(","):
        try:
            parsed.append(json.loads(token))
        except json.JSONDecodeError:
            parsed.append(token)
    return key.strip(), parsed


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--axis", "axes_text", multiple=True, metavar="KEY=V1,V2,...",
              help="Sweep axis; repeat for a Cartesian grid.")
@click.option("--preset", type=click.Choice(sorted(PRESET_AXES) + ["suite"]),
              default=None, help="Named sweep; 'suite' runs the distillation-"
              "temperature sweep and the adapter/prompt grid in one go.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--no-train", is_flag=True, help="Evaluate initialized models only.")
@handle_errors
def ablate(config_path, overrides, axes_text, preset, out_dir, no_train):
    """Run a config sweep and emit CSV, rendered table, and figures."""
    cfg = _load_config(config_path, overrides)
    jobs: list[tuple[str, list[tuple[str, list]]]] = []
    if preset == "suite":
        jobs.append(("kd_temperature_sweep", PRESET_AXES["kd-temperature"]))
        jobs.append(("adapter_prompt_grid", PRESET_AXES["adapter-prompt"]))
    elif preset is not None:
        jobs.append((preset.replace("-", "_"), PRESET_AXES[preset]))
    if axes_text:
        jobs.append(("sweep", [_parse_axis(a) for a in axes_text]))
    if not jobs:
        jobs.append(("single_run", []))
    summary = {}
    for name, axes in jobs:
        rows = run_ablation_suite(cfg, axes, out_dir, train=not no_train, name=name)
        summary[name] = len(rows)
    click.echo(json.dumps({"out": out_dir, "rows": summary}, sort_keys=True))


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--set", "overrides", multiple=True, metavar="KEY=VALUE")
@click.option("--epsilon", default=1e-5, show_default=True)
@click.option("--coords", default=200, show_default=True,
              help="Coordinates sampled per tensor.")
@click.option("--tolerance", default=1e-6, show_default=True)
@handle_errors
def gradcheck(config_path, overrides, epsilon, coords, tolerance):
    """Audit analytic gradients against central finite differences."""
    cfg = _load_config(config_path, overrides)
    results = run_gradcheck(cfg, epsilon=epsilon, coords_per_tensor=coords)
    worst = 0.0
    for selector, tensors in results.items():
        for name, stats in tensors.items():
            click.echo(f"{selector:24s} {name:12s} rel_err={stats['max_rel_err']:.3e} "
                       f"scale={stats['grad_scale']:.3e} n={stats['n_checked']}")
            worst = max(worst, stats["max_rel_err"])
    click.echo(f"worst relative error: {worst:.3e} (tolerance {tolerance:g})")
    if worst >= tolerance:
        _fail(BankshotError(f"gradient audit failed: {worst:.3e} >= {tolerance:g}"))


if __name__ == "__main__":
    main()
