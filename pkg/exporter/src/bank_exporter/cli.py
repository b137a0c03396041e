"""Command-line entry point for bank exports."""
from __future__ import annotations

import json
import sys

import click

from .export import ExportError, ExportManifest, export, write_reference


@click.command()
@click.option("--images", "images_dir", required=True,
              type=click.Path(exists=True, file_okay=False),
              help="Dataset root: one subdirectory per class.")
@click.option("--out", "out_path", required=True, type=click.Path(dir_okay=False))
@click.option("--encoder", default="toy", type=click.Choice(["toy", "clip"]),
              show_default=True)
@click.option("--eval-mode", default="holdout",
              type=click.Choice(["holdout", "zeroshot"]), show_default=True,
              help="Train/test partition written into the bank.")
@click.option("--seed", default=0, show_default=True)
@click.option("--expect-visual-dim", default=None, type=int,
              help="Abort before writing if the encoder width differs.")
@click.option("--expect-cross-dim", default=None, type=int)
@click.option("--reference-out", default=None, type=click.Path(dir_okay=False),
              help="Also write the exporter's own zero-shot predictions as JSON.")
def main(images_dir, out_path, encoder, eval_mode, seed,
         expect_visual_dim, expect_cross_dim, reference_out):
    """Export an image folder as an SGVB embedding bank."""
    expect = {}
    if expect_visual_dim is not None:
        expect["visual"] = expect_visual_dim
    if expect_cross_dim is not None:
        expect["cross"] = expect_cross_dim
    manifest = ExportManifest(images_dir=images_dir, out_path=out_path,
                              encoder=encoder, eval_mode=eval_mode, seed=seed,
                              expect_dims=expect or None)
    try:
        reference = export(manifest)
    except ExportError as exc:
        click.echo(json.dumps({"error": "ExportError", "message": str(exc)}), err=True)
        sys.exit(1)
    if reference_out:
        write_reference(reference, reference_out)
    click.echo(json.dumps({"out": out_path, "samples": len(reference)}))


if __name__ == "__main__":
    main()
