"""Command-line surface: data generation, training, evaluation, prompt
encoding, gradient checking, and serving.

Exit codes: 0 success, 2 validation error, 3 IO/corruption, 4 numeric
failure.
"""
from __future__ import annotations

import json
import os
import sys

import click
import numpy as np

from .data import CorruptionError, generate_instance, png_to_image, read_dataset, write_dataset
from .harness import (NumericError, TrainConfig, evaluate, gradient_check,
                      train)
from .interact import ProtocolConfig
from .losses import LossConfig
from .model import (CheckpointError, ModelConfig, load_checkpoint,
                    save_checkpoint)
from .pue import (EncoderConfig, Prompt, ValidationError, encode_prompt)

EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_NUMERIC = 4


def _fail(code: int, message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_config_file(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path) as fh:
            return json.load(fh)
    except OSError as exc:
        _fail(EXIT_IO, f"cannot read config: {exc}")
    except ValueError as exc:
        _fail(EXIT_VALIDATION, f"bad config JSON: {exc}")


def parse_prompt(spec: str) -> Prompt:
    """Parse 'click:+:x,y' | 'box:-:cx,cy,w,h' | 'scribble:+:x1,y1;x2,y2;...'."""
    try:
        kind, sign, payload = spec.split(":", 2)
    except ValueError:
        raise ValidationError(f"malformed prompt spec {spec!r}")
    if sign not in ("+", "-"):
        raise ValidationError("intent must be '+' or '-'")
    positive = sign == "+"
    if kind == "click":
        x, y = (int(v) for v in payload.split(","))
        return Prompt.make_click(x, y, positive)
    if kind == "box":
        cx, cy, w, h = (int(v) for v in payload.split(","))
        return Prompt.make_box(cx, cy, w, h, positive)
    if kind == "scribble":
        pts = [tuple(int(v) for v in pair.split(",")) for pair in payload.split(";") if pair]
        return Prompt.make_scribble(pts, positive)
    raise ValidationError(f"unknown prompt kind {kind!r}")


@click.group()
def main():
    """Interactive segmentation toolkit: unified Gaussian prompt vectors,
    a prompt-conditioned attention network, and a simulated-user harness."""


@main.command("gen-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--count", required=True, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--size", default=64, type=int)
@click.option("--split", default="train", type=click.Choice(["train", "test"]))
def gen_data(out_dir, count, seed, size, split):
    """Generate a synthetic shapes dataset with ground-truth masks."""
    if count < 1:
        _fail(EXIT_VALIDATION, "count must be positive")
    try:
        manifest = write_dataset(out_dir, count, seed, split=split, size=size)
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"wrote {len(manifest['entries'])} instances to {out_dir}")


@main.command("train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--epochs", type=int)
@click.option("--lr", type=float)
@click.option("--lambda", "lam", type=float)
@click.option("--sigma", type=float)
@click.option("--seed", type=int)
@click.option("--precision", type=click.Choice(["single", "double"]))
@click.option("--loss-figure", type=click.Path(), help="render loss curves here")
def train_cmd(data_dir, out_path, config_path, epochs, lr, lam, sigma, seed,
              precision, loss_figure):
    """Train on a generated dataset and save a checkpoint."""
    cfg = _load_config_file(config_path)
    try:
        mcfg = ModelConfig.from_dict(cfg.get("model", {}))
        largs = dict(cfg.get("loss", {}))
        targs = dict(cfg.get("train", {}))
        if epochs is not None:
            targs["epochs"] = epochs
        if lr is not None:
            targs["lr"] = lr
        if sigma is not None:
            targs["sigma"] = sigma
        if seed is not None:
            targs["seed"] = seed
        if precision is not None:
            targs["precision"] = precision
        if lam is not None:
            largs["lam"] = lam
        lcfg = LossConfig(**largs)
        tcfg = TrainConfig(**targs)
        dataset = read_dataset(data_dir)
    except CorruptionError as exc:
        _fail(EXIT_IO, str(exc))
    except (ValueError, TypeError) as exc:
        _fail(EXIT_VALIDATION, str(exc))
    try:
        state = train(dataset, mcfg, lcfg, tcfg, log_every=25)
    except NumericError as exc:
        _fail(EXIT_NUMERIC, str(exc))
    save_checkpoint(state.params, mcfg, out_path)
    if loss_figure:
        from .report import render_loss_history
        render_loss_history(state.loss_history, loss_figure)
    click.echo(f"saved checkpoint to {out_path} after {state.step} steps")


@main.command("eval")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--protocol", default="click", type=click.Choice(["click", "mixed"]))
@click.option("--targets", default="0.85,0.90")
@click.option("--max-interactions", default=20, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--sigma", default=3.0, type=float)
@click.option("--out", "report_path", required=True, type=click.Path())
@click.option("--curve", "curve_path", type=click.Path())
@click.option("--figure", "figure_path", type=click.Path())
@click.option("--sessions", "sessions_path", type=click.Path())
def eval_cmd(checkpoint, data_dir, protocol, targets, max_interactions, seed,
             sigma, report_path, curve_path, figure_path, sessions_path):
    """Run simulated interactive sessions and write the metrics report."""
    try:
        params, mcfg = load_checkpoint(checkpoint)
        dataset = read_dataset(data_dir)
        pcfg = ProtocolConfig(
            targets=tuple(float(t) for t in targets.split(",")),
            max_interactions=max_interactions,
            mode="click_only" if protocol == "click" else "mixed",
            rng_seed=seed,
        )
    except (CheckpointError, CorruptionError, OSError) as exc:
        _fail(EXIT_IO, str(exc))
    except ValueError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    report, records = evaluate(params, dataset, pcfg, mcfg, sigma=sigma)
    from .report import write_report
    if figure_path is None and report_path.endswith(".json"):
        figure_path = report_path[:-5] + ".png"
    write_report(report, records, report_path, curve_path, figure_path,
                 sessions_path)
    click.echo(json.dumps(report.to_json_dict(), indent=1))


@main.command("encode")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--prompt", "prompt_spec", required=True)
@click.option("--sigma", default=3.0, type=float)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_path", type=click.Path())
def encode_cmd(image_path, prompt_spec, sigma, seed, out_path):
    """Encode one prompt against an image; emit the vector as CSV."""
    try:
        image = png_to_image(image_path)
        prompt = parse_prompt(prompt_spec)
        vec = encode_prompt(image, prompt, EncoderConfig(sigma=sigma), rng_seed=seed)
    except ValidationError as exc:
        _fail(EXIT_VALIDATION, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    csv_text = vec.to_csv()
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(csv_text)
        click.echo(f"wrote {out_path}")
    else:
        click.echo(csv_text, nl=False)


@main.command("gradcheck")
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--seed", default=0, type=int)
def gradcheck_cmd(config_path, seed):
    """Finite-difference verification of every parameter group."""
    cfg = _load_config_file(config_path)
    mcfg = ModelConfig.from_dict(cfg["model"]) if cfg.get("model") else None
    try:
        results = gradient_check(mcfg, seed=seed)
    except NumericError as exc:
        _fail(EXIT_NUMERIC, str(exc))
    worst = max(results.values())
    for name in sorted(results):
        click.echo(f"{name:28s} {results[name]:.3e}")
    click.echo(f"max relative error: {worst:.3e}")
    if worst > 1e-3:
        _fail(EXIT_NUMERIC, "gradient check exceeded 1e-3 relative error")


@main.command("serve")
@click.option("--checkpoint", required=True, type=click.Path(exists=True))
@click.option("--port", default=8080, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--static", "static_dir", type=click.Path())
def serve_cmd(checkpoint, port, host, static_dir):
    """Serve the interactive session HTTP API (and, optionally, the UI)."""
    import uvicorn

    from .service import create_app

    try:
        params, mcfg = load_checkpoint(checkpoint)
    except (CheckpointError, OSError) as exc:
        _fail(EXIT_IO, str(exc))
    app = create_app(params, mcfg, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
