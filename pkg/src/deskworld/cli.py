"""Command-line interface for the full pipeline.

Verbs: generate-data, preprocess, detect-duplicates, train-tokenizer,
train-lam, train-dynamics, train-diffusion, eval, rollout, serve, bench-read,
params.  Report-producing verbs write matplotlib figures next to CSV output.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import numpy as np

from . import report as report_mod
from .configs import TrainConfig, get_preset, resolve_seed
from .env import EnvConfig, generate_episode
from .records import (Chunking, DatasetIndex, bench_read, detect_duplicates,
                      read_manifest, write_dataset, write_manifest)
from .rng import stream
from .trainer import (MetricsLog, check_split_manifest, eval_single_frame,
                      model_from_checkpoint, train_diffusion, train_dynamics,
                      train_lam, train_tokenizer)


@click.group()
def main():
    """Deterministic desk-scale world-model pipeline."""


def _config_option(fn):
    fn = click.option("--config", "preset", default="desk",
                      help="preset name: desk | genie | jasmine-base")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="override the preset seed")(fn)
    return fn


def _load_config(preset: str, seed: int | None) -> TrainConfig:
    cfg = get_preset(preset)
    if seed is not None:
        import dataclasses
        cfg = dataclasses.replace(cfg, seed=seed)
    return cfg


# ---------------------------------------------------------------------------
# data
# ---------------------------------------------------------------------------

@main.command("generate-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--episodes", default=512, show_default=True)
@click.option("--frames", default=160, show_default=True,
              help="frames per episode")
@click.option("--seed-start", default=0, show_default=True)
@click.option("--val-fraction", default=0.1, show_default=True)
def generate_data(out_dir, episodes, frames, seed_start, val_fraction):
    """Generate raw synthetic episodes plus a disjoint train/val seed manifest."""
    out = Path(out_dir)
    raw = out / "raw"
    raw.mkdir(parents=True, exist_ok=True)
    cfg = EnvConfig()
    for i in range(episodes):
        seed = seed_start + i
        ep = generate_episode(seed, frames, cfg)
        np.savez_compressed(raw / f"ep-{seed:08d}.npz", seed=seed,
                            frames=ep.frames, actions=ep.actions)
    n_val = max(1, int(episodes * val_fraction))
    split_at = seed_start + episodes - n_val
    splits = {"train": (seed_start, split_at - 1),
              "val": (split_at, seed_start + episodes - 1)}
    write_manifest(out / "manifest.txt", splits)
    click.echo(f"wrote {episodes} episodes to {raw} "
               f"(train {splits['train']}, val {splits['val']})")


@main.command("preprocess")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True),
              help="directory produced by generate-data")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--frames-per-record", default=160, show_default=True)
@click.option("--records-per-file", default=100, show_default=True)
def preprocess(data_dir, out_dir, frames_per_record, records_per_file):
    """Chunk raw episodes into random-access record files, one dataset per split."""
    from .env import Episode
    data = Path(data_dir)
    manifest = read_manifest(data / "manifest.txt")
    check_split_manifest(manifest)
    chunking = Chunking(frames_per_record, records_per_file)
    for split, seeds in manifest.items():
        def episodes():
            for seed in seeds:
                path = data / "raw" / f"ep-{seed:08d}.npz"
                if not path.exists():
                    continue
                blob = np.load(path)
                yield Episode(seed=int(blob["seed"]), frames=blob["frames"],
                              actions=blob["actions"])
        index = write_dataset(episodes(), chunking, Path(out_dir) / split)
        click.echo(f"{split}: {index.total_records} records in "
                   f"{len(index.files)} files")


@main.command("detect-duplicates")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True))
@click.option("--out", "out_path", type=click.Path())
def detect_duplicates_cmd(data_dir, manifest_path, out_path):
    """Exact duplicate statistics; verifies split disjointness given a manifest."""
    index = DatasetIndex.load(data_dir)
    manifest = read_manifest(manifest_path) if manifest_path else None
    rep = detect_duplicates(index, manifest)
    text = json.dumps(rep, indent=2)
    click.echo(text)
    if out_path:
        Path(out_path).write_text(text + "\n")


@main.command("bench-read")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--frames-per-record", "fprs", multiple=True, type=int,
              default=(16, 160, 1600), show_default=True)
@click.option("--total-frames", default=4800, show_default=True)
@click.option("--passes", default=2, show_default=True)
def bench_read_cmd(out_dir, fprs, total_frames, passes):
    """Chunking-throughput benchmark; writes bench.csv and bench.png."""
    out = Path(out_dir)
    results = []
    for fpr in fprs:
        n_eps = max(1, total_frames // fpr)
        eps = (generate_episode(s, fpr, EnvConfig()) for s in range(n_eps))
        index = write_dataset(eps, Chunking(fpr, 100), out / f"bench-{fpr}")
        row = bench_read(index, passes=passes)
        row["frames_per_record"] = fpr
        results.append(row)
        click.echo(f"fpr={fpr}: {row['frames_per_sec']:.0f} frames/s")
    paths = report_mod.write_bench_report(results, out)
    click.echo(f"report: {paths['csv']} {paths['figure']}")


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def _train_common(fn):
    fn = click.option("--data", "data_dir", required=True,
                      type=click.Path(exists=True))(fn)
    fn = click.option("--out", "out_dir", required=True, type=click.Path())(fn)
    fn = click.option("--steps", type=int, default=None)(fn)
    fn = click.option("--val-data", "val_dir", type=click.Path(exists=True))(fn)
    return _config_option(fn)


def _finish(log: MetricsLog, out_dir, result):
    paths = report_mod.write_training_report(log, out_dir)
    click.echo(f"final checkpoint: {result.final_path}")
    click.echo("report: " + " ".join(str(p) for p in paths.values()))


@main.command("train-tokenizer")
@_train_common
def train_tokenizer_cmd(data_dir, out_dir, steps, val_dir, preset, seed):
    cfg = _load_config(preset, seed)
    index = DatasetIndex.load(data_dir)
    val = DatasetIndex.load(val_dir) if val_dir else None
    log = MetricsLog(Path(out_dir) / "metrics.jsonl")
    _, result = train_tokenizer(cfg, index, out_dir, steps=steps,
                                val_index=val, log=log)
    _finish(log, out_dir, result)


@main.command("train-lam")
@_train_common
def train_lam_cmd(data_dir, out_dir, steps, val_dir, preset, seed):
    cfg = _load_config(preset, seed)
    index = DatasetIndex.load(data_dir)
    log = MetricsLog(Path(out_dir) / "metrics.jsonl")
    _, result = train_lam(cfg, index, out_dir, steps=steps, log=log)
    _finish(log, out_dir, result)


@main.command("train-dynamics")
@_train_common
@click.option("--tokenizer", "tokenizer_ckpt", required=True,
              type=click.Path(exists=True))
@click.option("--lam", "lam_ckpt", type=click.Path(exists=True))
@click.option("--mode", type=click.Choice(["cotrain", "pretrain_lam", "ground_truth"]),
              default=None, help="override the preset training mode")
@click.option("--conditioning", type=click.Choice(["additive", "prepend"]),
              default=None)
def train_dynamics_cmd(data_dir, out_dir, steps, val_dir, preset, seed,
                       tokenizer_ckpt, lam_ckpt, mode, conditioning):
    import dataclasses
    cfg = _load_config(preset, seed)
    if mode:
        cfg = dataclasses.replace(cfg, mode=mode)
    index = DatasetIndex.load(data_dir)
    val = DatasetIndex.load(val_dir) if val_dir else None
    tokenizer, _, _ = model_from_checkpoint(tokenizer_ckpt)
    lam = None
    if lam_ckpt:
        lam, _, _ = model_from_checkpoint(lam_ckpt)
    log = MetricsLog(Path(out_dir) / "metrics.jsonl")
    _, result = train_dynamics(cfg, index, tokenizer, out_dir, lam=lam,
                               steps=steps, val_index=val,
                               conditioning=conditioning, log=log)
    _finish(log, out_dir, result)


@main.command("train-diffusion")
@_train_common
def train_diffusion_cmd(data_dir, out_dir, steps, val_dir, preset, seed):
    cfg = _load_config(preset, seed)
    index = DatasetIndex.load(data_dir)
    log = MetricsLog(Path(out_dir) / "metrics.jsonl")
    _, _, result = train_diffusion(cfg, index, out_dir, steps=steps, log=log)
    _finish(log, out_dir, result)


# ---------------------------------------------------------------------------
# evaluation / inference
# ---------------------------------------------------------------------------

def _load_world(tokenizer_ckpt, dynamics_ckpt, lam_ckpt):
    tokenizer, _, _ = model_from_checkpoint(tokenizer_ckpt)
    loaded, cfg, _ = model_from_checkpoint(dynamics_ckpt)
    lam = None
    if isinstance(loaded, tuple):
        dynamics, lam = loaded
    else:
        dynamics = loaded
    if lam_ckpt:
        lam, _, _ = model_from_checkpoint(lam_ckpt)
    return tokenizer, dynamics, lam, cfg


@main.command("eval")
@click.option("--tokenizer", "tokenizer_ckpt", required=True, type=click.Path(exists=True))
@click.option("--dynamics", "dynamics_ckpts", required=True, multiple=True,
              type=click.Path(exists=True),
              help="one or more dynamics checkpoints to compare")
@click.option("--lam", "lam_ckpt", type=click.Path(exists=True))
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True),
              help="validation split dataset")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--batch", default=4, show_default=True)
@click.option("--seed", default=0, show_default=True)
def eval_cmd(tokenizer_ckpt, dynamics_ckpts, lam_ckpt, data_dir, out_dir,
             batch, seed):
    """Single-frame rollout PSNR/SSIM; CSV + figure per dynamics checkpoint."""
    from .trainer import _val_clip
    index = DatasetIndex.load(data_dir)
    frames, actions = _val_clip(index, batch, 5, with_actions=True)
    results = {}
    for ckpt in dynamics_ckpts:
        tokenizer, dynamics, lam, cfg = _load_world(tokenizer_ckpt, ckpt, lam_ckpt)
        p, s = eval_single_frame(tokenizer, dynamics, frames, actions, lam=lam,
                                 steps=cfg.maskgit_steps,
                                 temperature=cfg.temperature,
                                 rng=stream(seed, "cli-eval"))
        label = f"{dynamics.cfg.mode.value}:{Path(ckpt).stem}"
        results[label] = {"psnr_db": p, "ssim": s}
        click.echo(f"{label}: psnr={p:.2f} dB ssim={s:.4f}")
    paths = report_mod.write_eval_report(results, out_dir)
    click.echo(f"report: {paths['csv']} {paths['figure']}")


@main.command("rollout")
@click.option("--tokenizer", "tokenizer_ckpt", required=True, type=click.Path(exists=True))
@click.option("--dynamics", "dynamics_ckpt", required=True, type=click.Path(exists=True))
@click.option("--lam", "lam_ckpt", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--env-seed", default=0, show_default=True)
@click.option("--actions", "action_str", default="0,1,1,2",
              show_default=True, help="comma-separated action ids")
@click.option("--seed", default=0, show_default=True)
def rollout_cmd(tokenizer_ckpt, dynamics_ckpt, lam_ckpt, out_dir, env_seed,
                action_str, seed):
    """Autoregressive rollout from 4 synthetic conditioning frames."""
    from .dynamics import rollout as maskgit_rollout
    tokenizer, dynamics, lam, cfg = _load_world(tokenizer_ckpt, dynamics_ckpt, lam_ckpt)
    actions = [int(a) for a in action_str.split(",") if a.strip() != ""]
    episode = generate_episode(env_seed, 4, EnvConfig())
    cond = episode.frames[None]
    codebook = lam.params["codebook"] if lam is not None else None
    action_arrays = [np.array([a]) for a in actions]
    frames = maskgit_rollout(tokenizer, dynamics, cond, action_arrays,
                             horizon=len(actions), steps=cfg.maskgit_steps,
                             temperature=cfg.temperature,
                             rng=stream(seed, "cli-rollout"),
                             source_codebook=codebook)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savez_compressed(out / "rollout.npz", frames=frames[0],
                        actions=np.array(actions))
    strip = report_mod.save_rollout_strip(frames[0], out / "rollout.png")
    click.echo(f"wrote {strip} ({frames.shape[1]} frames)")


@main.command("serve")
@click.option("--tokenizer", "tokenizer_ckpt", required=True, type=click.Path(exists=True))
@click.option("--dynamics", "dynamics_ckpt", required=True, type=click.Path(exists=True))
@click.option("--lam", "lam_ckpt", type=click.Path(exists=True))
@click.option("--port", default=8000, show_default=True)
@click.option("--static", "static_dir", type=click.Path(),
              default="frontend/dist", show_default=True)
@click.option("--steps", default=None, type=int,
              help="MaskGIT refinement steps per frame")
def serve_cmd(tokenizer_ckpt, dynamics_ckpt, lam_ckpt, port, static_dir, steps):
    """Run the interactive play server."""
    from .server import PlayService, serve
    tokenizer, dynamics, lam, cfg = _load_world(tokenizer_ckpt, dynamics_ckpt, lam_ckpt)
    service = PlayService(tokenizer, dynamics, lam=lam,
                          steps=steps or cfg.maskgit_steps,
                          temperature=cfg.temperature)
    click.echo(f"serving on 127.0.0.1:{port} (actions 0..{service.action_count - 1})")
    serve(service, port=port, static_dir=static_dir)


@main.command("params")
@_config_option
def params_cmd(preset, seed):
    """Parameter counts per model for a configuration preset."""
    from .diffusion import DitDynamics, MaeTokenizer
    from .dynamics import DynamicsModel
    from .lam import LatentActionModel
    from .st import param_count
    from .tokenizer import VideoTokenizer
    cfg = _load_config(preset, seed)
    s = resolve_seed(cfg)
    models = {
        "tokenizer": VideoTokenizer(cfg.tokenizer_cfg, seed=s),
        "lam": LatentActionModel(cfg.lam_cfg, seed=s),
        "dynamics": DynamicsModel(cfg.dynamics_cfg(), seed=s),
        "mae": MaeTokenizer(cfg.mae_cfg, seed=s),
        "dit": DitDynamics(cfg.dit_cfg, seed=s),
    }
    total = 0
    for name, model in models.items():
        n = param_count(model.params)
        total += n
        click.echo(f"{name:10s} {n:>12,d}")
    click.echo(f"{'total':10s} {total:>12,d}")


if __name__ == "__main__":
    main()
