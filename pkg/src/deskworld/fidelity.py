"""Desk-scale fidelity harness.

Builds the 512-episode synthetic dataset, trains the tokenizer at the desk
configuration, and trains two dynamics models that differ only in how the
action latent enters the transformer (prepended as a spatial token vs added
to every patch embedding).  Both models consume identical frozen action
latents derived from the ground-truth env actions, so the comparison
isolates the conditioning pathway.  The harness reports both single-frame
rollout PSNRs rather than hard-failing the directional claim.
"""

from __future__ import annotations

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .autodiff import Tensor, embedding
from .configs import TrainConfig, get_preset
from .dynamics import ConditioningMode, DynamicsModel
from .env import EnvConfig, generate_episode
from .metrics import psnr, ssim
from .optim import WsdSchedule
from .records import Chunking, DatasetIndex, DatasetReader, write_dataset
from .rng import stream
from .tokenizer import frames_to_unit, unit_to_frames
from .trainer import MetricsLog, run_stage, train_tokenizer


def build_fidelity_dataset(work_dir, *, episodes: int = 512, frames: int = 160,
                           val_episodes: int = 64, seed_start: int = 0):
    """Disjoint train/val record datasets from seed-unique episodes."""
    work = Path(work_dir)
    env_cfg = EnvConfig()
    chunking = Chunking(frames_per_record=frames, records_per_file=100)
    n_train = episodes - val_episodes
    train = write_dataset(
        (generate_episode(s, frames, env_cfg) for s in range(seed_start, seed_start + n_train)),
        chunking, work / "train")
    val = write_dataset(
        (generate_episode(s, frames, env_cfg)
         for s in range(seed_start + n_train, seed_start + episodes)),
        chunking, work / "val")
    return train, val


def _val_frames(index: DatasetIndex, batch: int, seq_len: int):
    reader = DatasetReader(index)
    frames = np.stack([reader.read_record(i)[0][:seq_len]
                       for i in range(min(batch, index.total_records))])
    actions = np.stack([reader.read_record(i)[1][:seq_len]
                        for i in range(min(batch, index.total_records))])
    reader.close()
    return frames, actions


def tokenizer_heldout_psnr(tokenizer, val_index: DatasetIndex, *, batch: int = 16,
                           seq_len: int = 8) -> float:
    frames, _ = _val_frames(val_index, batch, seq_len)
    recon = unit_to_frames(tokenizer.decode(tokenizer.encode(frames)))
    return float(np.mean([psnr(frames[i], recon[i]) for i in range(len(frames))]))


def _train_conditioning_variant(cfg: TrainConfig, index: DatasetIndex,
                                tokenizer, table: Tensor, mode: ConditioningMode,
                                steps: int, log: MetricsLog) -> DynamicsModel:
    dyn_cfg = replace(cfg.dynamics_cfg(), mode=mode)
    model = DynamicsModel(dyn_cfg, seed=cfg.seed, dtype=np.float32)

    def loss_fn(frames, actions, rng):
        tokens = tokenizer.encode(frames)
        latents = Tensor(embedding(table, actions[:, :-1].astype(np.int64)).data)
        loss, _ = model.loss(tokens, latents, rng)
        return loss

    stage = cfg.dynamics_stage
    run_stage(stage=f"dynamics-{mode.value}", cfg=cfg, params=model.params,
              loss_fn=loss_fn,
              schedule=WsdSchedule(stage.peak_lr, steps,
                                   min(stage.warmup_steps, max(1, steps // 10)),
                                   stage.decay_fraction),
              index=index, batch_size=stage.batch_size, steps=steps, log=log)
    return model


def single_frame_scores(tokenizer, dynamics: DynamicsModel, table: Tensor,
                        frames: np.ndarray, actions: np.ndarray, *,
                        steps: int, rng) -> tuple[float, float]:
    """Condition on 4 frames, generate frame 5, score against ground truth."""
    tokens = tokenizer.encode(frames[:, :4])
    history = Tensor(embedding(table, actions[:, :4].astype(np.int64)).data)
    nxt = dynamics.decode_frame(tokens, history, steps=steps, rng=rng)
    gen = unit_to_frames(tokenizer.decode(nxt[:, None]))[:, 0]
    truth = frames[:, 4]
    b = len(frames)
    return (float(np.mean([psnr(truth[i], gen[i]) for i in range(b)])),
            float(np.mean([ssim(truth[i], gen[i]) for i in range(b)])))


def run_fidelity(work_dir, *, episodes: int = 512, frames: int = 160,
                 tokenizer_steps: int = 300, dynamics_steps: int = 150,
                 decode_steps: int = 8, eval_batch: int = 16,
                 seed: int = 0) -> dict:
    """Full desk-scale fidelity run; returns all reported numbers."""
    t_start = time.perf_counter()
    work = Path(work_dir)
    work.mkdir(parents=True, exist_ok=True)
    cfg = replace(get_preset("desk"), seed=seed)
    train_index, val_index = build_fidelity_dataset(work, episodes=episodes,
                                                    frames=frames)
    log = MetricsLog(work / "metrics.jsonl")
    tokenizer, _ = train_tokenizer(cfg, train_index, steps=tokenizer_steps, log=log)
    tok_psnr = tokenizer_heldout_psnr(tokenizer, val_index)

    dlat = cfg.latent_dim
    table = Tensor(stream(seed, "fidelity-action-table")
                   .normal(0, 0.5, (EnvConfig().action_count, dlat)).astype(np.float32))
    variants = {}
    val_frames, val_actions = _val_frames(val_index, eval_batch, 5)
    for mode in (ConditioningMode.PREPEND, ConditioningMode.ADDITIVE):
        model = _train_conditioning_variant(cfg, train_index, tokenizer, table,
                                            mode, dynamics_steps, log)
        p, s = single_frame_scores(tokenizer, model, table, val_frames,
                                   val_actions, steps=decode_steps,
                                   rng=stream(seed, "fidelity-eval", mode.value))
        variants[mode.value] = {"psnr_db": p, "ssim": s}

    report = {
        "tokenizer_psnr_db": tok_psnr,
        "prepend": variants["prepend"],
        "additive": variants["additive"],
        "config": {"episodes": episodes, "frames": frames,
                   "tokenizer_steps": tokenizer_steps,
                   "dynamics_steps": dynamics_steps,
                   "decode_steps": decode_steps, "seed": seed,
                   "preset": "desk"},
        "wall_seconds": time.perf_counter() - t_start,
    }
    (work / "fidelity.json").write_text(json.dumps(report, indent=2))
    from .report import write_eval_report
    write_eval_report({"prepend": variants["prepend"],
                       "additive": variants["additive"]}, work)
    return report
