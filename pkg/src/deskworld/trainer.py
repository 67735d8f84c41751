"""Training orchestration: staged loops, metrics logging, bitwise resume.

Every source of randomness in a step is drawn from a counter-based stream
keyed by (seed, stage, step), so a resumed run replays the exact random
choices of the uninterrupted one; the data loader carries its own
checkpointable state.  The (config, seed) -> metrics-log mapping is a pure
function.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .checkpoint import CheckpointBundle, load_checkpoint, save_checkpoint
from .configs import TrainConfig, resolve_seed
from .diffusion import DitDynamics, MaeTokenizer
from .dynamics import ConditioningMode, DynamicsModel
from .lam import LatentActionModel
from .metrics import psnr, ssim
from .optim import (AdamWState, NonFiniteGradient, WsdSchedule, adamw_init,
                    adamw_step, wsd_lr)
from .records import (DatasetIndex, DatasetReader, LoaderState, fold_key,
                      prefetch, shuffled_batches)
from .rng import stream
from .tokenizer import VideoTokenizer, frames_to_unit, unit_to_frames

LAM_ENCODER_PREFIXES = ("patch_embed.", "pos_spatial", "pos_temporal", "enc.",
                        "to_latent.", "codebook")


class TrainingDiverged(Exception):
    """Loss or gradients went non-finite; a diagnostic checkpoint was written."""


@dataclass
class MetricsRow:
    step: int
    split: str                      # "train" | "val"
    loss: float
    psnr_db: float | None = None
    ssim: float | None = None
    lr: float | None = None
    wall_ms: float | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


class MetricsLog:
    """Append-only JSON-lines metrics log, optionally mirrored to a file."""

    def __init__(self, path=None):
        self.path = Path(path) if path else None
        self.rows: list[MetricsRow] = []
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def append(self, row: MetricsRow) -> None:
        self.rows.append(row)
        if self.path:
            with open(self.path, "a") as fh:
                fh.write(row.to_json() + "\n")

    def loss_column(self, split: str = "train") -> list[float]:
        return [r.loss for r in self.rows if r.split == split]


def check_split_manifest(manifest: dict) -> None:
    """Fail loudly if any seed appears in more than one split."""
    names = sorted(manifest)
    for i, a in enumerate(names):
        sa = set(manifest[a])
        for b in names[i + 1:]:
            overlap = sa & set(manifest[b])
            if overlap:
                raise ValueError(
                    f"splits {a!r} and {b!r} overlap on seeds {sorted(overlap)[:5]}")


# ---------------------------------------------------------------------------
# checkpoint packing
# ---------------------------------------------------------------------------

def _pack(stage: str, cfg: TrainConfig, params: dict, adam: AdamWState,
          loader_state: LoaderState, step: int, seed: int) -> CheckpointBundle:
    arrays = {}
    for name in sorted(params):
        arrays[f"param.{name}"] = params[name].data
        arrays[f"adam.m.{name}"] = adam.m[name]
        arrays[f"adam.v.{name}"] = adam.v[name]
    meta = {"stage": stage, "seed": seed,
            "adam": {"t": adam.t, "beta1": adam.beta1, "beta2": adam.beta2,
                     "eps": adam.eps, "weight_decay": adam.weight_decay}}
    return CheckpointBundle(step=step, config=cfg.to_dict(), arrays=arrays,
                            loader_state=asdict(loader_state),
                            rng_state={"seed": seed, "stage": stage}, meta=meta)


def restore_stage(bundle: CheckpointBundle, params: dict) -> tuple[AdamWState, LoaderState, int]:
    """Copy a packed stage back into live parameter tensors; returns the rest."""
    am = bundle.meta["adam"]
    adam = AdamWState(t=am["t"], beta1=am["beta1"], beta2=am["beta2"],
                      eps=am["eps"], weight_decay=am["weight_decay"])
    for name, p in params.items():
        p.data = bundle.arrays[f"param.{name}"].astype(p.data.dtype, copy=True)
        adam.m[name] = bundle.arrays[f"adam.m.{name}"].copy()
        adam.v[name] = bundle.arrays[f"adam.v.{name}"].copy()
    return adam, LoaderState(**bundle.loader_state), bundle.step


# ---------------------------------------------------------------------------
# generic stage loop
# ---------------------------------------------------------------------------

@dataclass
class StageResult:
    params: dict
    adam: AdamWState
    loader_state: LoaderState
    step: int
    log: MetricsLog
    final_path: Path | None = None


def run_stage(*, stage: str, cfg: TrainConfig, params: dict, loss_fn,
              schedule: WsdSchedule, index: DatasetIndex, batch_size: int,
              steps: int, seq_len: int | None = None, out_dir=None,
              log: MetricsLog | None = None, resume: CheckpointBundle | None = None,
              eval_fn=None, checkpoint_every: int = 0,
              prefetch_depth: int = 0) -> StageResult:
    """Deterministic training loop shared by every model stage.

    `loss_fn(frames, actions, rng) -> Tensor` closes over the model(s) whose
    parameters are in `params`.  All checkpoints written under `out_dir` are
    resumable bit-exactly via `resume=`.
    """
    seed = resolve_seed(cfg)
    seq_len = seq_len or cfg.seq_len
    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    log = log or MetricsLog()

    if resume is not None:
        adam, loader_state, start_step = restore_stage(resume, params)
    else:
        adam = adamw_init(params)
        loader_state = LoaderState(seed=fold_key(seed, stage, "loader") % (2 ** 31))
        start_step = 0

    batches = shuffled_batches(index, loader_state, batch_size, seq_len=seq_len)
    if prefetch_depth:
        batches = prefetch(batches, prefetch_depth)

    def save(path, state, step):
        save_checkpoint(_pack(stage, cfg, params, adam, state, step, seed), path)

    for step in range(start_step, steps):
        t0 = time.perf_counter()
        frames, actions, next_state = next(batches)
        rng = stream(seed, stage, "step", step)
        try:
            loss = loss_fn(frames, actions, rng)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NonFiniteGradient(f"non-finite loss {value} at step {step}")
            loss.backward()
            grads = {n: p.grad for n, p in params.items()}
            adamw_step(params, grads, adam, wsd_lr(schedule, step + 1))
        except NonFiniteGradient as exc:
            if out_dir:
                save(out_dir / f"{stage}-diagnostic.ckpt", loader_state, step)
            raise TrainingDiverged(f"{stage} step {step}: {exc}") from exc
        finally:
            for p in params.values():
                p.grad = None
        loader_state = next_state
        log.append(MetricsRow(step=step + 1, split="train", loss=value,
                              lr=wsd_lr(schedule, step + 1),
                              wall_ms=(time.perf_counter() - t0) * 1000.0))
        if eval_fn is not None and cfg.eval_every and (step + 1) % cfg.eval_every == 0:
            log.append(eval_fn(step + 1))
        if out_dir and checkpoint_every and (step + 1) % checkpoint_every == 0:
            save(out_dir / f"{stage}-step{step + 1:06d}.ckpt", loader_state, step + 1)

    final_path = None
    if out_dir:
        final_path = out_dir / f"{stage}-final.ckpt"
        save(final_path, loader_state, steps)
    return StageResult(params=params, adam=adam, loader_state=loader_state,
                       step=steps, log=log, final_path=final_path)


# ---------------------------------------------------------------------------
# per-model stages
# ---------------------------------------------------------------------------

def _schedule(stage_cfg) -> WsdSchedule:
    return WsdSchedule(peak_lr=stage_cfg.peak_lr, total_steps=stage_cfg.steps,
                       warmup_steps=stage_cfg.warmup_steps,
                       decay_fraction=stage_cfg.decay_fraction)


def train_tokenizer(cfg: TrainConfig, index: DatasetIndex, out_dir=None, *,
                    steps: int | None = None, resume=None, log=None,
                    val_index: DatasetIndex | None = None,
                    dtype=np.float32) -> tuple[VideoTokenizer, StageResult]:
    seed = resolve_seed(cfg)
    tok = VideoTokenizer(cfg.tokenizer_cfg, seed=seed, dtype=dtype)
    stage_cfg = cfg.tokenizer_stage
    n_steps = steps if steps is not None else stage_cfg.steps

    def loss_fn(frames, actions, rng):
        unit = frames_to_unit(frames).astype(dtype)
        _, _, losses = tok.forward(Tensor(unit))
        return losses["total"]

    eval_fn = None
    if val_index is not None:
        val_frames = _val_clip(val_index, cfg.eval_batch, max(cfg.seq_len, 5))

        def eval_fn(step):
            recon = unit_to_frames(tok.decode(tok.encode(val_frames)))
            scores = [psnr(val_frames[i], recon[i]) for i in range(len(val_frames))]
            ssims = [float(np.mean([ssim(val_frames[i, t], recon[i, t])
                                    for t in range(val_frames.shape[1])]))
                     for i in range(len(val_frames))]
            return MetricsRow(step=step, split="val", loss=0.0,
                              psnr_db=float(np.mean(scores)), ssim=float(np.mean(ssims)))

    result = run_stage(stage="tokenizer", cfg=cfg, params=tok.params,
                       loss_fn=loss_fn, schedule=_schedule(stage_cfg),
                       index=index, batch_size=stage_cfg.batch_size,
                       steps=n_steps, out_dir=out_dir, log=log,
                       resume=resume, eval_fn=eval_fn)
    return tok, result


def train_lam(cfg: TrainConfig, index: DatasetIndex, out_dir=None, *,
              steps: int | None = None, resume=None, log=None,
              dtype=np.float32) -> tuple[LatentActionModel, StageResult]:
    seed = resolve_seed(cfg)
    lam = LatentActionModel(cfg.lam_cfg, seed=seed, dtype=dtype)
    stage_cfg = cfg.lam_stage
    n_steps = steps if steps is not None else stage_cfg.steps

    def loss_fn(frames, actions, rng):
        unit = frames_to_unit(frames).astype(dtype)
        _, _, losses = lam.forward(Tensor(unit))
        return losses["total"]

    result = run_stage(stage="lam", cfg=cfg, params=lam.params, loss_fn=loss_fn,
                       schedule=_schedule(stage_cfg), index=index,
                       batch_size=stage_cfg.batch_size, steps=n_steps,
                       out_dir=out_dir, log=log, resume=resume)
    return lam, result


def train_dynamics(cfg: TrainConfig, index: DatasetIndex,
                   tokenizer: VideoTokenizer, out_dir=None, *,
                   lam: LatentActionModel | None = None,
                   steps: int | None = None, resume=None, log=None,
                   val_index: DatasetIndex | None = None,
                   conditioning: str | None = None,
                   dtype=np.float32) -> tuple[DynamicsModel, StageResult]:
    """Dynamics stage for all three training modes.

    - ground_truth: env action ids through the learned embedding table.
    - pretrain_lam: frozen LAM labels each transition; latents are constants.
    - cotrain: gradients flow from the dynamics CE through the straight-through
      quantized action latents into the LAM encoder, whose parameters train
      jointly; the LAM VQ losses are added to the objective.
    """
    seed = resolve_seed(cfg)
    dyn_cfg = cfg.dynamics_cfg(conditioning)
    dynamics = DynamicsModel(dyn_cfg, seed=seed, dtype=dtype)
    stage_cfg = cfg.dynamics_stage
    n_steps = steps if steps is not None else stage_cfg.steps
    mode = cfg.mode

    if mode in ("pretrain_lam", "cotrain") and lam is None:
        raise ValueError(f"mode {mode!r} needs a latent action model")

    params = dict(dynamics.params)
    if mode == "cotrain":
        for name, p in lam.params.items():
            if name.startswith(LAM_ENCODER_PREFIXES):
                params[f"lam.{name}"] = p

    def loss_fn(frames, actions, rng):
        tokens = tokenizer.encode(frames)
        if mode == "ground_truth":
            loss, _ = dynamics.loss(tokens, actions[:, :-1].astype(np.int64), rng)
            return loss
        unit = frames_to_unit(frames).astype(dtype)
        if mode == "pretrain_lam":
            idx = lam.infer_actions(frames)
            latents = Tensor(lam.action_latents(idx).data.copy())  # frozen
            loss, _ = dynamics.loss(tokens, latents, rng)
            return loss
        # cotrain
        _, z_q, cb_loss, commit = lam.encoder_only(Tensor(unit))
        ce, _ = dynamics.loss(tokens, z_q, rng)
        return ce + cb_loss + lam.cfg.commitment_beta * commit

    eval_fn = None
    if val_index is not None:
        val_frames, val_actions = _val_clip(val_index, cfg.eval_batch,
                                            max(cfg.seq_len, 5), with_actions=True)

        def eval_fn(step):
            p, s = eval_single_frame(tokenizer, dynamics, val_frames, val_actions,
                                     lam=lam, steps=cfg.maskgit_steps,
                                     temperature=cfg.temperature,
                                     rng=stream(seed, "eval", step))
            return MetricsRow(step=step, split="val", loss=0.0, psnr_db=p, ssim=s)

    result = run_stage(stage="dynamics", cfg=cfg, params=params, loss_fn=loss_fn,
                       schedule=_schedule(stage_cfg), index=index,
                       batch_size=stage_cfg.batch_size, steps=n_steps,
                       out_dir=out_dir, log=log, resume=resume, eval_fn=eval_fn)
    return dynamics, result


def train_diffusion(cfg: TrainConfig, index: DatasetIndex, out_dir=None, *,
                    steps: int | None = None, mae_steps: int | None = None,
                    log=None, dtype=np.float32) -> tuple[MaeTokenizer, DitDynamics, StageResult]:
    """Diffusion-forcing baseline: MAE stage, then DiT over frozen MAE latents."""
    seed = resolve_seed(cfg)
    mae = MaeTokenizer(cfg.mae_cfg, seed=seed, dtype=dtype)
    dit = DitDynamics(cfg.dit_cfg, seed=seed, dtype=dtype)
    stage_cfg = cfg.diffusion_stage
    n_dit = steps if steps is not None else stage_cfg.steps
    n_mae = mae_steps if mae_steps is not None else n_dit

    def mae_loss(frames, actions, rng):
        unit = frames_to_unit(frames).astype(dtype)
        _, _, loss = mae.forward(Tensor(unit), rng)
        return loss

    run_stage(stage="mae", cfg=cfg, params=mae.params, loss_fn=mae_loss,
              schedule=_schedule(stage_cfg), index=index,
              batch_size=stage_cfg.batch_size, steps=n_mae,
              out_dir=out_dir, log=log)

    from .autodiff import embedding

    def dit_loss(frames, actions, rng):
        unit = frames_to_unit(frames).astype(dtype)
        latents = mae.encode(Tensor(unit)).data  # frozen MAE
        act = embedding(dit.params["gt_action_embed"],
                        actions[:, :-1].astype(np.int64))
        return dit.loss(latents, act, rng)

    result = run_stage(stage="dit", cfg=cfg, params=dit.params, loss_fn=dit_loss,
                       schedule=_schedule(stage_cfg), index=index,
                       batch_size=stage_cfg.batch_size, steps=n_dit,
                       out_dir=out_dir, log=log)
    return mae, dit, result


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def _val_clip(index: DatasetIndex, batch: int, seq_len: int, with_actions=False):
    """Fixed deterministic validation clip: first `batch` records, offset 0."""
    reader = DatasetReader(index)
    frames = np.empty((batch, seq_len) + tuple(index.geometry), dtype=np.uint8)
    actions = np.empty((batch, seq_len), dtype=np.uint8)
    for i in range(batch):
        f, a = reader.read_record(i % index.total_records)
        frames[i] = f[:seq_len]
        actions[i] = a[:seq_len]
    reader.close()
    return (frames, actions) if with_actions else frames


def eval_single_frame(tokenizer, dynamics, frames: np.ndarray, actions=None, *,
                      lam=None, steps: int = 25, temperature: float = 1.0,
                      rng=None) -> tuple[float, float]:
    """Condition on 4 frames, generate frame 5 with the MaskGIT sampler,
    and return batch-mean (PSNR, SSIM) against the ground-truth frame."""
    if frames.shape[1] < 5:
        raise ValueError("need at least 5 frames per validation clip")
    if rng is None:
        rng = stream(0, "eval-single-frame")
    b = frames.shape[0]
    cond = frames[:, :4]
    tokens = tokenizer.encode(cond)
    if dynamics.cfg.mode is ConditioningMode.GROUND_TRUTH:
        if actions is None:
            raise ValueError("ground-truth conditioning needs env actions")
        history = dynamics.action_latents_for(actions[:, :4].astype(np.int64))
    elif lam is not None:
        idx = lam.infer_actions(frames[:, :5])
        history = Tensor(lam.action_latents(idx).data.copy())
    else:
        dlat = dynamics.cfg.action_latent_dim
        null = dynamics.params["null_action"].detach().reshape(1, 1, dlat)
        history = Tensor(np.zeros((b, 4, dlat), dtype=dynamics.dtype)) + null
    nxt = dynamics.decode_frame(tokens, history, steps=steps,
                                temperature=temperature, rng=rng)
    gen = unit_to_frames(tokenizer.decode(nxt[:, None]))[:, 0]
    truth = frames[:, 4]
    p = float(np.mean([psnr(truth[i], gen[i]) for i in range(b)]))
    s = float(np.mean([ssim(truth[i], gen[i]) for i in range(b)]))
    return p, s


def eval_single_frame_diffusion(mae, dit, frames: np.ndarray, actions: np.ndarray,
                                *, steps: int = 25, rng=None) -> tuple[float, float]:
    """Diffusion-baseline counterpart of `eval_single_frame`."""
    from .autodiff import embedding
    if frames.shape[1] < 5:
        raise ValueError("need at least 5 frames per validation clip")
    if rng is None:
        rng = stream(0, "eval-diffusion")
    b = frames.shape[0]
    unit = frames_to_unit(frames[:, :4]).astype(mae.dtype)
    latents = mae.encode(Tensor(unit)).data
    history = embedding(dit.params["gt_action_embed"], actions[:, :4].astype(np.int64))
    nxt = dit.sample_frame(latents, history, steps=steps, rng=rng)
    gen = unit_to_frames(mae.decode(Tensor(nxt[:, None].astype(mae.dtype))).data)[:, 0]
    truth = frames[:, 4]
    p = float(np.mean([psnr(truth[i], gen[i]) for i in range(b)]))
    s = float(np.mean([ssim(truth[i], gen[i]) for i in range(b)]))
    return p, s


# ---------------------------------------------------------------------------
# model restore helpers (for CLI / server)
# ---------------------------------------------------------------------------

def model_from_checkpoint(path, *, dtype=np.float32):
    """Rebuild the stage's model(s) from a stage checkpoint file."""
    bundle = load_checkpoint(path)
    cfg = TrainConfig.from_dict(bundle.config)
    stage = bundle.meta["stage"]
    seed = bundle.meta["seed"]
    if stage == "tokenizer":
        model = VideoTokenizer(cfg.tokenizer_cfg, seed=seed, dtype=dtype)
        params = model.params
    elif stage == "lam":
        model = LatentActionModel(cfg.lam_cfg, seed=seed, dtype=dtype)
        params = model.params
    elif stage == "dynamics":
        model = DynamicsModel(cfg.dynamics_cfg(), seed=seed, dtype=dtype)
        params = dict(model.params)
        if cfg.mode == "cotrain":
            lam = LatentActionModel(cfg.lam_cfg, seed=seed, dtype=dtype)
            for name, p in lam.params.items():
                if name.startswith(LAM_ENCODER_PREFIXES):
                    params[f"lam.{name}"] = p
            model = (model, lam)
    elif stage == "mae":
        model = MaeTokenizer(cfg.mae_cfg, seed=seed, dtype=dtype)
        params = model.params
    elif stage == "dit":
        model = DitDynamics(cfg.dit_cfg, seed=seed, dtype=dtype)
        params = model.params
    else:
        raise ValueError(f"unknown stage {stage!r} in checkpoint {path}")
    for name, p in params.items():
        p.data = bundle.arrays[f"param.{name}"].astype(p.data.dtype, copy=True)
    return model, cfg, bundle
