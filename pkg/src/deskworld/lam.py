"""Latent action model: distills inter-frame change into a tiny VQ vocabulary.

The encoder runs an ST stack over the full clip; the vector for transition
t -> t+1 is the temporal feature at frame t+1, mean-pooled over patches, and
is quantized against a 6-entry codebook.  The decoder sees frames x_{0:T-2}
with the quantized action latent prepended per frame and predicts x_{1:T-1}
in pixel space, all in one causally masked pass.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, embedding, parameter
from .nn import linear, mse, patchify, unpatchify
from .rng import stream
from .st import StConfig, init_st_stack, st_stack


@dataclass(frozen=True)
class LamConfig:
    model_dim: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    blocks: int = 4
    codes: int = 6
    latent_dim: int = 32
    patch: int = 16
    height: int = 64
    width: int = 64
    channels: int = 3
    max_frames: int = 16
    commitment_beta: float = 0.25

    @property
    def patches_per_frame(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def st(self) -> StConfig:
        return StConfig(self.model_dim, self.heads, self.ffn_dim, self.blocks)


class LatentActionModel:
    def __init__(self, cfg: LamConfig = LamConfig(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = stream(seed, "lam-init")
        d = cfg.model_dim
        p: dict = {}
        p["patch_embed.w"] = parameter(rng.normal(0, 0.02, (cfg.patch_dim, d)).astype(dtype))
        p["patch_embed.b"] = parameter(np.zeros(d, dtype=dtype))
        p["pos_spatial"] = parameter(rng.normal(0, 0.02, (cfg.patches_per_frame, d)).astype(dtype))
        p["pos_temporal"] = parameter(rng.normal(0, 0.02, (cfg.max_frames, d)).astype(dtype))
        p.update(init_st_stack(rng, cfg.st, prefix="enc", dtype=dtype))
        p["to_latent.w"] = parameter(rng.normal(0, 0.02, (d, cfg.latent_dim)).astype(dtype))
        p["to_latent.b"] = parameter(np.zeros(cfg.latent_dim, dtype=dtype))
        bound = 1.0 / cfg.codes
        p["codebook"] = parameter(rng.uniform(-bound, bound, (cfg.codes, cfg.latent_dim)).astype(dtype))
        # decoder: separate patch embedding plus an action-token projection
        p["dec_embed.w"] = parameter(rng.normal(0, 0.02, (cfg.patch_dim, d)).astype(dtype))
        p["dec_embed.b"] = parameter(np.zeros(d, dtype=dtype))
        p["action_proj.w"] = parameter(rng.normal(0, 0.02, (cfg.latent_dim, d)).astype(dtype))
        p["action_proj.b"] = parameter(np.zeros(d, dtype=dtype))
        p["dec_pos_spatial"] = parameter(rng.normal(0, 0.02, (cfg.patches_per_frame + 1, d)).astype(dtype))
        p["dec_pos_temporal"] = parameter(rng.normal(0, 0.02, (cfg.max_frames, d)).astype(dtype))
        p.update(init_st_stack(rng, cfg.st, prefix="dec", dtype=dtype))
        p["to_pixels.w"] = parameter(rng.normal(0, 0.02, (d, cfg.patch_dim)).astype(dtype))
        p["to_pixels.b"] = parameter(np.zeros(cfg.patch_dim, dtype=dtype))
        self.params = p

    # -- encoder -------------------------------------------------------
    def _encode_pre_vq(self, frames: Tensor) -> Tensor:
        """Per-transition pre-quantization vectors, shape (B, T-1, latent_dim)."""
        b, t = frames.shape[0], frames.shape[1]
        if t < 2:
            raise ValueError("need at least 2 frames to infer actions")
        if t > self.cfg.max_frames:
            raise ValueError(f"clip length {t} exceeds max_frames {self.cfg.max_frames}")
        d = self.cfg.model_dim
        x = patchify(frames, self.cfg.patch)
        x = linear(x, self.params["patch_embed.w"], self.params["patch_embed.b"])
        x = x + self.params["pos_spatial"]
        x = x + self.params["pos_temporal"][:t].reshape(1, t, 1, d)
        x = st_stack(x, self.params, self.cfg.st, prefix="enc")
        pooled = x.mean(axis=2)              # (B, T, D)
        trans = pooled[:, 1:]                # feature at t+1 describes t -> t+1
        return linear(trans, self.params["to_latent.w"], self.params["to_latent.b"])

    def encoder_only(self, frames: Tensor):
        """(actions, quantized latents with straight-through grads, vq losses)."""
        from .tokenizer import vq_quantize
        z_e = self._encode_pre_vq(frames)
        indices, z_q, codebook_loss, commitment_loss = vq_quantize(z_e, self.params["codebook"])
        return indices, z_q, codebook_loss, commitment_loss

    # -- decoder -------------------------------------------------------
    def _decode(self, past_frames: Tensor, action_latents: Tensor) -> Tensor:
        """Predict frames 1..T-1 from frames 0..T-2 plus per-step action latents."""
        b, tm1 = past_frames.shape[0], past_frames.shape[1]
        d = self.cfg.model_dim
        x = patchify(past_frames, self.cfg.patch)
        x = linear(x, self.params["dec_embed.w"], self.params["dec_embed.b"])
        act = linear(action_latents, self.params["action_proj.w"], self.params["action_proj.b"])
        x = concat([act.reshape(b, tm1, 1, d), x], axis=2)  # prepend action token
        x = x + self.params["dec_pos_spatial"]
        x = x + self.params["dec_pos_temporal"][:tm1].reshape(1, tm1, 1, d)
        x = st_stack(x, self.params, self.cfg.st, prefix="dec")
        patches = x[:, :, 1:]  # drop the action token position
        patches = linear(patches, self.params["to_pixels.w"], self.params["to_pixels.b"])
        return unpatchify(patches, self.cfg.patch, self.cfg.height, self.cfg.width,
                          self.cfg.channels)

    def forward(self, frames: Tensor):
        """Returns (recon of frames 1..T-1, action indices (B, T-1), losses)."""
        indices, z_q, codebook_loss, commitment_loss = self.encoder_only(frames)
        past = frames[:, :-1] if frames.requires_grad else Tensor(frames.data[:, :-1])
        recon = self._decode(past, z_q)
        recon_loss = mse(recon, frames.data[:, 1:])
        total = recon_loss + codebook_loss + self.cfg.commitment_beta * commitment_loss
        losses = {"recon": recon_loss, "codebook": codebook_loss,
                  "commitment": commitment_loss, "total": total}
        return recon, indices, losses

    def infer_actions(self, frames: np.ndarray) -> np.ndarray:
        """Label a clip with latent action indices, (B, T-1)."""
        from .tokenizer import frames_to_unit
        unit = frames_to_unit(frames) if frames.dtype == np.uint8 else frames
        indices, _, _, _ = self.encoder_only(Tensor(unit.astype(self.dtype)))
        return indices

    def infer_action(self, frame_t: np.ndarray, frame_t1: np.ndarray) -> int:
        """Action index for a single transition between two frames."""
        clip = np.stack([frame_t, frame_t1])[None]
        return int(self.infer_actions(clip)[0, 0])

    def action_latents(self, indices: np.ndarray) -> Tensor:
        return embedding(self.params["codebook"], indices)
