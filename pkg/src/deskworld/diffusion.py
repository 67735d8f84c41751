"""Diffusion-forcing baseline: MAE tokenizer + ST-DiT dynamics.

The MAE compresses frames into continuous tanh-bounded latents; the DiT is
trained with an independent noise level per frame under linear-interpolation
corruption z_tau = (1 - tau) z + tau eps, predicts the clean latent directly,
and weights the squared error by the ramp w(tau) = tau.  Sampling generates
one frame at a time with an Euler walk toward the predicted clean latent
while context latents are lightly re-corrupted at every model call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, parameter, where
from .nn import linear, mse, patchify, sinusoidal_embedding, unpatchify
from .rng import stream
from .st import StConfig, init_st_stack, st_stack


@dataclass(frozen=True)
class MaeConfig:
    model_dim: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    blocks: int = 4
    latent_dim: int = 32
    patch: int = 16
    height: int = 64
    width: int = 64
    channels: int = 3
    max_frames: int = 16
    mask_prob_max: float = 0.9

    @property
    def patches_per_frame(self) -> int:
        return (self.height // self.patch) * (self.width // self.patch)

    @property
    def patch_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def st(self) -> StConfig:
        return StConfig(self.model_dim, self.heads, self.ffn_dim, self.blocks)


class MaeTokenizer:
    def __init__(self, cfg: MaeConfig = MaeConfig(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = stream(seed, "mae-init")
        d = cfg.model_dim
        p: dict = {}
        p["patch_embed.w"] = parameter(rng.normal(0, 0.02, (cfg.patch_dim, d)).astype(dtype))
        p["patch_embed.b"] = parameter(np.zeros(d, dtype=dtype))
        p["mask_token"] = parameter(rng.normal(0, 0.02, (d,)).astype(dtype))
        p["pos_spatial"] = parameter(rng.normal(0, 0.02, (cfg.patches_per_frame, d)).astype(dtype))
        p["pos_temporal"] = parameter(rng.normal(0, 0.02, (cfg.max_frames, d)).astype(dtype))
        p.update(init_st_stack(rng, cfg.st, prefix="enc", dtype=dtype))
        p["to_latent.w"] = parameter(rng.normal(0, 0.02, (d, cfg.latent_dim)).astype(dtype))
        p["to_latent.b"] = parameter(np.zeros(cfg.latent_dim, dtype=dtype))
        p["from_latent.w"] = parameter(rng.normal(0, 0.02, (cfg.latent_dim, d)).astype(dtype))
        p["from_latent.b"] = parameter(np.zeros(d, dtype=dtype))
        p.update(init_st_stack(rng, cfg.st, prefix="dec", dtype=dtype))
        p["to_pixels.w"] = parameter(rng.normal(0, 0.02, (d, cfg.patch_dim)).astype(dtype))
        p["to_pixels.b"] = parameter(np.zeros(cfg.patch_dim, dtype=dtype))
        self.params = p

    def _embed(self, frames: Tensor, mask: np.ndarray | None) -> Tensor:
        t, d = frames.shape[1], self.cfg.model_dim
        x = patchify(frames, self.cfg.patch)
        x = linear(x, self.params["patch_embed.w"], self.params["patch_embed.b"])
        if mask is not None:
            x = where(mask[..., None], self.params["mask_token"], x)
        x = x + self.params["pos_spatial"]
        x = x + self.params["pos_temporal"][:t].reshape(1, t, 1, d)
        return x

    def encode(self, frames: Tensor, mask: np.ndarray | None = None) -> Tensor:
        """tanh-bounded latents (B, T, N, latent_dim)."""
        x = self._embed(frames, mask)
        x = st_stack(x, self.params, self.cfg.st, prefix="enc")
        return linear(x, self.params["to_latent.w"], self.params["to_latent.b"]).tanh()

    def decode(self, latents: Tensor) -> Tensor:
        x = linear(latents, self.params["from_latent.w"], self.params["from_latent.b"])
        x = st_stack(x, self.params, self.cfg.st, prefix="dec")
        x = linear(x, self.params["to_pixels.w"], self.params["to_pixels.b"])
        return unpatchify(x, self.cfg.patch, self.cfg.height, self.cfg.width, self.cfg.channels)

    def forward(self, frames: Tensor, rng: np.random.Generator):
        """Masked-autoencoder pass: (recon, latents, loss)."""
        b, t = frames.shape[0], frames.shape[1]
        n = self.cfg.patches_per_frame
        p = rng.uniform(0.0, self.cfg.mask_prob_max, size=(b, t))
        mask = rng.random((b, t, n)) < p[:, :, None]
        latents = self.encode(frames, mask=mask)
        recon = self.decode(latents)
        loss = mse(recon, frames.data)
        return recon, latents, loss


def forcing_corrupt(latents: np.ndarray, tau: np.ndarray,
                    rng: np.random.Generator) -> np.ndarray:
    """z_tau = (1 - tau) z + tau eps with eps ~ N(0, 1), tau per (batch, frame)."""
    tau = np.asarray(tau, dtype=latents.dtype)[..., None, None]
    eps = rng.standard_normal(latents.shape).astype(latents.dtype)
    return (1.0 - tau) * latents + tau * eps


@dataclass(frozen=True)
class DitConfig:
    model_dim: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    blocks: int = 6
    latent_dim: int = 32
    action_latent_dim: int = 32
    action_vocab: int = 7
    patches_per_frame: int = 16
    max_frames: int = 16

    @property
    def st(self) -> StConfig:
        return StConfig(self.model_dim, self.heads, self.ffn_dim, self.blocks)


class DitDynamics:
    """ST-DiT over MAE latents with prepended action + noise-level tokens."""

    def __init__(self, cfg: DitConfig = DitConfig(), seed: int = 0, dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = stream(seed, "dit-init")
        d = cfg.model_dim
        p: dict = {}
        p["latent_embed.w"] = parameter(rng.normal(0, 0.02, (cfg.latent_dim, d)).astype(dtype))
        p["latent_embed.b"] = parameter(np.zeros(d, dtype=dtype))
        p["action_proj.w"] = parameter(rng.normal(0, 0.02, (cfg.action_latent_dim, d)).astype(dtype))
        p["action_proj.b"] = parameter(np.zeros(d, dtype=dtype))
        p["null_action"] = parameter(rng.normal(0, 0.02, (cfg.action_latent_dim,)).astype(dtype))
        p["gt_action_embed"] = parameter(
            rng.normal(0, 0.02, (cfg.action_vocab, cfg.action_latent_dim)).astype(dtype))
        p["noise_proj.w"] = parameter(rng.normal(0, 0.02, (d, d)).astype(dtype))
        p["noise_proj.b"] = parameter(np.zeros(d, dtype=dtype))
        p["pos_spatial"] = parameter(rng.normal(0, 0.02, (cfg.patches_per_frame + 2, d)).astype(dtype))
        p["pos_temporal"] = parameter(rng.normal(0, 0.02, (cfg.max_frames, d)).astype(dtype))
        p.update(init_st_stack(rng, cfg.st, prefix="dit", dtype=dtype))
        p["to_latent.w"] = parameter(rng.normal(0, 0.02, (d, cfg.latent_dim)).astype(dtype))
        p["to_latent.b"] = parameter(np.zeros(cfg.latent_dim, dtype=dtype))
        self.params = p

    def _conditioning(self, action_latents: Tensor, frames: int) -> Tensor:
        b = action_latents.shape[0]
        if action_latents.shape[1] != frames - 1:
            raise ValueError(f"need {frames - 1} actions for {frames} frames")
        null = self.params["null_action"].reshape(1, 1, self.cfg.action_latent_dim)
        null = null + Tensor(np.zeros((b, 1, self.cfg.action_latent_dim), dtype=action_latents.dtype))
        return concat([null, action_latents], axis=1)

    def predict_clean(self, noised: np.ndarray, tau: np.ndarray,
                      action_latents: Tensor) -> Tensor:
        """x-prediction: estimate the clean latents, (B, T, N, latent_dim)."""
        b, t, n, _ = noised.shape
        d = self.cfg.model_dim
        x = linear(Tensor(noised.astype(self.dtype)),
                   self.params["latent_embed.w"], self.params["latent_embed.b"])
        cond = self._conditioning(action_latents, t)
        act = linear(cond, self.params["action_proj.w"], self.params["action_proj.b"])
        noise_emb = sinusoidal_embedding(tau, d)
        noise_tok = linear(Tensor(noise_emb.astype(self.dtype)),
                           self.params["noise_proj.w"], self.params["noise_proj.b"])
        x = concat([act.reshape(b, t, 1, d), noise_tok.reshape(b, t, 1, d), x], axis=2)
        x = x + self.params["pos_spatial"]
        x = x + self.params["pos_temporal"][:t].reshape(1, t, 1, d)
        x = st_stack(x, self.params, self.cfg.st, prefix="dit")
        return linear(x[:, :, 2:], self.params["to_latent.w"], self.params["to_latent.b"])

    def loss(self, latents: np.ndarray, action_latents: Tensor,
             rng: np.random.Generator) -> Tensor:
        """Ramp-weighted x-prediction loss with per-frame tau ~ U(0, 1)."""
        b, t = latents.shape[:2]
        tau = rng.uniform(0.0, 1.0, size=(b, t))
        noised = forcing_corrupt(latents, tau, rng)
        pred = self.predict_clean(noised, tau, action_latents)
        err = pred - Tensor(latents.astype(self.dtype))
        per_frame = (err * err).mean(axis=(2, 3))             # (B, T)
        weighted = per_frame * Tensor(tau.astype(self.dtype))  # ramp w(tau) = tau
        return weighted.mean()

    def sample_frame(self, context_latents: np.ndarray, action_latents: Tensor,
                     steps: int = 25, context_noise: float = 0.1,
                     rng: np.random.Generator | None = None) -> np.ndarray:
        """Generate the next frame's latents given the context, (B, N, dlat)."""
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if rng is None:
            rng = stream(0, "diffusion-sample")
        b, t_prev, n, dl = context_latents.shape
        z = rng.standard_normal((b, 1, n, dl)).astype(context_latents.dtype)
        for k in range(steps, 0, -1):
            tau_k = k / steps
            tau_prev = (k - 1) / steps
            ctx = forcing_corrupt(context_latents,
                                  np.full((b, t_prev), context_noise), rng)
            full = np.concatenate([ctx, z], axis=1)
            tau = np.concatenate([np.full((b, t_prev), context_noise),
                                  np.full((b, 1), tau_k)], axis=1)
            pred = self.predict_clean(full, tau, action_latents).data[:, -1:]
            z = z + (tau_k - tau_prev) * (pred - z) / tau_k
        return z[:, 0]


def diffusion_rollout(mae: MaeTokenizer, dit: DitDynamics,
                      conditioning_frames: np.ndarray, actions, horizon: int,
                      steps: int = 25, context_noise: float = 0.1,
                      rng: np.random.Generator | None = None,
                      prefix_action_latents: Tensor | None = None) -> np.ndarray:
    """Autoregressive latent-space generation decoded through the MAE."""
    from .autodiff import embedding
    from .tokenizer import frames_to_unit, unit_to_frames
    if len(actions) < horizon:
        raise ValueError(f"need {horizon} actions, got {len(actions)}")
    if rng is None:
        rng = stream(0, "diffusion-rollout")
    b, n_cond = conditioning_frames.shape[:2]
    unit = frames_to_unit(conditioning_frames) if conditioning_frames.dtype == np.uint8 \
        else conditioning_frames
    latents = mae.encode(Tensor(unit.astype(mae.dtype))).data
    dlat = dit.cfg.action_latent_dim
    if prefix_action_latents is not None:
        history = prefix_action_latents
    else:
        null = dit.params["null_action"].detach().reshape(1, 1, dlat)
        history = Tensor(np.zeros((b, n_cond - 1, dlat), dtype=dit.dtype)) + null
    for step in range(horizon):
        action = actions[step]
        if isinstance(action, Tensor):
            lat = action.reshape(b, 1, dlat)
        else:
            lat = embedding(dit.params["gt_action_embed"], np.asarray(action).reshape(b, 1))
        history = concat([history, lat], axis=1)
        nxt = dit.sample_frame(latents, history, steps=steps,
                               context_noise=context_noise, rng=rng)
        latents = np.concatenate([latents, nxt[:, None]], axis=1)
    latents = np.clip(latents, -1.0 + 1e-6, 1.0 - 1e-6)  # bottleneck contract
    frames = mae.decode(Tensor(latents.astype(mae.dtype))).data
    return unit_to_frames(frames)
