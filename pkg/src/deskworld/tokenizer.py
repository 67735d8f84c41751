"""VQ-VAE video tokenizer over image patches.

Encoder: patchify -> linear embed (+ learned spatial/temporal positions) ->
ST stack -> linear to the latent dim.  The latent is vector-quantized against
a learned codebook; the decoder mirrors the encoder back to pixels.  Pixels
are handled in [-1, 1].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, parameter
from .nn import linear, mse, patchify, unpatchify
from .rng import stream
from .st import StConfig, init_st_stack, st_stack


@dataclass(frozen=True)
class TokenizerConfig:
    model_dim: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    blocks: int = 4
    codes: int = 1024
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


def frames_to_unit(frames: np.ndarray) -> np.ndarray:
    """uint8 pixels -> f32 in [-1, 1]."""
    return (frames.astype(np.float32) / 127.5) - 1.0


def unit_to_frames(unit: np.ndarray) -> np.ndarray:
    return np.clip((unit + 1.0) * 127.5, 0.0, 255.0).round().astype(np.uint8)


def vq_quantize(z_e: Tensor, codebook: Tensor):
    """Nearest-code quantization with straight-through gradients.

    Returns (indices, z_q_st, codebook_loss, commitment_loss).  Ties in the
    distance argmin break toward the lowest code index.
    """
    if codebook.shape[0] == 0:
        raise ValueError("empty codebook")
    if z_e.shape[-1] != codebook.shape[-1]:
        raise ValueError("latent dim mismatch with codebook")
    flat = z_e.data.reshape(-1, z_e.shape[-1])
    d2 = (np.sum(flat ** 2, axis=1, keepdims=True)
          - 2.0 * flat @ codebook.data.T
          + np.sum(codebook.data ** 2, axis=1))
    indices = np.argmin(d2, axis=1).reshape(z_e.shape[:-1])
    from .autodiff import embedding
    z_q = embedding(codebook, indices)
    codebook_loss = mse(z_q, z_e.data)
    commitment_loss = mse(z_e, z_q.data)
    # straight-through: value is z_q, gradient w.r.t. z_e is identity
    z_q_st = z_e + Tensor(z_q.data - z_e.data)
    return indices, z_q_st, codebook_loss, commitment_loss


class VideoTokenizer:
    def __init__(self, cfg: TokenizerConfig = TokenizerConfig(), seed: int = 0,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = stream(seed, "tokenizer-init")
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
        p["from_latent.w"] = parameter(rng.normal(0, 0.02, (cfg.latent_dim, d)).astype(dtype))
        p["from_latent.b"] = parameter(np.zeros(d, dtype=dtype))
        p.update(init_st_stack(rng, cfg.st, prefix="dec", dtype=dtype))
        p["to_pixels.w"] = parameter(rng.normal(0, 0.02, (d, cfg.patch_dim)).astype(dtype))
        p["to_pixels.b"] = parameter(np.zeros(cfg.patch_dim, dtype=dtype))
        self.params = p

    def _check_geometry(self, frames) -> None:
        b, t, h, w, c = frames.shape
        if (h, w, c) != (self.cfg.height, self.cfg.width, self.cfg.channels):
            raise ValueError(f"frame geometry {(h, w, c)} does not match config")
        if t > self.cfg.max_frames:
            raise ValueError(f"clip length {t} exceeds max_frames {self.cfg.max_frames}")

    def _embed(self, frames: Tensor) -> Tensor:
        t = frames.shape[1]
        x = patchify(frames, self.cfg.patch)
        x = linear(x, self.params["patch_embed.w"], self.params["patch_embed.b"])
        x = x + self.params["pos_spatial"]
        x = x + self.params["pos_temporal"][:t].reshape(1, t, 1, self.cfg.model_dim)
        return x

    def encode_latent(self, frames: Tensor) -> Tensor:
        """Pre-quantization latents z_e of shape (B, T, N, latent_dim)."""
        self._check_geometry(frames)
        x = self._embed(frames)
        x = st_stack(x, self.params, self.cfg.st, prefix="enc")
        return linear(x, self.params["to_latent.w"], self.params["to_latent.b"])

    def decode_latent(self, z_q: Tensor) -> Tensor:
        x = linear(z_q, self.params["from_latent.w"], self.params["from_latent.b"])
        x = st_stack(x, self.params, self.cfg.st, prefix="dec")
        x = linear(x, self.params["to_pixels.w"], self.params["to_pixels.b"])
        return unpatchify(x, self.cfg.patch, self.cfg.height, self.cfg.width, self.cfg.channels)

    def forward(self, frames: Tensor):
        """Full pass: returns (recon, token indices, loss terms dict)."""
        z_e = self.encode_latent(frames)
        indices, z_q, codebook_loss, commitment_loss = vq_quantize(z_e, self.params["codebook"])
        recon = self.decode_latent(z_q)
        recon_loss = mse(recon, frames.data)
        total = recon_loss + codebook_loss + self.cfg.commitment_beta * commitment_loss
        losses = {"recon": recon_loss, "codebook": codebook_loss,
                  "commitment": commitment_loss, "total": total}
        return recon, indices, losses

    def encode(self, frames: np.ndarray) -> np.ndarray:
        """uint8 or unit-range frames -> (B, T, N) token grid."""
        unit = frames_to_unit(frames) if frames.dtype == np.uint8 else frames
        z_e = self.encode_latent(Tensor(unit.astype(self.dtype)))
        indices, _, _, _ = vq_quantize(z_e, self.params["codebook"])
        return indices

    def decode(self, tokens: np.ndarray) -> np.ndarray:
        """(B, T, N) token grid -> unit-range frames."""
        if tokens.max(initial=0) >= self.cfg.codes or tokens.min(initial=0) < 0:
            raise IndexError(f"token index outside [0, {self.cfg.codes})")
        from .autodiff import embedding
        z_q = embedding(self.params["codebook"], tokens)
        return self.decode_latent(z_q).data
