"""Decoder-only MaskGIT dynamics model.

Training: per-sample masks over (time, patch) positions, a learned mask
token, and cross-entropy on the masked positions only.  Conditioning on the
per-step action latent supports three modes: additive (broadcast-added to
every patch embedding of the frame), prepend (inserted as spatial token 0),
and ground-truth embedding (env action id -> latent table, then prepend).

Decoding reveals a fully masked next frame over `steps` parallel refinement
passes with a cosine keep schedule; ties in confidence break by position
index so decoding is deterministic under a fixed rng.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat, embedding, parameter, where
from .nn import linear, softmax_cross_entropy
from .rng import stream
from .st import StConfig, init_st_stack, st_stack


class ConditioningMode(str, enum.Enum):
    ADDITIVE = "additive"
    PREPEND = "prepend"
    GROUND_TRUTH = "ground_truth_embedding"


@dataclass(frozen=True)
class DynamicsConfig:
    model_dim: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    blocks: int = 6
    token_codes: int = 1024          # tokenizer vocabulary
    action_latent_dim: int = 32
    action_vocab: int = 7            # used by the ground-truth embedding table
    patches_per_frame: int = 16
    max_frames: int = 16
    mode: ConditioningMode = ConditioningMode.PREPEND
    mask_limit: float = 0.5

    @property
    def st(self) -> StConfig:
        return StConfig(self.model_dim, self.heads, self.ffn_dim, self.blocks)


def sample_masks(rng: np.random.Generator, batch: int, frames: int, patches: int,
                 mask_limit: float = 0.5, return_p: bool = False):
    """Per-sample Bernoulli masks with p_b ~ U(mask_limit, 1); frame 0 clear.

    With `return_p` the per-sample masking probabilities are returned too, so
    callers can verify the p_b in [mask_limit, 1) invariant directly.
    """
    p = rng.uniform(mask_limit, 1.0, size=batch)
    mask = rng.random((batch, frames, patches)) < p[:, None, None]
    mask[:, 0] = False
    return (mask, p) if return_p else mask


class DynamicsModel:
    def __init__(self, cfg: DynamicsConfig = DynamicsConfig(), seed: int = 0,
                 dtype=np.float32):
        self.cfg = cfg
        self.dtype = dtype
        rng = stream(seed, "dynamics-init")
        d = cfg.model_dim
        p: dict = {}
        p["token_embed"] = parameter(rng.normal(0, 0.02, (cfg.token_codes, d)).astype(dtype))
        p["mask_token"] = parameter(rng.normal(0, 0.02, (d,)).astype(dtype))
        p["null_action"] = parameter(rng.normal(0, 0.02, (cfg.action_latent_dim,)).astype(dtype))
        p["action_proj.w"] = parameter(rng.normal(0, 0.02, (cfg.action_latent_dim, d)).astype(dtype))
        p["action_proj.b"] = parameter(np.zeros(d, dtype=dtype))
        if cfg.mode is ConditioningMode.GROUND_TRUTH:
            p["gt_action_embed"] = parameter(
                rng.normal(0, 0.02, (cfg.action_vocab, cfg.action_latent_dim)).astype(dtype))
        spatial = cfg.patches_per_frame + (0 if cfg.mode is ConditioningMode.ADDITIVE else 1)
        p["pos_spatial"] = parameter(rng.normal(0, 0.02, (spatial, d)).astype(dtype))
        p["pos_temporal"] = parameter(rng.normal(0, 0.02, (cfg.max_frames, d)).astype(dtype))
        p.update(init_st_stack(rng, cfg.st, prefix="dyn", dtype=dtype))
        p["to_logits.w"] = parameter(rng.normal(0, 0.02, (d, cfg.token_codes)).astype(dtype))
        p["to_logits.b"] = parameter(np.zeros(cfg.token_codes, dtype=dtype))
        self.params = p

    # -- conditioning --------------------------------------------------
    def action_latents_for(self, actions, source_codebook: Tensor | None = None) -> Tensor:
        """Map raw actions to latents: indices need a table, Tensors pass through."""
        if isinstance(actions, Tensor):
            return actions
        actions = np.asarray(actions)
        if self.cfg.mode is ConditioningMode.GROUND_TRUTH:
            return embedding(self.params["gt_action_embed"], actions)
        if source_codebook is None:
            raise ValueError("latent action indices need the LAM codebook")
        return embedding(source_codebook, actions)

    def _frame_conditioning(self, action_latents: Tensor, frames: int) -> Tensor:
        """Per-frame conditioning latents c_0..c_{T-1}; c_0 is a learned null."""
        b = action_latents.shape[0]
        if action_latents.shape[1] != frames - 1:
            raise ValueError(f"need {frames - 1} actions for {frames} frames, "
                             f"got {action_latents.shape[1]}")
        null = self.params["null_action"].reshape(1, 1, self.cfg.action_latent_dim)
        null = null + Tensor(np.zeros((b, 1, self.cfg.action_latent_dim), dtype=action_latents.dtype))
        return concat([null, action_latents], axis=1)  # (B, T, dlat)

    def embed_actions(self, action_latents: Tensor, x: Tensor) -> Tensor:
        """Inject conditioning into patch embeddings x of shape (B, T, N, D)."""
        b, t, n, d = x.shape
        cond = self._frame_conditioning(action_latents, t)
        act = linear(cond, self.params["action_proj.w"], self.params["action_proj.b"])
        if self.cfg.mode is ConditioningMode.ADDITIVE:
            return x + act.reshape(b, t, 1, d)
        return concat([act.reshape(b, t, 1, d), x], axis=2)

    # -- forward -------------------------------------------------------
    def logits(self, tokens: np.ndarray, action_latents: Tensor,
               mask: np.ndarray | None = None) -> Tensor:
        """Token logits (B, T, N, K); masked positions use the mask token."""
        b, t, n = tokens.shape
        if n != self.cfg.patches_per_frame:
            raise ValueError("token grid width does not match config")
        d = self.cfg.model_dim
        x = embedding(self.params["token_embed"], tokens)
        if mask is not None:
            x = where(mask[..., None], self.params["mask_token"], x)
        x = self.embed_actions(action_latents, x)
        x = x + self.params["pos_spatial"][:x.shape[2]]
        x = x + self.params["pos_temporal"][:t].reshape(1, t, 1, d)
        x = st_stack(x, self.params, self.cfg.st, prefix="dyn")
        if self.cfg.mode is not ConditioningMode.ADDITIVE:
            x = x[:, :, 1:]  # drop the action token position
        return linear(x, self.params["to_logits.w"], self.params["to_logits.b"])

    def loss(self, tokens: np.ndarray, actions, rng: np.random.Generator,
             source_codebook: Tensor | None = None, mask: np.ndarray | None = None):
        """Masked-token cross-entropy; returns (loss, stats dict)."""
        b, t, n = tokens.shape
        action_latents = self.action_latents_for(actions, source_codebook)
        if mask is None:
            mask = sample_masks(rng, b, t, n, self.cfg.mask_limit)
        stats = {"masked_fraction": float(mask.mean()), "empty_mask": int(mask.sum() == 0)}
        if mask.sum() == 0:
            # degenerate but reachable at tiny T: defined as zero, counted
            from .nn import tensor
            return tensor(0.0, dtype=self.dtype), stats
        logits = self.logits(tokens, action_latents, mask=mask)
        loss = softmax_cross_entropy(logits, tokens, weights=mask.astype(logits.dtype))
        return loss, stats

    # -- sampling ------------------------------------------------------
    def decode_frame(self, prev_tokens: np.ndarray, action_latents: Tensor,
                     steps: int = 25, temperature: float = 1.0,
                     rng: np.random.Generator | None = None) -> np.ndarray:
        """Iteratively unmask the next frame's tokens; returns (B, N) indices.

        `action_latents` is the full (B, t, dlat) latent sequence for
        transitions 0->1 .. t-1->t, ending with the action that produces the
        new frame.
        """
        if steps < 1:
            raise ValueError("steps must be >= 1")
        if rng is None:
            rng = stream(0, "maskgit-decode")
        b, t_prev, n = prev_tokens.shape
        if action_latents.shape[1] != t_prev:
            raise ValueError(f"need {t_prev} action latents, got {action_latents.shape[1]}")
        full_actions = action_latents
        tokens = np.concatenate([prev_tokens, np.zeros((b, 1, n), dtype=prev_tokens.dtype)], axis=1)
        known = np.zeros((b, n), dtype=bool)
        cur = np.zeros((b, n), dtype=prev_tokens.dtype)
        for s in range(1, steps + 1):
            frac_masked = np.cos(np.pi / 2 * s / steps)
            n_keep = n if s == steps else min(n, int(np.ceil(n * (1.0 - frac_masked))))
            n_keep = max(n_keep, int(known[0].sum()))  # never re-mask accepted tokens
            tokens[:, -1] = cur
            mask = np.zeros_like(tokens, dtype=bool)
            mask[:, -1] = ~known
            logits = self.logits(tokens, full_actions, mask=mask).data[:, -1]  # (B, N, K)
            sampled, conf = _sample_with_confidence(logits, temperature, rng)
            cur = np.where(known, cur, sampled)
            conf = np.where(known, np.inf, conf)
            # keep the n_keep highest-confidence tokens; ties break by position
            order = np.lexsort((np.broadcast_to(np.arange(n), conf.shape), -conf), axis=-1)
            keep_idx = order[:, :n_keep]
            new_known = np.zeros_like(known)
            np.put_along_axis(new_known, keep_idx, True, axis=-1)
            known = new_known
        assert known.all(), "decode must leave zero masked positions"
        return cur



def _sample_with_confidence(logits: np.ndarray, temperature: float,
                            rng: np.random.Generator):
    """Categorical sample per position plus the sampled token's probability.

    temperature -> 0 degenerates to argmax with confidence = softmax prob of
    the argmax token.
    """
    scaled = logits / max(temperature, 1e-8)
    scaled = scaled - scaled.max(axis=-1, keepdims=True)
    probs = np.exp(scaled)
    probs /= probs.sum(axis=-1, keepdims=True)
    if temperature < 1e-6:
        sampled = np.argmax(logits, axis=-1)
    else:
        cdf = np.cumsum(probs, axis=-1)
        u = rng.random(logits.shape[:-1] + (1,))
        sampled = (u > cdf).sum(axis=-1)
        sampled = np.minimum(sampled, logits.shape[-1] - 1)
    conf = np.take_along_axis(probs, sampled[..., None], axis=-1)[..., 0]
    return sampled.astype(np.int64), conf


def rollout(tokenizer, dynamics: DynamicsModel, conditioning_frames: np.ndarray,
            actions, horizon: int, steps: int = 25, temperature: float = 1.0,
            rng: np.random.Generator | None = None,
            source_codebook: Tensor | None = None,
            prefix_action_latents: Tensor | None = None) -> np.ndarray:
    """Autoregressive generation: returns uint8 frames (B, 4 + horizon, H, W, C).

    The first 4 output frames are the tokenizer reconstructions of the
    conditioning frames.  `actions` is a sequence of `horizon` per-step
    actions (each an index array (B,) or latent Tensor).
    """
    from .tokenizer import unit_to_frames
    if len(actions) < horizon:
        raise ValueError(f"need {horizon} actions, got {len(actions)}")
    n_cond = conditioning_frames.shape[1]
    if n_cond + horizon > dynamics.cfg.max_frames:
        raise ValueError("horizon exceeds the model's maximum clip length")
    if rng is None:
        rng = stream(0, "rollout")
    tokens = tokenizer.encode(conditioning_frames)
    b = tokens.shape[0]
    dlat = dynamics.cfg.action_latent_dim
    if prefix_action_latents is not None:
        history = prefix_action_latents
    else:
        # actions during the conditioning prefix are unobserved; use the
        # learned null latent for those transitions
        null = dynamics.params["null_action"].detach().reshape(1, 1, dlat)
        history = Tensor(np.zeros((b, n_cond - 1, dlat), dtype=dynamics.dtype)) + null
    for step in range(horizon):
        action = actions[step]
        if isinstance(action, Tensor):
            lat = action.reshape(b, 1, dlat)
        else:
            lat = dynamics.action_latents_for(np.asarray(action).reshape(b, 1), source_codebook)
        history = concat([history, lat], axis=1)
        nxt = dynamics.decode_frame(tokens, history, steps=steps,
                                    temperature=temperature, rng=rng)
        tokens = np.concatenate([tokens, nxt[:, None, :]], axis=1)
    unit = tokenizer.decode(tokens)
    return unit_to_frames(unit)
