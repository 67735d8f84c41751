"""Spatio-temporal transformer backbone.

Each block runs intra-frame (spatial) attention, then causal inter-frame
(temporal) attention, then an FFN, each as a pre-layernorm residual
sub-layer.  Spatial attention never mixes frames; temporal attention never
looks forward.  Shapes are (B, T, S, D) throughout, with S the per-frame
spatial length (patches, plus any prepended conditioning tokens).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, parameter
from .nn import gelu, layer_norm, linear, multi_head_attention


@dataclass(frozen=True)
class StConfig:
    model_dim: int = 512
    heads: int = 8
    ffn_dim: int = 2048
    blocks: int = 4

    def __post_init__(self):
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must divide by heads")
        if self.ffn_dim % self.model_dim != 0 or self.ffn_dim // self.model_dim not in (1, 4):
            raise ValueError("ffn expansion factor must be 1 or 4")


def _init_linear(params: dict, rng, name: str, din: int, dout: int, dtype) -> None:
    params[f"{name}.w"] = parameter((rng.normal(0.0, 0.02, size=(din, dout))).astype(dtype))
    params[f"{name}.b"] = parameter(np.zeros(dout, dtype=dtype))


def _init_ln(params: dict, name: str, dim: int, dtype) -> None:
    params[f"{name}.g"] = parameter(np.ones(dim, dtype=dtype))
    params[f"{name}.b"] = parameter(np.zeros(dim, dtype=dtype))


def init_st_stack(rng, cfg: StConfig, prefix: str = "st", dtype=np.float32) -> dict:
    params: dict = {}
    d, f = cfg.model_dim, cfg.ffn_dim
    for i in range(cfg.blocks):
        base = f"{prefix}.block{i}"
        for sub in ("spatial", "temporal"):
            _init_ln(params, f"{base}.{sub}.ln", d, dtype)
            for proj in ("q", "k", "v", "o"):
                _init_linear(params, rng, f"{base}.{sub}.{proj}", d, d, dtype)
        _init_ln(params, f"{base}.ffn.ln", d, dtype)
        _init_linear(params, rng, f"{base}.ffn.up", d, f, dtype)
        _init_linear(params, rng, f"{base}.ffn.down", f, d, dtype)
    _init_ln(params, f"{prefix}.final_ln", d, dtype)
    return params


def _attend(x: Tensor, params: dict, base: str, heads: int, causal: bool) -> Tensor:
    normed = layer_norm(x, params[f"{base}.ln.g"], params[f"{base}.ln.b"])
    q = linear(normed, params[f"{base}.q.w"], params[f"{base}.q.b"])
    k = linear(normed, params[f"{base}.k.w"], params[f"{base}.k.b"])
    v = linear(normed, params[f"{base}.v.w"], params[f"{base}.v.b"])
    out = multi_head_attention(q, k, v, heads=heads, causal=causal)
    return linear(out, params[f"{base}.o.w"], params[f"{base}.o.b"])


def st_block(x: Tensor, params: dict, cfg: StConfig, index: int, prefix: str = "st") -> Tensor:
    if x.ndim != 4:
        raise ValueError(f"expected (B, T, S, D), got shape {x.shape}")
    base = f"{prefix}.block{index}"
    x = x + _attend(x, params, f"{base}.spatial", cfg.heads, causal=False)
    xt = x.transpose((0, 2, 1, 3))  # (B, S, T, D)
    xt = xt + _attend(xt, params, f"{base}.temporal", cfg.heads, causal=True)
    x = xt.transpose((0, 2, 1, 3))
    normed = layer_norm(x, params[f"{base}.ffn.ln.g"], params[f"{base}.ffn.ln.b"])
    h = gelu(linear(normed, params[f"{base}.ffn.up.w"], params[f"{base}.ffn.up.b"]))
    return x + linear(h, params[f"{base}.ffn.down.w"], params[f"{base}.ffn.down.b"])


def st_stack(x: Tensor, params: dict, cfg: StConfig, prefix: str = "st") -> Tensor:
    for i in range(cfg.blocks):
        x = st_block(x, params, cfg, i, prefix=prefix)
    return layer_norm(x, params[f"{prefix}.final_ln.g"], params[f"{prefix}.final_ln.b"])


def st_stack_param_count(cfg: StConfig) -> int:
    """Closed-form parameter count of one stack (excludes embeddings/heads)."""
    d, f = cfg.model_dim, cfg.ffn_dim
    per_attn = 4 * (d * d + d) + 2 * d          # qkvo + layernorm
    per_ffn = d * f + f + f * d + d + 2 * d     # up/down + layernorm
    per_block = 2 * per_attn + per_ffn
    return cfg.blocks * per_block + 2 * d       # + final layernorm


def param_count(params: dict) -> int:
    return sum(p.data.size for p in params.values())
