"""Training configurations: desk-scale default plus the paper-scale presets.

A TrainConfig is a flat, JSON-serializable bag of hyperparameters from which
the per-model configs are derived.  `JASMINE_SEED` in the environment
overrides the configured seed.
"""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass

from .diffusion import DitConfig, MaeConfig
from .dynamics import ConditioningMode, DynamicsConfig
from .lam import LamConfig
from .tokenizer import TokenizerConfig

TRAIN_MODES = ("cotrain", "pretrain_lam", "ground_truth")
SEED_ENV_VAR = "JASMINE_SEED"


@dataclass(frozen=True)
class StageConfig:
    steps: int
    batch_size: int
    peak_lr: float
    warmup_steps: int = 1000
    decay_fraction: float = 0.10


@dataclass(frozen=True)
class TrainConfig:
    name: str = "desk"
    seed: int = 0
    mode: str = "pretrain_lam"
    conditioning: str = "prepend"

    # geometry
    height: int = 64
    width: int = 64
    channels: int = 3
    patch: int = 16
    seq_len: int = 8
    action_vocab: int = 7            # env action ids for ground-truth mode

    # shared transformer dims
    model_dim: int = 128
    heads: int = 4
    ffn_dim: int = 128
    tokenizer_blocks: int = 2
    lam_blocks: int = 2
    dynamics_blocks: int = 2

    # vocabularies / latents
    token_codes: int = 256
    lam_codes: int = 6
    latent_dim: int = 16

    # per-stage optimization
    tokenizer_stage: StageConfig = StageConfig(2000, 8, 3e-4, 100)
    lam_stage: StageConfig = StageConfig(2000, 8, 3e-4, 100)
    dynamics_stage: StageConfig = StageConfig(2000, 8, 3e-4, 100)
    diffusion_stage: StageConfig = StageConfig(2000, 8, 3e-4, 100)

    # evaluation / sampling
    eval_every: int = 500
    eval_batch: int = 4
    maskgit_steps: int = 25
    temperature: float = 1.0

    def __post_init__(self):
        if self.mode not in TRAIN_MODES:
            raise ValueError(f"mode must be one of {TRAIN_MODES}, got {self.mode!r}")
        ConditioningMode(self.conditioning)  # raises on unknown value
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        for stage in (self.tokenizer_stage, self.lam_stage,
                      self.dynamics_stage, self.diffusion_stage):
            if stage.steps < 1 or stage.batch_size < 1 or stage.peak_lr <= 0:
                raise ValueError(f"invalid stage config {stage}")

    # -- derived model configs ----------------------------------------
    @property
    def tokenizer_cfg(self) -> TokenizerConfig:
        return TokenizerConfig(model_dim=self.model_dim, heads=self.heads,
                               ffn_dim=self.ffn_dim, blocks=self.tokenizer_blocks,
                               codes=self.token_codes, latent_dim=self.latent_dim,
                               patch=self.patch, height=self.height, width=self.width,
                               channels=self.channels, max_frames=self.seq_len)

    @property
    def lam_cfg(self) -> LamConfig:
        return LamConfig(model_dim=self.model_dim, heads=self.heads,
                         ffn_dim=self.ffn_dim, blocks=self.lam_blocks,
                         codes=self.lam_codes, latent_dim=self.latent_dim,
                         patch=self.patch, height=self.height, width=self.width,
                         channels=self.channels, max_frames=self.seq_len)

    def dynamics_cfg(self, conditioning: str | None = None) -> DynamicsConfig:
        mode = ConditioningMode(conditioning or self.conditioning)
        if self.mode == "ground_truth":
            mode = ConditioningMode.GROUND_TRUTH
        n = (self.height // self.patch) * (self.width // self.patch)
        return DynamicsConfig(model_dim=self.model_dim, heads=self.heads,
                              ffn_dim=self.ffn_dim, blocks=self.dynamics_blocks,
                              token_codes=self.token_codes,
                              action_latent_dim=self.latent_dim,
                              action_vocab=self.action_vocab,
                              patches_per_frame=n, max_frames=self.seq_len, mode=mode)

    @property
    def mae_cfg(self) -> MaeConfig:
        return MaeConfig(model_dim=self.model_dim, heads=self.heads,
                         ffn_dim=self.ffn_dim, blocks=self.tokenizer_blocks,
                         latent_dim=self.latent_dim, patch=self.patch,
                         height=self.height, width=self.width,
                         channels=self.channels, max_frames=self.seq_len)

    @property
    def dit_cfg(self) -> DitConfig:
        n = (self.height // self.patch) * (self.width // self.patch)
        return DitConfig(model_dim=self.model_dim, heads=self.heads,
                         ffn_dim=self.ffn_dim, blocks=self.dynamics_blocks,
                         latent_dim=self.latent_dim, action_latent_dim=self.latent_dim,
                         action_vocab=self.action_vocab, patches_per_frame=n,
                         max_frames=self.seq_len)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        payload = dict(payload)
        for key in ("tokenizer_stage", "lam_stage", "dynamics_stage", "diffusion_stage"):
            if isinstance(payload.get(key), dict):
                payload[key] = StageConfig(**payload[key])
        return cls(**payload)


def resolve_seed(config: TrainConfig) -> int:
    """Config seed, overridden by the JASMINE_SEED environment variable."""
    override = os.environ.get(SEED_ENV_VAR)
    return int(override) if override else config.seed


# Paper-scale presets keep the published hyperparameters available even
# though running them is out of scope for a desk machine.
PRESETS: dict = {
    "desk": TrainConfig(),
    "genie": TrainConfig(
        name="genie", mode="cotrain", conditioning="additive",
        seq_len=16, model_dim=512, heads=8, ffn_dim=512,
        tokenizer_blocks=8, lam_blocks=8, dynamics_blocks=12,
        token_codes=1024, lam_codes=6, latent_dim=32,
        tokenizer_stage=StageConfig(300_000, 48, 3e-4, 1000, 0.0),
        lam_stage=StageConfig(200_000, 48, 3e-5, 1000, 0.0),
        dynamics_stage=StageConfig(200_000, 36, 3e-5, 1000, 0.0),
        diffusion_stage=StageConfig(200_000, 36, 3e-5, 1000, 0.0),
    ),
    "jasmine-base": TrainConfig(
        name="jasmine-base", mode="cotrain", conditioning="prepend",
        seq_len=16, model_dim=512, heads=8, ffn_dim=2048,
        tokenizer_blocks=4, lam_blocks=4, dynamics_blocks=6,
        token_codes=1024, lam_codes=6, latent_dim=32,
        tokenizer_stage=StageConfig(300_000, 48, 3e-4, 1000, 0.10),
        lam_stage=StageConfig(200_000, 48, 3e-5, 1000, 0.10),
        dynamics_stage=StageConfig(200_000, 36, 3e-5, 1000, 0.10),
        diffusion_stage=StageConfig(200_000, 36, 3e-5, 1000, 0.10),
    ),
}


def get_preset(name: str) -> TrainConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
