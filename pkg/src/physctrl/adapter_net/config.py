"""Model and optimizer configuration for the toy adapter stack."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Optional

from ..errors import ConfigError

GATE_MODES = ("fixed", "learned")
TARGETS = ("q", "k", "v", "o")


def deepest_third(n_blocks: int) -> tuple[int, ...]:
    """Block indices >= ceil(2n/3)."""
    return tuple(range(math.ceil(2 * n_blocks / 3), n_blocks))


@dataclass(frozen=True)
class ModelConfig:
    n_blocks: int = 12
    model_dim: int = 64
    n_heads: int = 4
    text_dim: int = 64
    adapter_blocks: Optional[tuple[int, ...]] = None  # None -> deepest third
    n_cond_tokens: int = 4
    adapter_dim: int = 256
    lora_rank: int = 8
    lora_alpha: Optional[float] = None  # None -> equal to the rank (unit scale)
    gate: float = 0.5
    gate_mode: str = "fixed"
    n_text_tokens: int = 8
    init_seed: int = 0

    def __post_init__(self):
        if self.n_blocks < 1:
            raise ConfigError(f"n_blocks must be >= 1, got {self.n_blocks}")
        if self.model_dim % self.n_heads:
            raise ConfigError(f"model_dim {self.model_dim} is not divisible by n_heads {self.n_heads}")
        if not (0 < self.lora_rank < min(self.model_dim, self.text_dim)):
            raise ConfigError(f"lora_rank {self.lora_rank} must lie in (0, {min(self.model_dim, self.text_dim)})")
        if self.gate_mode not in GATE_MODES:
            raise ConfigError(f"gate_mode must be one of {GATE_MODES}, got {self.gate_mode!r}")
        if self.n_cond_tokens < 1 or self.adapter_dim < 1 or self.n_text_tokens < 1:
            raise ConfigError("n_cond_tokens, adapter_dim and n_text_tokens must be positive")
        blocks = self.adapter_set
        if any(not (0 <= b < self.n_blocks) for b in blocks):
            raise ConfigError(f"adapter_blocks {sorted(blocks)} fall outside [0, {self.n_blocks})")

    @property
    def adapter_set(self) -> tuple[int, ...]:
        if self.adapter_blocks is None:
            return deepest_third(self.n_blocks)
        return tuple(sorted(set(int(b) for b in self.adapter_blocks)))

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.n_heads

    @property
    def lora_scale(self) -> float:
        alpha = self.lora_rank if self.lora_alpha is None else self.lora_alpha
        return float(alpha) / self.lora_rank

    def in_out(self, target: str) -> tuple[int, int]:
        """(in_dim, out_dim) of the projection ``target``."""
        if target in ("k", "v"):
            return self.text_dim, self.model_dim
        return self.model_dim, self.model_dim

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adapter_blocks"] = list(self.adapter_set)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        data = dict(data)
        if data.get("adapter_blocks") is not None:
            data["adapter_blocks"] = tuple(data["adapter_blocks"])
        return cls(**data)

    @classmethod
    def full_scale_preset(cls, **overrides) -> "ModelConfig":
        """Adapter and LoRA sizes of the full-scale recipe, on the toy backbone."""
        base = dict(adapter_dim=256, lora_rank=32, n_cond_tokens=4, gate=0.5, gate_mode="fixed")
        base.update(overrides)
        return cls(**base)


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 2e-5
    warmup: int = 100
    betas: tuple[float, float] = (0.9, 0.99)
    weight_decay: float = 0.01
    eps: float = 1e-8
    train_lora: bool = True
    train_adapter: bool = True

    def __post_init__(self):
        if self.lr < 0 or self.warmup < 0 or self.weight_decay < 0:
            raise ConfigError("lr, warmup and weight_decay must be non-negative")
        if not (0 <= self.betas[0] < 1 and 0 <= self.betas[1] < 1):
            raise ConfigError(f"betas {self.betas} must lie in [0, 1)")
        if not (self.train_lora or self.train_adapter):
            raise ConfigError("nothing to train: both train_lora and train_adapter are off")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "OptimConfig":
        data = dict(data)
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown optimizer config keys: {sorted(unknown)}")
        if "betas" in data:
            data["betas"] = tuple(data["betas"])
        return cls(**data)
