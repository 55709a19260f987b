"""Checkpoint state for the toy stack and the full forward pass.

A checkpoint holds frozen pre-trained block weights, LoRA factors for every
block, conditional adapters for the adapter blocks, and (optionally) the
optimizer moments. It serialises through :mod:`physctrl.tensorio`.
"""

from __future__ import annotations

import copy
from typing import Optional

import numpy as np
import torch

from .. import tensorio
from ..errors import ArtifactIOError, ContractError
from .config import TARGETS, ModelConfig
from .layers import BlockWeights, CondAdapter, LoraDelta, block_forward

FORMAT = "physctrl-checkpoint/1"
MODES = ("joint", "decoupled")
_ADAPTER_PARTS = ("mlp0", "mlp1", "kproj", "vproj")


def _f32_exact(a: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    # values are rounded through float32 so a saved checkpoint reloads exactly
    return torch.from_numpy(np.asarray(a, dtype=np.float32)).to(dtype)


def _pretrained_matrix(rng: np.random.Generator, out_dim: int, in_dim: int, gain: float) -> np.ndarray:
    """Random orthogonal factors around a power-law spectrum, like a trained layer."""
    k = min(out_dim, in_dim)
    u, _ = np.linalg.qr(rng.standard_normal((out_dim, k)))
    v, _ = np.linalg.qr(rng.standard_normal((in_dim, k)))
    s = (np.arange(k) + 1.0) ** -0.5
    s *= gain * np.sqrt(k) / np.linalg.norm(s)
    return (u * s) @ v.T


class Checkpoint:
    def __init__(
        self,
        config: ModelConfig,
        frozen: dict,
        params: dict,
        step: int = 0,
        optim_state: Optional[dict] = None,
        optim_meta: Optional[dict] = None,
    ):
        self.config = config
        self.frozen = frozen
        self.params = params
        self.step = int(step)
        self.optim_state = optim_state or {}
        self.optim_meta = optim_meta or {}

    # construction -----------------------------------------------------------------

    @classmethod
    def fresh(cls, config: ModelConfig, dtype: torch.dtype = torch.float64) -> "Checkpoint":
        """Pre-trained backbone plus zero-effect adaptation (B = 0, zero value projector)."""
        cfg = config
        seeds = np.random.SeedSequence(cfg.init_seed).spawn(3)
        rng_w, rng_l, rng_a = (np.random.default_rng(s) for s in seeds)
        frozen, params = {}, {}
        for i in range(cfg.n_blocks):
            for t in TARGETS:
                fan_in, fan_out = cfg.in_out(t)
                gain = 0.5 if t == "o" else 1.0
                frozen[f"blocks.{i}.w{t}"] = _f32_exact(_pretrained_matrix(rng_w, fan_out, fan_in, gain), dtype)
            hd = cfg.head_dim
            frozen[f"blocks.{i}.norm_q"] = _f32_exact(1.0 + 0.1 * rng_w.standard_normal(hd), dtype)
            frozen[f"blocks.{i}.norm_k"] = _f32_exact(1.0 + 0.1 * rng_w.standard_normal(hd), dtype)
        for i in range(cfg.n_blocks):
            for t in TARGETS:
                fan_in, fan_out = cfg.in_out(t)
                params[f"lora.{i}.{t}.A"] = _f32_exact(rng_l.standard_normal((cfg.lora_rank, fan_in)) / np.sqrt(fan_in), dtype)
                params[f"lora.{i}.{t}.B"] = torch.zeros((fan_out, cfg.lora_rank), dtype=dtype)
        width = cfg.n_cond_tokens * cfg.model_dim
        for i in cfg.adapter_set:
            a = cfg.adapter_dim
            params[f"adapter.{i}.mlp0.weight"] = _f32_exact(rng_a.standard_normal((a, 1)), dtype)
            params[f"adapter.{i}.mlp0.bias"] = _f32_exact(0.1 * rng_a.standard_normal(a), dtype)
            params[f"adapter.{i}.mlp1.weight"] = _f32_exact(rng_a.standard_normal((a, a)) / np.sqrt(a), dtype)
            params[f"adapter.{i}.mlp1.bias"] = torch.zeros(a, dtype=dtype)
            params[f"adapter.{i}.kproj.weight"] = _f32_exact(rng_a.standard_normal((width, a)) / np.sqrt(a), dtype)
            params[f"adapter.{i}.kproj.bias"] = torch.zeros(width, dtype=dtype)
            params[f"adapter.{i}.vproj.weight"] = torch.zeros((width, a), dtype=dtype)
            params[f"adapter.{i}.vproj.bias"] = torch.zeros(width, dtype=dtype)
            if cfg.gate_mode == "learned":
                params[f"gate.{i}"] = torch.full((1,), cfg.gate, dtype=dtype)
        for p in params.values():
            p.requires_grad_(True)
        return cls(cfg, frozen, params)

    def clone(self) -> "Checkpoint":
        params = {k: v.detach().clone().requires_grad_(True) for k, v in self.params.items()}
        frozen = {k: v.clone() for k, v in self.frozen.items()}
        optim = {k: v.clone() for k, v in self.optim_state.items()}
        return Checkpoint(self.config, frozen, params, self.step, optim, copy.deepcopy(self.optim_meta))

    # views --------------------------------------------------------------------------

    @property
    def dtype(self) -> torch.dtype:
        return self.frozen["blocks.0.wq"].dtype

    def block_weights(self, i: int) -> BlockWeights:
        f = self.frozen
        return BlockWeights(
            f[f"blocks.{i}.wq"], f[f"blocks.{i}.wk"], f[f"blocks.{i}.wv"], f[f"blocks.{i}.wo"],
            f[f"blocks.{i}.norm_q"], f[f"blocks.{i}.norm_k"],
        )

    def lora(self, i: int) -> LoraDelta:
        p = self.params
        return LoraDelta({t: (p[f"lora.{i}.{t}.A"], p[f"lora.{i}.{t}.B"]) for t in TARGETS}, self.config.lora_scale)

    def adapter(self, i: int) -> Optional[CondAdapter]:
        if i not in self.config.adapter_set:
            return None
        p = self.params
        return CondAdapter(
            *(p[f"adapter.{i}.{part}.{kind}"] for part in _ADAPTER_PARTS for kind in ("weight", "bias")),
            n_tokens=self.config.n_cond_tokens,
        )

    def gate(self, i: int):
        if self.config.gate_mode == "learned" and f"gate.{i}" in self.params:
            return self.params[f"gate.{i}"]
        return self.config.gate

    def merged_weight(self, i: int, target: str) -> torch.Tensor:
        w = self.frozen[f"blocks.{i}.w{target}"]
        d = self.lora(i).delta(target)
        return (w + d).detach()

    def trainable_names(self, train_lora: bool = True, train_adapter: bool = True) -> list[str]:
        names = []
        for n in sorted(self.params):
            if n.startswith("lora.") and train_lora:
                names.append(n)
            elif (n.startswith("adapter.") or n.startswith("gate.")) and train_adapter:
                names.append(n)
        return names

    # persistence ------------------------------------------------------------------

    def tensors(self) -> dict:
        out = {k: v.detach() for k, v in self.frozen.items()}
        out.update({k: v.detach() for k, v in self.params.items()})
        for k, v in self.optim_state.items():
            out[f"optim.{k}"] = v
        return out

    def metadata(self) -> dict:
        return {"format": FORMAT, "config": self.config.to_dict(), "step": self.step, "optim": self.optim_meta}

    def to_bytes(self) -> bytes:
        return tensorio.encode(self.tensors(), self.metadata())

    def save(self, path) -> None:
        tensorio.save(path, self.tensors(), self.metadata())

    @classmethod
    def from_arrays(cls, arrays: dict, meta: dict, dtype: torch.dtype = torch.float64, source="<bytes>") -> "Checkpoint":
        if meta.get("format") != FORMAT:
            raise ArtifactIOError(f"not a checkpoint (format {meta.get('format')!r})", source)
        config = ModelConfig.from_dict(meta["config"])
        frozen, params, optim = {}, {}, {}
        for name, arr in arrays.items():
            t = torch.from_numpy(arr).to(dtype)
            if name.startswith("blocks."):
                frozen[name] = t
            elif name.startswith("optim."):
                optim[name[len("optim.") :]] = t
            else:
                params[name] = t.requires_grad_(True)
        ckpt = cls(config, frozen, params, meta.get("step", 0), optim, meta.get("optim") or {})
        expected = set(cls.fresh_names(config))
        have = set(frozen) | set(params)
        if have != expected:
            raise ContractError(f"checkpoint tensors do not match its config: missing {sorted(expected - have)[:4]}, extra {sorted(have - expected)[:4]}")
        return ckpt

    @staticmethod
    def fresh_names(config: ModelConfig) -> list[str]:
        names = []
        for i in range(config.n_blocks):
            names += [f"blocks.{i}.w{t}" for t in TARGETS] + [f"blocks.{i}.norm_q", f"blocks.{i}.norm_k"]
            names += [f"lora.{i}.{t}.{m}" for t in TARGETS for m in "AB"]
        for i in config.adapter_set:
            names += [f"adapter.{i}.{p}.{k}" for p in _ADAPTER_PARTS for k in ("weight", "bias")]
            if config.gate_mode == "learned":
                names.append(f"gate.{i}")
        return names

    @classmethod
    def from_bytes(cls, blob: bytes, dtype: torch.dtype = torch.float64) -> "Checkpoint":
        arrays, meta = tensorio.decode(blob)
        return cls.from_arrays(arrays, meta, dtype)

    @classmethod
    def load(cls, path, dtype: torch.dtype = torch.float64) -> "Checkpoint":
        arrays, meta = tensorio.load(path)
        return cls.from_arrays(arrays, meta, dtype, path)


def model_forward(
    latent: torch.Tensor,
    text_emb: torch.Tensor,
    c,
    checkpoint: Checkpoint,
    mode: str = "joint",
    pristine: bool = False,
) -> torch.Tensor:
    """Run every block in order.

    ``joint`` keeps all LoRA deltas, ``decoupled`` keeps them only in adapter
    blocks. ``pristine`` ignores all adaptation and gives the frozen backbone.
    """
    if mode not in MODES:
        raise ContractError(f"mode must be one of {MODES}, got {mode!r}")
    cfg = checkpoint.config
    x = latent
    for i in range(cfg.n_blocks):
        lora = adapter = None
        if not pristine:
            if mode == "joint" or i in cfg.adapter_set:
                lora = checkpoint.lora(i)
            adapter = checkpoint.adapter(i)
        x = block_forward(x, text_emb, c, checkpoint.block_weights(i), lora, adapter, checkpoint.gate(i), cfg.n_heads)
    return x
