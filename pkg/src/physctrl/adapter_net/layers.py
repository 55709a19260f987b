"""Functional building blocks of the jointly trained cross-attention block.

Everything here is a pure function of tensors so gradients can be checked
against finite differences and weights can be swapped without rebuilding
modules.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import torch
import torch.nn.functional as F

from ..errors import ContractError, DomainError

NORM_EPS = 1e-6


@dataclass
class BlockWeights:
    wq: torch.Tensor  # (model_dim, model_dim)
    wk: torch.Tensor  # (model_dim, text_dim)
    wv: torch.Tensor  # (model_dim, text_dim)
    wo: torch.Tensor  # (model_dim, model_dim)
    norm_q: torch.Tensor  # (head_dim,)
    norm_k: torch.Tensor  # (head_dim,)


@dataclass
class LoraDelta:
    factors: dict  # target -> (A: rank x in, B: out x rank)
    scale: float

    def delta(self, target: str) -> Optional[torch.Tensor]:
        if target not in self.factors:
            return None
        a, b = self.factors[target]
        return self.scale * (b @ a)


@dataclass
class CondAdapter:
    mlp0_w: torch.Tensor  # (adapter_dim, 1)
    mlp0_b: torch.Tensor  # (adapter_dim,)
    mlp1_w: torch.Tensor  # (adapter_dim, adapter_dim)
    mlp1_b: torch.Tensor
    kproj_w: torch.Tensor  # (n_tokens * model_dim, adapter_dim)
    kproj_b: torch.Tensor
    vproj_w: torch.Tensor
    vproj_b: torch.Tensor
    n_tokens: int

    @property
    def adapter_dim(self) -> int:
        return self.mlp1_w.shape[0]


def merged(w: torch.Tensor, lora: Optional[LoraDelta], target: str) -> torch.Tensor:
    """W' = W + (alpha/r) B A, or W itself when there is no delta."""
    d = lora.delta(target) if lora is not None else None
    if d is None:
        return w
    if d.shape != w.shape:
        raise ContractError(f"LoRA delta for {target!r} has shape {tuple(d.shape)}, weight has {tuple(w.shape)}")
    return w + d


def rms_norm(x: torch.Tensor, scale: torch.Tensor, n_heads: int) -> torch.Tensor:
    """RMS normalisation over the head dimension of a (..., D) tensor."""
    *lead, d = x.shape
    xh = x.reshape(*lead, n_heads, d // n_heads)
    xh = xh * torch.rsqrt(xh.pow(2).mean(dim=-1, keepdim=True) + NORM_EPS) * scale
    return xh.reshape(*lead, d)


def scaled_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes."""
    if q.shape[-1] != k.shape[-1]:
        raise ContractError(f"query dim {q.shape[-1]} != key dim {k.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ContractError(f"{k.shape[-2]} keys but {v.shape[-2]} values")
    logits = q @ k.transpose(-1, -2) / math.sqrt(q.shape[-1])
    return torch.softmax(logits, dim=-1) @ v


def _split(x: torch.Tensor, n_heads: int) -> torch.Tensor:
    *lead, n, d = x.shape
    return x.reshape(*lead, n, n_heads, d // n_heads).transpose(-2, -3)


def _merge(x: torch.Tensor) -> torch.Tensor:
    *lead, h, n, dh = x.shape
    return x.transpose(-2, -3).reshape(*lead, n, h * dh)


def multihead_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor, n_heads: int) -> torch.Tensor:
    """Split (.., N, D) inputs into heads, attend per head, concatenate back."""
    if q.shape[-1] % n_heads or k.shape[-1] != q.shape[-1] or v.shape[-1] != q.shape[-1]:
        raise ContractError(f"inconsistent widths {q.shape[-1]}, {k.shape[-1]}, {v.shape[-1]} for {n_heads} heads")
    return _merge(scaled_attention(_split(q, n_heads), _split(k, n_heads), _split(v, n_heads)))


def _check_c(c: torch.Tensor) -> None:
    if torch.any(~torch.isfinite(c)) or torch.any(c.abs() > 1):
        raise DomainError(f"condition scalar outside [-1, 1]: {c.detach().cpu().numpy().tolist()}")


def embed_condition(c: Union[float, torch.Tensor], adapter: CondAdapter) -> torch.Tensor:
    """e_cond = W1 silu(W0 c + b0) + b1 for scalar or batched c."""
    c = torch.as_tensor(c, dtype=adapter.mlp0_w.dtype)
    _check_c(c)
    h = F.silu(c.unsqueeze(-1) * adapter.mlp0_w[:, 0] + adapter.mlp0_b)
    return h @ adapter.mlp1_w.T + adapter.mlp1_b


def adapter_kv(e_cond: torch.Tensor, adapter: CondAdapter) -> tuple[torch.Tensor, torch.Tensor]:
    """Token keys/values of shape (..., n_tokens, model_dim) from e_cond."""
    if e_cond.shape[-1] != adapter.adapter_dim:
        raise ContractError(f"e_cond has width {e_cond.shape[-1]}, adapter expects {adapter.adapter_dim}")
    lead = e_cond.shape[:-1]
    k = (e_cond @ adapter.kproj_w.T + adapter.kproj_b).reshape(*lead, adapter.n_tokens, -1)
    v = (e_cond @ adapter.vproj_w.T + adapter.vproj_b).reshape(*lead, adapter.n_tokens, -1)
    return k, v


def block_forward(
    x: torch.Tensor,
    c_text: torch.Tensor,
    c_cond: Union[float, torch.Tensor],
    weights: BlockWeights,
    lora: Optional[LoraDelta] = None,
    adapter: Optional[CondAdapter] = None,
    g: Union[float, torch.Tensor] = 0.5,
    n_heads: int = 1,
) -> torch.Tensor:
    """One adapted cross-attention block.

    x: (B, L, D) latent tokens; c_text: (B, T, text_dim); c_cond: scalar or (B,).
    """
    if x.ndim != 3 or c_text.ndim != 3 or x.shape[0] != c_text.shape[0]:
        raise ContractError(f"expected batched sequences, got x{tuple(x.shape)} and c_text{tuple(c_text.shape)}")
    if x.shape[-1] != weights.wq.shape[1] or c_text.shape[-1] != weights.wk.shape[1]:
        raise ContractError(
            f"widths x={x.shape[-1]}, c_text={c_text.shape[-1]} do not match weights "
            f"{tuple(weights.wq.shape)}, {tuple(weights.wk.shape)}"
        )
    wq, wk, wv, wo = (merged(w, lora, t) for w, t in ((weights.wq, "q"), (weights.wk, "k"), (weights.wv, "v"), (weights.wo, "o")))
    q = rms_norm(x @ wq.T, weights.norm_q, n_heads)
    k_text = rms_norm(c_text @ wk.T, weights.norm_k, n_heads)
    v_text = c_text @ wv.T
    y = multihead_attention(q, k_text, v_text, n_heads)
    if adapter is not None:
        c = torch.as_tensor(c_cond, dtype=x.dtype)
        if c.ndim == 0:
            c = c.expand(x.shape[0])
        k_cond, v_cond = adapter_kv(embed_condition(c, adapter), adapter)
        y = y + g * multihead_attention(q, k_cond, v_cond, n_heads)
    return x + y @ wo.T
