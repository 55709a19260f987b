"""Toy denoising objective, latent codec and the training loop."""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from ..errors import ConfigError, ContractError, TrainingError
from .config import OptimConfig
from .model import Checkpoint, model_forward

PATCH = 8
GRID = 32  # frames are box-downsampled to GRID x GRID before patching
LATENT_SEED = 20240917


class LatentCodec:
    """Fixed linear patch projection between frames and latent tokens.

    Frames are box-averaged to 32x32, cut into 8x8x3 patches (192 values,
    centred on 0.5) and projected onto ``dim`` orthonormal directions. The
    decoder applies the transpose, which is the pseudo-inverse.
    """

    def __init__(self, dim: int, seed: int = LATENT_SEED):
        patch_len = PATCH * PATCH * 3
        if dim > patch_len:
            raise ConfigError(f"latent dim {dim} exceeds patch size {patch_len}")
        q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((patch_len, dim)))
        self.proj = q  # (192, dim), orthonormal columns
        self.dim = dim
        self.tokens_per_frame = (GRID // PATCH) ** 2

    @staticmethod
    def downsample(frame: np.ndarray) -> np.ndarray:
        h, w = frame.shape[:2]
        if h % GRID or w % GRID:
            raise ContractError(f"frame size {w}x{h} is not a multiple of {GRID}")
        return frame.reshape(GRID, h // GRID, GRID, w // GRID, 3).mean(axis=(1, 3))

    def encode(self, frames: Sequence[np.ndarray]) -> np.ndarray:
        small = np.stack([self.downsample(np.asarray(f, dtype=np.float64)) for f in frames])
        t = small.shape[0]
        g = GRID // PATCH
        patches = small.reshape(t, g, PATCH, g, PATCH, 3).transpose(0, 1, 3, 2, 4, 5).reshape(t * g * g, -1)
        return (patches - 0.5) @ self.proj

    def decode(self, tokens: np.ndarray) -> np.ndarray:
        """Tokens (n_frames*16, dim) -> frames (n_frames, 32, 32, 3)."""
        g = GRID // PATCH
        if tokens.shape[0] % (g * g):
            raise ContractError(f"{tokens.shape[0]} tokens do not form whole frames")
        t = tokens.shape[0] // (g * g)
        patches = tokens @ self.proj.T + 0.5
        return patches.reshape(t, g, g, PATCH, PATCH, 3).transpose(0, 1, 3, 2, 4, 5).reshape(t, GRID, GRID, 3)


def text_embedding(prompt: str, n_tokens: int, dim: int) -> np.ndarray:
    """Deterministic stand-in for a text encoder, seeded by the prompt's hash."""
    seed = int.from_bytes(hashlib.sha256(prompt.encode("utf-8")).digest()[:8], "little")
    emb = np.random.default_rng(seed).standard_normal((n_tokens, dim))
    return emb.astype(np.float32).astype(np.float64)


def caption_for(effect: str) -> str:
    return f"a synthetic {effect} clip of moving primitives"


@dataclass
class TrainingSet:
    latents: torch.Tensor  # (N, L, D)
    conditions: torch.Tensor  # (N,)
    text: torch.Tensor  # (T, text_dim), shared caption

    def __len__(self) -> int:
        return self.latents.shape[0]


def make_training_set(clips: Sequence[Sequence[np.ndarray]], conditions: Sequence[float], codec: LatentCodec, text: np.ndarray, dtype=torch.float64) -> TrainingSet:
    if len(clips) != len(conditions) or not clips:
        raise ContractError(f"{len(clips)} clips but {len(conditions)} conditions")
    lat = [codec.encode(f) for f in clips]
    if len({x.shape for x in lat}) != 1:
        raise ContractError("clips have different token counts; train on one effect at a time")
    return TrainingSet(
        torch.as_tensor(np.stack(lat), dtype=dtype),
        torch.as_tensor(np.asarray(conditions, dtype=np.float64), dtype=dtype),
        torch.as_tensor(text, dtype=dtype),
    )


def load_training_set(manifest_path, codec: LatentCodec, n_text_tokens: int, text_dim: int, dtype=torch.float64) -> TrainingSet:
    from ..synth.dataset import DatasetManifest, load_clip_frames

    manifest_path = Path(manifest_path)
    manifest = DatasetManifest.load(manifest_path)
    clips = [load_clip_frames(manifest_path.parent, e) for e in manifest.entries]
    text = text_embedding(caption_for(manifest.effect), n_text_tokens, text_dim)
    return make_training_set(clips, [e["c"] for e in manifest.entries], codec, text, dtype)


def _batch_generator(seed: int, step: int) -> torch.Generator:
    g = torch.Generator()
    g.manual_seed(int(np.random.SeedSequence([seed, step]).generate_state(1, np.uint64)[0] >> np.uint64(1)))
    return g


def sample_batch(data: TrainingSet, batch_size: int, seed: int, step: int):
    """Draw indices, noise levels and noise for one step, reproducibly."""
    gen = _batch_generator(seed, step)
    idx = torch.randint(len(data), (batch_size,), generator=gen)
    x0 = data.latents[idx]
    t = torch.rand(batch_size, generator=gen, dtype=x0.dtype)
    eps = torch.randn(x0.shape, generator=gen, dtype=x0.dtype)
    text = data.text.expand(batch_size, *data.text.shape)
    return {"x0": x0, "t": t, "eps": eps, "text": text, "c": data.conditions[idx]}


def velocity_loss(batch: dict, checkpoint: Checkpoint, mode: str = "joint") -> torch.Tensor:
    """Mean squared error of the predicted velocity eps - x0 at x_t = (1-t) x0 + t eps."""
    x0, eps, t = batch["x0"], batch["eps"], batch["t"][:, None, None]
    xt = (1 - t) * x0 + t * eps
    pred = model_forward(xt, batch["text"], batch["c"], checkpoint, mode) - xt
    return torch.mean((pred - (eps - x0)) ** 2)


class Trainer:
    """AdamW with linear warmup over the LoRA and adapter parameters of a checkpoint.

    The backbone tensors live outside the optimizer entirely, so they
    cannot change.
    """

    def __init__(self, checkpoint: Checkpoint, optim: OptimConfig = OptimConfig()):
        self.checkpoint = checkpoint
        self.optim = optim
        self.names = checkpoint.trainable_names(optim.train_lora, optim.train_adapter)
        for n, p in checkpoint.params.items():
            p.requires_grad_(n in self.names)
        self.opt = torch.optim.AdamW(
            [checkpoint.params[n] for n in self.names],
            lr=optim.lr,
            betas=optim.betas,
            eps=optim.eps,
            weight_decay=optim.weight_decay,
        )
        self.updates = int(checkpoint.optim_meta.get("updates", 0))
        if checkpoint.optim_state:
            self._restore()

    def _restore(self) -> None:
        state = self.checkpoint.optim_state
        for n in self.names:
            if f"{n}.exp_avg" not in state:
                continue
            p = self.checkpoint.params[n]
            self.opt.state[p] = {
                "step": torch.tensor(float(self.updates)),
                "exp_avg": state[f"{n}.exp_avg"].to(p.dtype).clone(),
                "exp_avg_sq": state[f"{n}.exp_avg_sq"].to(p.dtype).clone(),
            }

    def lr_at(self, update: int) -> float:
        if self.optim.warmup == 0:
            return self.optim.lr
        return self.optim.lr * min(1.0, update / self.optim.warmup)

    def step(self, batch: dict, mode: str = "joint") -> float:
        ckpt = self.checkpoint
        self.opt.zero_grad(set_to_none=True)
        loss = velocity_loss(batch, ckpt, mode)
        value = float(loss.detach())
        if not math.isfinite(value):
            raise TrainingError("non-finite loss", ckpt.step + 1)
        loss.backward()
        for group in self.opt.param_groups:
            group["lr"] = self.lr_at(self.updates + 1)
        self.opt.step()
        self.updates += 1
        ckpt.step += 1
        return value

    def export_state(self) -> None:
        """Copy optimizer moments into the checkpoint so it can be persisted."""
        out = {}
        for n in self.names:
            st = self.opt.state.get(self.checkpoint.params[n])
            if st:
                out[f"{n}.exp_avg"] = st["exp_avg"].detach().clone()
                out[f"{n}.exp_avg_sq"] = st["exp_avg_sq"].detach().clone()
        self.checkpoint.optim_state = out
        self.checkpoint.optim_meta = {"updates": self.updates, "config": self.optim.to_dict()}


def train_step(batch: dict, checkpoint: Checkpoint, optim: OptimConfig, trainer: Optional[Trainer] = None) -> float:
    """Single update; pass a persistent ``trainer`` to keep moments across calls."""
    trainer = trainer or Trainer(checkpoint, optim)
    return trainer.step(batch)
