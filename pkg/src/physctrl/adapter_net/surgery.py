"""Decoupled-inference weight surgery."""

from __future__ import annotations

import torch

from .config import TARGETS
from .model import Checkpoint


def pruned_blocks(checkpoint: Checkpoint) -> list[int]:
    keep = set(checkpoint.config.adapter_set)
    return [i for i in range(checkpoint.config.n_blocks) if i not in keep]


def surgery_prune(checkpoint: Checkpoint) -> Checkpoint:
    """Zero the LoRA ``B`` factors outside the adapter blocks.

    With B = 0 the merged weight is exactly the stored original, so the
    shallow blocks run the pre-trained backbone. The matching optimizer
    moments are zeroed too. Returns a new checkpoint; the input is untouched.
    """
    out = checkpoint.clone()
    for i in pruned_blocks(out):
        for t in TARGETS:
            name = f"lora.{i}.{t}.B"
            with torch.no_grad():
                out.params[name].zero_()
            for moment in ("exp_avg", "exp_avg_sq"):
                key = f"{name}.{moment}"
                if key in out.optim_state:
                    out.optim_state[key] = torch.zeros_like(out.optim_state[key])
    return out


def block_summary(checkpoint: Checkpoint) -> list[dict]:
    """Per-block LoRA norm and whether the block keeps its adaptation."""
    keep = set(checkpoint.config.adapter_set)
    rows = []
    for i in range(checkpoint.config.n_blocks):
        lora = checkpoint.lora(i)
        norm = float(sum(torch.linalg.norm(lora.delta(t)).item() ** 2 for t in TARGETS) ** 0.5)
        rows.append({"block": i, "retained": i in keep, "lora_norm": norm, "adapter": i in keep})
    return rows
