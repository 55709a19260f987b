"""Toy diffusion-transformer stack with backbone LoRA and a conditional adapter."""

from .config import GATE_MODES, TARGETS, ModelConfig, OptimConfig, deepest_third
from .layers import (
    BlockWeights,
    CondAdapter,
    LoraDelta,
    adapter_kv,
    block_forward,
    embed_condition,
    merged,
    multihead_attention,
    rms_norm,
    scaled_attention,
)
from .model import MODES, Checkpoint, model_forward
from .surgery import block_summary, pruned_blocks, surgery_prune
from .train import (
    LatentCodec,
    Trainer,
    TrainingSet,
    caption_for,
    load_training_set,
    make_training_set,
    sample_batch,
    text_embedding,
    train_step,
    velocity_loss,
)

__all__ = [
    "GATE_MODES", "TARGETS", "MODES", "ModelConfig", "OptimConfig", "deepest_third",
    "BlockWeights", "CondAdapter", "LoraDelta", "adapter_kv", "block_forward", "embed_condition",
    "merged", "multihead_attention", "rms_norm", "scaled_attention",
    "Checkpoint", "model_forward", "block_summary", "pruned_blocks", "surgery_prune",
    "LatentCodec", "Trainer", "TrainingSet", "caption_for", "load_training_set", "make_training_set",
    "sample_batch", "text_embedding", "train_step", "velocity_loss",
]
