from robustprune.nn.network import (
    FAMILIES,
    ForwardCache,
    LayerSpec,
    Model,
    NetworkSpec,
    apply_buffer_updates,
    backward,
    build_network,
    cross_entropy_loss,
    forward,
    param_layout,
    per_sample_cross_entropy,
    prunable_names,
    trainable_names,
    zeros_model,
)
from robustprune.nn.checkpoint import Checkpoint, CheckpointError, load_checkpoint, save_checkpoint

__all__ = [
    "FAMILIES", "ForwardCache", "LayerSpec", "Model", "NetworkSpec", "apply_buffer_updates",
    "backward", "build_network", "cross_entropy_loss", "forward", "param_layout",
    "per_sample_cross_entropy", "prunable_names", "trainable_names", "zeros_model",
    "Checkpoint", "CheckpointError", "load_checkpoint", "save_checkpoint",
]
