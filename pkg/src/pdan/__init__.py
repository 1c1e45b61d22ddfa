"""Pyramidal dense attention network for lightweight super-resolution,
with a from-scratch numpy tensor engine, cost model and evaluation kit."""

from .arch import (GrowthSchedule, ModelGraph, NetworkConfig, build_network, forward,
                   growth_schedule, init_weights, joint_attention_forward)
from .checkpoint import load_checkpoint, save_checkpoint
from .cost import conv_cost, network_cost, verify_counts
from .tensor import Tensor, no_grad

__all__ = [
    "GrowthSchedule", "ModelGraph", "NetworkConfig", "Tensor", "build_network", "conv_cost",
    "forward", "growth_schedule", "init_weights", "joint_attention_forward", "load_checkpoint",
    "network_cost", "no_grad", "save_checkpoint", "verify_counts",
]
__version__ = "0.1.0"
