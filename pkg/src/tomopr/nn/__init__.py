"""From-scratch 3D convolutional refiner: layers, training, tiled inference."""

from tomopr.nn.inference import TILE_OVERLAP, infer_tiled
from tomopr.nn.layers import BatchNormParams, batch_norm, conv3d, relu, sigmoid
from tomopr.nn.network import (
    ConvLayer,
    LayerSpec,
    Network,
    build_network,
    default_layer_specs,
    read_network,
    write_network,
)
from tomopr.nn.training import (
    AdamState,
    TrainConfig,
    TrainResult,
    adam_step,
    loss,
    loss_and_grad,
    train,
)

__all__ = [
    "AdamState",
    "BatchNormParams",
    "ConvLayer",
    "LayerSpec",
    "Network",
    "TILE_OVERLAP",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "batch_norm",
    "build_network",
    "conv3d",
    "default_layer_specs",
    "infer_tiled",
    "loss",
    "loss_and_grad",
    "read_network",
    "train",
    "write_network",
]
