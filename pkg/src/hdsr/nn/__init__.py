"""Small numpy network core: layers, sequential networks, SGD training."""

from .layers import (
    BatchNorm,
    Conv2D,
    Dense,
    Flatten,
    GatedRecurrent,
    GlobalAvgPool,
    Layer,
    LeakyReLU,
    MapToSequence,
    MaxPool2D,
    MissingCacheError,
    ShapeError,
    Softmax,
    layer_from_config,
    sigmoid,
)
from .network import Network, NetworkSpec, load_into, load_weights, save_weights
from .train import (
    ArrayDataset,
    EpochRecord,
    NumericalError,
    TrainConfig,
    TrainResult,
    clip_gradients,
    learning_rate,
    read_history,
    sgd_step,
    train,
    warmup_factor,
    weight_decay_grad,
    write_history,
)

__all__ = [
    "ArrayDataset", "BatchNorm", "Conv2D", "Dense", "EpochRecord", "Flatten", "GatedRecurrent",
    "GlobalAvgPool", "Layer", "LeakyReLU", "MapToSequence", "MaxPool2D", "MissingCacheError",
    "Network", "NetworkSpec", "NumericalError", "ShapeError", "Softmax", "TrainConfig",
    "TrainResult", "clip_gradients", "layer_from_config", "learning_rate", "load_into", "load_weights",
    "read_history", "save_weights", "sgd_step", "sigmoid", "train", "warmup_factor", "weight_decay_grad",
    "write_history",
]
