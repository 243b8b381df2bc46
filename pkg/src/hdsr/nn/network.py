"""Sequential networks, weight files and the network description format."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .layers import Layer, ShapeError, Softmax, layer_from_config

MAGIC = b"HDSR"
FORMAT_VERSION = 1


@dataclass
class NetworkSpec:
    """Ordered layer descriptors plus the per-sample input shape."""

    input_shape: tuple[int, ...]
    layers: list[dict] = field(default_factory=list)

    def to_json(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [dict(l) for l in self.layers]}

    @classmethod
    def from_json(cls, d: dict) -> "NetworkSpec":
        return cls(tuple(d["input_shape"]), [dict(l) for l in d["layers"]])


class Network:
    def __init__(self, spec: NetworkSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.layers: list[Layer] = [layer_from_config(c) for c in spec.layers]
        heads = [i for i, l in enumerate(self.layers) if isinstance(l, Softmax)]
        if len(heads) > 1 or (heads and heads[0] != len(self.layers) - 1):
            raise ShapeError("at most one softmax head, and only as the last layer")
        rng = np.random.default_rng([seed, 101])
        shape = tuple(spec.input_shape)
        self.shapes = [shape]
        for layer in self.layers:
            shape = layer.build(shape, rng, self.dtype)
            self.shapes.append(tuple(shape))
        if self.layers and hasattr(self.layers[0], "need_input_grad"):
            self.layers[0].need_input_grad = False

    @property
    def input_shape(self):
        return self.shapes[0]

    @property
    def output_shape(self):
        return self.shapes[-1]

    def forward(self, x, training=False):
        x = np.asarray(x)
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"input shape {x.shape[1:]} does not match network input {self.input_shape}")
        x = x.astype(self.dtype, copy=False)
        for layer in self.layers:
            x = layer.forward(x, training=training)
        return x

    def backward(self, grad):
        grad = np.asarray(grad, dtype=self.dtype)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad  # None when the first layer skips its input gradient

    def predict(self, x, batch_size=256):
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs) if outs else np.zeros((0,) + self.output_shape, self.dtype)

    def parameters(self):
        """Yield (key, array) for every trainable parameter, in a stable order."""
        for i, layer in enumerate(self.layers):
            for name, arr in layer.params.items():
                yield (i, name), arr

    def gradients(self):
        for i, layer in enumerate(self.layers):
            for name in layer.params:
                yield (i, name), layer.grads[name]

    def get_weights(self) -> list[list[np.ndarray]]:
        return [[a.copy() for _, a in layer.state_arrays()] for layer in self.layers]

    def set_weights(self, weights):
        if len(weights) != len(self.layers):
            raise ShapeError("weight list does not match layer count")
        for layer, arrays in zip(self.layers, weights):
            names = [n for n, _ in layer.state_arrays()]
            if len(names) != len(arrays):
                raise ShapeError(f"{layer.kind}: expected {len(names)} arrays, got {len(arrays)}")
            for name, arr in zip(names, arrays):
                target = layer.params if name in layer.params else layer.buffers
                if target[name].shape != np.shape(arr):
                    raise ShapeError(f"{layer.kind}.{name}: shape {np.shape(arr)} != {target[name].shape}")
                target[name] = np.array(arr, dtype=self.dtype)

    def param_count(self) -> int:
        return sum(a.size for _, a in self.parameters())


def save_weights(net_or_weights, path, layers=None):
    """Write the HDSR weight file: magic, version, layer count, then per layer
    its type tag, array count and each array as (ndim, dims, float32 LE data)."""
    if isinstance(net_or_weights, Network):
        layers = net_or_weights.layers
        weights = net_or_weights.get_weights()
    else:
        weights = net_or_weights
    tags = [l.tag for l in layers] if layers is not None else [0] * len(weights)
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(weights)))
        for tag, arrays in zip(tags, weights):
            fh.write(struct.pack("<II", tag, len(arrays)))
            for arr in arrays:
                arr = np.ascontiguousarray(arr, dtype="<f4")
                fh.write(struct.pack("<I", arr.ndim))
                fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
                fh.write(arr.tobytes())


def load_weights(path):
    """Return ``(tags, weights)`` from an HDSR weight file."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != MAGIC:
        raise ValueError(f"{path}: not an HDSR weight file")
    version, count = struct.unpack_from("<II", data, 4)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off = 12
    tags, weights = [], []
    for _ in range(count):
        tag, n_arrays = struct.unpack_from("<II", data, off)
        off += 8
        arrays = []
        for _ in range(n_arrays):
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f4", count=size, offset=off).reshape(shape)
            off += 4 * size
            arrays.append(arr.astype(np.float32))
        tags.append(tag)
        weights.append(arrays)
    if off != len(data):
        raise ValueError(f"{path}: {len(data) - off} trailing bytes")
    return tags, weights


def load_into(net: Network, path):
    tags, weights = load_weights(path)
    expected = [l.tag for l in net.layers]
    if tags != expected:
        raise ShapeError(f"{path}: layer tags {tags} do not match network {expected}")
    net.set_weights(weights)
    return net
