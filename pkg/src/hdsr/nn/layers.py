"""Layer implementations with explicit forward/backward passes.

Image tensors are NHWC, sequences are (N, T, F). Shapes passed to
``output_shape``/``build`` exclude the batch axis.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    pass


class MissingCacheError(RuntimeError):
    pass


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Layer:
    tag = 0
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._cache = None

    def output_shape(self, input_shape):
        return tuple(input_shape)

    def build(self, input_shape, rng, dtype):
        return self.output_shape(input_shape)

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def config(self) -> dict:
        return {"type": self.kind}

    def _take_cache(self):
        if self._cache is None:
            raise MissingCacheError(f"{self.kind}: backward called without a training forward pass")
        cache, self._cache = self._cache, None
        return cache

    def state_arrays(self) -> list[tuple[str, np.ndarray]]:
        return list(self.params.items()) + list(self.buffers.items())


class Conv2D(Layer):
    tag = 1
    kind = "conv"

    def __init__(self, filters, kernel=3, stride=1, padding="same"):
        super().__init__()
        self.filters = int(filters)
        self.kernel = _pair(kernel)
        self.stride = _pair(stride)
        if padding not in ("same", "valid"):
            raise ValueError("padding must be 'same' or 'valid'")
        self.padding = padding
        self.need_input_grad = True

    def _pads(self, h, w):
        kh, kw = self.kernel
        sh, sw = self.stride
        if self.padding == "valid":
            return (0, 0), (0, 0)
        out = []
        for size, k, s in ((h, kh, sh), (w, kw, sw)):
            o = -(-size // s)
            total = max((o - 1) * s + k - size, 0)
            out.append((total // 2, total - total // 2))
        return tuple(out)

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"conv expects (H, W, C), got {input_shape}")
        h, w, _ = input_shape
        (pt, pb), (pl, pr) = self._pads(h, w)
        kh, kw = self.kernel
        sh, sw = self.stride
        ho = (h + pt + pb - kh) // sh + 1
        wo = (w + pl + pr - kw) // sw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"conv kernel {self.kernel} does not fit input {input_shape}")
        return ho, wo, self.filters

    def build(self, input_shape, rng, dtype):
        out = self.output_shape(input_shape)
        c = input_shape[2]
        kh, kw = self.kernel
        fan_in = c * kh * kw
        self.params = {
            "W": he_uniform(rng, (self.filters, c, kh, kw), fan_in, dtype),
            "b": np.zeros(self.filters, dtype=dtype),
        }
        return out

    def forward(self, x, training=False):
        n, h, w, c = x.shape
        (pt, pb), (pl, pr) = self._pads(h, w)
        if pt or pb or pl or pr:
            xp = np.pad(x, ((0, 0), (pt, pb), (pl, pr), (0, 0)))
        else:
            xp = x
        kh, kw = self.kernel
        sh, sw = self.stride
        win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::sh, ::sw]
        ho, wo = win.shape[1], win.shape[2]
        col = win.reshape(n * ho * wo, c * kh * kw)
        wm = self.params["W"].reshape(self.filters, -1)
        out = (col @ wm.T + self.params["b"]).reshape(n, ho, wo, self.filters)
        if training:
            self._cache = (col, xp.shape, (pt, pl), (h, w), (ho, wo))
        return out

    def backward(self, grad):
        col, xp_shape, (pt, pl), (h, w), (ho, wo) = self._take_cache()
        n = grad.shape[0]
        g2 = grad.reshape(-1, self.filters)
        W = self.params["W"]
        self.grads["W"] = (g2.T @ col).reshape(W.shape)
        self.grads["b"] = g2.sum(axis=0)
        kh, kw = self.kernel
        sh, sw = self.stride
        if not self.need_input_grad:
            return None
        c = W.shape[1]
        dcol = (g2 @ W.reshape(self.filters, -1)).reshape(n, ho, wo, c, kh, kw)
        dxp = np.zeros(xp_shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + sh * (ho - 1) + 1:sh, j:j + sw * (wo - 1) + 1:sw, :] += dcol[..., i, j]
        return dxp[:, pt:pt + h, pl:pl + w, :]

    def config(self):
        return {"type": self.kind, "filters": self.filters, "kernel": list(self.kernel),
                "stride": list(self.stride), "padding": self.padding}


class MaxPool2D(Layer):
    """Max pooling with an (h, w) window.

    An integer stride applies only along axes where the window is wider than
    one pixel, so ``MaxPool2D((1, 2), 2)`` halves width and keeps height.
    """

    tag = 2
    kind = "maxpool"

    def __init__(self, window=2, stride=None):
        super().__init__()
        self.window = _pair(window)
        if stride is None:
            stride = self.window
        elif not isinstance(stride, (tuple, list)):
            s = int(stride)
            stride = tuple(s if k > 1 else 1 for k in self.window)
        self.stride = _pair(stride)

    def output_shape(self, input_shape):
        if len(input_shape) != 3:
            raise ShapeError(f"maxpool expects (H, W, C), got {input_shape}")
        h, w, c = input_shape
        ph, pw = self.window
        sh, sw = self.stride
        ho, wo = (h - ph) // sh + 1, (w - pw) // sw + 1
        if ho < 1 or wo < 1:
            raise ShapeError(f"pool window {self.window} does not fit input {input_shape}")
        return ho, wo, c

    def _offsets(self, ho, wo):
        ph, pw = self.window
        sh, sw = self.stride
        for k in range(ph * pw):
            i, j = divmod(k, pw)
            yield k, (slice(None), slice(i, i + sh * (ho - 1) + 1, sh), slice(j, j + sw * (wo - 1) + 1, sw))

    def forward(self, x, training=False):
        ho, wo, _ = self.output_shape(x.shape[1:])
        out = idx = None
        # first maximum wins ties, matching argmax semantics
        for k, sl in self._offsets(ho, wo):
            v = x[sl]
            if out is None:
                out = v.copy()
                idx = np.zeros(out.shape, dtype=np.int8)
            else:
                upd = v > out
                np.copyto(out, v, where=upd)
                idx[upd] = k
        if training:
            self._cache = (x.shape, idx)
        return out

    def backward(self, grad):
        shape, idx = self._take_cache()
        ho, wo = idx.shape[1], idx.shape[2]
        dx = np.zeros(shape, dtype=grad.dtype)
        for k, sl in self._offsets(ho, wo):
            dx[sl] += np.where(idx == k, grad, 0)
        return dx

    def config(self):
        return {"type": self.kind, "window": list(self.window), "stride": list(self.stride)}


class BatchNorm(Layer):
    """Normalizes over every axis but the last; running stats use momentum 0.9."""

    tag = 3
    kind = "batchnorm"

    def __init__(self, momentum=0.9, eps=1e-5):
        super().__init__()
        self.momentum = float(momentum)
        self.eps = float(eps)

    def build(self, input_shape, rng, dtype):
        c = input_shape[-1]
        self.params = {"gamma": np.ones(c, dtype=dtype), "beta": np.zeros(c, dtype=dtype)}
        self.buffers = {"mean": np.zeros(c, dtype=dtype), "var": np.ones(c, dtype=dtype)}
        return tuple(input_shape)

    def forward(self, x, training=False):
        c = x.shape[-1]
        x2 = x.reshape(-1, c)
        if training:
            m = x2.shape[0]
            ones = np.ones(m, dtype=x.dtype)
            mean = (ones @ x2) / m
            xc = x2 - mean
            var = (ones @ (xc * xc)) / m
            mom = self.momentum
            self.buffers["mean"] = (mom * self.buffers["mean"] + (1 - mom) * mean).astype(x.dtype)
            self.buffers["var"] = (mom * self.buffers["var"] + (1 - mom) * var).astype(x.dtype)
        else:
            xc = x2 - self.buffers["mean"]
            var = self.buffers["var"]
        inv = (1.0 / np.sqrt(var + self.eps)).astype(x.dtype)
        xhat = xc * inv
        if training:
            self._cache = (xhat, inv)
        return (xhat * self.params["gamma"] + self.params["beta"]).reshape(x.shape)

    def backward(self, grad):
        xhat, inv = self._take_cache()
        c = grad.shape[-1]
        g2 = grad.reshape(-1, c)
        m = g2.shape[0]
        ones = np.ones(m, dtype=grad.dtype)
        sum_g = ones @ g2
        sum_gx = ones @ (g2 * xhat)
        self.grads["gamma"] = sum_gx
        self.grads["beta"] = sum_g
        gamma = self.params["gamma"]
        dx = (g2 - sum_g / m - xhat * (sum_gx / m)) * (gamma * inv)
        return dx.reshape(grad.shape)

    def config(self):
        return {"type": self.kind, "momentum": self.momentum, "eps": self.eps}


class LeakyReLU(Layer):
    tag = 4
    kind = "leaky_relu"

    def __init__(self, slope=0.1):
        super().__init__()
        self.slope = float(slope)

    def forward(self, x, training=False):
        if training:
            self._cache = x
        if 0 <= self.slope <= 1:
            return np.maximum(x, x * self.slope)
        return np.where(x > 0, x, x * self.slope)

    def backward(self, grad):
        x = self._take_cache()
        scale = np.where(x > 0, 1, self.slope).astype(grad.dtype)
        return grad * scale

    def config(self):
        return {"type": self.kind, "slope": self.slope}


class Dense(Layer):
    """Fully connected layer acting on the last axis."""

    tag = 5
    kind = "dense"

    def __init__(self, units):
        super().__init__()
        self.units = int(units)

    def output_shape(self, input_shape):
        return tuple(input_shape[:-1]) + (self.units,)

    def build(self, input_shape, rng, dtype):
        f = input_shape[-1]
        self.params = {
            "W": he_uniform(rng, (f, self.units), f, dtype),
            "b": np.zeros(self.units, dtype=dtype),
        }
        return self.output_shape(input_shape)

    def forward(self, x, training=False):
        if training:
            self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        x = self._take_cache()
        f = x.shape[-1]
        self.grads["W"] = x.reshape(-1, f).T @ grad.reshape(-1, self.units)
        self.grads["b"] = grad.reshape(-1, self.units).sum(axis=0)
        return grad @ self.params["W"].T

    def config(self):
        return {"type": self.kind, "units": self.units}


class Flatten(Layer):
    tag = 6
    kind = "flatten"

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def forward(self, x, training=False):
        if training:
            self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._take_cache())


class GlobalAvgPool(Layer):
    tag = 7
    kind = "global_avgpool"

    def output_shape(self, input_shape):
        return (input_shape[-1],)

    def forward(self, x, training=False):
        if training:
            self._cache = x.shape
        return x.mean(axis=(1, 2))

    def backward(self, grad):
        shape = self._take_cache()
        return np.broadcast_to(grad[:, None, None, :] / (shape[1] * shape[2]), shape).copy()


class Softmax(Layer):
    tag = 8
    kind = "softmax"

    def forward(self, x, training=False):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        p = e / e.sum(axis=-1, keepdims=True)
        if training:
            self._cache = p
        return p

    def backward(self, grad):
        p = self._take_cache()
        return p * (grad - (grad * p).sum(axis=-1, keepdims=True))


class MapToSequence(Layer):
    """(N, 1, W, C) feature map to a length-W sequence of C-vectors."""

    tag = 9
    kind = "map_to_sequence"

    def output_shape(self, input_shape):
        if len(input_shape) != 3 or input_shape[0] != 1:
            raise ShapeError(f"map-to-sequence needs a height-1 feature map, got {input_shape}")
        return input_shape[1], input_shape[2]

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != 1:
            raise ShapeError(f"map-to-sequence needs a height-1 feature map, got {x.shape[1:]}")
        return x[:, 0]

    def backward(self, grad):
        return grad[:, None]


class GatedRecurrent(Layer):
    """Recurrent layer with an update gate and a tanh candidate.

    z_t = sigmoid(x_t Wz + h_{t-1} Uz + bz)
    c_t = tanh(x_t Wc + h_{t-1} Uc + bc)
    h_t = (1 - z_t) * h_{t-1} + z_t * c_t

    The bidirectional variant runs a second cell over the reversed sequence
    and concatenates [forward, backward] states per frame.
    """

    tag = 10
    kind = "recurrent"

    def __init__(self, hidden, bidirectional=True):
        super().__init__()
        self.hidden = int(hidden)
        self.bidirectional = bool(bidirectional)

    @property
    def directions(self):
        return ("f", "b") if self.bidirectional else ("f",)

    def output_shape(self, input_shape):
        if len(input_shape) != 2:
            raise ShapeError(f"recurrent layer expects (T, F), got {input_shape}")
        return input_shape[0], self.hidden * len(self.directions)

    def build(self, input_shape, rng, dtype):
        out = self.output_shape(input_shape)
        f, h = input_shape[1], self.hidden
        for d in self.directions:
            self.params[f"Wz_{d}"] = he_uniform(rng, (f, h), f, dtype)
            self.params[f"Uz_{d}"] = he_uniform(rng, (h, h), h, dtype)
            self.params[f"bz_{d}"] = np.zeros(h, dtype=dtype)
            self.params[f"Wc_{d}"] = he_uniform(rng, (f, h), f, dtype)
            self.params[f"Uc_{d}"] = he_uniform(rng, (h, h), h, dtype)
            self.params[f"bc_{d}"] = np.zeros(h, dtype=dtype)
        return out

    def _run(self, x, d):
        p = self.params
        n, t, _ = x.shape
        xz = x @ p[f"Wz_{d}"] + p[f"bz_{d}"]
        xc = x @ p[f"Wc_{d}"] + p[f"bc_{d}"]
        h = np.zeros((n, self.hidden), dtype=x.dtype)
        hs, zs, cs = [], [], []
        for step in range(t):
            prev = h
            z = sigmoid(xz[:, step] + prev @ p[f"Uz_{d}"])
            c = np.tanh(xc[:, step] + prev @ p[f"Uc_{d}"])
            h = (1 - z) * prev + z * c
            hs.append(h)
            zs.append(z)
            cs.append(c)
        return np.stack(hs, axis=1), np.stack(zs, axis=1), np.stack(cs, axis=1)

    def forward(self, x, training=False):
        if x.ndim != 3:
            raise ShapeError(f"recurrent layer expects (N, T, F), got {x.shape}")
        outs = []
        cache = {}
        for d in self.directions:
            xd = x if d == "f" else x[:, ::-1]
            hs, zs, cs = self._run(xd, d)
            cache[d] = (xd, hs, zs, cs)
            outs.append(hs if d == "f" else hs[:, ::-1])
        if training:
            self._cache = cache
        return np.concatenate(outs, axis=-1)

    def _back(self, d, xd, hs, zs, cs, g):
        p = self.params
        n, t, f = xd.shape
        hdim = self.hidden
        dh_next = np.zeros((n, hdim), dtype=g.dtype)
        dxz = np.empty_like(zs)
        dxc = np.empty_like(cs)
        dUz = np.zeros_like(p[f"Uz_{d}"])
        dUc = np.zeros_like(p[f"Uc_{d}"])
        for step in range(t - 1, -1, -1):
            prev = hs[:, step - 1] if step > 0 else np.zeros((n, hdim), dtype=g.dtype)
            z, c = zs[:, step], cs[:, step]
            dh = g[:, step] + dh_next
            dz_pre = dh * (c - prev) * z * (1 - z)
            dc_pre = dh * z * (1 - c * c)
            dxz[:, step] = dz_pre
            dxc[:, step] = dc_pre
            dUz += prev.T @ dz_pre
            dUc += prev.T @ dc_pre
            dh_next = dh * (1 - z) + dz_pre @ p[f"Uz_{d}"].T + dc_pre @ p[f"Uc_{d}"].T
        xf = xd.reshape(-1, f)
        self.grads[f"Wz_{d}"] = xf.T @ dxz.reshape(-1, hdim)
        self.grads[f"Wc_{d}"] = xf.T @ dxc.reshape(-1, hdim)
        self.grads[f"bz_{d}"] = dxz.sum(axis=(0, 1))
        self.grads[f"bc_{d}"] = dxc.sum(axis=(0, 1))
        self.grads[f"Uz_{d}"] = dUz
        self.grads[f"Uc_{d}"] = dUc
        return dxz @ p[f"Wz_{d}"].T + dxc @ p[f"Wc_{d}"].T

    def backward(self, grad):
        cache = self._take_cache()
        h = self.hidden
        dx = None
        for k, d in enumerate(self.directions):
            g = grad[..., k * h:(k + 1) * h]
            xd, hs, zs, cs = cache[d]
            if d == "b":
                g = g[:, ::-1]
            dxd = self._back(d, xd, hs, zs, cs, g)
            if d == "b":
                dxd = dxd[:, ::-1]
            dx = dxd if dx is None else dx + dxd
        return dx

    def config(self):
        return {"type": self.kind, "hidden": self.hidden, "bidirectional": self.bidirectional}


LAYER_TYPES = {
    cls.kind: cls
    for cls in (Conv2D, MaxPool2D, BatchNorm, LeakyReLU, Dense, Flatten, GlobalAvgPool,
                Softmax, MapToSequence, GatedRecurrent)
}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("type")
    try:
        cls = LAYER_TYPES[kind]
    except KeyError:
        raise ValueError(f"unknown layer type {kind!r}") from None
    return cls(**cfg)
