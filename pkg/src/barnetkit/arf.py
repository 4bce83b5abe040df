"""Gated multi-scale fusion: compress, pyramid, channel gate.

Coarse feature maps are squeezed to a small common channel count by
1x1 convolutions (the finest map keeps its channels), upsampled to
the finest resolution and concatenated into a pyramid.  A
squeeze-and-excitation style gate, computed from the concatenated
global-average-pool vectors of the same inputs, then reweights every
pyramid channel, letting the network pick which receptive field to
listen to per channel.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionError
from .tensor import (
    Tensor,
    add,
    add_channel_bias,
    concat_channels,
    conv2d,
    global_avg_pool,
    matmul,
    relu,
    reshape,
    scale_channels,
    sigmoid,
    softmax_channels,
    upsample_nearest,
)

__all__ = [
    "PyramidFeature",
    "AdaptiveReceptiveField",
    "build_pyramid",
    "apply_weights",
]


@dataclass
class PyramidFeature:
    """A fused multi-scale map plus bookkeeping about its channels.

    p holds the concatenated pyramid, scale_index records which input
    scale each channel came from, and s is the gate vector (None when
    the module runs ungated).
    """

    p: Tensor
    scale_index: np.ndarray
    s: object


def _dyadic_factor(coarse, fine):
    ch, cw = coarse.shape[1], coarse.shape[2]
    fh, fw = fine.shape[1], fine.shape[2]
    if ch == 0 or cw == 0 or fh % ch or fw % cw or fh // ch != fw // cw:
        raise DimensionError(
            f"pyramid inputs must differ by a dyadic factor, got "
            f"{coarse.shape} against target {fine.shape}")
    factor = fh // ch
    if factor & (factor - 1) or factor > 16:
        raise DimensionError(
            f"pyramid scale ratio must be a power of two <= 16, got {factor}")
    return factor


def build_pyramid(xs):
    """Upsample every coarse map to the finest scale and concatenate.

    Inputs are ordered coarse to fine; consecutive entries must step
    by exactly one factor of two.  Returns the concatenated tensor and
    the per-channel source-scale index.
    """
    if not xs:
        raise ConfigError("build_pyramid: empty input list")
    fine = xs[-1]
    parts = []
    index = []
    for i, x in enumerate(xs):
        expected = 2 ** (len(xs) - 1 - i)
        if i == len(xs) - 1:
            parts.append(x)
        else:
            factor = _dyadic_factor(x, fine)
            if factor != expected:
                raise DimensionError(
                    f"pyramid input {i} sits {factor}x below the target, "
                    f"expected {expected}x")
            parts.append(upsample_nearest(x, factor))
        index.extend([i] * x.shape[0])
    return concat_channels(parts), np.asarray(index)


def apply_weights(p, s):
    """Broadcast per-channel gate: out[c] = s[c] * p[c]."""
    if s.data.ndim != 1 or s.shape[0] != p.shape[0]:
        raise DimensionError(
            f"gate length {s.shape} does not match {p.shape[0]} channels")
    return scale_channels(p, s)


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class AdaptiveReceptiveField:
    """One fusion block bound to a fixed list of input channel counts.

    in_channels lists the inputs coarse to fine; every map except the
    finest is compressed to n channels before fusion.  With
    gated=False the block owns only the compression weights and
    returns the plain pyramid (a unit gate).
    """

    def __init__(self, in_channels, n=8, gate="sigmoid", gated=True,
                 rng=None, name="arf", dtype=np.float32):
        if not in_channels:
            raise ConfigError("adaptive receptive field needs >= 1 input")
        if n < 1:
            raise ConfigError(f"compressed channel count must be >= 1, got {n}")
        if gate not in ("sigmoid", "softmax"):
            raise ConfigError(f"gate must be sigmoid or softmax, got {gate!r}")
        rng = rng or np.random.default_rng(0)
        self.in_channels = tuple(in_channels)
        self.n = n
        self.gate = gate
        self.gated = gated
        self.name = name
        self._params = {}

        for i, c in enumerate(self.in_channels[:-1]):
            w = _he_uniform(rng, (n, c, 1, 1), c, dtype)
            self._params[f"{name}.compress{i}.w"] = Tensor(w, requires_grad=True)
            self._params[f"{name}.compress{i}.b"] = Tensor(
                np.zeros(n, dtype=dtype), requires_grad=True)

        self.c_p = self.in_channels[-1] + n * (len(self.in_channels) - 1)
        if gated:
            if self.c_p % 2:
                raise ConfigError(
                    f"gate bottleneck needs an even channel count, got {self.c_p}")
            half = self.c_p // 2
            self._params[f"{name}.gate.w1"] = Tensor(
                _he_uniform(rng, (half, self.c_p), self.c_p, dtype),
                requires_grad=True)
            self._params[f"{name}.gate.b1"] = Tensor(
                np.zeros((half, 1), dtype=dtype), requires_grad=True)
            self._params[f"{name}.gate.w2"] = Tensor(
                _he_uniform(rng, (self.c_p, half), half, dtype),
                requires_grad=True)
            # start the gates near pass-through (sigmoid(2) ~ 0.88) so the
            # fused pyramid is barely attenuated early in training and the
            # gate only closes where the optimizer finds a reason to
            self._params[f"{name}.gate.b2"] = Tensor(
                np.full((self.c_p, 1), 2.0, dtype=dtype), requires_grad=True)

    def parameters(self):
        return dict(self._params)

    def compress_channels(self, xs):
        """1x1-project all but the finest map down to n channels."""
        if not xs:
            raise ConfigError("compress_channels: empty input list")
        if len(xs) != len(self.in_channels):
            raise DimensionError(
                f"expected {len(self.in_channels)} inputs, got {len(xs)}")
        out = []
        for i, x in enumerate(xs[:-1]):
            w = self._params[f"{self.name}.compress{i}.w"]
            b = self._params[f"{self.name}.compress{i}.b"]
            out.append(add_channel_bias(conv2d(x, w, stride=1, pad=0), b))
        out.append(xs[-1])
        return out

    def scale_weights(self, compressed):
        """Gate vector from the concatenated per-scale pooled summaries."""
        pooled = concat_channels([global_avg_pool(x) for x in compressed])
        v = reshape(pooled, (self.c_p, 1))
        w1 = self._params[f"{self.name}.gate.w1"]
        b1 = self._params[f"{self.name}.gate.b1"]
        w2 = self._params[f"{self.name}.gate.w2"]
        b2 = self._params[f"{self.name}.gate.b2"]
        h = relu(add(matmul(w1, v), b1))
        logits = add(matmul(w2, h), b2)
        if self.gate == "softmax":
            probs = softmax_channels(reshape(logits, (self.c_p, 1, 1)))
            return reshape(probs, (self.c_p,))
        return reshape(sigmoid(logits), (self.c_p,))

    def pyramid(self, xs):
        """Full bookkeeping form of forward: pyramid, sources, gate."""
        compressed = self.compress_channels(xs)
        p, index = build_pyramid(compressed)
        s = self.scale_weights(compressed) if self.gated else None
        return PyramidFeature(p=p, scale_index=index, s=s)

    def forward(self, xs):
        feat = self.pyramid(xs)
        if feat.s is None:
            return feat.p
        return apply_weights(feat.p, feat.s)

    __call__ = forward
