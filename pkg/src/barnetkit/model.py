"""Miniature encoder-decoder segmentation network.

A full-resolution stem feeds four residual encoder stages that halve
resolution at widths 16/32/64/128.  The two coarsest outputs pass
through the parameter-free bilinear attention block; the decoder then
mirrors the encoder with four stages that double resolution back to
the input size.  Each decoder stage fuses every coarser decoder
output together with the skip at its target scale (the stem for the
finest stage) through a gated multi-scale fusion block, followed by a
3x3 conv.  A 1x1 conv head maps the finest decoder output to
per-pixel class logits.

Both attention mechanisms can be disabled independently: without
bilinear attention the encoder outputs pass straight through (the
descriptor is never formed), and without gating the fusion blocks
return the plain channel pyramid.
"""

import numpy as np

from .arf import AdaptiveReceptiveField
from .bam import bam_forward
from .errors import ConfigError, DimensionError
from .tensor import (
    Tensor,
    add,
    add_channel_bias,
    avg_pool2,
    batch_norm,
    conv2d,
    relu,
)

__all__ = ["BatchNorm", "ResidualBlock", "BarnetMini", "ablate"]


def _he_uniform(rng, shape, fan_in, dtype):
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class BatchNorm:
    """Per-channel standardization with learned affine and running stats.

    Maps flow through one image at a time, so the map's own statistics
    are the only ones training ever sees, and the network learns to
    lean on them (they also cancel global brightness shifts).  The
    layer therefore standardizes by the current map in inference too;
    the running estimates are still tracked during training and saved
    with checkpoints as a record of the feature statistics.
    """

    def __init__(self, channels, name, dtype=np.float32, momentum=0.1):
        self.name = name
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def __call__(self, x, training):
        if training:
            mu = x.data.mean(axis=(1, 2))
            var = x.data.var(axis=(1, 2))
            m = self.momentum
            self.running_mean += (m * (mu - self.running_mean)).astype(
                self.running_mean.dtype)
            self.running_var += (m * (var - self.running_var)).astype(
                self.running_var.dtype)
        return batch_norm(x, self.gamma, self.beta,
                          self.running_mean, self.running_var, training=True)

    def parameters(self):
        return {f"{self.name}.gamma": self.gamma, f"{self.name}.beta": self.beta}

    def buffers(self):
        return {f"{self.name}.running_mean": self.running_mean,
                f"{self.name}.running_var": self.running_var}


class ResidualBlock:
    """conv-bn-relu-conv-bn plus a projected shortcut, relu after the sum."""

    def __init__(self, c_in, c_out, name, rng, dtype=np.float32):
        self.name = name
        self.w1 = Tensor(_he_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, dtype),
                         requires_grad=True)
        self.bn1 = BatchNorm(c_out, f"{name}.bn1", dtype)
        self.w2 = Tensor(_he_uniform(rng, (c_out, c_out, 3, 3), c_out * 9, dtype),
                         requires_grad=True)
        self.bn2 = BatchNorm(c_out, f"{name}.bn2", dtype)
        if c_in != c_out:
            self.wp = Tensor(_he_uniform(rng, (c_out, c_in, 1, 1), c_in, dtype),
                             requires_grad=True)
            self.bnp = BatchNorm(c_out, f"{name}.bnp", dtype)
        else:
            self.wp = None
            self.bnp = None

    def __call__(self, x, training):
        h = relu(self.bn1(conv2d(x, self.w1, stride=1, pad=1), training))
        h = self.bn2(conv2d(h, self.w2, stride=1, pad=1), training)
        if self.wp is None:
            shortcut = x
        else:
            shortcut = self.bnp(conv2d(x, self.wp, stride=1, pad=0), training)
        return relu(add(h, shortcut))

    def parameters(self):
        out = {f"{self.name}.w1": self.w1, f"{self.name}.w2": self.w2}
        out.update(self.bn1.parameters())
        out.update(self.bn2.parameters())
        if self.wp is not None:
            out[f"{self.name}.wp"] = self.wp
            out.update(self.bnp.parameters())
        return out

    def buffers(self):
        out = {}
        out.update(self.bn1.buffers())
        out.update(self.bn2.buffers())
        if self.bnp is not None:
            out.update(self.bnp.buffers())
        return out


class _DecoderStage:
    """3x3 conv + bn + relu applied to a fused (or raw) feature map."""

    def __init__(self, c_in, c_out, name, rng, dtype):
        self.name = name
        self.w = Tensor(_he_uniform(rng, (c_out, c_in, 3, 3), c_in * 9, dtype),
                        requires_grad=True)
        self.bn = BatchNorm(c_out, f"{name}.bn", dtype)

    def __call__(self, x, training):
        return relu(self.bn(conv2d(x, self.w, stride=1, pad=1), training))

    def parameters(self):
        out = {f"{self.name}.w": self.w}
        out.update(self.bn.parameters())
        return out

    def buffers(self):
        return self.bn.buffers()


class BarnetMini:
    """The assembled network; see the module docstring for the wiring."""

    def __init__(self, num_classes, widths=(16, 32, 64, 128), n=8,
                 gate="sigmoid", use_bam=True, use_arf=True, seed=0,
                 dtype=np.float32):
        if num_classes < 2:
            raise ConfigError(f"need >= 2 classes, got {num_classes}")
        if len(widths) != 4:
            raise ConfigError(f"expected 4 encoder widths, got {widths}")
        rng = np.random.default_rng(seed)
        self.num_classes = num_classes
        self.widths = tuple(widths)
        self.n = n
        self.gate = gate
        self.use_bam = use_bam
        self.use_arf = use_arf
        self.seed = seed
        self.dtype = dtype

        w1, w2, w3, w4 = self.widths
        s = max(w1 // 2, 2)
        self.stem_channels = s
        self.stem = _DecoderStage(3, s, "stem", rng, dtype)
        # each stage: a width-changing block then a width-keeping one
        self.enc = []
        c_in = s
        for i, width in enumerate(self.widths, start=1):
            self.enc.append((ResidualBlock(c_in, width, f"enc{i}", rng, dtype),
                             ResidualBlock(width, width, f"enc{i}b", rng,
                                           dtype)))
            c_in = width

        # decoder constructs coarse-to-fine; each fusion block receives
        # every coarser decoder output plus the skip at its target scale
        self.arf4 = AdaptiveReceptiveField(
            [w4, w3], n=n, gate=gate, gated=use_arf, rng=rng, name="arf4",
            dtype=dtype)
        self.dec4 = _DecoderStage(self.arf4.c_p, w3, "dec4", rng, dtype)
        self.arf3 = AdaptiveReceptiveField(
            [w3, w2], n=n, gate=gate, gated=use_arf, rng=rng, name="arf3",
            dtype=dtype)
        self.dec3 = _DecoderStage(self.arf3.c_p, w2, "dec3", rng, dtype)
        self.arf2 = AdaptiveReceptiveField(
            [w3, w2, w1], n=n, gate=gate, gated=use_arf, rng=rng, name="arf2",
            dtype=dtype)
        self.dec2 = _DecoderStage(self.arf2.c_p, w1, "dec2", rng, dtype)
        self.arf1 = AdaptiveReceptiveField(
            [w3, w2, w1, s], n=n, gate=gate, gated=use_arf, rng=rng,
            name="arf1", dtype=dtype)
        self.dec1 = _DecoderStage(self.arf1.c_p, w1, "dec1", rng, dtype)

        self.head_w = Tensor(
            _he_uniform(rng, (num_classes, w1, 1, 1), w1, dtype),
            requires_grad=True)
        self.head_b = Tensor(np.zeros(num_classes, dtype=dtype),
                             requires_grad=True)

    def _modules(self):
        blocks = [b for stage in self.enc for b in stage]
        return ([self.stem] + blocks +
                [self.arf4, self.dec4, self.arf3, self.dec3,
                 self.arf2, self.dec2, self.arf1, self.dec1])

    def parameters(self):
        out = {}
        for m in self._modules():
            out.update(m.parameters())
        out["head.w"] = self.head_w
        out["head.b"] = self.head_b
        return out

    def buffers(self):
        out = {}
        for m in self._modules():
            if hasattr(m, "buffers"):
                out.update(m.buffers())
        return out

    def forward(self, image, training=False):
        if image.data.ndim != 3 or image.shape[0] != 3:
            raise DimensionError(f"expected a [3,H,W] image, got {image.shape}")
        _, h, w = image.shape
        if h % 16 or w % 16:
            raise DimensionError(
                f"spatial extents must be divisible by 16, got {h}x{w}; "
                f"pad to {-(-h // 16) * 16}x{-(-w // 16) * 16}")

        s0 = self.stem(image, training)
        e = []
        x = s0
        for first, second in self.enc:
            x = second(first(avg_pool2(x), training), training)
            e.append(x)
        e1, e2, e3, e4 = e
        if self.use_bam:
            e3 = bam_forward(e3)
            e4 = bam_forward(e4)

        d4 = self.dec4(self.arf4([e4, e3]), training)
        d3 = self.dec3(self.arf3([d4, e2]), training)
        d2 = self.dec2(self.arf2([d4, d3, e1]), training)
        d1 = self.dec1(self.arf1([d4, d3, d2, s0]), training)

        return add_channel_bias(conv2d(d1, self.head_w, stride=1, pad=0),
                                self.head_b)

    __call__ = forward


def ablate(model, use_bam, use_arf):
    """Variant of a model with either attention mechanism switched off.

    The returned network shares no storage with the source; weights
    present in both configurations are copied over, so a full model
    restricted to its basic subset keeps its trained filters.
    """
    variant = BarnetMini(model.num_classes, widths=model.widths, n=model.n,
                         gate=model.gate, use_bam=use_bam, use_arf=use_arf,
                         seed=model.seed, dtype=model.dtype)
    source = model.parameters()
    for name, tensor in variant.parameters().items():
        if name in source and source[name].shape == tensor.shape:
            tensor.data[...] = source[name].data
    src_buf = model.buffers()
    for name, buf in variant.buffers().items():
        if name in src_buf:
            buf[...] = src_buf[name]
    return variant
