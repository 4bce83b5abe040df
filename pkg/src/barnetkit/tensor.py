"""Dense tensors with reverse-mode differentiation.

A Tensor wraps one row-major numpy array plus an optional same-shape
gradient accumulator. Every operation is a module-level function that
computes its result eagerly and, when gradients are being tracked,
records its parent tensors together with one vector-Jacobian closure per
parent. ``Tensor.backward`` replays those closures in reverse
topological order, visiting each node exactly once and summing
contributions at fan-out points.

Each op validates that its output is finite; NaN/Inf raises
``NumericError`` naming the op, so a diverging computation aborts at the
first bad node instead of propagating garbage.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, ConfigError, NumericError

__all__ = [
    "Tensor", "no_grad", "is_grad_enabled", "topo_order",
    "add", "sub", "mul", "div", "neg", "scale", "add_scalar",
    "matmul", "transpose", "reshape",
    "conv2d", "add_channel_bias", "global_avg_pool", "upsample_nearest",
    "concat_channels", "slice_channels", "scale_channels",
    "signed_sqrt", "l2_normalize", "relu", "sigmoid",
    "softmax_channels", "log_softmax_channels", "batch_norm",
    "log", "sum_all", "mean_all", "sum_spatial",
]

# Epsilon for l2_normalize, chosen per precision so a zero input maps to
# zero instead of NaN.
L2_EPS = {np.float64: 1e-12, np.float32: 1e-8}

_GRAD_ENABLED = [True]


class no_grad:
    """Context manager that disables graph recording (inference mode)."""

    def __enter__(self):
        self._prev = _GRAD_ENABLED[0]
        _GRAD_ENABLED[0] = False
        return self

    def __exit__(self, *exc):
        _GRAD_ENABLED[0] = self._prev
        return False


def is_grad_enabled():
    return _GRAD_ENABLED[0]


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_vjps", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(arr) if self.requires_grad else None
        self._parents = ()
        self._vjps = ()
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op!r}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0

    def backward(self, grad=None):
        """Accumulate gradients of this (usually scalar) tensor's value
        into every reachable tensor that requires grad."""
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if grad is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.broadcast_to(np.asarray(grad, dtype=self.data.dtype), self.shape)
        self.grad = self.grad + seed
        for node in reversed(topo_order(self)):
            g = node.grad
            for parent, vjp in zip(node._parents, node._vjps):
                if parent.requires_grad:
                    parent.grad += vjp(g)

    # Arithmetic sugar used by the loss code and tests.
    def __add__(self, other):
        return add(self, other) if isinstance(other, Tensor) else add_scalar(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other) if isinstance(other, Tensor) else scale(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other) if isinstance(other, Tensor) else add_scalar(self, -other)

    def __rsub__(self, other):
        return add_scalar(neg(self), other)

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        return div(self, other) if isinstance(other, Tensor) else scale(self, 1.0 / other)


def topo_order(root):
    """Tensors reachable from ``root``, parents before children.

    Iterative post-order DFS so deep graphs cannot hit the recursion
    limit. Each tensor appears exactly once.
    """
    order = []
    seen = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, parents = stack[-1]
        advanced = False
        for p in parents:
            if id(p) not in seen:
                seen.add(id(p))
                stack.append((p, iter(p._parents)))
                advanced = True
                break
        if not advanced:
            order.append(node)
            stack.pop()
    return order


def _check_finite(data, op):
    if not np.all(np.isfinite(data)):
        flat = np.asarray(data).ravel()
        bad = np.flatnonzero(~np.isfinite(flat))[0]
        raise NumericError(f"op {op!r} produced non-finite value {flat[bad]!r} at flat index {bad}")


def _node(data, op, parents, vjps):
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    track = _GRAD_ENABLED[0] and any(p.requires_grad for p in parents)
    out.requires_grad = track
    out.grad = np.zeros_like(data) if track else None
    if track:
        out._parents = parents
        out._vjps = vjps
        out._op = op
    else:
        out._parents = ()
        out._vjps = ()
        out._op = op
    return out


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} differ")


# ---------------------------------------------------------------------------
# elementwise arithmetic

def add(a, b):
    _same_shape(a, b, "add")
    return _node(a.data + b.data, "add", (a, b), (lambda g: g, lambda g: g))


def sub(a, b):
    _same_shape(a, b, "sub")
    return _node(a.data - b.data, "sub", (a, b), (lambda g: g, lambda g: -g))


def mul(a, b):
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _node(ad * bd, "mul", (a, b), (lambda g: g * bd, lambda g: g * ad))


def div(a, b):
    _same_shape(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd
    return _node(out, "div", (a, b),
                 (lambda g: g / bd, lambda g: -g * ad / (bd * bd)))


def neg(a):
    return _node(-a.data, "neg", (a,), (lambda g: -g,))


def scale(a, c):
    c = float(c)
    return _node(a.data * c, "scale", (a,), (lambda g: g * c,))


def add_scalar(a, c):
    c = float(c)
    return _node(a.data + c, "add_scalar", (a,), (lambda g: g,))


def log(a):
    return _node(np.log(a.data), "log", (a,), (lambda g: g / a.data,))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    """c[i,j] = sum_k a[i,k] * b[k,j] for rank-2 operands."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise DimensionError(f"matmul: expected rank-2 operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner extents {a.shape} x {b.shape} do not agree")
    ad, bd = a.data, b.data
    return _node(ad @ bd, "matmul", (a, b),
                 (lambda g: g @ bd.T, lambda g: ad.T @ g))


def transpose(a):
    if a.data.ndim != 2:
        raise DimensionError(f"transpose: expected rank-2, got {a.shape}")
    return _node(np.ascontiguousarray(a.data.T), "transpose", (a,),
                 (lambda g: np.ascontiguousarray(g.T),))


def reshape(a, shape):
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    old = a.shape
    return _node(a.data.reshape(shape), "reshape", (a,),
                 (lambda g: g.reshape(old),))


# ---------------------------------------------------------------------------
# convolution and friends

def _conv_out_extent(n, k, stride, pad):
    span = n + 2 * pad - k
    if span < 0 or span % stride != 0:
        raise DimensionError(
            f"conv2d: extent {n} with kernel {k}, stride {stride}, pad {pad} "
            f"gives non-integral output size")
    return span // stride + 1


def _im2col(xp, k, stride, ho, wo):
    c = xp.shape[0]
    cols = np.empty((c, k, k, ho, wo), dtype=xp.dtype)
    for di in range(k):
        for dj in range(k):
            cols[:, di, dj] = xp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride]
    return cols.reshape(c * k * k, ho * wo)


def conv2d(x, w, stride=1, pad=0):
    """Cross-correlate x[C,H,W] with w[F,C,k,k] (square odd kernels)."""
    if x.data.ndim != 3 or w.data.ndim != 4:
        raise DimensionError(f"conv2d: expected x rank-3 and w rank-4, got {x.shape}, {w.shape}")
    c, h, wd = x.shape
    f, cw, kh, kw = w.shape
    if kh != kw:
        raise DimensionError(f"conv2d: kernel must be square, got {kh}x{kw}")
    k = kh
    if k % 2 != 1:
        raise DimensionError(f"conv2d: kernel size {k} must be odd")
    if cw != c:
        raise DimensionError(f"conv2d: input has {c} channels but weight expects {cw}")
    ho = _conv_out_extent(h, k, stride, pad)
    wo = _conv_out_extent(wd, k, stride, pad)

    if pad:
        xp = np.zeros((c, h + 2 * pad, wd + 2 * pad), dtype=x.dtype)
        xp[:, pad:pad + h, pad:pad + wd] = x.data
    else:
        xp = x.data
    cols = _im2col(xp, k, stride, ho, wo)
    w_mat = w.data.reshape(f, c * k * k)
    out = (w_mat @ cols).reshape(f, ho, wo)

    def vjp_x(g):
        gm = (w_mat.T @ g.reshape(f, -1)).reshape(c, k, k, ho, wo)
        gxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                gxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += gm[:, di, dj]
        return gxp[:, pad:pad + h, pad:pad + wd] if pad else gxp

    def vjp_w(g):
        return (g.reshape(f, -1) @ cols.T).reshape(f, c, k, k)

    return _node(out, "conv2d", (x, w), (vjp_x, vjp_w))


def add_channel_bias(x, b):
    """x[C,H,W] + b[C], broadcast over spatial positions."""
    if x.data.ndim != 3 or b.data.ndim != 1 or b.shape[0] != x.shape[0]:
        raise DimensionError(f"add_channel_bias: got {x.shape} and {b.shape}")
    return _node(x.data + b.data[:, None, None], "add_channel_bias", (x, b),
                 (lambda g: g, lambda g: g.sum(axis=(1, 2))))


def global_avg_pool(x):
    """Mean over spatial positions: [C,H,W] -> [C]."""
    if x.data.ndim != 3:
        raise DimensionError(f"global_avg_pool: expected rank-3, got {x.shape}")
    c, h, w = x.shape
    inv = 1.0 / (h * w)
    return _node(x.data.mean(axis=(1, 2)), "global_avg_pool", (x,),
                 (lambda g: np.broadcast_to(g[:, None, None] * inv, (c, h, w)),))


def upsample_nearest(x, factor):
    """Nearest-neighbor upsampling of [C,H,W] by a power-of-two factor."""
    if factor not in (2, 4, 8, 16):
        raise ConfigError(f"upsample factor must be one of 2,4,8,16, got {factor}")
    if x.data.ndim != 3:
        raise DimensionError(f"upsample_nearest: expected rank-3, got {x.shape}")
    c, h, w = x.shape
    out = x.data.repeat(factor, axis=1).repeat(factor, axis=2)
    return _node(out, "upsample_nearest", (x,),
                 (lambda g: g.reshape(c, h, factor, w, factor).sum(axis=(2, 4)),))


def avg_pool2(x):
    """Mean over non-overlapping 2x2 blocks of a [C,H,W] map.

    The spatial extents must be even; this is the downsampling
    counterpart of upsample_nearest with factor 2.
    """
    if x.data.ndim != 3:
        raise DimensionError(f"avg_pool2: expected rank-3, got {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2: extents must be even, got {h}x{w}")
    out = x.data.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))

    def vjp(g):
        return (g / 4.0).repeat(2, axis=1).repeat(2, axis=2)

    return _node(out, "avg_pool2", (x,), (vjp,))


def concat_channels(xs):
    """Stack along axis 0; trailing extents must agree."""
    if not xs:
        raise ConfigError("concat_channels: empty input list")
    if len(xs) == 1:
        return xs[0]
    rank = xs[0].data.ndim
    tail = xs[0].shape[1:]
    for t in xs[1:]:
        if t.data.ndim != rank or t.shape[1:] != tail:
            raise DimensionError(
                f"concat_channels: incompatible shapes {[t.shape for t in xs]}")
    out = np.concatenate([t.data for t in xs], axis=0)
    bounds = np.cumsum([0] + [t.shape[0] for t in xs])
    vjps = tuple(
        (lambda s, e: lambda g: g[s:e])(bounds[i], bounds[i + 1])
        for i in range(len(xs)))
    return _node(out, "concat_channels", tuple(xs), vjps)


def slice_channels(x, start, stop):
    """Inverse of concat_channels: take channels [start, stop)."""
    if not (0 <= start < stop <= x.shape[0]):
        raise DimensionError(f"slice_channels: [{start},{stop}) out of range for {x.shape}")
    def vjp(g):
        z = np.zeros_like(x.data)
        z[start:stop] = g
        return z
    return _node(x.data[start:stop].copy(), "slice_channels", (x,), (vjp,))


def scale_channels(x, s):
    """Per-channel gate: out[c] = s[c] * x[c] for x[C,H,W], s[C]."""
    if x.data.ndim != 3 or s.data.ndim != 1 or s.shape[0] != x.shape[0]:
        raise DimensionError(f"scale_channels: got {x.shape} and {s.shape}")
    xd, sd = x.data, s.data
    return _node(xd * sd[:, None, None], "scale_channels", (x, s),
                 (lambda g: g * sd[:, None, None],
                  lambda g: (g * xd).sum(axis=(1, 2))))


# ---------------------------------------------------------------------------
# nonlinearities and normalizations

def relu(x):
    out = np.maximum(x.data, 0)
    mask = out > 0
    return _node(out, "relu", (x,), (lambda g: g * mask,))


def sigmoid(x):
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _node(out, "sigmoid", (x,), (lambda g: g * out * (1.0 - out),))


def signed_sqrt(x):
    """sign(x) * sqrt(|x|), with subgradient 0 at x = 0."""
    ax = np.abs(x.data)
    out = np.sign(x.data) * np.sqrt(ax)
    def vjp(g):
        safe = np.where(ax > 0, ax, 1.0)
        return g * np.where(ax > 0, 0.5 / np.sqrt(safe), 0.0)
    return _node(out, "signed_sqrt", (x,), (vjp,))


def l2_normalize(x, eps=None):
    """x / max(||x||_2, eps) over all elements (Frobenius for matrices)."""
    if eps is None:
        eps = L2_EPS[x.dtype.type]
    if eps <= 0:
        raise ConfigError(f"l2_normalize: eps must be positive, got {eps}")
    n = float(np.sqrt((x.data * x.data).sum()))
    if n >= eps:
        out = x.data / n
        def vjp(g):
            return (g - out * (g * out).sum()) / n
    else:
        out = x.data / eps
        def vjp(g):
            return g / eps
    return _node(out, "l2_normalize", (x,), (vjp,))


def softmax_channels(x):
    """Softmax over axis 0 (the class/channel axis), elementwise over the rest."""
    m = x.data.max(axis=0, keepdims=True)
    e = np.exp(x.data - m)
    out = e / e.sum(axis=0, keepdims=True)
    def vjp(g):
        return out * (g - (g * out).sum(axis=0, keepdims=True))
    return _node(out, "softmax_channels", (x,), (vjp,))


def log_softmax_channels(x):
    m = x.data.max(axis=0, keepdims=True)
    sh = x.data - m
    out = sh - np.log(np.exp(sh).sum(axis=0, keepdims=True))
    def vjp(g):
        return g - np.exp(out) * g.sum(axis=0, keepdims=True)
    return _node(out, "log_softmax_channels", (x,), (vjp,))


def batch_norm(x, gamma, beta, running_mean, running_var, training, eps=1e-5):
    """Per-channel standardization of x[C,H,W] with learned affine.

    Training mode normalizes by the sample's own spatial statistics;
    inference mode uses the provided running stats (plain arrays, not
    part of the graph).
    """
    if x.data.ndim != 3:
        raise DimensionError(f"batch_norm: expected rank-3, got {x.shape}")
    c, h, w = x.shape
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"batch_norm: affine shapes {gamma.shape}/{beta.shape} != ({c},)")
    gd, bd = gamma.data, beta.data
    if training:
        mu = x.data.mean(axis=(1, 2))
        var = x.data.var(axis=(1, 2))
    else:
        mu = np.asarray(running_mean, dtype=x.dtype)
        var = np.asarray(running_var, dtype=x.dtype)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[:, None, None]) * inv[:, None, None]
    out = gd[:, None, None] * xhat + bd[:, None, None]

    def vjp_x(g):
        dxhat = g * gd[:, None, None]
        if not training:
            return dxhat * inv[:, None, None]
        m = h * w
        s1 = dxhat.sum(axis=(1, 2), keepdims=True)
        s2 = (dxhat * xhat).sum(axis=(1, 2), keepdims=True)
        return (inv[:, None, None] / m) * (m * dxhat - s1 - xhat * s2)

    return _node(out, "batch_norm", (x, gamma, beta),
                 (vjp_x,
                  lambda g: (g * xhat).sum(axis=(1, 2)),
                  lambda g: g.sum(axis=(1, 2))))


# ---------------------------------------------------------------------------
# reductions

def sum_all(x):
    def vjp(g):
        return np.broadcast_to(g, x.shape)
    return _node(np.asarray(x.data.sum()), "sum_all", (x,), (vjp,))


def mean_all(x):
    inv = 1.0 / x.size
    def vjp(g):
        return np.broadcast_to(g * inv, x.shape)
    return _node(np.asarray(x.data.mean()), "mean_all", (x,), (vjp,))


def sum_spatial(x):
    """Sum over spatial positions: [C,H,W] -> [C]."""
    if x.data.ndim != 3:
        raise DimensionError(f"sum_spatial: expected rank-3, got {x.shape}")
    c, h, w = x.shape
    return _node(x.data.sum(axis=(1, 2)), "sum_spatial", (x,),
                 (lambda g: np.broadcast_to(g[:, None, None], (c, h, w)),))
