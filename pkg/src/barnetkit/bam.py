"""Bilinear attention: a parameter-free global context block.

The block summarizes a feature map by the matrix of second-order
statistics between channels (sum of per-pixel outer products),
conditions that matrix with a signed square root and l2
normalization, then projects it back onto every pixel with a
residual connection.  It owns no weights, so it can be inserted or
removed without touching the parameter registry.
"""

from dataclasses import dataclass

from .errors import DimensionError
from .tensor import (
    Tensor,
    add,
    l2_normalize,
    matmul,
    reshape,
    signed_sqrt,
    transpose,
)

__all__ = [
    "GlobalDescriptor",
    "bilinear_pool",
    "normalize_descriptor",
    "distribute",
    "bam_forward",
    "describe",
]


@dataclass
class GlobalDescriptor:
    """Raw and normalized channel co-activation matrices of one map."""

    a: Tensor
    a_norm: Tensor


def _flatten_spatial(x):
    if x.data.ndim != 3:
        raise DimensionError(
            f"bilinear attention expects a rank-3 [C,H,W] map, got {x.shape}")
    d, h, w = x.shape
    return reshape(x, (d, h * w))


def bilinear_pool(x):
    """Sum of per-pixel outer products: a [D,D] channel co-activation matrix.

    With the map flattened to a D x (H*W) matrix M this is M @ M^T,
    which is symmetric positive semidefinite and invariant to any
    spatial permutation of the pixels.
    """
    flat = _flatten_spatial(x)
    return matmul(flat, transpose(flat))


def normalize_descriptor(a):
    """Signed element-wise square root followed by whole-matrix l2 scaling."""
    return l2_normalize(signed_sqrt(a))


def distribute(a_norm, x):
    """Mix channels of every pixel by the descriptor, keeping a residual path."""
    d = x.shape[0]
    if a_norm.data.ndim != 2 or a_norm.shape != (d, d):
        raise DimensionError(
            f"descriptor shape {a_norm.shape} does not match {d} channels")
    flat = _flatten_spatial(x)
    mixed = reshape(matmul(a_norm, flat), x.shape)
    return add(mixed, x)


def bam_forward(x):
    """Full block: pool, normalize, redistribute.  Shape-preserving."""
    return distribute(normalize_descriptor(bilinear_pool(x)), x)


def describe(x):
    """Compute both descriptor stages without the redistribution step."""
    a = bilinear_pool(x)
    return GlobalDescriptor(a=a, a_norm=normalize_descriptor(a))
