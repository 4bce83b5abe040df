"""Segmentation training objective.

The loss blends per-pixel cross-entropy with the negative log of a
smoothed soft Dice coefficient: (1 - alpha) * H - alpha * ln(D).
Cross-entropy drives per-pixel accuracy; the Dice term rewards
region overlap and is robust to class imbalance.  Both pieces are
exposed separately for testing and ablation.
"""

import numpy as np

from .errors import ConfigError, DataError, DimensionError
from .tensor import (
    add,
    add_scalar,
    div,
    log,
    log_softmax_channels,
    mul,
    scale,
    slice_channels,
    softmax_channels,
    sum_all,
    Tensor,
)

__all__ = ["cross_entropy", "dice", "dice_per_class", "hybrid_loss", "one_hot"]


def _check_target(target, k, spatial):
    target = np.asarray(target)
    if target.shape != spatial:
        raise DimensionError(
            f"target shape {target.shape} does not match logits {spatial}")
    if not np.issubdtype(target.dtype, np.integer):
        raise DataError(f"target must hold integer labels, got {target.dtype}")
    if target.size and (target.min() < 0 or target.max() >= k):
        raise DataError(
            f"labels must lie in [0,{k}), got range "
            f"[{target.min()},{target.max()}]")
    return target


def one_hot(target, k, dtype=np.float64):
    """[H,W] integer labels -> [K,H,W] indicator array (plain numpy)."""
    target = np.asarray(target)
    out = np.zeros((k,) + target.shape, dtype=dtype)
    np.put_along_axis(out, target[None], 1.0, axis=0)
    return out


def cross_entropy(logits, target):
    """Mean over pixels of -log softmax probability at the true class."""
    if logits.data.ndim != 3:
        raise DimensionError(f"expected [K,H,W] logits, got {logits.shape}")
    k, h, w = logits.shape
    target = _check_target(target, k, (h, w))
    lsm = log_softmax_channels(logits)
    mask = Tensor(one_hot(target, k, dtype=logits.dtype))
    return scale(sum_all(mul(lsm, mask)), -1.0 / (h * w))


def dice_per_class(probs, target, smooth=1.0):
    """Per-class smoothed soft Dice scores as a list of scalars.

    Per class: (2 * sum(p*t) + smooth) / (sum(p) + sum(t) + smooth),
    with t the one-hot target plane.  The smoothing constant keeps
    classes absent from both prediction and target at a perfect score
    instead of 0/0.
    """
    if probs.data.ndim != 3:
        raise DimensionError(f"expected [K,H,W] probabilities, got {probs.shape}")
    if smooth <= 0:
        raise ConfigError(f"smooth must be positive, got {smooth}")
    k, h, w = probs.shape
    target = _check_target(target, k, (h, w))
    hot = one_hot(target, k, dtype=probs.dtype)
    scores = []
    for c in range(k):
        p = slice_channels(probs, c, c + 1)
        inter = sum_all(mul(p, Tensor(hot[c:c + 1])))
        t_count = float(hot[c].sum())
        num = add_scalar(scale(inter, 2.0), smooth)
        den = add_scalar(sum_all(p), t_count + smooth)
        scores.append(div(num, den))
    return scores


def dice(probs, target, smooth=1.0):
    """Mean of the per-class smoothed Dice scores, in (0, 1]."""
    scores = dice_per_class(probs, target, smooth)
    total = scores[0]
    for part in scores[1:]:
        total = add(total, part)
    return scale(total, 1.0 / len(scores))


def hybrid_loss(logits, target, alpha=0.2, smooth=1.0):
    """(1 - alpha) * cross_entropy - alpha * ln(dice); nonnegative."""
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0,1], got {alpha}")
    ce = cross_entropy(logits, target)
    d = dice(softmax_channels(logits), target, smooth)
    return add(scale(ce, 1.0 - alpha), scale(log(d), -alpha))
