"""Adam optimizer with a stepped exponential learning-rate decay."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .losses import hybrid_loss
from .tensor import scale

__all__ = ["TrainState", "new_state", "current_lr", "train_step"]


@dataclass
class TrainState:
    """Everything the optimizer carries between steps."""

    lr0: float
    decay_factor: float = 0.8
    decay_every: int = 30
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    lr: float = 0.0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    rng: object = None


def new_state(lr0, seed=0, **kwargs):
    if lr0 <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr0}")
    state = TrainState(lr0=lr0, rng=np.random.default_rng(seed), **kwargs)
    if state.decay_every < 1:
        raise ConfigError(f"decay interval must be >= 1, got {state.decay_every}")
    state.lr = current_lr(state)
    return state


def current_lr(state):
    """Stepped decay: lr0 * factor^(completed steps // interval)."""
    return state.lr0 * state.decay_factor ** (state.step // state.decay_every)


def _sample_pair(sample):
    if hasattr(sample, "image"):
        return sample.image, sample.mask
    image, mask = sample
    return image, mask


def train_step(model, state, batch, alpha=0.2, smooth=1.0):
    """One Adam update from the mean hybrid loss over a batch.

    The batch is an outer loop: each sample's loss is scaled by 1/B
    before backward so the accumulated gradients equal the gradient of
    the batch mean.  Returns the mean loss as a float.
    """
    if not batch:
        raise ConfigError("train_step: empty batch")
    params = model.parameters()
    for name, p in params.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        p.grad[...] = 0.0

    inv_b = 1.0 / len(batch)
    total = 0.0
    for sample in batch:
        image, mask = _sample_pair(sample)
        logits = model.forward(image, training=True)
        loss = hybrid_loss(logits, mask, alpha=alpha, smooth=smooth)
        scale(loss, inv_b).backward()
        total += float(loss.data)

    lr = current_lr(state)
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = p.grad
        m = state.m[name]
        v = state.v[name]
        m += (1.0 - state.beta1) * (g - m)
        v += (1.0 - state.beta2) * (g * g - v)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)

    state.step = t
    state.lr = lr
    return total * inv_b
