"""Bilinear-attention segmentation toolkit on a small numpy autodiff core."""

from .tensor import Tensor, no_grad
from .errors import (
    BarnetError, DimensionError, ConfigError, DataError, ParseError, NumericError,
)

__version__ = "0.1.0"
