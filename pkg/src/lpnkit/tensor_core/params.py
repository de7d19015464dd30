from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..errors import ShapeError


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass
class ConvParams:
    """Weights and geometry of a (possibly grouped) 2-D convolution.

    For ``conv2d`` the weight is ``(c_out, c_in // groups, kh, kw)``; for
    ``conv_transpose2d`` it is ``(c_in, c_out // groups, kh, kw)``.
    """

    weight: np.ndarray
    bias: Optional[np.ndarray] = None
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    groups: int = 1

    def __post_init__(self):
        self.stride = _pair(self.stride)
        self.padding = _pair(self.padding)
        if self.weight.ndim != 4:
            raise ShapeError(f"conv weight must be 4-D, got shape {self.weight.shape}")
        if self.groups < 1:
            raise ShapeError(f"groups must be positive, got {self.groups}")
        if min(self.stride) < 1 or min(self.padding) < 0:
            raise ShapeError(f"bad stride/padding {self.stride}/{self.padding}")


@dataclass
class NormParams:
    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray
    epsilon: float = 1e-5
    momentum: float = 0.1

    @classmethod
    def identity(cls, channels: int, dtype=np.float32) -> "NormParams":
        return cls(
            gamma=np.ones(channels, dtype),
            beta=np.zeros(channels, dtype),
            running_mean=np.zeros(channels, dtype),
            running_var=np.ones(channels, dtype),
        )

    def __post_init__(self):
        if np.any(self.running_var < 0):
            raise ShapeError("running_var must be non-negative")
        if not 0.0 < self.momentum < 1.0:
            raise ShapeError(f"momentum must lie in (0, 1), got {self.momentum}")
