from __future__ import annotations

import numpy as np

from stockode.numerics.rng import Rng
from stockode.numerics.tensor import Parameter


def dense(name: str, fan_in: int, fan_out: int, rng: Rng) -> Parameter:
    """Weight matrix drawn from U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(name, rng.uniform(-bound, bound, (fan_in, fan_out)))


def zeros(name: str, *shape: int) -> Parameter:
    return Parameter(name, np.zeros(shape))


def ones(name: str, *shape: int) -> Parameter:
    return Parameter(name, np.ones(shape))
