"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from stockode.errors import DeterminismError, StockODEError
from stockode.numerics.tensor import Parameter, Tensor, backward, compute_precision, no_grad

PRECISIONS = {"double": np.float64, "extended": np.longdouble}


@dataclass
class GradcheckReport:
    max_error: float
    worst_param: str
    worst_index: tuple
    analytic: float
    numeric: float
    n_checked: int


def _value(model_fn: Callable[[], Tensor]):
    out = model_fn()
    if not isinstance(out, Tensor) or out.data.ndim != 0:
        raise StockODEError("gradcheck model_fn must return a scalar Tensor")
    return out.data[()]


def _central(model_fn, flat, i, h):
    """Central difference along entry ``i``; divides by the realized step."""
    orig = flat[i]
    flat[i] = orig + h
    up_x = flat[i]
    up = _value(model_fn)
    flat[i] = orig - h
    down_x = flat[i]
    down = _value(model_fn)
    flat[i] = orig
    return (up - down) / (up_x - down_x)


def gradcheck_report(model_fn: Callable[[], Tensor], params: Sequence[Parameter],
                     fd_step: float = 1e-6, precision: str = "double") -> GradcheckReport:
    """Compare reverse-mode gradients with central differences, entry by entry.

    ``precision="extended"`` evaluates the finite differences in long double:
    in float64 the difference quotient cannot resolve derivatives below about
    ulp(loss) / (2 * fd_step), so small gradient entries would fail for
    reasons that have nothing to do with the analytic gradient.
    """
    if precision not in PRECISIONS:
        raise ValueError(f"precision must be one of {sorted(PRECISIONS)}, got {precision!r}")
    params = list(params)
    with no_grad():
        first, second = _value(model_fn), _value(model_fn)
    if first != second:
        raise DeterminismError(
            f"model_fn is not deterministic: repeated evaluations gave {first!r} and {second!r}")

    saved = [p.grad.copy() for p in params]
    for p in params:
        p.zero_grad()
    loss = model_fn()
    backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad[...] = g

    dtype = PRECISIONS[precision]
    originals = [p.data for p in params]
    worst = GradcheckReport(0.0, "", (), 0.0, 0.0, 0)
    n = 0
    try:
        if dtype is not np.float64:
            for p, data in zip(params, originals):
                p.data = data.astype(dtype)
        with no_grad(), compute_precision(dtype):
            for p, ga in zip(params, analytic):
                flat = p.data.reshape(-1)
                for i in range(flat.size):
                    fd = float(_central(model_fn, flat, i, dtype(fd_step)))
                    an = float(ga.reshape(-1)[i])
                    err = abs(an - fd) / max(abs(an), abs(fd), 1e-12)
                    n += 1
                    if err > worst.max_error or not worst.worst_param:
                        worst = GradcheckReport(err, p.name, np.unravel_index(i, p.data.shape), an, fd, 0)
    finally:
        for p, data in zip(params, originals):
            p.data = data
    worst.n_checked = n
    return worst


def gradcheck(model_fn: Callable[[], Tensor], params: Sequence[Parameter],
              fd_step: float = 1e-6, precision: str = "double") -> float:
    """Max over all parameter entries of |analytic - fd| / max(|analytic|, |fd|, 1e-12)."""
    return gradcheck_report(model_fn, params, fd_step, precision).max_error
