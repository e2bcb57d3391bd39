"""Central finite-difference gradient verification.

The numeric side re-evaluates the forward function with perturbed inputs and
never touches the tape, so it is independent of the analytic path it checks.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor, backward, recording


@dataclass
class GradReport:
    """Worst-case relative error per checked tensor."""

    errors: dict[str, float]
    tolerance: float

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    @property
    def passed(self) -> bool:
        return all(e < self.tolerance for e in self.errors.values())


def finite_diff_grad(f: Callable[[], float], t: Tensor, h: float = 1e-5) -> np.ndarray:
    """d f / d t by central differences, perturbing t.data in place."""
    g = np.zeros_like(t.data)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4) -> float:
    """Elementwise |a - n| / max(floor, |a|, |n|), reduced by max.

    Below ``floor`` the comparison degrades to an absolute check, which is
    the honest thing to do where finite differences bottom out in rounding
    noise.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(floor, np.maximum(np.abs(a), np.abs(n)))
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def check_grads(
    f: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float,
    h: float = 1e-5,
    floor: float = 1e-4,
) -> GradReport:
    """Compare analytic grads of the scalar ``f()`` against finite differences.

    ``f`` must rebuild its forward pass from the current ``.data`` of the
    given tensors on every call.
    """
    tape = Tape()
    with recording(tape):
        root = f()
    backward(tape, root)
    analytic = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for name, t in params.items()
    }

    def value() -> float:
        return f().item()

    errors = {}
    for name, t in params.items():
        numeric = finite_diff_grad(value, t, h=h)
        errors[name] = max_rel_err(analytic[name], numeric, floor=floor)
    return GradReport(errors=errors, tolerance=tolerance)
