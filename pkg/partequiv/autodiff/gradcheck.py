"""Finite-difference verification of analytic gradients."""
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from partequiv.autodiff.tensor import Tensor, default_dtype, no_grad


@dataclass
class GradcheckResult:
    max_rel_error: float
    max_abs_error: float
    checked: int
    passed: bool


def gradcheck(fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-3,
              rtol: float = 1e-3, atol: float = 1e-4, max_checks: Optional[int] = None,
              rng: Optional[np.random.Generator] = None) -> GradcheckResult:
    """
    Compare backward() gradients of a scalar fn against central differences.

    The analytic pass runs at the tensors' own precision. Finite differences
    are evaluated with every checked tensor and all newly created constants in
    float64. An element passes when either its relative error is below rtol
    or its absolute error is below atol.

    Args:
        fn: Zero-argument callable returning a scalar Tensor; must be deterministic
        tensors: Leaf tensors (requires_grad) to check
        h: Central-difference step
        max_checks: Optional cap on checked elements per tensor (sampled with rng)
    """
    for t in tensors:
        t.zero_grad()
    fn().backward()
    analytic = [np.zeros_like(t.data, dtype=np.float64) if t.grad is None else t.grad.astype(np.float64)
                for t in tensors]

    originals = [t.data for t in tensors]
    rng = rng or np.random.default_rng(0)
    max_rel, max_abs, checked, passed = 0.0, 0.0, 0, True
    try:
        with default_dtype(np.float64), no_grad():
            for t in tensors:
                t.data = t.data.astype(np.float64)
            for t, expected in zip(tensors, analytic):
                flat_indices = np.arange(t.data.size)
                if max_checks is not None and t.data.size > max_checks:
                    flat_indices = rng.choice(t.data.size, size=max_checks, replace=False)
                for flat in flat_indices:
                    index = np.unravel_index(flat, t.data.shape)
                    saved = t.data[index]
                    t.data[index] = saved + h
                    plus = float(fn().data)
                    t.data[index] = saved - h
                    minus = float(fn().data)
                    t.data[index] = saved
                    numeric = (plus - minus) / (2 * h)
                    abs_err = abs(numeric - expected[index])
                    rel_err = abs_err / max(abs(numeric), abs(expected[index]), 1e-12)
                    max_abs = max(max_abs, abs_err)
                    if abs_err > atol:
                        max_rel = max(max_rel, rel_err)
                        passed = passed and rel_err < rtol
                    checked += 1
    finally:
        for t, original in zip(tensors, originals):
            t.data = original

    return GradcheckResult(max_rel, max_abs, checked, passed)
