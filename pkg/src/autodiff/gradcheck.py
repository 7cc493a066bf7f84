"""
Finite-difference gradient verification.

``finite_diff_check`` compares the reverse-mode gradient of a scalar-valued
function against central differences. It is meant to run in 64-bit mode
(``precision(np.float64)``); in 32-bit the differences are too noisy for the
1e-4 tolerance used across the test-suite.
"""

from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence

import numpy as np

from src.autodiff.tensor import DiffTensor


@dataclass
class GradCheckReport:
    name: str
    max_rel_error: float
    max_abs_error: float
    checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"[{status}] {self.name}: rel={self.max_rel_error:.3e} abs={self.max_abs_error:.3e}"
            f" over {self.checked} coords (tol {self.tol:.0e})"
        )


def _coordinates(size: int, max_checks: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if max_checks is None or size <= max_checks:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_checks, replace=False))


def finite_diff_check(
    fn: Callable[[], DiffTensor],
    inputs: Sequence[DiffTensor],
    tol: float = 1e-4,
    h: float = 1e-6,
    max_checks: Optional[int] = 64,
    seed: int = 0,
    name: str = "op",
) -> GradCheckReport:
    """
    Check d fn() / d inputs.

    ``fn`` is re-evaluated after every perturbation, so it must read the
    inputs' current ``data`` each time it is called. Its output is
    sum-reduced when not already scalar.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        t.data = np.ascontiguousarray(t.data)
        t.zero_grad()

    def scalar_value() -> float:
        out = fn()
        return float(np.sum(out.data, dtype=np.float64))

    out = fn()
    if out.data.size != 1:
        from src.autodiff.functional import sum_all
        out = sum_all(out)
    out.backward()

    analytic: List[np.ndarray] = []
    numeric: List[np.ndarray] = []
    for t in inputs:
        grad = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = _coordinates(flat.size, max_checks, rng)
        num = np.empty(len(coords), dtype=np.float64)
        for i, c in enumerate(coords):
            orig = flat[c]
            flat[c] = orig + h
            plus = scalar_value()
            flat[c] = orig - h
            minus = scalar_value()
            flat[c] = orig
            num[i] = (plus - minus) / (2 * h)
        analytic.append(grad.reshape(-1)[coords].astype(np.float64))
        numeric.append(num)

    a = np.concatenate(analytic) if analytic else np.zeros(0)
    n = np.concatenate(numeric) if numeric else np.zeros(0)
    abs_err = float(np.max(np.abs(a - n))) if a.size else 0.0
    scale = max(float(np.max(np.abs(a))) if a.size else 0.0, float(np.max(np.abs(n))) if n.size else 0.0, 1e-12)
    return GradCheckReport(name=name, max_rel_error=abs_err / scale, max_abs_error=abs_err, checked=int(a.size), tol=tol)
