"""Central-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, no_grad


@dataclass
class GradCheckReport:
    tolerance: float
    worst_error: float = 0.0
    worst_input: int = -1
    worst_index: tuple = ()
    analytic: float = 0.0
    numeric: float = 0.0
    checked: int = 0
    resamples: int = 0
    kinks: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.worst_error <= self.tolerance

    def __str__(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return (f"{verdict} worst rel err {self.worst_error:.3e} (tol {self.tolerance:.0e}) "
                f"at input {self.worst_input} index {self.worst_index}: "
                f"analytic {self.analytic:.6e} vs numeric {self.numeric:.6e}; "
                f"{self.checked} elements, {self.resamples} resamples")


def _scalarize(out: Tensor, proj: np.ndarray) -> float:
    return float(np.sum(out.data.astype(np.float64) * proj))


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], tolerance: float = 1e-4,
               step: float = 1e-6, seed: int = 0, max_elements: int | None = None,
               max_resamples: int = 3, jitter: float = 1e-3) -> GradCheckReport:
    """Compare backward() against central differences for every input element.

    ``fn`` rebuilds the output from the current ``.data`` of ``inputs`` (which
    must be float64 and ``requires_grad``).  A random projection reduces the
    output to a scalar.  The relative error per element is
    ``|analytic - numeric| / max(1, |numeric|)``.

    If an element looks non-differentiable (one-sided differences disagree:
    a relu kink or a max tie straddled by the step), all inputs are jittered
    with fresh noise and the check restarts; the kink locations are recorded.
    """
    rng = np.random.default_rng(seed)
    for t in inputs:
        if t.dtype != np.float64:
            raise TypeError("grad_check runs in 64-bit mode; got " + str(t.dtype))
    originals = [t.data.copy() for t in inputs]
    report = GradCheckReport(tolerance=tolerance)
    for attempt in range(max_resamples + 1):
        result = _check_once(fn, inputs, tolerance, step, rng, max_elements)
        if result is not None:
            result.resamples = attempt
            result.kinks = report.kinks
            for t, orig in zip(inputs, originals):
                t.data[...] = orig
            return result
        report.kinks.append(attempt)
        for t in inputs:
            t.data[...] = t.data + jitter * rng.standard_normal(t.shape)
    for t, orig in zip(inputs, originals):
        t.data[...] = orig
    raise RuntimeError(f"grad_check kept landing on non-differentiable points "
                       f"after {max_resamples} resamples")


def _check_once(fn, inputs, tolerance, step, rng, max_elements):
    for t in inputs:
        t.grad = None
    out = fn()
    proj = rng.standard_normal(out.shape)
    out.backward(proj.astype(out.dtype))
    analytic = [np.zeros(t.shape) if t.grad is None else t.grad.copy() for t in inputs]

    report = GradCheckReport(tolerance=tolerance)
    with no_grad():
        for k, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            idxs = np.arange(flat.size)
            if max_elements is not None and flat.size > max_elements:
                idxs = np.sort(rng.choice(flat.size, max_elements, replace=False))
            ga = analytic[k].reshape(-1)
            for i in idxs:
                orig = flat[i]
                flat[i] = orig + step
                fp = _scalarize(fn(), proj)
                flat[i] = orig - step
                fm = _scalarize(fn(), proj)
                flat[i] = orig
                numeric = (fp - fm) / (2 * step)
                err = abs(ga[i] - numeric) / max(1.0, abs(numeric))
                if err > tolerance:
                    f0 = _scalarize(fn(), proj)
                    right, left = (fp - f0) / step, (f0 - fm) / step
                    if abs(right - left) > 10 * tolerance * max(1.0, abs(numeric)):
                        return None
                report.checked += 1
                if err >= report.worst_error:
                    report.worst_error = float(err)
                    report.worst_input = k
                    report.worst_index = tuple(int(v) for v in np.unravel_index(i, t.shape))
                    report.analytic = float(ga[i])
                    report.numeric = float(numeric)
    return report
