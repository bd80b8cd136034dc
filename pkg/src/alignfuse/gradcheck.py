"""Finite-difference gradient verification for tapes built on the engine.

The forward callable is evaluated in whatever precision its parameters
carry; checks are intended to run on float64 parameters so the central
differences are trustworthy at h = 1e-3 (scaled).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .autodiff import Tape, Tensor
from .errors import ContractError

__all__ = ["GradCheckReport", "check_gradients"]


@dataclass
class GradCheckReport:
    tolerance: float
    max_rel_error: float = 0.0
    per_param: dict[str, float] = field(default_factory=dict)
    checked_counts: dict[str, int] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    def format_table(self) -> str:
        lines = [f"{'parameter':<28} {'checked':>7} {'max rel err':>12}"]
        for name in sorted(self.per_param):
            lines.append(
                f"{name:<28} {self.checked_counts[name]:>7d} "
                f"{self.per_param[name]:>12.3e}"
            )
        lines.append(
            f"{'OVERALL':<28} {'':>7} {self.max_rel_error:>12.3e} "
            f"({'PASS' if self.passed else 'FAIL'} at {self.tolerance:g})"
        )
        return "\n".join(lines)


def check_gradients(
    forward: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    tolerance: float = 1e-4,
    h: float = 1e-3,
    max_checks_per_tensor: int = 24,
    seed: int = 0,
) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    `forward` must rebuild the scalar loss from `params` on every call and be
    deterministic (dropout off); two evaluations are compared bit-for-bit and
    a mismatch raises ContractError. Per tensor, up to
    `max_checks_per_tensor` coordinates are probed (all of them when the
    tensor is small); the step is scaled per coordinate, h_i = h*max(1, |x_i|).
    The reported relative error normalizes by the largest finite-difference
    magnitude in that tensor (floored at 1e-6) so near-zero gradients do not
    explode the ratio.
    """
    base = forward()
    again = forward()
    if not np.array_equal(base.data, again.data):
        raise ContractError(
            "forward is not deterministic: two evaluations differ "
            "(disable dropout before checking gradients)"
        )
    if base.data.size != 1:
        raise ContractError(f"forward must return a scalar, got shape {base.data.shape}")

    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = forward()
    tape.backward(loss)
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }

    rng = np.random.Generator(np.random.Philox(key=seed))
    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        if n <= max_checks_per_tensor:
            coords = np.arange(n)
        else:
            coords = rng.choice(n, size=max_checks_per_tensor, replace=False)
            coords.sort()
        fd = np.zeros(len(coords), dtype=np.float64)
        for j, i in enumerate(coords):
            orig = flat[i]
            step = h * max(1.0, abs(float(orig)))
            flat[i] = orig + step
            f_plus = float(forward().data)
            flat[i] = orig - step
            f_minus = float(forward().data)
            flat[i] = orig
            fd[j] = (f_plus - f_minus) / (2.0 * step)
        ana = analytic[name].reshape(-1)[coords].astype(np.float64)
        scale = max(float(np.max(np.abs(fd))) if len(coords) else 0.0, 1e-6)
        rel = float(np.max(np.abs(ana - fd))) / scale if len(coords) else 0.0
        report.per_param[name] = rel
        report.checked_counts[name] = len(coords)
        report.max_rel_error = max(report.max_rel_error, rel)
    return report
