"""Central finite-difference verification of tape gradients."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .tensor import Tape, no_grad


@dataclass
class GradCheckReport:
    tolerance: float
    errors: dict = field(default_factory=dict)
    checked: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(e < self.tolerance for e in self.errors.values())

    @property
    def failing(self):
        return [k for k, e in self.errors.items() if not e < self.tolerance]

    @property
    def max_error(self):
        return max(self.errors.values(), default=0.0)

    def __str__(self):
        lines = [f"gradient check (tol {self.tolerance:g}): {'PASS' if self.passed else 'FAIL'}"]
        for name, err in self.errors.items():
            flag = "" if err < self.tolerance else "  <-- FAIL"
            lines.append(f"  {name:<28s} n={self.checked[name]:<6d} rel_err={err:.3e}{flag}")
        return "\n".join(lines)


def block_relative_error(analytic, numeric):
    """max |a - n| normalised by the block's gradient scale."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    if scale == 0.0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric)) / scale)


def gradient_check(closure, params, tolerance=1e-5, h=1e-5, max_entries=None, seed=0):
    """Compare tape gradients of ``closure()`` against central differences.

    Parameters
    ----------
    closure : callable
        Zero-argument function returning a scalar Tensor computed from
        ``params``. Must be deterministic.
    params : dict[str, Tensor]
        Parameter blocks to check; perturbed in place and restored.
    max_entries : int, optional
        Check at most this many randomly chosen entries per block.
    """
    for p in params.values():
        if p.dtype != np.float64:
            raise ContractError("gradient_check requires float64 parameters")

    with no_grad():
        first = float(closure().item())
        second = float(closure().item())
    if first != second:
        raise ContractError(f"closure is not deterministic: {first!r} != {second!r}")

    for p in params.values():
        p.grad = None
    with Tape() as tape:
        root = closure()
    tape.backward(root)

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tolerance=tolerance)
    for name, p in params.items():
        analytic = np.zeros_like(p.data) if p.grad is None else p.grad
        if not p.data.flags.c_contiguous:
            p.data = np.ascontiguousarray(p.data)
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        with no_grad():
            for j, i in enumerate(idx):
                orig = flat[i]
                flat[i] = orig + h
                up = float(closure().item())
                flat[i] = orig - h
                down = float(closure().item())
                flat[i] = orig
                numeric[j] = (up - down) / (2.0 * h)
        report.errors[name] = block_relative_error(analytic.reshape(-1)[idx], numeric)
        report.checked[name] = int(idx.size)
    return report
