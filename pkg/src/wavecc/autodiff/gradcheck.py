"""Central finite-difference gradient checking in 64-bit precision."""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

from wavecc.autodiff.tensor import float64_mode
from wavecc.errors import NumericError


@dataclass
class GradCheckReport:
    max_rel_error: float
    checked: int
    worst: tuple | None = None
    errors: list = field(default_factory=list)

    def ok(self, tol):
        return self.max_rel_error < tol


@contextlib.contextmanager
def promoted(tensors):
    """Temporarily hold the given tensors' data in float64."""
    saved = [t.data for t in tensors]
    for t in tensors:
        t.data = np.ascontiguousarray(t.data, dtype=np.float64)
    try:
        with float64_mode():
            yield
    finally:
        for t, d in zip(tensors, saved):
            t.data = d


def relative_error(a, n):
    return abs(a - n) / max(abs(a), abs(n), 1e-8)


def grad_check(f, params, epsilon=1e-4, samples=8, seed=0, extra=()):
    """Compare analytic gradients of scalar ``f()`` with central differences.

    ``params`` is a sequence of (name, Tensor).  Up to ``samples`` coordinates
    per tensor are probed.  ``extra`` lists further tensors (inputs) that are
    promoted to float64 without being probed.
    """
    params = list(params)
    tensors = [t for _, t in params] + list(extra)
    rng = np.random.default_rng(seed)
    report = GradCheckReport(0.0, 0)
    with promoted(tensors):
        for _, t in params:
            t.grad = None
        loss = f()
        loss.backward()
        analytic = {name: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                    for name, t in params}
        for name, t in params:
            flat = t.data.reshape(-1)
            count = min(samples, flat.size)
            coords = rng.choice(flat.size, size=count, replace=False)
            for idx in coords:
                orig = flat[idx]
                flat[idx] = orig + epsilon
                up = f().item()
                flat[idx] = orig - epsilon
                down = f().item()
                flat[idx] = orig
                if not (np.isfinite(up) and np.isfinite(down)):
                    raise NumericError("non-finite loss while probing", name=name, index=int(idx))
                numeric = (up - down) / (2 * epsilon)
                a = float(analytic[name].reshape(-1)[idx])
                err = relative_error(a, numeric)
                report.checked += 1
                report.errors.append((name, int(idx), a, numeric, err))
                if err > report.max_rel_error:
                    report.max_rel_error = err
                    report.worst = (name, int(idx), a, numeric)
        for _, t in params:
            t.grad = None
    return report
