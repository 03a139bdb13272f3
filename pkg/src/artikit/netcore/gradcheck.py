"""Finite-difference verification of tape gradients.

The tape's analytic parameter gradients are compared against central
differences of the same scalar loss. This is the independent oracle for
every differentiable module in the package; keep it free of tape internals
beyond reading/writing raw parameter arrays.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor


@dataclass(frozen=True)
class GradcheckReport:
    max_rel_err: float
    worst_param: str
    n_checked: int
    per_param: dict[str, float]

    def __str__(self):
        return (f"gradcheck: max_rel_err={self.max_rel_err:.3e} "
                f"at {self.worst_param!r} over {self.n_checked} entries")


def finite_diff_gradcheck(loss_fn, params: dict[str, Tensor], eps: float = 1e-5,
                          max_entries_per_param: int | None = None,
                          seed: int = 0) -> GradcheckReport:
    """Compares analytic gradients of ``loss_fn()`` against central differences.

    ``loss_fn`` must be a deterministic closure returning a scalar Tensor
    built from ``params``. When ``max_entries_per_param`` is set, a seeded
    subset of entries per parameter is probed (full check otherwise).
    Raises on non-finite gradients.
    """
    for t in params.values():
        t.grad = None
    loss = loss_fn()
    loss.backward()

    analytic: dict[str, np.ndarray] = {}
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError(f"non-finite analytic gradient in {name}")
        analytic[name] = np.asarray(g, dtype=np.float64).copy()

    rng = np.random.default_rng(seed)
    worst = 0.0
    worst_param = ""
    n_checked = 0
    per_param: dict[str, float] = {}
    for name, t in params.items():
        flat = t.data.reshape(-1)
        n = flat.size
        if max_entries_per_param is not None and n > max_entries_per_param:
            idx = rng.choice(n, size=max_entries_per_param, replace=False)
        else:
            idx = np.arange(n)
        ga = analytic[name].reshape(-1)
        p_worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = loss_fn().item()
            flat[i] = orig - eps
            dn = loss_fn().item()
            flat[i] = orig
            fd = (up - dn) / (2.0 * eps)
            if not np.isfinite(fd):
                raise FloatingPointError(f"non-finite finite difference in {name}[{i}]")
            denom = max(abs(ga[i]), abs(fd), 1e-8)
            rel = abs(ga[i] - fd) / denom
            p_worst = max(p_worst, rel)
            n_checked += 1
        per_param[name] = p_worst
        if p_worst >= worst:
            worst = p_worst
            worst_param = name
    return GradcheckReport(worst, worst_param, n_checked, per_param)
