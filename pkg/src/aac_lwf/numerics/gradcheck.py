from __future__ import annotations

from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


REL_FLOOR = 1e-6


def _relative_error(analytic: np.ndarray, numeric: np.ndarray) -> np.ndarray:
    # gradients that are structurally zero (e.g. attention key biases) fall back to absolute error
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), REL_FLOOR)
    return np.abs(analytic - numeric) / scale


def finite_diff_check(op_closure: Callable[[Tensor], Tensor], point, eps: float = 1e-5,
                      indices=None) -> float:
    """Max relative error between backprop and central differences.

    ``indices`` restricts the comparison to some flat coordinates.
    """
    base = point.data if isinstance(point, Tensor) else np.asarray(point, dtype=np.float64)
    x = Tensor(base, requires_grad=True)
    backward(op_closure(x))
    analytic = x.grad.reshape(-1) if x.grad is not None else np.zeros(base.size)
    coords = range(base.size) if indices is None else indices
    flat = base.reshape(-1)
    numeric, picked = [], []
    with no_grad():
        for i in coords:
            probe = flat.copy()
            probe[i] += eps
            f_plus = op_closure(Tensor(probe.reshape(base.shape))).item()
            probe[i] -= 2 * eps
            f_minus = op_closure(Tensor(probe.reshape(base.shape))).item()
            numeric.append((f_plus - f_minus) / (2 * eps))
            picked.append(analytic[i])
    if not picked:
        return 0.0
    return float(_relative_error(np.array(picked), np.array(numeric)).max())


def check_parameter_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor],
                              eps: float = 1e-5, max_coords: int | None = None,
                              rng: np.random.Generator | None = None) -> dict[str, float]:
    """Per-parameter max relative error for a closure over live parameters.

    Parameters are perturbed in place and restored. With ``max_coords`` only
    a random subset of each tensor's coordinates is probed.
    """
    for p in params.values():
        p.grad = None
    backward(loss_fn())
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for k, p in params.items()}
    rng = rng or np.random.default_rng(0)
    report = {}
    with no_grad():
        for name, p in params.items():
            flat = p.data.reshape(-1)
            if max_coords is None or flat.size <= max_coords:
                coords = np.arange(flat.size)
            else:
                coords = rng.choice(flat.size, size=max_coords, replace=False)
            a, n = [], []
            for i in coords:
                orig = flat[i]
                flat[i] = orig + eps
                f_plus = loss_fn().item()
                flat[i] = orig - eps
                f_minus = loss_fn().item()
                flat[i] = orig
                n.append((f_plus - f_minus) / (2 * eps))
                a.append(analytic[name].reshape(-1)[i])
            report[name] = float(_relative_error(np.array(a), np.array(n)).max())
    return report
