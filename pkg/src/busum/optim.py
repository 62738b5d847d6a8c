"""Adagrad, global-norm gradient clipping, and the finite-difference oracle."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tensor, backward, no_grad


@dataclass
class AdagradState:
    lr: float
    accum0: float
    accumulators: dict[str, np.ndarray] = field(default_factory=dict)

    def initialized(self) -> bool:
        return bool(self.accumulators)


def adagrad_init(params: dict[str, Tensor], lr: float = 0.15, accum0: float = 0.1) -> AdagradState:
    state = AdagradState(lr=lr, accum0=accum0)
    for name, p in params.items():
        state.accumulators[name] = np.full_like(p.data, accum0, dtype=np.float32)
    return state


def adagrad_step(params: dict[str, Tensor], state: AdagradState) -> None:
    """accum += grad^2; param -= lr * grad / sqrt(accum).  Grads are left untouched."""
    if not state.initialized():
        raise ValueError("Adagrad state is uninitialized; call adagrad_init first")
    for name, p in params.items():
        if p.grad is None:
            continue
        acc = state.accumulators.get(name)
        if acc is None:
            raise ValueError(f"Adagrad state has no accumulator for parameter {name}")
        g = p.grad.astype(np.float32, copy=False)
        acc += g * g
        p.data -= (state.lr * g / np.sqrt(acc)).astype(p.data.dtype, copy=False)


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.grad = None


def global_grad_norm(params: dict[str, Tensor]) -> float:
    total = 0.0
    for p in params.values():
        if p.grad is not None:
            total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return math.sqrt(total)


def clip_gradients(params: dict[str, Tensor], max_norm: float) -> float:
    """Rescale the global gradient vector to norm <= max_norm; identity if below."""
    norm = global_grad_norm(params)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in params.values():
            if p.grad is not None:
                p.grad = p.grad * scale
    return norm


def finite_difference_check(
    f: Callable[[dict[str, Tensor]], Tensor],
    params: dict[str, Tensor],
    eps: float = 1e-3,
    max_coords_per_tensor: int = 8,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between analytic grads and central differences.

    `f` must deterministically map the parameter dict to a scalar Tensor; it
    is re-evaluated with coordinates of each parameter perturbed by
    +-eps*max(1, |w|).  Relative error uses max(|analytic|, |numeric|, 1e-8)
    as the denominator.  Raises if two evaluations of `f` disagree.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    rng = rng or np.random.default_rng(0)
    with no_grad():
        base = float(f(params).data)
        if float(f(params).data) != base:
            raise ValueError("non-deterministic function under finite_difference_check")

    zero_grads(params)
    loss = f(params)
    backward(loss)
    analytic = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for name, p in params.items()}
    zero_grads(params)

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        n = flat.size
        coords = np.arange(n) if n <= max_coords_per_tensor else np.sort(
            rng.choice(n, size=max_coords_per_tensor, replace=False)
        )
        ga = analytic[name].reshape(-1)
        for idx in coords:
            orig = flat[idx]
            step = eps * max(1.0, abs(float(orig)))
            with no_grad():
                flat[idx] = orig + step
                up = float(f(params).data)
                flat[idx] = orig - step
                dn = float(f(params).data)
            flat[idx] = orig
            numeric = (up - dn) / (2.0 * step)
            a = float(ga[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
