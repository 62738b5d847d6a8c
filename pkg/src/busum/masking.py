"""Bottom-up copy-attention constraints.

Inference-time hard masking (threshold eps, rescale lambda, renormalize the
joint mixture) and the three end-to-end training alternatives: Mask-Only
(gold copy-attention supervision), Multi-Task (shared encoder + tagging
head), and DiffMask (soft q-mask inside the differentiable mixture).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels
from .tensor import Tensor, clip, log, mul


class TrainMode(enum.Enum):
    BASELINE = "baseline"
    MASK_ONLY = "mask-only"
    MULTI_TASK = "multi-task"
    DIFFMASK = "diffmask"

    @classmethod
    def parse(cls, value: str) -> "TrainMode":
        for mode in cls:
            if mode.value == value:
                return mode
        raise ValueError(f"unknown train mode {value!r}; choose from "
                         f"{[m.value for m in cls]}")


@dataclass(frozen=True)
class MaskConfig:
    epsilon: float = 0.1
    scale: float = 2.0  # copy-attention normalization parameter

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon < 1.0:
            raise ValueError(f"epsilon must lie in (0, 1), got {self.epsilon}")
        if self.scale <= 0.0:
            raise ValueError(f"scale must be positive, got {self.scale}")


def hard_mask(attention: np.ndarray, q: np.ndarray, cfg: MaskConfig) -> tuple[np.ndarray, bool]:
    """Zero copy weights where q <= eps, rescale survivors by lambda.

    Returns (weights, fallback).  When no position clears the threshold the
    mask is a no-op on the original attention and fallback is True; callers
    record a warning.  The returned weights are unnormalized: the joint
    mixture is renormalized downstream.
    """
    attention = np.asarray(attention, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if attention.shape[-1] != q.shape[-1]:
        raise ValueError(
            f"hard_mask: attention length {attention.shape[-1]} != q length {q.shape[-1]}"
        )
    eligible = q > cfg.epsilon
    if not eligible.any():
        return attention.copy(), True
    return np.where(eligible, attention, 0.0) * cfg.scale, False


def soft_mask(attention, q):
    """DiffMask weights a_i * q_i; works on arrays and on autodiff tensors."""
    if isinstance(attention, Tensor) or isinstance(q, Tensor):
        a_len = attention.shape[-1]
        q_len = q.shape[-1]
    else:
        attention = np.asarray(attention, dtype=np.float64)
        q = np.asarray(q, dtype=np.float64)
        a_len, q_len = attention.shape[-1], q.shape[-1]
    if a_len != q_len:
        raise ValueError(f"soft_mask: attention length {a_len} != q length {q_len}")
    if isinstance(attention, Tensor):
        return mul(attention, q)
    return attention * q


def masked_joint(weights: np.ndarray, generation: np.ndarray, p_copy: np.ndarray,
                 ext_ids: np.ndarray, ext_size: int, renormalize: bool = True) -> np.ndarray:
    """Numpy-side Eq.-1 mixture with (possibly masked) copy weights.

    weights/generation/p_copy may carry a leading batch dim; ext_ids is (n,).
    """
    weights = np.atleast_2d(np.asarray(weights, dtype=np.float64))
    generation = np.atleast_2d(np.asarray(generation, dtype=np.float64))
    bsz, n = weights.shape
    ids = np.ascontiguousarray(np.broadcast_to(ext_ids, (bsz, n)), dtype=np.int64)
    copy_side = kernels.scatter_copy_sums_batch(weights, ids, ext_size)
    gen_side = np.zeros((bsz, ext_size), dtype=np.float64)
    gen_side[:, : generation.shape[1]] = generation
    p = np.asarray(p_copy, dtype=np.float64).reshape(bsz, 1)
    joint = p * copy_side + (1.0 - p) * gen_side
    if renormalize:
        joint = joint / np.maximum(joint.sum(axis=-1, keepdims=True), 1e-300)
    return joint


@dataclass
class CopySupervision:
    loss_sum: Tensor  # summed over copied steps
    copied_steps: int
    skipped_steps: int

    def mean(self) -> Tensor:
        return self.loss_sum / float(max(1, self.copied_steps))


def copy_supervision_loss(attentions: list[Tensor], gold_attn: np.ndarray,
                          tgt_mask: np.ndarray,
                          copied_flags: np.ndarray | None = None) -> CopySupervision:
    """Mask-Only auxiliary loss: -ln(sum of attention on gold positions).

    `gold_attn` is (B, Tt, Ts) with 1.0 at aligned source positions.  Steps
    with no gold positions contribute nothing; steps flagged copied but with
    an empty gold set are skipped and counted.
    """
    bsz, steps, _ = gold_attn.shape
    if len(attentions) != steps:
        raise ValueError(f"copy_supervision_loss: {len(attentions)} attention steps "
                         f"for {steps} target steps")
    has_gold = gold_attn.sum(axis=-1) > 0  # (B, Tt)
    real = tgt_mask > 0
    if copied_flags is None:
        copied_flags = has_gold
    use = has_gold & real & copied_flags
    skipped = int((copied_flags & real & ~has_gold).sum())
    total: Tensor | None = None
    for t in range(steps):
        w = use[:, t]
        if not w.any():
            continue
        gsum = mul(attentions[t], gold_attn[:, t, :]).sum(axis=-1)
        term = mul(-log(clip(gsum, 1e-12, 1.0)), w.astype(attentions[t].dtype))
        step_sum = term.sum()
        total = step_sum if total is None else total + step_sum
    if total is None:
        total = Tensor(np.zeros((), dtype=np.float32))
    return CopySupervision(loss_sum=total, copied_steps=int(use.sum()), skipped_steps=skipped)


def multitask_loss(summarization_nll: Tensor, tagging_loss: Tensor, weight: float = 1.0) -> Tensor:
    """Shared-encoder objective: NLL + w * tagging cross-entropy."""
    return summarization_nll + mul(tagging_loss, float(weight))
