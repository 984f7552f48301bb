"""Training objectives over concatenated windows.

The concatenation loss sums per-token losses over the whole target
window. The context-discounted variant partitions target positions into
the current sentence (its tokens plus <E>) and everything earlier
(context sentences plus their <S> separators) and weighs the context
part by a discount cd in [0, 1]; cd = 1 recovers the plain
concatenation loss exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Window
from .tensor import Tensor, add, gather_last, mul_const, reduce_sum


class ObjectiveError(ValueError):
    pass


def smoothed_nll(log_probs: Tensor, targets: np.ndarray, epsilon: float,
                 pad_mask: np.ndarray | None = None) -> Tensor:
    """Label-smoothed negative log-likelihood per token.

    loss = (1 - eps) * (-log p[target]) + eps * mean over the vocab of
    (-log p); positions where ``pad_mask`` is 0 contribute exactly 0.
    """
    if not 0.0 <= epsilon < 1.0:
        raise ObjectiveError(f"label smoothing epsilon must be in [0, 1), got {epsilon}")
    targets = np.asarray(targets)
    vocab = log_probs.shape[-1]
    if targets.size and (targets.min() < 0 or targets.max() >= vocab):
        raise ObjectiveError(f"target id out of vocab of size {vocab}")
    nll = mul_const(gather_last(log_probs, targets), -1.0)
    if epsilon > 0.0:
        uniform = mul_const(reduce_sum(log_probs, axis=-1), -1.0 / vocab)
        loss = add(mul_const(nll, 1.0 - epsilon), mul_const(uniform, epsilon))
    else:
        loss = nll
    if pad_mask is not None:
        if pad_mask.shape != loss.shape:
            raise ObjectiveError(f"pad mask shape {pad_mask.shape} != losses {loss.shape}")
        loss = mul_const(loss, pad_mask.astype(log_probs.data.dtype))
    return loss


@dataclass
class LossBreakdown:
    """Current/context decomposition; discounted_total = cd*context + current."""

    current_loss: Tensor
    context_loss: Tensor
    discounted_total: Tensor
    current_token_count: int
    context_token_count: int
    cd: float

    @property
    def current(self) -> float:
        return self.current_loss.item()

    @property
    def context(self) -> float:
        return self.context_loss.item()

    @property
    def total(self) -> float:
        return self.discounted_total.item()


def partition_masks(window: Window, length: int | None = None,
                    dtype=np.float64) -> tuple[np.ndarray, np.ndarray]:
    """(current, context) 0/1 masks over target positions, padded to ``length``."""
    n = len(window.tgt_ids)
    length = n if length is None else length
    if length < n:
        raise ObjectiveError(f"mask length {length} shorter than target {n}")
    start, end = window.current_span
    if not 0 <= start < end <= n:
        raise ObjectiveError(f"current span {window.current_span} inconsistent with target length {n}")
    current = np.zeros(length, dtype=dtype)
    context = np.zeros(length, dtype=dtype)
    current[start:end] = 1.0
    context[:start] = 1.0
    return current, context


def concat_loss(per_token: Tensor, window: Window) -> Tensor:
    """Plain concatenation loss: sum over every non-pad target position."""
    current, context = partition_masks(window, per_token.shape[-1], per_token.data.dtype)
    return reduce_sum(mul_const(per_token, current + context))


def context_discounted_loss(per_token: Tensor, window: Window, cd: float) -> LossBreakdown:
    """Decompose one window's losses and apply the context discount."""
    if not 0.0 <= cd <= 1.0:
        raise ObjectiveError(f"context discount must be in [0, 1], got {cd}")
    start, end = window.current_span
    if end <= start:
        raise ObjectiveError("window has an empty current span")
    current_mask, context_mask = partition_masks(window, per_token.shape[-1],
                                                 per_token.data.dtype)
    return masked_discounted_loss(per_token, current_mask, context_mask, cd)


def masked_discounted_loss(per_token: Tensor, current_mask: np.ndarray,
                           context_mask: np.ndarray, cd: float) -> LossBreakdown:
    """Batched form of the discounted loss; masks select target positions."""
    if not 0.0 <= cd <= 1.0:
        raise ObjectiveError(f"context discount must be in [0, 1], got {cd}")
    if current_mask.shape != per_token.shape or context_mask.shape != per_token.shape:
        raise ObjectiveError("partition masks must match the per-token loss shape")
    current_mask = current_mask.astype(per_token.data.dtype)
    context_mask = context_mask.astype(per_token.data.dtype)
    current = reduce_sum(mul_const(per_token, current_mask))
    context = reduce_sum(mul_const(per_token, context_mask))
    total = add(mul_const(context, cd), current)
    return LossBreakdown(
        current_loss=current,
        context_loss=context,
        discounted_total=total,
        current_token_count=int(round(float(current_mask.sum()))),
        context_token_count=int(round(float(context_mask.sum()))),
        cd=cd,
    )


def normalized_training_loss(breakdown: LossBreakdown) -> Tensor:
    """Discounted total divided by the current token count.

    Normalizing by current tokens (not all tokens) keeps the effective
    step size on the current-sentence task independent of cd and of how
    much context a batch happens to contain.
    """
    if breakdown.current_token_count == 0:
        raise ObjectiveError("no current tokens to normalize by")
    return mul_const(breakdown.discounted_total, 1.0 / breakdown.current_token_count)


def loss_ratio(breakdowns: list[LossBreakdown], context_sentence_counts: list[int]) -> float:
    """Mean per-sentence current loss over mean per-sentence context loss.

    Each window contributes its current-sentence loss; windows with c >= 1
    context sentences contribute context_loss / c to the context mean.
    """
    if len(breakdowns) != len(context_sentence_counts):
        raise ObjectiveError("one context-sentence count per breakdown required")
    if not breakdowns:
        raise ObjectiveError("no breakdowns given")
    current_vals = [b.current for b in breakdowns]
    context_vals = [b.context / c for b, c in zip(breakdowns, context_sentence_counts) if c >= 1]
    if not context_vals:
        raise ObjectiveError("no window has any context sentence")
    return (sum(current_vals) / len(current_vals)) / (sum(context_vals) / len(context_vals))
