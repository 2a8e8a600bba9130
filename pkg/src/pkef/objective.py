"""Joint BPR objective and the adaptive-moment optimizer.

Three ranking losses share one form: -log sigma(pos - neg), averaged
over a minibatch slice per behavior (or per source/guide pair for the
unique loss) and combined with per-behavior weights lambda_k. The total
adds L2 regularization over every trainable parameter.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Parameter, Tape

log = logging.getLogger(__name__)


def validate_loss_weights(weights: list[float]) -> None:
    if any(w < 0 for w in weights):
        raise ValueError(f"loss weights must be non-negative, got {weights}")
    if abs(sum(weights) - 1.0) > 1e-12:
        raise ValueError(
            f"loss weights must sum to 1 (got {sum(weights)!r}); "
            "use exact fractions like 0,4/6,2/6"
        )


def bpr_term(pos_score: Node, neg_score: Node) -> Node:
    """-log sigma(pos - neg), elementwise, stable for large margins."""
    return -ad.log_sigmoid(pos_score - neg_score)


def weighted_bpr_loss(
    tape: Tape, score_pairs: list[tuple[Node, Node] | None], weights: list[float]
) -> Node:
    """Sum_k lambda_k * mean(bpr over behavior-k slice).

    Entries of score_pairs may be None (empty slice for that behavior
    this batch); they contribute zero, as do zero-weight behaviors.
    """
    total = tape.constant(0.0)
    empty = True
    for k, pair in enumerate(score_pairs):
        if pair is None or weights[k] == 0.0:
            continue
        pos, neg = pair
        total = total + weights[k] * ad.mean_all(bpr_term(pos, neg))
        empty = False
    if empty:
        log.warning("BPR loss over an empty batch")
    return total


def unique_loss(
    tape: Tape,
    pair_scores: dict[tuple[int, int], tuple[Node, Node]],
    weights: list[float],
) -> Node:
    """Sum over ordered (source k', guide k) pairs of lambda_k * mean bpr."""
    total = tape.constant(0.0)
    for (_, guide), (pos, neg) in pair_scores.items():
        if weights[guide] == 0.0:
            continue
        total = total + weights[guide] * ad.mean_all(bpr_term(pos, neg))
    return total


def l2_penalty(tape: Tape, params: list[Parameter], mu: float) -> Node:
    total = tape.constant(0.0)
    if mu == 0.0:
        return total
    for p in params:
        leaf = tape.leaf(p)
        total = total + mu * ad.sum_all(leaf * leaf)
    return total


def total_loss(parts: list[Node], tape: Tape, params: list[Parameter], mu: float) -> Node:
    total = parts[0]
    for part in parts[1:]:
        total = total + part
    return total + l2_penalty(tape, params, mu)


class Adam:
    """Standard bias-corrected adaptive-moment update, one slot per parameter."""

    def __init__(self, params: list[Parameter], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {p.name: np.zeros_like(p.value) for p in self.params}
        self.v = {p.name: np.zeros_like(p.value) for p in self.params}

    def step(self, grads: dict[Parameter, np.ndarray]) -> None:
        self.step_count += 1
        c1 = 1.0 - self.beta1**self.step_count
        c2 = 1.0 - self.beta2**self.step_count
        for p in self.params:
            g = grads.get(p)
            if g is None:
                continue
            if g.shape != p.value.shape:
                raise RuntimeError(
                    f"gradient shape {g.shape} does not match {p.name} {p.value.shape}"
                )
            m = self.m[p.name] = self.beta1 * self.m[p.name] + (1.0 - self.beta1) * g
            v = self.v[p.name] = self.beta2 * self.v[p.name] + (1.0 - self.beta2) * (g * g)
            p.value -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def num_batches(max_triples: int, batch_size: int) -> int:
    """Minibatches per epoch, driven by the largest triple list."""
    return max(1, math.ceil(max_triples / batch_size))
