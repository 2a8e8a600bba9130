"""Numerical instruments for the gradient-decoupling claims.

Two probes:
  * With the projection-disentangling head, the cascade ranking term of
    behavior k must send exactly zero gradient into the other
    behaviors' expert vectors (they enter only through stopped
    projection scalars and scaled copies of q^k).
  * A coupled head (one shared pair vector feeding per-task towers)
    shows the opposite on a crafted instance with opposing labels: both
    task losses push nonzero, conflicting gradients onto the same
    shared vector.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Parameter, Tape, backward
from .experts import PMEHead
from .model import rng_for


def pme_cross_gradients(
    seed: int = 0, num_behaviors: int = 3, dim: int = 8, batch: int = 4
) -> dict:
    """Max |dL_cas^k / dq^t| over t != k, measured through the expert path.

    Expert vectors are independent leaves here (the harness isolates the
    head), gates take the behavior's own pair representations, and the
    loss is the BPR term of one behavior at a time.
    """
    rng = rng_for(seed, 90)
    head = PMEHead(rng, num_behaviors, dim, gamma=0.1, stop_scalar=True)
    q_pos = [
        Parameter(f"q_pos.{k}", rng.uniform(-1, 1, (batch, dim)))
        for k in range(num_behaviors)
    ]
    q_neg = [
        Parameter(f"q_neg.{k}", rng.uniform(-1, 1, (batch, dim)))
        for k in range(num_behaviors)
    ]
    zu = rng.uniform(-1, 1, (batch, dim))
    zv = rng.uniform(-1, 1, (batch, dim))

    worst = 0.0
    own_grad = 0.0
    for k in range(num_behaviors):
        tape = Tape()
        pos_nodes = [tape.leaf(p) for p in q_pos]
        neg_nodes = [tape.leaf(p) for p in q_neg]
        zu_node, zv_node = tape.constant(zu), tape.constant(zv)
        s_pos = head.score_behavior(tape, k, pos_nodes, zu_node, zv_node)
        s_neg = head.score_behavior(tape, k, neg_nodes, zu_node, zv_node)
        loss = ad.mean_all(-ad.log_sigmoid(s_pos - s_neg))
        grads = backward(tape, loss)
        for t in range(num_behaviors):
            mag = max(
                float(np.abs(grads[q_pos[t]]).max()),
                float(np.abs(grads[q_neg[t]]).max()),
            )
            if t == k:
                own_grad = max(own_grad, mag)
            else:
                worst = max(worst, mag)
    return {"max_cross_gradient": worst, "max_own_gradient": own_grad}


def coupled_conflict_gradients(dim: int = 8) -> dict:
    """Crafted 2-task conflict on a coupled head.

    One shared pair vector feeds two identical linear towers; task 1
    prefers (u,s) over (u,t), task 2 the reverse. The per-task gradients
    on the shared vector are then exactly opposite and far from zero.
    """
    pair_pos = Parameter("pair_pos", np.full((1, dim), 0.3))
    pair_neg = Parameter("pair_neg", np.full((1, dim), 0.3))
    bottom = np.eye(dim)
    tower = np.ones((dim, 1))

    def task_loss(tape, flip: bool):
        p = ad.matmul(tape.leaf(pair_pos), tape.constant(bottom))
        n = ad.matmul(tape.leaf(pair_neg), tape.constant(bottom))
        s_pos = ad.matmul(p, tape.constant(tower))
        s_neg = ad.matmul(n, tape.constant(tower))
        margin = (s_neg - s_pos) if flip else (s_pos - s_neg)
        return ad.mean_all(-ad.log_sigmoid(margin))

    grad_by_task = []
    for flip in (False, True):
        tape = Tape()
        grads = backward(tape, task_loss(tape, flip))
        grad_by_task.append(grads[pair_pos].ravel())
    g1, g2 = grad_by_task
    dot = float(g1 @ g2)
    return {
        "task_gradient_magnitudes": [float(np.abs(g).max()) for g in (g1, g2)],
        "gradient_dot": dot,
        "opposing": dot < 0,
    }


def decoupling_report(seed: int = 0) -> dict:
    pme = pme_cross_gradients(seed)
    coupled = coupled_conflict_gradients()
    return {
        "pme": pme,
        "coupled": coupled,
        "pme_decoupled": pme["max_cross_gradient"] < 1e-10,
        "coupled_conflicts": (
            min(coupled["task_gradient_magnitudes"]) > 1e-3 and coupled["opposing"]
        ),
    }
