"""Shared test utilities: finite differences and tiny fixtures."""

from __future__ import annotations

import numpy as np

from pkef.autodiff import Tape, backward
from pkef.data import BehaviorDataset, build_unique_triples, sample_bpr_triples
from pkef.experts import CoefTap
from pkef.model import PKEFModel


def rel_err(a: float, b: float, floor: float = 1e-6) -> float:
    """Gradient-check relative error with a floor guarding zero gradients."""
    return abs(a - b) / max(abs(a), abs(b), floor)


def fd_check_params(build_loss, params, h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences.

    build_loss(tape) must rebuild the same scalar loss from current
    parameter values every call.
    """
    tape = Tape()
    loss = build_loss(tape)
    grads = backward(tape, loss)
    worst = 0.0
    for p in params:
        flat = p.value.ravel()
        gflat = grads[p].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = float(build_loss(Tape()).value)
            flat[i] = keep - h
            down = float(build_loss(Tape()).value)
            flat[i] = keep
            worst = max(worst, rel_err(gflat[i], (up - down) / (2.0 * h)))
    return worst


def fd_check_model_loss(model: PKEFModel, bpr, unique, h: float = 1e-5) -> float:
    """End-to-end check of the total loss, honoring stop-gradient scalars.

    The analytic gradient treats the projection scalars as constants, so
    the finite-difference side replays the scalars captured at the base
    point instead of recomputing them under perturbation.
    """
    tap = CoefTap("capture")
    tape = Tape()
    parts = model.batch_loss(tape, bpr, unique, tap=tap)
    grads = backward(tape, parts["total"])

    def loss_frozen() -> float:
        replay = CoefTap("replay", tap.values)
        frozen = model.batch_loss(Tape(), bpr, unique, tap=replay)
        return float(frozen["total"].value)

    worst = 0.0
    for p in model.parameters():
        flat = p.value.ravel()
        gflat = grads[p].ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_frozen()
            flat[i] = keep - h
            down = loss_frozen()
            flat[i] = keep
            worst = max(worst, rel_err(gflat[i], (up - down) / (2.0 * h)))
    return worst


def random_dataset(
    rng: np.random.Generator,
    num_users: int,
    num_items: int,
    num_behaviors: int,
    density: float = 0.4,
) -> BehaviorDataset:
    """Random small dataset; every behavior non-empty, one test pair."""
    positives = []
    for _ in range(num_behaviors):
        pairs = []
        for u in range(num_users):
            for v in range(num_items):
                if rng.random() < density:
                    pairs.append((u, v))
        if not pairs:
            pairs.append((int(rng.integers(num_users)), int(rng.integers(num_items))))
        positives.append(pairs)
    target = positives[-1]
    held = target[int(rng.integers(len(target)))]
    positives[-1] = [p for p in target if p != held]
    return BehaviorDataset(
        num_users,
        num_items,
        [f"b{i}" for i in range(num_behaviors)],
        positives,
        [held],
    )


def sampled_batches(ds: BehaviorDataset, model: PKEFModel, seed: int = 0):
    """One full-batch sample of BPR and unique triples for a model."""
    bpr = [
        sample_bpr_triples(ds, k, seed + k) if ds.positives[k] else None
        for k in range(ds.num_behaviors)
    ]
    unique = {}
    if model.use_unique_loss:
        for k in range(ds.num_behaviors):
            for kp in range(ds.num_behaviors):
                if kp == k:
                    continue
                t = build_unique_triples(ds, kp, k, seed + 17 + kp * 8 + k)
                if len(t):
                    unique[(kp, k)] = t
    return bpr, unique
