"""Training loop: epoch sampling, minibatch steps, early stopping, artifacts.

Every epoch resamples negatives, shuffles per-behavior triple lists and
splits each into the same number of contiguous minibatch slices (driven
by the largest list), so each triple is consumed exactly once per epoch.
Behaviors with zero loss weight are not sampled at all; they influence
training only through the cascade hand-off and fusion.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import os
import time

import numpy as np

from . import checkpoint
from .autodiff import Tape, backward
from .config import RunConfig, write_config
from .data import BehaviorDataset, build_unique_triples, load_dataset, sample_bpr_triples
from .eval import MetricReport, evaluate_model
from .model import PKEFModel, rng_for
from .objective import Adam, num_batches

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("epoch", "hr", "ndcg", "loss_par", "loss_cas", "loss_uni", "loss_total")


class TrainingDiverged(RuntimeError):
    pass


def _slice_triples(triples, order, start, stop):
    idx = order[start:stop]
    if len(idx) == 0:
        return None
    return dataclasses.replace(
        triples,
        users=triples.users[idx],
        pos_items=triples.pos_items[idx],
        neg_items=triples.neg_items[idx],
    )


def _epoch_samples(model: PKEFModel, ds: BehaviorDataset, seed: int, epoch: int):
    """Resampled, shuffled triples for one epoch."""
    weights = model.loss_weights
    bpr = []
    for k in range(ds.num_behaviors):
        if weights[k] == 0.0 or not ds.positives[k]:
            bpr.append(None)
            continue
        bpr.append(sample_bpr_triples(ds, k, _derived_seed(seed, epoch, 1, k)))
    unique = {}
    if model.use_unique_loss:
        for k in range(ds.num_behaviors):
            if weights[k] == 0.0:
                continue
            for k_prime in range(ds.num_behaviors):
                if k_prime == k:
                    continue
                unique[(k_prime, k)] = build_unique_triples(
                    ds, k_prime, k, _derived_seed(seed, epoch, 2, k_prime * 16 + k)
                )
    return bpr, unique


def _derived_seed(seed: int, *keys: int) -> int:
    mixed = np.random.SeedSequence((seed,) + keys).generate_state(1)[0]
    return int(mixed)


def train_model(
    model: PKEFModel, ds: BehaviorDataset, cfg: RunConfig, quiet: bool = False
):
    """Train in place; returns (metric rows, best report, best parameter arrays)."""
    optimizer = Adam(model.parameters(), lr=cfg.lr)
    rows = []
    best: tuple[float, int, dict, MetricReport] | None = None
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        t0 = time.time()
        bpr, unique = _epoch_samples(model, ds, cfg.seed, epoch)
        sizes = [len(t) for t in bpr if t is not None]
        sizes += [len(t) for t in unique.values()]
        batches = num_batches(max(sizes) if sizes else 1, cfg.batch)

        shuffle_rng = rng_for(cfg.seed, 3, epoch)
        bpr_orders = [
            shuffle_rng.permutation(len(t)) if t is not None else None for t in bpr
        ]
        unique_orders = {key: shuffle_rng.permutation(len(t)) for key, t in unique.items()}

        part_sums = {"par": 0.0, "cas": 0.0, "uni": 0.0, "total": 0.0}
        for b in range(batches):
            bpr_slices = []
            for t, order in zip(bpr, bpr_orders):
                if t is None:
                    bpr_slices.append(None)
                    continue
                lo, hi = _bounds(len(t), batches, b)
                bpr_slices.append(_slice_triples(t, order, lo, hi))
            unique_slices = {}
            for key, t in unique.items():
                lo, hi = _bounds(len(t), batches, b)
                sliced = _slice_triples(t, unique_orders[key], lo, hi)
                if sliced is not None:
                    unique_slices[key] = sliced

            tape = Tape()
            parts = model.batch_loss(tape, bpr_slices, unique_slices)
            total = float(parts["total"].value)
            if not np.isfinite(total):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, batch {b}: {total}"
                )
            grads = backward(tape, parts["total"])
            optimizer.step(grads)
            for name in part_sums:
                part_sums[name] += float(parts[name].value)

        losses = {name: part_sums[name] / batches for name in part_sums}
        if epoch % cfg.eval_every == 0:
            report = evaluate_model(model, ds, cfg.k)
        else:
            report = None
        row = {
            "epoch": epoch,
            "hr": report.hr if report else "",
            "ndcg": report.ndcg if report else "",
            "loss_par": losses["par"],
            "loss_cas": losses["cas"],
            "loss_uni": losses["uni"],
            "loss_total": losses["total"],
        }
        rows.append(row)
        if not quiet:
            log.info(
                "epoch %d: loss %.5f hr %s ndcg %s (%.1fs)",
                epoch,
                losses["total"],
                f"{report.hr:.4f}" if report else "-",
                f"{report.ndcg:.4f}" if report else "-",
                time.time() - t0,
            )
        if report is not None:
            report.losses = losses
            if best is None or report.hr > best[0]:
                best = (
                    report.hr,
                    epoch,
                    {p.name: p.value.copy() for p in model.parameters()},
                    report,
                )
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    if not quiet:
                        log.info("early stop at epoch %d (patience %d)", epoch, cfg.patience)
                    break
    if best is None:  # no evaluation ran; keep final parameters
        report = evaluate_model(model, ds, cfg.k)
        report.losses = losses
        best = (report.hr, cfg.epochs, {p.name: p.value.copy() for p in model.parameters()}, report)
    # restore the best parameters into the model
    for p in model.parameters():
        p.value = best[2][p.name]
    return rows, best[3], best[1]


def format_float(x) -> str:
    if x == "":
        return ""
    return f"{x:.17g}"


def write_metrics_csv(rows: list[dict], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRIC_COLUMNS) + "\n")
        for row in rows:
            cells = [str(row["epoch"])] + [
                format_float(row[c]) for c in METRIC_COLUMNS[1:]
            ]
            fh.write(",".join(cells) + "\n")


def write_report_json(report: MetricReport, path: str, extra: dict | None = None) -> None:
    payload = report.as_dict()
    if extra:
        payload.update(extra)
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_model(ds: BehaviorDataset, cfg: RunConfig) -> PKEFModel:
    return PKEFModel(
        ds,
        dim=cfg.dim,
        layer_counts=cfg.layers,
        loss_weights=cfg.lambdas,
        fusion_scheme=cfg.fusion,
        head_variant=cfg.head,
        variant=cfg.variant,
        gamma=cfg.gamma,
        mu=cfg.mu,
        tower=cfg.tower,
        seed=cfg.seed,
    )


def run_training(cfg: RunConfig, ds: BehaviorDataset | None = None) -> MetricReport:
    """Full train command: train, then write all artifacts to cfg.out."""
    if ds is None:
        ds = load_dataset(cfg.data, cfg.behaviors)
    os.makedirs(cfg.out, exist_ok=True)
    write_config(cfg, os.path.join(cfg.out, "config.txt"))
    model = build_model(ds, cfg)
    rows, report, best_epoch = train_model(model, ds, cfg)
    write_metrics_csv(rows, os.path.join(cfg.out, "metrics.csv"))
    checkpoint.save_model(os.path.join(cfg.out, "checkpoint.pkef"), model)
    write_report_json(
        report,
        os.path.join(cfg.out, "report.json"),
        extra={"best_epoch": best_epoch, "variant": model.variant, "head": model.head_variant},
    )
    return report


def _bounds(n: int, batches: int, b: int) -> tuple[int, int]:
    """Contiguous slice b of n elements split into `batches` parts."""
    base, rem = divmod(n, batches)
    lo = b * base + min(b, rem)
    return lo, lo + base + (1 if b < rem else 0)
