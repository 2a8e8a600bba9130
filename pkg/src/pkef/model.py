"""Model assembly: embeddings + two-stream propagation + prediction head.

A model instance owns all trainable parameters and knows how to build
the joint loss for a minibatch of triples on a fresh tape, and how to
score items for evaluation without a tape.

Variants (for ablations):
    full    cascade + parallel streams with fusion, main head, all losses
    no-pkf  cascade stream only, main head, cascade + unique losses
    no-pme  both streams with fusion, bilinear head, parallel + cascade
    base    cascade stream only, bilinear head, cascade loss only
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from . import objective
from .autodiff import Parameter, Tape
from .data import BehaviorDataset, TrainTriples, UniqueLossTriples, build_normalized_adjacency
from .experts import CoefTap, build_head, unique_pair_scores
from .propagation import forward_pkf, init_embeddings, init_fusion_params

VARIANTS = ("full", "no-pkf", "no-pme", "base")


def rng_for(seed: int, *keys: int) -> np.random.Generator:
    """Independent deterministic stream for (seed, purpose...)."""
    return np.random.default_rng(np.random.SeedSequence((seed,) + keys))


class PKEFModel:
    def __init__(
        self,
        ds: BehaviorDataset,
        dim: int,
        layer_counts: list[int],
        loss_weights: list[float],
        fusion_scheme: str = "projection",
        head_variant: str = "pme",
        variant: str = "full",
        gamma: float = 0.1,
        mu: float = 1e-4,
        tower: str = "sum",
        stop_scalar: bool = True,
        seed: int = 0,
    ):
        if variant not in VARIANTS:
            raise ValueError(f"unknown model variant {variant!r}")
        if len(layer_counts) != ds.num_behaviors:
            raise ValueError(
                f"{len(layer_counts)} layer counts for {ds.num_behaviors} behaviors"
            )
        objective.validate_loss_weights(loss_weights)
        if variant in ("base", "no-pme"):
            head_variant = "bilinear"
        self.ds = ds
        self.dim = dim
        self.layer_counts = list(layer_counts)
        self.loss_weights = list(loss_weights)
        self.variant = variant
        self.use_parallel = variant in ("full", "no-pme")
        self.fusion_scheme = fusion_scheme if self.use_parallel else "none"
        self.head_variant = head_variant
        self.gamma = gamma
        self.mu = mu
        self.seed = seed

        self.adjacencies = [
            build_normalized_adjacency(ds, k) for k in range(ds.num_behaviors)
        ]
        rng = rng_for(seed, 0)
        self.emb_user, self.emb_item = init_embeddings(rng, ds.num_users, ds.num_items, dim)
        self.fusion = init_fusion_params(rng, self.fusion_scheme, self.layer_counts, dim)
        self.head = build_head(
            head_variant, rng, ds.num_behaviors, dim, gamma, tower, stop_scalar
        )
        self.use_unique_loss = head_variant == "pme" and ds.num_behaviors > 1

    def parameters(self) -> list[Parameter]:
        return [self.emb_user, self.emb_item] + self.fusion.parameters() + self.head.parameters()

    # ------------------------------------------------------------------
    # training-side forward

    def propagate(self, tape: Tape):
        return forward_pkf(
            tape,
            self.emb_user,
            self.emb_item,
            self.adjacencies,
            self.layer_counts,
            self.fusion,
            use_parallel=self.use_parallel,
        )

    def _gather_pairs(self, outputs, users: np.ndarray, items: np.ndarray):
        """Per-behavior user and item rows of the cascade outputs."""
        item_rows = items + self.ds.num_users
        zu = [ad.gather_rows(z, users) for z in outputs.cascade]
        zv = [ad.gather_rows(z, item_rows) for z in outputs.cascade]
        return zu, zv

    def batch_loss(
        self,
        tape: Tape,
        bpr_slices: list[TrainTriples | None],
        unique_slices: dict[tuple[int, int], UniqueLossTriples],
        tap: CoefTap | None = None,
    ):
        """Build loss nodes for one minibatch. Returns dict of named nodes."""
        outputs = self.propagate(tape)
        num_users = self.ds.num_users

        cascade_pairs: list[tuple | None] = []
        parallel_pairs: list[tuple | None] = []
        for k, triples in enumerate(bpr_slices):
            if triples is None or len(triples) == 0:
                cascade_pairs.append(None)
                parallel_pairs.append(None)
                continue
            zu, zv_pos = self._gather_pairs(outputs, triples.users, triples.pos_items)
            _, zv_neg = self._gather_pairs(outputs, triples.users, triples.neg_items)
            pos_scores = self.head.cascade_scores(tape, zu, zv_pos, tap, behaviors=[k])
            neg_scores = self.head.cascade_scores(tape, zu, zv_neg, tap, behaviors=[k])
            cascade_pairs.append((pos_scores[k], neg_scores[k]))
            if self.use_parallel:
                pu = ad.gather_rows(outputs.parallel[k], triples.users)
                pv_pos = ad.gather_rows(outputs.parallel[k], triples.pos_items + num_users)
                pv_neg = ad.gather_rows(outputs.parallel[k], triples.neg_items + num_users)
                parallel_pairs.append(
                    (ad.row_sum(pu * pv_pos), ad.row_sum(pu * pv_neg))
                )
            else:
                parallel_pairs.append(None)

        parts = {}
        parts["cas"] = objective.weighted_bpr_loss(tape, cascade_pairs, self.loss_weights)
        if self.use_parallel:
            parts["par"] = objective.weighted_bpr_loss(
                tape, parallel_pairs, self.loss_weights
            )
        else:
            parts["par"] = tape.constant(0.0)

        if self.use_unique_loss:
            unique_scores = {}
            for (k_prime, k), triples in unique_slices.items():
                if triples is None or len(triples) == 0:
                    continue
                stop = getattr(self.head, "stop_scalar", True)
                zu_s = ad.gather_rows(outputs.cascade[k_prime], triples.users)
                zu_g = ad.gather_rows(outputs.cascade[k], triples.users)
                pos_rows = triples.pos_items + num_users
                neg_rows = triples.neg_items + num_users
                pos = unique_pair_scores(
                    zu_s,
                    zu_g,
                    ad.gather_rows(outputs.cascade[k_prime], pos_rows),
                    ad.gather_rows(outputs.cascade[k], pos_rows),
                    stop,
                    tap,
                )
                neg = unique_pair_scores(
                    zu_s,
                    zu_g,
                    ad.gather_rows(outputs.cascade[k_prime], neg_rows),
                    ad.gather_rows(outputs.cascade[k], neg_rows),
                    stop,
                    tap,
                )
                unique_scores[(k_prime, k)] = (pos, neg)
            parts["uni"] = objective.unique_loss(tape, unique_scores, self.loss_weights)
        else:
            parts["uni"] = tape.constant(0.0)

        parts["total"] = objective.total_loss(
            [parts["par"], parts["cas"], parts["uni"]], tape, self.parameters(), self.mu
        )
        return parts

    # ------------------------------------------------------------------
    # inference side (no tape)

    def propagate_values(self):
        """Cascade and parallel outputs as plain arrays."""
        tape = Tape()
        outputs = self.propagate(tape)
        return (
            [z.value for z in outputs.cascade],
            [p.value for p in outputs.parallel],
        )

    def score_user_items(
        self,
        z_values: list[np.ndarray],
        user: int,
        items: np.ndarray | None = None,
        behavior: int | None = None,
    ) -> np.ndarray:
        """Cascade-head scores of one user against many items."""
        k = self.ds.num_behaviors - 1 if behavior is None else behavior
        num_users = self.ds.num_users
        if items is None:
            items = np.arange(self.ds.num_items)
        zu_list = [
            np.broadcast_to(z[user], (len(items), self.dim)).copy() for z in z_values
        ]
        zv_list = [z[num_users + items] for z in z_values]
        return self.head.scores_np(zu_list, zv_list, behaviors=[k])[k]

    def gate_weights_for_pairs(
        self, z_values: list[np.ndarray], users: np.ndarray, items: np.ndarray
    ) -> np.ndarray:
        """Target-behavior gate rows for explicit (user, item) pairs."""
        if not getattr(self.head, "gated", False):
            raise ValueError(f"head {self.head_variant!r} has no gates")
        k = self.ds.num_behaviors - 1
        zu_list = [z[users] for z in z_values]
        zv_list = [z[self.ds.num_users + items] for z in z_values]
        if self.head_variant == "pme":
            return self.head.gates_np(k, zu_list[k], zv_list[k])
        return self.head.gates_np(k, zu_list, zv_list)
