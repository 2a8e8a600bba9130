"""Planted-preference synthetic datasets for tests and desk-scale runs.

Interactions come from a latent inner-product affinity model, so an
embedding-based learner can represent the signal by construction. Per
behavior, the highest-affinity pairs are selected to hit a density
target; downstream behaviors draw (mostly) from upstream positives,
emulating the upstream-rich interaction imbalance of real logs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import BehaviorDataset


@dataclass
class SyntheticSpec:
    num_users: int = 200
    num_items: int = 100
    behaviors: list[str] = field(default_factory=lambda: ["view", "cart", "buy"])
    latent_dim: int = 8
    densities: tuple[float, ...] = (0.3, 0.1, 0.03)
    overlap: float = 1.0  # fraction of each downstream set drawn from upstream
    seed: int = 0

    def validate(self):
        if len(self.densities) != len(self.behaviors):
            raise ValueError("one density per behavior")
        if any(not 0.0 < d <= 1.0 for d in self.densities):
            raise ValueError(f"densities must lie in (0, 1]: {self.densities}")
        for up, down in zip(self.densities, self.densities[1:]):
            if down > up:
                raise ValueError(
                    f"downstream density {down} exceeds upstream {up}; "
                    "upstream behaviors must be at least as dense"
                )
        if not 0.0 <= self.overlap <= 1.0:
            raise ValueError(f"overlap rate must be in [0, 1]: {self.overlap}")


def _pairs_from_flat(flat: np.ndarray, num_items: int) -> list[tuple[int, int]]:
    return [(int(i // num_items), int(i % num_items)) for i in flat]


def generate(spec: SyntheticSpec) -> tuple[BehaviorDataset, np.ndarray, np.ndarray]:
    """Build a dataset plus the true latent factors (for oracle checks)."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    scale = 1.0 / np.sqrt(spec.latent_dim)
    user_f = rng.normal(0.0, scale, (spec.num_users, spec.latent_dim))
    item_f = rng.normal(0.0, scale, (spec.num_items, spec.latent_dim))
    affinity = (user_f @ item_f.T).ravel()
    total = spec.num_users * spec.num_items
    by_affinity = np.argsort(-affinity, kind="stable")

    sets: list[np.ndarray] = []
    prev: np.ndarray | None = None
    for density in spec.densities:
        count = max(1, int(round(density * total)))
        if prev is None:
            chosen = by_affinity[:count]
        else:
            from_up = min(int(round(spec.overlap * count)), len(prev))
            prev_mask = np.zeros(total, dtype=bool)
            prev_mask[prev] = True
            in_up = by_affinity[prev_mask[by_affinity]][:from_up]
            out_up = by_affinity[~prev_mask[by_affinity]][: count - from_up]
            chosen = np.concatenate([in_up, out_up])
            if len(chosen) < count:
                raise ValueError(
                    f"cannot reach density {density} with overlap {spec.overlap}"
                )
        sets.append(np.sort(chosen))
        prev = sets[-1]

    # hold out one target-behavior positive per user that has any
    target_flat = sets[-1]
    target_pairs = _pairs_from_flat(target_flat, spec.num_items)
    by_user: dict[int, list[int]] = {}
    for u, v in target_pairs:
        by_user.setdefault(u, []).append(v)
    test_pairs = []
    held = set()
    for u in sorted(by_user):
        items = by_user[u]
        v = items[int(rng.integers(len(items)))]
        test_pairs.append((u, v))
        held.add((u, v))

    positives = []
    for k, flat in enumerate(sets):
        pairs = _pairs_from_flat(flat, spec.num_items)
        if k == len(sets) - 1:
            pairs = [p for p in pairs if p not in held]
        positives.append(pairs)

    ds = BehaviorDataset(
        spec.num_users, spec.num_items, list(spec.behaviors), positives, test_pairs
    )
    return ds, user_f, item_f


def oracle_ranks(ds: BehaviorDataset, user_f: np.ndarray, item_f: np.ndarray):
    """Ranks of the held-out items under the true affinities."""
    from .eval import rank_items

    target = ds.num_behaviors - 1
    ranks = []
    for u, v in ds.test_pairs:
        scores = user_f[u] @ item_f.T
        ranks.append(rank_items(scores, ds.items_of(target, u), v))
    return ranks
