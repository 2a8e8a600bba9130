"""All-item ranking evaluation and analysis instruments.

Protocol: leave-one-out over the target behavior. Every test user's
held-out item is ranked against all items except that user's
target-behavior training positives; no sampled candidates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class MetricReport:
    hr: float
    ndcg: float
    k: int
    num_users: int
    cold_users: int = 0  # test users with no target-behavior training history
    losses: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "hr": self.hr,
            "ndcg": self.ndcg,
            "k": self.k,
            "num_users": self.num_users,
            "cold_users": self.cold_users,
            "losses": self.losses,
        }


def rank_items(scores: np.ndarray, exclude: set[int], target: int) -> int:
    """1-indexed rank of the target among non-excluded items.

    Rank counts strictly greater scores; among ties the lower item index
    comes first, so the result is deterministic.
    """
    if target in exclude:
        raise ValueError(f"target item {target} is excluded from ranking")
    scores = np.asarray(scores)
    mask = np.ones(len(scores), dtype=bool)
    if exclude:
        mask[list(exclude)] = False
    target_score = scores[target]
    greater = int(np.count_nonzero(mask & (scores > target_score)))
    tied_before = int(
        np.count_nonzero(mask[:target] & (scores[:target] == target_score))
    )
    return 1 + greater + tied_before


def hr_ndcg(ranks: list[int], k: int) -> tuple[float, float]:
    """Hit ratio and NDCG at k for single held-out items."""
    if not ranks:
        raise ValueError("no ranks to aggregate")
    hits = sum(1 for r in ranks if r <= k)
    gain = sum(1.0 / math.log2(r + 1) for r in ranks if r <= k)
    return hits / len(ranks), gain / len(ranks)


def evaluate_model(model, ds, k: int = 10, z_values=None) -> MetricReport:
    """Rank each held-out target-behavior pair with the cascade head."""
    if z_values is None:
        z_values, _ = model.propagate_values()
    target = ds.num_behaviors - 1
    ranks = []
    cold = 0
    for u, v in ds.test_pairs:
        exclude = ds.items_of(target, u)
        if not exclude:
            cold += 1
        scores = model.score_user_items(z_values, u)
        ranks.append(rank_items(scores, exclude, v))
    hr, ndcg = hr_ndcg(ranks, k)
    return MetricReport(hr, ndcg, k, len(ranks), cold)


# ---------------------------------------------------------------------------
# behavioral-correlation case study


def _pair_correlation(ds, u: int, k1: int, k2: int) -> float | None:
    """Pearson correlation of two binary interaction indicators over items.

    Computed from set sizes: both vectors are 0/1 over the item set.
    None when either indicator is constant (correlation undefined).
    """
    n = ds.num_items
    a = ds.items_of(k1, u)
    b = ds.items_of(k2, u)
    na, nb = len(a), len(b)
    if na == 0 or na == n or nb == 0 or nb == n:
        return None
    nab = len(a & b)
    num = n * nab - na * nb
    den = math.sqrt(na * (n - na)) * math.sqrt(nb * (n - nb))
    return num / den


def user_correlation(ds, u: int) -> float | None:
    """Mean pairwise behavior correlation for one user; None if undefined."""
    vals = []
    for k1 in range(ds.num_behaviors):
        for k2 in range(k1 + 1, ds.num_behaviors):
            c = _pair_correlation(ds, u, k1, k2)
            if c is not None:
                vals.append(c)
    if not vals:
        return None
    return sum(vals) / len(vals)


def pearson_case_study(model, ds, k: int = 10, group_count: int = 5) -> dict:
    """Bucket test users by mean behavior correlation; metrics per bucket.

    Buckets are equal-width over the observed correlation range. Users
    whose correlations are all undefined are excluded and counted. Mean
    interaction counts per bucket are reported so bucket comparability
    can be judged.
    """
    if ds.num_behaviors < 2:
        raise ValueError("case study needs at least two behaviors")
    z_values, _ = model.propagate_values()
    target = ds.num_behaviors - 1

    per_user: dict[int, float] = {}
    excluded = 0
    test_users = sorted({u for u, _ in ds.test_pairs})
    for u in test_users:
        c = user_correlation(ds, u)
        if c is None:
            excluded += 1
        else:
            per_user[u] = c
    if not per_user:
        raise ValueError("no test user has a defined behavior correlation")

    corrs = np.array(list(per_user.values()))
    lo, hi = float(corrs.min()), float(corrs.max())
    width = (hi - lo) / group_count or 1.0

    def bucket_of(c):
        b = int((c - lo) / width)
        return min(b, group_count - 1)

    buckets = [[] for _ in range(group_count)]
    for u, c in per_user.items():
        buckets[bucket_of(c)].append(u)

    groups = []
    for g, users in enumerate(buckets):
        user_set = set(users)
        ranks = []
        for u, v in ds.test_pairs:
            if u not in user_set:
                continue
            scores = model.score_user_items(z_values, u)
            ranks.append(rank_items(scores, ds.items_of(target, u), v))
        interactions = [
            sum(len(ds.items_of(kk, u)) for kk in range(ds.num_behaviors)) for u in users
        ]
        entry = {
            "bucket": g,
            "corr_range": [lo + g * width, lo + (g + 1) * width],
            "num_users": len(users),
            "mean_interactions": float(np.mean(interactions)) if users else 0.0,
        }
        if ranks:
            hr, ndcg = hr_ndcg(ranks, k)
            entry.update(hr=hr, ndcg=ndcg)
        else:
            entry.update(hr=None, ndcg=None)
        groups.append(entry)
    return {
        "groups": groups,
        "excluded_users": excluded,
        "correlation_range": [lo, hi],
    }


def export_gate_weights(model, ds, batch: int = 4096) -> np.ndarray:
    """Mean target-behavior gate weights over the test pairs.

    Only gated heads carry gates; each row is a softmax so the mean sums
    to 1 as well.
    """
    if not getattr(model.head, "gated", False):
        raise ValueError(f"head variant {model.head_variant!r} has no gate weights")
    z_values, _ = model.propagate_values()
    users = np.array([u for u, _ in ds.test_pairs], dtype=np.intp)
    items = np.array([v for _, v in ds.test_pairs], dtype=np.intp)
    total = None
    for start in range(0, len(users), batch):
        g = model.gate_weights_for_pairs(
            z_values, users[start : start + batch], items[start : start + batch]
        )
        s = g.sum(axis=0)
        total = s if total is None else total + s
    return total / len(users)
