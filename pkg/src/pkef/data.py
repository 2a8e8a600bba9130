"""Multi-behavior interaction data: loading, adjacencies, training triples.

File layout of a dataset directory:
    <behavior>.txt   one "user item" pair per line, 0-indexed, per behavior
    test.txt         held-out target-behavior pairs, same format
    size.txt         optional "num_users num_items" header
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .autodiff import SparseMatrix

log = logging.getLogger(__name__)


@dataclass
class BehaviorDataset:
    """Per-behavior positive sets over a shared user/item universe.

    Behaviors are ordered upstream to downstream; the last one is the
    target behavior that gets evaluated.
    """

    num_users: int
    num_items: int
    behaviors: list[str]
    positives: list[list[tuple[int, int]]]  # per behavior, first-occurrence order
    test_pairs: list[tuple[int, int]]
    user_positives: list[dict[int, set[int]]] = field(init=False, repr=False)

    def __post_init__(self):
        self.user_positives = []
        for pairs in self.positives:
            by_user: dict[int, set[int]] = {}
            for u, v in pairs:
                by_user.setdefault(u, set()).add(v)
            self.user_positives.append(by_user)

    @property
    def num_behaviors(self) -> int:
        return len(self.behaviors)

    @property
    def num_nodes(self) -> int:
        return self.num_users + self.num_items

    def positive_set(self, k: int) -> set[tuple[int, int]]:
        return set(self.positives[k])

    def items_of(self, k: int, user: int) -> set[int]:
        return self.user_positives[k].get(user, set())


@dataclass
class TrainTriples:
    """BPR triples (u, s, t): s a behavior-k positive of u, t not."""

    behavior: int
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return len(self.users)


@dataclass
class UniqueLossTriples:
    """Triples over T[k', k]: s in O+_{k'} \\ O+_k, t in O-_k or shared."""

    source: int  # k'
    guide: int  # k
    users: np.ndarray
    pos_items: np.ndarray
    neg_items: np.ndarray

    def __len__(self):
        return len(self.users)


def _read_pairs(path: str, num_users: int | None, num_items: int | None):
    pairs = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ValueError(f"{path}:{lineno}: expected 'user item', got {line!r}")
            u, v = int(parts[0]), int(parts[1])
            if u < 0 or v < 0:
                raise ValueError(f"{path}:{lineno}: negative index")
            if num_users is not None and (u >= num_users or v >= num_items):
                raise ValueError(
                    f"{path}:{lineno}: index ({u},{v}) outside declared "
                    f"size ({num_users},{num_items})"
                )
            pairs.append((u, v))
    return pairs


def _dedupe(pairs):
    """Keep the first occurrence of each pair (proxy for earliest entry)."""
    seen = set()
    out = []
    for p in pairs:
        if p not in seen:
            seen.add(p)
            out.append(p)
    return out


def load_dataset(path: str, behavior_names: list[str]) -> BehaviorDataset:
    """Load one training file per behavior plus test.txt from a directory."""
    size_path = os.path.join(path, "size.txt")
    num_users = num_items = None
    if os.path.exists(size_path):
        with open(size_path) as fh:
            num_users, num_items = (int(x) for x in fh.read().split()[:2])

    raw = []
    for name in behavior_names:
        fpath = os.path.join(path, f"{name}.txt")
        if not os.path.exists(fpath):
            raise FileNotFoundError(f"missing behavior file: {fpath}")
        pairs = _dedupe(_read_pairs(fpath, num_users, num_items))
        if not pairs:
            log.warning("behavior %r has no interactions", name)
        raw.append(pairs)

    test_path = os.path.join(path, "test.txt")
    if not os.path.exists(test_path):
        raise FileNotFoundError(f"missing test file: {test_path}")
    test_pairs = _dedupe(_read_pairs(test_path, num_users, num_items))

    if num_users is None:
        all_pairs = [p for pairs in raw for p in pairs] + test_pairs
        if not all_pairs:
            raise ValueError(f"dataset at {path} is empty and has no size.txt")
        num_users = max(u for u, _ in all_pairs) + 1
        num_items = max(v for _, v in all_pairs) + 1

    ds = BehaviorDataset(num_users, num_items, list(behavior_names), raw, test_pairs)
    target = ds.num_behaviors - 1
    overlap = [p for p in test_pairs if p[1] in ds.items_of(target, p[0])]
    if overlap:
        raise ValueError(
            f"{len(overlap)} test pairs are also training positives of the "
            f"target behavior (first: {overlap[0]})"
        )
    return ds


def save_dataset(ds: BehaviorDataset, path: str) -> None:
    """Write the on-disk format back out (round-trips with load_dataset)."""
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "size.txt"), "w") as fh:
        fh.write(f"{ds.num_users} {ds.num_items}\n")
    for name, pairs in zip(ds.behaviors, ds.positives):
        with open(os.path.join(path, f"{name}.txt"), "w") as fh:
            for u, v in pairs:
                fh.write(f"{u} {v}\n")
    with open(os.path.join(path, "test.txt"), "w") as fh:
        for u, v in ds.test_pairs:
            fh.write(f"{u} {v}\n")


def build_normalized_adjacency(ds: BehaviorDataset, k: int) -> SparseMatrix:
    """Left-normalized self-looped bipartite adjacency of behavior k.

    Nodes are stacked users first then items; the returned matrix is
    D^-1 (A + I) where A holds the user-item edges in its off-diagonal
    blocks and D_ii = sum_j (A + I)_ij. Every row sums to 1.
    """
    if not 0 <= k < ds.num_behaviors:
        raise IndexError(f"behavior index {k} out of range")
    n = ds.num_nodes
    pairs = ds.positives[k]
    if pairs:
        us = np.fromiter((u for u, _ in pairs), dtype=np.int64, count=len(pairs))
        vs = np.fromiter((v for _, v in pairs), dtype=np.int64, count=len(pairs))
        rows = np.concatenate([us, vs + ds.num_users])
        cols = np.concatenate([vs + ds.num_users, us])
        data = np.ones(2 * len(pairs))
        a = sp.coo_matrix((data, (rows, cols)), shape=(n, n)).tocsr()
    else:
        a = sp.csr_matrix((n, n))
    a_loop = (a + sp.identity(n, format="csr")).tocsr()
    degree = np.asarray(a_loop.sum(axis=1)).ravel()
    inv = sp.diags(1.0 / degree)
    return SparseMatrix(inv @ a_loop)


def sample_bpr_triples(ds: BehaviorDataset, k: int, rng_seed: int) -> TrainTriples:
    """One uniformly sampled negative per behavior-k positive.

    Users whose positives cover the whole item set contribute nothing
    (there is no negative to rank against).
    """
    rng = np.random.default_rng(rng_seed)
    users, pos, neg = [], [], []
    skipped = 0
    for u, s in ds.positives[k]:
        owned = ds.user_positives[k][u]
        if len(owned) >= ds.num_items:
            skipped += 1
            continue
        t = -1
        for _ in range(64):
            cand = int(rng.integers(ds.num_items))
            if cand not in owned:
                t = cand
                break
        if t < 0:  # user owns almost every item: enumerate the complement
            options = [v for v in range(ds.num_items) if v not in owned]
            t = int(options[rng.integers(len(options))])
        users.append(u)
        pos.append(s)
        neg.append(t)
    if skipped:
        log.warning(
            "behavior %d: skipped %d positives of users with no negative items",
            k,
            skipped,
        )
    return TrainTriples(
        k,
        np.asarray(users, dtype=np.intp),
        np.asarray(pos, dtype=np.intp),
        np.asarray(neg, dtype=np.intp),
    )


def build_unique_triples(
    ds: BehaviorDataset, k_prime: int, k: int, rng_seed: int
) -> UniqueLossTriples:
    """Triples for ranking "only k'" items with the unique representations.

    Positives are O+_{k'}(u) \\ O+_k(u). Negative candidates are
    O-_k(u) union (O+_{k'}(u) intersect O+_k(u)); the sampled positive
    itself is excluded (a triple with s == t carries no signal).
    """
    if k_prime == k:
        raise ValueError("source and guide behavior must differ")
    rng = np.random.default_rng(rng_seed)
    users, pos, neg = [], [], []
    for u, s in ds.positives[k_prime]:
        guide_owned = ds.items_of(k, u)
        if s in guide_owned:
            continue  # shared with the guide behavior: not an "only k'" item
        source_owned = ds.user_positives[k_prime][u]
        # candidates: anything outside O+_k, plus items in both behaviors;
        # s is never blocked (it is not a guide positive) so subtract it
        blocked = guide_owned - source_owned
        n_candidates = ds.num_items - len(blocked) - 1
        if n_candidates <= 0:
            continue
        t = -1
        for _ in range(64):
            cand = int(rng.integers(ds.num_items))
            if cand != s and (cand not in blocked):
                t = cand
                break
        if t < 0:  # near-exhausted candidate set: enumerate instead
            options = [v for v in range(ds.num_items) if v != s and v not in blocked]
            t = int(options[rng.integers(len(options))])
        users.append(u)
        pos.append(s)
        neg.append(t)
    return UniqueLossTriples(
        k_prime,
        k,
        np.asarray(users, dtype=np.intp),
        np.asarray(pos, dtype=np.intp),
        np.asarray(neg, dtype=np.intp),
    )
