"""Dataset loading, adjacency construction, triple sampling."""

import numpy as np
import pytest

from pkef.data import (
    BehaviorDataset,
    build_normalized_adjacency,
    build_unique_triples,
    load_dataset,
    sample_bpr_triples,
    save_dataset,
)


def write_dataset(tmp_path, files: dict[str, str]):
    for name, content in files.items():
        (tmp_path / name).write_text(content)
    return str(tmp_path)


class TestLoadDataset:
    def test_dedupe_keeps_first(self, tmp_path):
        path = write_dataset(
            tmp_path,
            {"a.txt": "0 5\n0 5\n1 3\n", "test.txt": "0 1\n", "size.txt": "2 6\n"},
        )
        ds = load_dataset(path, ["a"])
        assert set(ds.positives[0]) == {(0, 5), (1, 3)}
        assert len(ds.positives[0]) == 2

    def test_empty_behavior_warns(self, tmp_path, caplog):
        path = write_dataset(
            tmp_path,
            {"a.txt": "", "b.txt": "0 0\n", "test.txt": "0 1\n", "size.txt": "1 2\n"},
        )
        with caplog.at_level("WARNING"):
            ds = load_dataset(path, ["a", "b"])
        assert ds.positives[0] == []
        assert any("no interactions" in m for m in caplog.messages)

    def test_missing_file(self, tmp_path):
        write_dataset(tmp_path, {"test.txt": "0 0\n"})
        with pytest.raises(FileNotFoundError):
            load_dataset(str(tmp_path), ["a"])

    def test_index_out_of_declared_range(self, tmp_path):
        path = write_dataset(
            tmp_path, {"a.txt": "0 9\n", "test.txt": "0 1\n", "size.txt": "1 3\n"}
        )
        with pytest.raises(ValueError, match="outside declared size"):
            load_dataset(path, ["a"])

    def test_size_inferred_without_header(self, tmp_path):
        path = write_dataset(tmp_path, {"a.txt": "2 7\n0 3\n", "test.txt": "1 4\n"})
        ds = load_dataset(path, ["a"])
        assert (ds.num_users, ds.num_items) == (3, 8)

    def test_test_pairs_disjoint_from_target_positives(self, tmp_path):
        path = write_dataset(
            tmp_path, {"a.txt": "0 1\n", "test.txt": "0 1\n", "size.txt": "1 2\n"}
        )
        with pytest.raises(ValueError, match="training positives"):
            load_dataset(path, ["a"])

    def test_round_trip(self, tmp_path):
        ds = BehaviorDataset(
            3,
            4,
            ["x", "y"],
            [[(0, 1), (2, 3), (1, 0)], [(0, 1), (2, 0)]],
            [(2, 3)],
        )
        out = tmp_path / "rt"
        save_dataset(ds, str(out))
        loaded = load_dataset(str(out), ["x", "y"])
        assert loaded.num_users == ds.num_users
        assert loaded.num_items == ds.num_items
        for k in range(2):
            assert set(loaded.positives[k]) == set(ds.positives[k])
        assert set(loaded.test_pairs) == set(ds.test_pairs)


class TestNormalizedAdjacency:
    def test_hand_example(self):
        # 1 user, 2 items, single interaction (u0, v0)
        ds = BehaviorDataset(1, 2, ["a"], [[(0, 0)]], [(0, 1)])
        adj = build_normalized_adjacency(ds, 0)
        expected = np.array([[0.5, 0.5, 0.0], [0.5, 0.5, 0.0], [0.0, 0.0, 1.0]])
        np.testing.assert_allclose(adj.toarray(), expected)

    def test_no_interactions_gives_identity(self):
        ds = BehaviorDataset(2, 2, ["a", "b"], [[], [(0, 0)]], [(0, 1)])
        adj = build_normalized_adjacency(ds, 0)
        np.testing.assert_array_equal(adj.toarray(), np.eye(4))

    def test_row_sums_are_one(self):
        rng = np.random.default_rng(0)
        pairs = list({(int(rng.integers(20)), int(rng.integers(15))) for _ in range(120)})
        ds = BehaviorDataset(20, 15, ["a"], [pairs[:-1]], [pairs[-1]])
        adj = build_normalized_adjacency(ds, 0)
        sums = np.asarray(adj.csr.sum(axis=1)).ravel()
        np.testing.assert_allclose(sums, 1.0, atol=1e-12)

    def test_block_structure_and_symmetry_of_support(self):
        pairs = [(0, 1), (2, 0), (1, 2)]
        ds = BehaviorDataset(3, 3, ["a"], [pairs], [(0, 0)])
        dense = build_normalized_adjacency(ds, 0).toarray()
        users, items = 3, 3
        uu = dense[:users, :users]
        vv = dense[users:, users:]
        # user-user and item-item blocks only carry the diagonal self loop
        assert np.count_nonzero(uu - np.diag(np.diag(uu))) == 0
        assert np.count_nonzero(vv - np.diag(np.diag(vv))) == 0
        uv = dense[:users, users:]
        vu = dense[users:, :users]
        assert ((uv != 0) == (vu != 0).T).all()
        for u, v in pairs:
            assert uv[u, v] != 0

    def test_bad_behavior_index(self):
        ds = BehaviorDataset(1, 1, ["a"], [[]], [(0, 0)])
        with pytest.raises(IndexError):
            build_normalized_adjacency(ds, 3)


class TestBprSampling:
    def make_ds(self):
        return BehaviorDataset(2, 3, ["a"], [[(0, 0), (1, 2)]], [(0, 1)])

    def test_negatives_from_complement(self):
        ds = self.make_ds()
        for seed in range(20):
            triples = sample_bpr_triples(ds, 0, seed)
            for u, s, t in zip(triples.users, triples.pos_items, triples.neg_items):
                assert s in ds.items_of(0, u)
                assert t not in ds.items_of(0, u)
                assert s != t

    def test_deterministic_for_seed(self):
        ds = self.make_ds()
        a = sample_bpr_triples(ds, 0, 42)
        b = sample_bpr_triples(ds, 0, 42)
        np.testing.assert_array_equal(a.neg_items, b.neg_items)

    def test_user_with_all_items_skipped(self, caplog):
        ds = BehaviorDataset(
            2, 2, ["a"], [[(0, 0), (0, 1), (1, 0)]], [(1, 1)]
        )
        with caplog.at_level("WARNING"):
            triples = sample_bpr_triples(ds, 0, 0)
        assert list(triples.users) == [1]
        assert any("skipped" in m for m in caplog.messages)

    def test_uniform_over_complement(self):
        # |V| = 3, user owns v0 only: negatives split between v1 and v2
        ds = BehaviorDataset(1, 3, ["a"], [[(0, 0)]], [(0, 1)])
        counts = {1: 0, 2: 0}
        for seed in range(400):
            t = sample_bpr_triples(ds, 0, seed)
            counts[int(t.neg_items[0])] += 1
        assert counts[1] + counts[2] == 400
        assert 120 < counts[1] < 280


class TestUniqueTriples:
    def test_set_arithmetic_example(self):
        # O+_{k'}(u) = {0,1,2}, O+_k(u) = {1}, |V| = 4
        ds = BehaviorDataset(
            1, 4, ["kp", "k"], [[(0, 0), (0, 1), (0, 2)], [(0, 1)]], [(0, 3)]
        )
        pos_seen = set()
        neg_seen = set()
        for seed in range(200):
            triples = build_unique_triples(ds, 0, 1, seed)
            pos_seen.update(triples.pos_items.tolist())
            neg_seen.update(triples.neg_items.tolist())
            for s, t in zip(triples.pos_items, triples.neg_items):
                assert s != t
        assert pos_seen == {0, 2}  # positives exclude the shared item 1
        # the shared positive (item 1) is a legal negative
        assert 1 in neg_seen

    def test_identical_behaviors_give_no_triples(self):
        ds = BehaviorDataset(1, 3, ["a", "b"], [[(0, 0)], [(0, 0)]], [(0, 1)])
        assert len(build_unique_triples(ds, 0, 1, 0)) == 0

    def test_empty_guide_behavior(self):
        ds = BehaviorDataset(1, 3, ["a", "b"], [[(0, 0), (0, 1)], []], [(0, 2)])
        triples = build_unique_triples(ds, 0, 1, 0)
        assert set(triples.pos_items.tolist()) == {0, 1}
        for s, t in zip(triples.pos_items, triples.neg_items):
            assert t != s

    def test_same_behavior_rejected(self):
        ds = BehaviorDataset(1, 2, ["a"], [[(0, 0)]], [(0, 1)])
        with pytest.raises(ValueError):
            build_unique_triples(ds, 0, 0, 0)

    def test_brute_force_membership(self):
        """Positives never intersect the guide positives; negatives lie in
        O-_k union (O+_{k'} intersect O+_k), recomputed from scratch."""
        rng = np.random.default_rng(7)
        for trial in range(10):
            num_users, num_items = 8, 12
            positives = []
            for _ in range(2):
                pairs = list(
                    {
                        (int(rng.integers(num_users)), int(rng.integers(num_items)))
                        for _ in range(40)
                    }
                )
                positives.append(sorted(pairs))
            ds = BehaviorDataset(num_users, num_items, ["a", "b"], positives, [])
            for kp, k in ((0, 1), (1, 0)):
                triples = build_unique_triples(ds, kp, k, trial)
                expect_pos = {
                    (u, v)
                    for (u, v) in ds.positives[kp]
                    if v not in ds.items_of(k, u)
                }
                got_pos = set(zip(triples.users.tolist(), triples.pos_items.tolist()))
                assert got_pos == expect_pos
                for u, s, t in zip(triples.users, triples.pos_items, triples.neg_items):
                    guide = ds.items_of(k, int(u))
                    source = ds.items_of(kp, int(u))
                    assert (t not in guide) or (t in source & guide)
