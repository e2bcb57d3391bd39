"""Index building, exact ranking, and metric oracles."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cirkit.datagen import gen_synthetic
from cirkit.errors import ContractError, DataError
from cirkit.retrieval import (
    EvalRecord,
    GalleryIndex,
    build_index,
    evaluate_triplets,
    format_report,
    load_index,
    map_at_k,
    query_topk,
    rank_all,
    recall_at_k,
    recall_subset_at_k,
    save_index,
    standard_report,
)
from conftest import random_grid

RNG = np.random.default_rng(2718)


def unit_rows(n, d, rng):
    v = rng.normal(size=(n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def toy_index(n=8, d=6, seed=0):
    rng = np.random.default_rng(seed)
    return GalleryIndex(
        ids=[f"g{i:03d}" for i in range(n)], vectors=unit_rows(n, d, rng), fingerprint="t"
    )


def brute_force_topk(idx, v, k):
    scored = sorted(
        ((float(row @ v), gid) for gid, row in zip(idx.ids, idx.vectors)),
        key=lambda p: (-p[0], p[1]),
    )
    return [(gid, s) for s, gid in scored[:k]]


class TestIndex:
    def test_build_and_query_roundtrip(self, cfg, params):
        gallery = [random_grid(cfg, RNG, f"img{i}") for i in range(5)]
        idx = build_index(gallery, params, cfg)
        assert len(idx) == 5
        idx2 = build_index(gallery, params, cfg)
        np.testing.assert_array_equal(idx.vectors, idx2.vectors)

    def test_duplicate_ids_rejected(self, cfg, params):
        g = random_grid(cfg, RNG, "dup")
        with pytest.raises(ContractError):
            build_index([g, g], params, cfg)

    def test_empty_index_errors_on_query(self, cfg, params):
        idx = build_index([], params, cfg)
        assert len(idx) == 0
        with pytest.raises(DataError):
            query_topk(idx, np.ones(cfg.d_model), 1)

    def test_self_query_ranks_first(self, cfg, params):
        gallery = [random_grid(cfg, RNG, f"img{i}") for i in range(6)]
        idx = build_index(gallery, params, cfg)
        from cirkit.fusion import embed_image_blank

        r = embed_image_blank(gallery[3], params, cfg)
        top = query_topk(idx, r, 1)
        assert top[0][0] == "img3"
        assert top[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_k_beyond_size_returns_all(self):
        idx = toy_index(n=4)
        out = query_topk(idx, idx.vectors[0], 99)
        assert len(out) == 4

    def test_matches_brute_force_oracle(self):
        idx = toy_index(n=200, d=16, seed=3)
        rng = np.random.default_rng(5)
        for _ in range(20):
            v = rng.normal(size=16)
            ours = query_topk(idx, v, 17)
            ref = brute_force_topk(idx, v, 17)
            assert [g for g, _ in ours] == [g for g, _ in ref]

    def test_tied_scores_break_by_id(self):
        v = np.zeros((3, 4))
        v[:, 0] = 1.0  # identical vectors -> identical scores
        idx = GalleryIndex(ids=["zz", "aa", "mm"], vectors=v, fingerprint="t")
        out = query_topk(idx, np.array([1.0, 0, 0, 0]), 3)
        assert [g for g, _ in out] == ["aa", "mm", "zz"]

    def test_scores_non_increasing(self):
        idx = toy_index(n=50, d=8, seed=9)
        out = query_topk(idx, np.random.default_rng(0).normal(size=8), 50)
        scores = [s for _, s in out]
        assert all(a >= b for a, b in zip(scores, scores[1:]))

    def test_file_roundtrip_preserves_scores(self, tmp_path):
        idx = toy_index(n=30, d=12, seed=4)
        p = tmp_path / "gallery.idx"
        save_index(p, idx)
        back = load_index(p)
        assert back.ids == idx.ids and back.fingerprint == idx.fingerprint
        v = np.random.default_rng(1).normal(size=12)
        s1 = idx.vectors @ v
        s2 = back.vectors @ v
        assert np.abs(s1 - s2).max() < 1e-9

    def test_corrupt_index_rejected(self, tmp_path):
        p = tmp_path / "x.idx"
        p.write_bytes(b"garbage!")
        with pytest.raises(DataError):
            load_index(p)


def rec(ranking, gts, subset=None, qid="q"):
    return EvalRecord(query_id=qid, ranking=ranking, gt_ids=gts, subset_ids=subset)


class TestMetrics:
    def test_all_first_is_perfect_recall(self):
        records = [rec(["a", "b", "c"], ["a"]), rec(["x", "y"], ["x"])]
        for k in (1, 2, 3):
            assert recall_at_k(records, k) == 1.0

    def test_hand_enumerated_recall(self):
        gallery = [f"g{i}" for i in range(12)]
        records = [
            rec(list(gallery), [gallery[pos]], qid=str(i))
            for i, pos in enumerate([0, 3, 10])
        ]
        # ground truths sit at ranks 1, 4, 11; K=5 catches two of three
        assert recall_at_k(records, 5) == pytest.approx(2 / 3)

    def test_subset_only_gt_is_perfect(self):
        records = [rec(["a", "b", "c"], ["c"], subset=["c"])]
        assert recall_subset_at_k(records, 1) == 1.0

    def test_subset_rank_three_boundary(self):
        ranking = ["x1", "s1", "x2", "s2", "gt", "s3", "s4", "s5"]
        subset = ["s1", "s2", "gt", "s3", "s4", "s5"]
        records = [rec(ranking, ["gt"], subset=subset)]
        assert recall_subset_at_k(records, 3) == 1.0  # gt is 3rd among the subset
        assert recall_subset_at_k(records, 2) == 0.0

    def test_subset_without_gt_rejected(self):
        with pytest.raises(DataError):
            rec(["a", "b"], ["a"], subset=["b"])

    def test_map_single_gt_first(self):
        assert map_at_k([rec(["a", "b"], ["a"])], 5) == 1.0

    def test_map_worked_example(self):
        records = [rec(["a", "x", "b", "y", "z"], ["a", "b"])]
        assert map_at_k(records, 5) == pytest.approx(5 / 6, abs=1e-15)

    def test_map_zero_iff_no_hit_in_topk(self):
        records = [rec(["x", "y", "gt"], ["gt"])]
        assert map_at_k(records, 2) == 0.0
        assert map_at_k(records, 3) > 0.0

    @given(st.integers(0, 10**6))
    @settings(max_examples=30)
    def test_recall_monotone_in_k(self, seed):
        rng = np.random.default_rng(seed)
        gallery = [f"g{i}" for i in range(10)]
        records = []
        for q in range(4):
            order = [gallery[i] for i in rng.permutation(10)]
            gts = [order[int(rng.integers(10))]]
            records.append(rec(order, gts, qid=str(q)))
        vals = [recall_at_k(records, k) for k in range(1, 11)]
        assert vals == sorted(vals)
        assert vals[-1] == 1.0  # K = gallery size finds every gt

    @given(st.integers(0, 10**6))
    @settings(max_examples=30)
    def test_subset_recall_dominates_full_recall(self, seed):
        rng = np.random.default_rng(seed)
        gallery = [f"g{i}" for i in range(12)]
        records = []
        for q in range(4):
            order = [gallery[i] for i in rng.permutation(12)]
            gt = order[int(rng.integers(12))]
            others = [g for g in gallery if g != gt]
            sub_idx = rng.choice(11, size=5, replace=False)
            subset = [others[int(i)] for i in sub_idx] + [gt]
            records.append(rec(order, [gt], subset=subset, qid=str(q)))
        for k in (1, 2, 3, 5):
            assert recall_subset_at_k(records, k) >= recall_at_k(records, k)

    def test_empty_records_rejected(self):
        for fn in (recall_at_k, map_at_k):
            with pytest.raises(DataError):
                fn([], 5)


class TestEvaluationPipeline:
    def test_end_to_end_records_and_report(self, cfg, params):
        trips = gen_synthetic(6, seed=0, cfg=cfg)
        gallery = [t.target for t in trips]
        idx = build_index(gallery, params, cfg)
        records = evaluate_triplets(trips, idx, params, cfg)
        assert len(records) == 6
        rows = standard_report(records)
        metrics = {(r["metric"], r["k"]) for r in rows}
        assert ("recall", 1) in metrics and ("map", 50) in metrics
        assert ("recall_subset", 3) in metrics
        text = format_report(rows)
        assert "Recall_subset" in text and "mAP" in text
        for row in rows:
            assert 0.0 <= row["value"] <= 1.0

    def test_rank_all_is_full_permutation(self, cfg, params):
        trips = gen_synthetic(4, seed=1, cfg=cfg)
        idx = build_index([t.target for t in trips], params, cfg)
        from cirkit.fusion import embed_image_blank

        ranking = rank_all(idx, embed_image_blank(trips[0].query, params, cfg))
        assert sorted(ranking) == sorted(idx.ids)
