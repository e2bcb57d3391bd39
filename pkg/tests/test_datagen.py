"""Synthetic triplet generation: self-verification, determinism, file IO."""

import numpy as np
import pytest

from cirkit.datagen import (
    EditOp,
    SceneObject,
    SceneSpec,
    apply_edit,
    caption_for,
    edited_cells,
    gen_synthetic,
    gen_synthetic_detailed,
    load_dataset,
    load_grids,
    render_scene,
    save_dataset,
    save_grids,
)
from cirkit.encoders import ImageGrid, ModelConfig
from cirkit.errors import ConfigError, ContractError, DataError
from cirkit.nlp import parse_noun_phrases

CFG = ModelConfig()


class TestSceneRendering:
    def test_histogram_rows_sum_to_one(self):
        scene = SceneSpec(
            objects=(
                SceneObject("ball", "red", 0, "large"),
                SceneObject("box", "blue", 5, "small"),
            )
        )
        grid = render_scene(scene, CFG)
        np.testing.assert_allclose(grid.sum(axis=1), 1.0, atol=1e-12)
        assert grid.shape == (16, 8)

    def test_add_renders_query_plus_glyph(self):
        scene = SceneSpec(objects=(SceneObject("ball", "green", 3, "large"),))
        op = EditOp(kind="add", obj=SceneObject("ball", "red", 7, "large"))
        target = apply_edit(scene, op)
        q, t = render_scene(scene, CFG), render_scene(target, CFG)
        assert (q[3] == t[3]).all()
        assert (q[7] != t[7]).any()
        assert caption_for(op, CFG.grid) == "add a large red ball in the top right"

    def test_same_glyph_different_color_distinct_features(self):
        a = render_scene(SceneSpec(objects=(SceneObject("ball", "red", 0, "large"),)), CFG)
        b = render_scene(SceneSpec(objects=(SceneObject("ball", "blue", 0, "large"),)), CFG)
        assert (a[0] != b[0]).any()

    def test_same_color_different_glyph_distinct_features(self):
        a = render_scene(SceneSpec(objects=(SceneObject("ball", "red", 0, "large"),)), CFG)
        b = render_scene(SceneSpec(objects=(SceneObject("box", "red", 0, "large"),)), CFG)
        assert (a[0] != b[0]).any()

    def test_duplicate_cells_rejected(self):
        with pytest.raises(ContractError):
            SceneSpec(
                objects=(
                    SceneObject("ball", "red", 0, "large"),
                    SceneObject("box", "blue", 0, "small"),
                )
            )


class TestGeneration:
    def test_deterministic_given_seed(self):
        a = gen_synthetic(8, ops_per_pair=2, seed=42)
        b = gen_synthetic(8, ops_per_pair=2, seed=42)
        for x, y in zip(a, b):
            assert x.text == y.text and x.subset_ids == y.subset_ids
            np.testing.assert_array_equal(x.query.patches, y.query.patches)
            np.testing.assert_array_equal(x.target.patches, y.target.patches)

    def test_self_verifying_re_render(self):
        for d in gen_synthetic_detailed(12, ops_per_pair=2, seed=7):
            scene = d.scene
            for op in d.ops:
                scene = apply_edit(scene, op)
            np.testing.assert_array_equal(render_scene(scene, CFG), d.triplet.target.patches)

    def test_three_ops_give_three_clauses_and_three_phrases(self):
        for t in gen_synthetic(6, ops_per_pair=3, seed=5):
            assert t.text.count(" and ") >= 2
            _, spans = parse_noun_phrases(t.text)
            assert len(spans) >= 3
            assert len(t.np_spans) >= 3

    def test_every_caption_has_a_noun_phrase(self):
        for t in gen_synthetic(20, ops_per_pair=1, seed=3):
            assert len(t.np_spans) >= 1

    def test_subsets_contain_target_plus_distractors(self):
        trips = gen_synthetic(10, seed=1)
        target_ids = {t.target_id for t in trips}
        for t in trips:
            assert t.target_id in t.subset_ids
            assert len(t.subset_ids) == 6
            assert set(t.subset_ids) <= target_ids

    def test_targets_unique_and_differ_from_query(self):
        trips = gen_synthetic(24, seed=9)
        blobs = {t.target.patches.tobytes() for t in trips}
        assert len(blobs) == len(trips)
        for t in trips:
            assert t.query.patches.tobytes() != t.target.patches.tobytes()
            assert edited_cells(t.query, t.target)

    def test_bad_arguments_rejected(self):
        with pytest.raises(ConfigError):
            gen_synthetic(0)
        with pytest.raises(ConfigError):
            gen_synthetic(2, ops_per_pair=9)


class TestDatasetIO:
    def test_roundtrip_preserves_everything(self, tmp_path):
        trips = gen_synthetic(6, ops_per_pair=2, seed=11)
        path = tmp_path / "train.jsonl"
        save_dataset(path, trips)
        back = load_dataset(path)
        assert len(back) == len(trips)
        for x, y in zip(trips, back):
            assert (x.query_id, x.target_id, x.text) == (y.query_id, y.target_id, y.text)
            assert x.subset_ids == y.subset_ids and x.gt_ids == y.gt_ids
            assert x.np_spans == y.np_spans
            np.testing.assert_array_equal(x.query.patches, y.query.patches)
            np.testing.assert_array_equal(x.target.patches, y.target.patches)

    def test_identical_bytes_for_identical_seed(self, tmp_path):
        p1, p2 = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        save_dataset(p1, gen_synthetic(5, seed=2))
        save_dataset(p2, gen_synthetic(5, seed=2))
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.with_suffix(".grids").read_bytes() == p2.with_suffix(".grids").read_bytes()

    def test_grid_sidecar_errors(self, tmp_path):
        g = ImageGrid(id="x", patches=np.zeros((4, 8)))
        with pytest.raises(ContractError):
            save_grids(tmp_path / "g.grids", [g, g])
        bad = tmp_path / "bad.grids"
        bad.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
        with pytest.raises(DataError):
            load_grids(bad)

    def test_missing_dataset_is_clean_error(self, tmp_path):
        with pytest.raises(DataError):
            load_dataset(tmp_path / "nope.jsonl")

    def test_generation_speed(self):
        import time

        t0 = time.monotonic()
        gen_synthetic(1000, ops_per_pair=1, seed=0)
        assert time.monotonic() - t0 < 10.0
