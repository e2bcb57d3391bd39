"""Fusion invariants: row-stochastic maps, unit-norm outputs, pooling laws."""

import numpy as np
import pytest

import cirkit.tensor as T
from cirkit.encoders import encode_image, encode_text
from cirkit.errors import ShapeError
from cirkit.fusion import (
    attn_pool,
    cross_attn,
    dump_np_attention,
    embed_image_blank,
    embed_query,
    init_params,
    model_fingerprint,
    np_mean_weights,
    read_dump_mean,
    region_mass,
)
from cirkit.gradcheck import check_grads
from cirkit.nlp import parse_noun_phrases, tokenize
from conftest import random_grid, tiny_config

RNG = np.random.default_rng(314)


def rows(shape, rng=RNG):
    return T.tensor(rng.normal(size=shape))


class TestCrossAttn:
    def test_single_image_token_gets_all_attention(self, cfg, params):
        img = rows((1, cfg.d_model))
        txt = rows((3, cfg.d_model))
        _, amap = cross_attn(img, txt, params, cfg)
        np.testing.assert_allclose(amap.weights.data, np.ones((3, 1)), atol=1e-15)

    def test_map_rows_sum_to_one(self, cfg, params):
        for _ in range(20):
            img = rows((cfg.n_img_tokens, cfg.d_model))
            txt = rows((4, cfg.d_model))
            _, amap = cross_attn(img, txt, params, cfg)
            amap.validate()

    def test_duplicating_sole_token_halves_its_weight(self, cfg, params):
        img1 = rows((1, cfg.d_model))
        txt = rows((2, cfg.d_model))
        _, m1 = cross_attn(img1, txt, params, cfg)
        img2 = T.tensor(np.vstack([img1.data, img1.data]))
        _, m2 = cross_attn(img2, txt, params, cfg)
        expect = np.repeat(0.5 * m1.weights.data, 2, axis=1)
        np.testing.assert_allclose(m2.weights.data, expect, atol=1e-12)

    def test_duplicated_token_copies_get_equal_weight(self, cfg, params):
        img = rows((cfg.n_img_tokens, cfg.d_model))
        txt = rows((3, cfg.d_model))
        dup = T.tensor(np.vstack([img.data, img.data[2:3]]))
        _, amap = cross_attn(dup, txt, params, cfg)
        w = amap.weights.data
        np.testing.assert_allclose(w[:, 2], w[:, -1], atol=1e-12)

    def test_width_mismatch_rejected(self, cfg, params):
        with pytest.raises(ShapeError):
            cross_attn(rows((4, cfg.d_model)), rows((3, cfg.d_model + 1)), params, cfg)

    def test_residual_text_in_output(self, cfg, params):
        img = rows((cfg.n_img_tokens, cfg.d_model))
        txt = rows((3, cfg.d_model))
        fused, _ = cross_attn(img, txt, params, cfg)
        assert np.abs(fused.data - txt.data).max() < 100  # smoke: same scale
        assert fused.data.shape == txt.data.shape


class TestAttnPool:
    def test_single_row_is_normalized_projection(self, cfg, params):
        row = rows((1, cfg.d_model))
        out = attn_pool(row, params, cfg)
        proj = None
        for h in range(cfg.n_heads):
            v = row.data @ params[f"fus.pool.h{h}.wv"].data @ params[f"fus.pool.h{h}.wo"].data
            proj = v if proj is None else proj + v
        expect = proj.reshape(-1) / np.linalg.norm(proj)
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_permutation_invariance(self, cfg, params):
        fused = rows((6, cfg.d_model))
        base = attn_pool(fused, params, cfg).data
        perm = np.random.default_rng(5).permutation(6)
        out = attn_pool(T.tensor(fused.data[perm]), params, cfg).data
        np.testing.assert_allclose(out, base, atol=1e-9)

    def test_unit_norm(self, cfg, params):
        for _ in range(20):
            out = attn_pool(rows((5, cfg.d_model)), params, cfg)
            assert abs(np.linalg.norm(out.data) - 1.0) <= 1e-9


class TestEmbedQuery:
    def test_blank_text_uses_two_rows(self, cfg, params):
        img = random_grid(cfg, RNG)
        r, amap = embed_query(img, tokenize("", cfg.vocab_buckets), params, cfg)
        assert amap.weights.data.shape == (2, cfg.n_img_tokens)
        np.testing.assert_array_equal(r.data, embed_image_blank(img, params, cfg).data)

    def test_bitwise_deterministic(self, cfg, params):
        img = random_grid(cfg, RNG)
        text = tokenize("remove the red ball", cfg.vocab_buckets)
        r1, m1 = embed_query(img, text, params, cfg)
        r2, m2 = embed_query(img, text, params, cfg)
        np.testing.assert_array_equal(r1.data, r2.data)
        np.testing.assert_array_equal(m1.weights.data, m2.weights.data)

    def test_gradient_of_similarity_matches_finite_differences(self):
        cfg = tiny_config(d_model=8, n_heads=2, n_blocks=1, d_ff=12, vocab_buckets=16)
        params = init_params(cfg, seed=2)
        img = random_grid(cfg, RNG)
        text = tokenize("a red ball", cfg.vocab_buckets)
        fixed = T.tensor(np.random.default_rng(1).normal(size=cfg.d_model))

        def f():
            r, _ = embed_query(img, text, params, cfg)
            return T.cosine_sim(r, fixed)

        report = check_grads(f, params, tolerance=1e-4, floor=1e-4)
        assert report.passed, f"worst {report.worst}"

    def test_fingerprint_tracks_parameters(self, cfg, params):
        f1 = model_fingerprint(params, cfg)
        assert f1 == model_fingerprint(params, cfg)
        other = init_params(cfg, seed=8)
        assert f1 != model_fingerprint(other, cfg)


class TestAttentionDumps:
    def test_one_file_pair_per_phrase(self, cfg, params, tmp_path):
        raw = "remove the red ball on the left"
        text, spans = parse_noun_phrases(raw, vocab_buckets=cfg.vocab_buckets)
        img = random_grid(cfg, RNG)
        _, amap = embed_query(img, text, params, cfg)
        written = dump_np_attention(tmp_path, raw, spans, amap, cfg)
        assert len(written) == len(spans) == 3
        for pgm, sidecar in written:
            assert pgm.exists() and sidecar.exists()
            assert pgm.read_text().startswith("P2")

    def test_dumped_rows_sum_to_one(self, cfg, params, tmp_path):
        raw = "add a blue box"
        text, spans = parse_noun_phrases(raw, vocab_buckets=cfg.vocab_buckets)
        img = random_grid(cfg, RNG)
        _, amap = embed_query(img, text, params, cfg)
        written = dump_np_attention(tmp_path, raw, spans, amap, cfg)
        for _, sidecar in written:
            for line in sidecar.read_text().splitlines():
                if line.startswith(("row ", "mean ")):
                    vals = [float(v) for v in line.split()[1 if line.startswith("mean") else 2 :]]
                    assert abs(sum(vals) - 1.0) < 1e-9

    def test_mean_roundtrip_and_region_mass(self, cfg, params, tmp_path):
        raw = "the red ball"
        text, spans = parse_noun_phrases(raw, vocab_buckets=cfg.vocab_buckets)
        img = random_grid(cfg, RNG)
        _, amap = embed_query(img, text, params, cfg)
        dump_np_attention(tmp_path, raw, spans, amap, cfg)
        mean = np_mean_weights(amap, spans[0])
        sidecar = next(tmp_path.glob("np00_*.txt"))
        np.testing.assert_array_equal(read_dump_mean(sidecar), mean)
        cells = [0, 2]
        assert region_mass(mean, cells) == pytest.approx(mean[cells].sum())
        assert region_mass(mean, list(range(cfg.n_img_tokens))) == pytest.approx(1.0)
