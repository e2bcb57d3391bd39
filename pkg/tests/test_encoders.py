"""Encoder row-count laws, determinism, and gradient checks."""

import numpy as np
import pytest

import cirkit.tensor as T
from cirkit.encoders import ModelConfig, encode_image, encode_text, ingest_image
from cirkit.errors import ConfigError, DataError, ShapeError
from cirkit.fusion import init_params
from cirkit.gradcheck import check_grads
from cirkit.nlp import tokenize
from conftest import random_grid, tiny_config

RNG = np.random.default_rng(99)


def test_output_shapes_follow_row_laws(cfg, params):
    img = random_grid(cfg, RNG)
    out = encode_image(img, params, cfg)
    assert out.data.shape == (cfg.n_img_tokens, cfg.d_model)
    for raw, n in [("", 2), ("add a red ball", 6), ("the hand", 4)]:
        rows = encode_text(tokenize(raw, cfg.vocab_buckets), params, cfg)
        assert rows.data.shape == (n, cfg.d_model)


def test_default_config_shapes():
    cfg = ModelConfig()
    params = init_params(cfg, seed=0)
    img = random_grid(cfg, RNG)
    assert encode_image(img, params, cfg).data.shape == (16, 64)
    text = tokenize("add a red ball", cfg.vocab_buckets)
    assert encode_text(text, params, cfg).data.shape == (6, 64)


def test_identical_inputs_identical_outputs(cfg, params):
    img = random_grid(cfg, RNG)
    a = encode_image(img, params, cfg).data
    b = encode_image(img, params, cfg).data
    np.testing.assert_array_equal(a, b)
    t = tokenize("the blue box", cfg.vocab_buckets)
    np.testing.assert_array_equal(
        encode_text(t, params, cfg).data, encode_text(t, params, cfg).data
    )


def test_wrong_grid_size_rejected(cfg, params):
    bad = random_grid(tiny_config(grid=3), RNG)
    with pytest.raises(ShapeError):
        encode_image(bad, params, cfg)


def test_text_over_max_tokens_rejected(cfg, params):
    raw = " ".join(["ball"] * (cfg.max_text_tokens + 1))
    with pytest.raises(DataError):
        encode_text(tokenize(raw, cfg.vocab_buckets), params, cfg)


def test_patch_swap_changes_only_those_rows_without_blocks():
    cfg = tiny_config(n_blocks=0)
    params = init_params(cfg, seed=3)
    img = random_grid(cfg, RNG, "a")
    swapped = img.patches.copy()
    swapped[[0, 3]] = swapped[[3, 0]]
    from cirkit.encoders import ImageGrid

    out1 = encode_image(img, params, cfg).data
    out2 = encode_image(ImageGrid(id="b", patches=swapped), params, cfg).data
    changed = np.where(np.abs(out1 - out2).max(axis=1) > 1e-12)[0]
    assert set(changed) == {0, 3}


def test_isolated_phrase_differs_from_in_context_rows(cfg, params):
    raw = "add another lorikeet on the branch"
    full = encode_text(tokenize(raw, cfg.vocab_buckets), params, cfg).data
    iso = encode_text(tokenize("the branch", cfg.vocab_buckets), params, cfg).data
    # "the branch" occupies token rows 4,5 -> encoder rows 5,6 of the full text
    in_context = full[[5, 6]]
    assert np.abs(in_context - iso[1:3]).max() > 1e-9


def test_mismatched_head_split_rejected():
    with pytest.raises(ConfigError):
        tiny_config(d_model=15, n_heads=2)


def test_encoder_gradients_match_finite_differences():
    cfg = tiny_config(d_model=8, n_heads=2, n_blocks=1, d_ff=12, vocab_buckets=16)
    params = init_params(cfg, seed=11)
    img = random_grid(cfg, RNG)
    text = tokenize("a red ball", cfg.vocab_buckets)
    probe = T.tensor(np.random.default_rng(0).normal(size=(cfg.n_img_tokens + 5, cfg.d_model)))

    def f():
        rows = T.concat_rows([encode_image(img, params, cfg), encode_text(text, params, cfg)])
        return T.sum_all(T.mul(rows, probe))

    subset = {k: v for k, v in params.items() if k.startswith(("img.", "txt."))}
    report = check_grads(f, subset, tolerance=1e-4, floor=1e-4)
    assert report.passed, f"worst {report.worst}"


def test_ppm_ingestion_roundtrip(tmp_path):
    cfg = tiny_config(grid=2)
    # 4x4 image: top-left red block, others black
    pix = np.zeros((4, 4, 3), dtype=np.uint8)
    pix[:2, :2] = (220, 30, 30)
    p6 = tmp_path / "scene.ppm"
    p6.write_bytes(b"P6\n4 4\n255\n" + pix.tobytes())
    grid = ingest_image(p6, cfg.grid)
    assert grid.patches.shape == (4, 8)
    assert grid.patches[0, 2] == 1.0  # all-red block -> all mass in the red bin
    assert grid.patches[3, 0] == 1.0  # all-black block
    ascii_body = " ".join(str(v) for v in pix.reshape(-1))
    p3 = tmp_path / "scene3.ppm"
    p3.write_text(f"P3\n4 4\n255\n{ascii_body}\n")
    np.testing.assert_allclose(ingest_image(p3, cfg.grid).patches, grid.patches)


def test_truncated_ppm_rejected(tmp_path):
    bad = tmp_path / "bad.ppm"
    bad.write_bytes(b"P6\n4 4\n255\n\x00\x01")
    with pytest.raises(DataError):
        ingest_image(bad, 2)
