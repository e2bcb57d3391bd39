import numpy as np
import pytest

from cirkit.encoders import ImageGrid, ModelConfig
from cirkit.fusion import init_params


def tiny_config(**overrides) -> ModelConfig:
    base = dict(
        d_model=16,
        n_heads=2,
        n_blocks=1,
        grid=2,
        d_in=8,
        d_ff=32,
        vocab_buckets=64,
        max_text_tokens=16,
    )
    base.update(overrides)
    return ModelConfig(**base)


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture
def params(cfg):
    return init_params(cfg, seed=7)


def random_grid(cfg: ModelConfig, rng: np.random.Generator, image_id: str = "img") -> ImageGrid:
    """A random but valid histogram grid (rows sum to 1)."""
    raw = rng.random((cfg.n_img_tokens, cfg.d_in)) + 0.05
    return ImageGrid(id=image_id, patches=raw / raw.sum(axis=1, keepdims=True))
