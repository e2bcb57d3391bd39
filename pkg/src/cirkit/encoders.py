"""Toy image and text encoders producing token-sequence embeddings.

Both encoders share one transformer block design (pre-norm self-attention
plus a feed-forward layer) and emit rows of the same width so the fusion
stage can mix them. Images are P-by-P grids of 8-bin color histograms, so a
synthetic "image" is just a structured array; a small PPM/PNG ingester maps
real files onto the same representation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .errors import ConfigError, DataError, ShapeError
from .nlp import TokenizedText

__all__ = [
    "ModelConfig",
    "ImageGrid",
    "PALETTE",
    "COLOR_NAMES",
    "init_encoder_params",
    "encode_image",
    "encode_text",
    "multi_head_attention",
    "ingest_image",
]

# Canonical 8-color palette; histogram bin i counts pixels nearest PALETTE[i].
COLOR_NAMES = ("black", "white", "red", "green", "blue", "yellow", "orange", "purple")
PALETTE = np.array(
    [
        (0, 0, 0),
        (255, 255, 255),
        (220, 30, 30),
        (30, 180, 30),
        (30, 60, 220),
        (235, 220, 40),
        (240, 140, 20),
        (150, 40, 200),
    ],
    dtype=np.float64,
)


@dataclass(frozen=True)
class ModelConfig:
    """Desk-scale architecture knobs shared by both encoders and fusion."""

    d_model: int = 64
    n_heads: int = 4
    n_blocks: int = 2
    grid: int = 4  # image is grid x grid patches
    d_in: int = 8  # histogram bins per patch
    d_ff: int = 128
    vocab_buckets: int = 512
    max_text_tokens: int = 32
    activation: str = "relu"

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        if self.grid < 1 or self.d_in < 1 or self.d_model < 1:
            raise ConfigError("model extents must be positive")

    @property
    def n_img_tokens(self) -> int:
        return self.grid * self.grid

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass
class ImageGrid:
    """P*P patch feature rows plus a stable identifier."""

    id: str
    patches: np.ndarray  # (P*P, d_in) float64

    def __post_init__(self):
        self.patches = np.asarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 2:
            raise ShapeError(f"patches must be 2-D, got shape {self.patches.shape}")
        if not np.isfinite(self.patches).all():
            raise DataError(f"image {self.id!r} has non-finite patch features")


def _init_block(params, rng, prefix, cfg: ModelConfig) -> None:
    d, dh = cfg.d_model, cfg.head_dim
    params[f"{prefix}.ln1.g"] = T.parameter(np.ones(d))
    params[f"{prefix}.ln1.b"] = T.parameter(np.zeros(d))
    for h in range(cfg.n_heads):
        for w in ("wq", "wk", "wv"):
            params[f"{prefix}.attn.h{h}.{w}"] = T.parameter(rng.normal(0, d**-0.5, (d, dh)))
        params[f"{prefix}.attn.h{h}.wo"] = T.parameter(rng.normal(0, dh**-0.5, (dh, d)))
    params[f"{prefix}.ln2.g"] = T.parameter(np.ones(d))
    params[f"{prefix}.ln2.b"] = T.parameter(np.zeros(d))
    params[f"{prefix}.mlp.w1"] = T.parameter(rng.normal(0, d**-0.5, (d, cfg.d_ff)))
    params[f"{prefix}.mlp.b1"] = T.parameter(np.zeros(cfg.d_ff))
    params[f"{prefix}.mlp.w2"] = T.parameter(rng.normal(0, cfg.d_ff**-0.5, (cfg.d_ff, d)))
    params[f"{prefix}.mlp.b2"] = T.parameter(np.zeros(d))


def init_encoder_params(cfg: ModelConfig, rng: np.random.Generator, prefix: str) -> dict[str, T.Tensor]:
    """Parameters for one encoder under the given name prefix (txt or img)."""
    d = cfg.d_model
    params: dict[str, T.Tensor] = {}
    if prefix == "txt":
        params["txt.emb"] = T.parameter(rng.normal(0, 0.02, (cfg.vocab_buckets + 2, d)))
        params["txt.pos"] = T.parameter(rng.normal(0, 0.02, (cfg.max_text_tokens + 2, d)))
    elif prefix == "img":
        params["img.patch.w"] = T.parameter(rng.normal(0, cfg.d_in**-0.5, (cfg.d_in, d)))
        params["img.patch.b"] = T.parameter(np.zeros(d))
        params["img.pos"] = T.parameter(rng.normal(0, 0.02, (cfg.n_img_tokens, d)))
    else:
        raise ConfigError(f"unknown encoder prefix {prefix!r}")
    for i in range(cfg.n_blocks):
        _init_block(params, rng, f"{prefix}.blk{i}", cfg)
    params[f"{prefix}.proj"] = T.parameter(rng.normal(0, d**-0.5, (d, d)))
    return params


def multi_head_attention(
    params: dict[str, T.Tensor],
    prefix: str,
    queries: T.Tensor,
    keys_values: T.Tensor,
    n_heads: int,
    head_dim: int,
    want_map: bool = False,
) -> tuple[T.Tensor, T.Tensor | None]:
    """Scaled dot-product attention, one projection set per head.

    Head outputs are projected back to model width and summed, which equals
    the usual concat-then-project form. Returns (output rows, head-averaged
    weights or None).
    """
    inv_sqrt = 1.0 / math.sqrt(head_dim)
    out = None
    mean_map = None
    for h in range(n_heads):
        q = T.matmul(queries, params[f"{prefix}.h{h}.wq"])
        k = T.matmul(keys_values, params[f"{prefix}.h{h}.wk"])
        v = T.matmul(keys_values, params[f"{prefix}.h{h}.wv"])
        weights = T.softmax_rows(T.scale(T.matmul(q, T.transpose(k)), inv_sqrt))
        head_out = T.matmul(T.matmul(weights, v), params[f"{prefix}.h{h}.wo"])
        out = head_out if out is None else T.add(out, head_out)
        if want_map:
            mean_map = weights if mean_map is None else T.add(mean_map, weights)
    if want_map:
        mean_map = T.scale(mean_map, 1.0 / n_heads)
    return out, mean_map


def _ln_affine(x: T.Tensor, params, prefix: str) -> T.Tensor:
    return T.add_bias(T.mul_rowvec(T.layer_norm(x), params[f"{prefix}.g"]), params[f"{prefix}.b"])


def _block(x: T.Tensor, params, prefix: str, cfg: ModelConfig) -> T.Tensor:
    h = _ln_affine(x, params, f"{prefix}.ln1")
    attn_out, _ = multi_head_attention(
        params, f"{prefix}.attn", h, h, cfg.n_heads, cfg.head_dim
    )
    x = T.add(x, attn_out)
    h = _ln_affine(x, params, f"{prefix}.ln2")
    return T.add(x, T.mlp(
        h,
        params[f"{prefix}.mlp.w1"],
        params[f"{prefix}.mlp.b1"],
        params[f"{prefix}.mlp.w2"],
        params[f"{prefix}.mlp.b2"],
        activation=cfg.activation,
    ))


def encode_image(img: ImageGrid, params: dict[str, T.Tensor], cfg: ModelConfig) -> T.Tensor:
    """Patch projection + positions + self-attention blocks; (P*P, d) rows."""
    want = (cfg.n_img_tokens, cfg.d_in)
    if img.patches.shape != want:
        raise ShapeError(f"image {img.id!r} has patches {img.patches.shape}, expected {want}")
    x = T.add_bias(T.matmul(T.tensor(img.patches), params["img.patch.w"]), params["img.patch.b"])
    x = T.add(x, params["img.pos"])
    for i in range(cfg.n_blocks):
        x = _block(x, params, f"img.blk{i}", cfg)
    return T.matmul(x, params["img.proj"])


def encode_text(text: TokenizedText, params: dict[str, T.Tensor], cfg: ModelConfig) -> T.Tensor:
    """BOS + token + EOS rows through the text blocks; (n_tokens + 2, d)."""
    if len(text.tokens) > cfg.max_text_tokens:
        raise DataError(
            f"text has {len(text.tokens)} tokens, configured maximum is {cfg.max_text_tokens}"
        )
    ids = text.vocab_ids()
    if ids and max(ids) >= cfg.vocab_buckets + 2:
        raise DataError("token id outside the configured vocabulary; retokenize with matching buckets")
    x = T.embedding_lookup(params["txt.emb"], ids)
    x = T.add(x, T.take_rows(params["txt.pos"], range(len(ids))))
    for i in range(cfg.n_blocks):
        x = _block(x, params, f"txt.blk{i}", cfg)
    return T.matmul(x, params["txt.proj"])


# ---------------------------------------------------------------------------
# file ingestion
# ---------------------------------------------------------------------------


def _read_ppm(path: Path) -> np.ndarray:
    """Parse binary (P6) or ASCII (P3) PPM into an (H, W, 3) uint8 array."""
    data = path.read_bytes()
    fields: list[bytes] = []
    i = 0
    while len(fields) < 4:
        while i < len(data) and data[i : i + 1].isspace():
            i += 1
        if i < len(data) and data[i : i + 1] == b"#":
            while i < len(data) and data[i : i + 1] != b"\n":
                i += 1
            continue
        j = i
        while j < len(data) and not data[j : j + 1].isspace():
            j += 1
        fields.append(data[i:j])
        i = j
    magic, w, h, maxval = fields[0], int(fields[1]), int(fields[2]), int(fields[3])
    if maxval != 255:
        raise DataError(f"unsupported PPM maxval {maxval} in {path}")
    if magic == b"P6":
        raw = data[i + 1 : i + 1 + w * h * 3]
        if len(raw) != w * h * 3:
            raise DataError(f"truncated PPM payload in {path}")
        return np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
    if magic == b"P3":
        vals = data[i:].split()
        if len(vals) < w * h * 3:
            raise DataError(f"truncated PPM payload in {path}")
        return np.array([int(v) for v in vals[: w * h * 3]], dtype=np.uint8).reshape(h, w, 3)
    raise DataError(f"unsupported PPM magic {magic!r} in {path}")


def _pixels_to_grid(pixels: np.ndarray, grid: int, image_id: str) -> ImageGrid:
    h, w, _ = pixels.shape
    if h < grid or w < grid:
        raise DataError(f"image {image_id!r} is {w}x{h}, smaller than the {grid}x{grid} grid")
    flat = pixels.reshape(-1, 3).astype(np.float64)
    # nearest palette color per pixel
    d2 = ((flat[:, None, :] - PALETTE[None, :, :]) ** 2).sum(axis=2)
    nearest = d2.argmin(axis=1).reshape(h, w)
    feats = np.zeros((grid * grid, len(PALETTE)))
    ys = np.linspace(0, h, grid + 1).astype(int)
    xs = np.linspace(0, w, grid + 1).astype(int)
    for gy in range(grid):
        for gx in range(grid):
            block = nearest[ys[gy] : ys[gy + 1], xs[gx] : xs[gx + 1]]
            counts = np.bincount(block.reshape(-1), minlength=len(PALETTE))
            feats[gy * grid + gx] = counts / counts.sum()
    return ImageGrid(id=image_id, patches=feats)


def ingest_image(path: str | Path, grid: int, image_id: str | None = None) -> ImageGrid:
    """Turn a PPM (native) or PNG/JPEG (via Pillow) file into an ImageGrid."""
    path = Path(path)
    image_id = image_id or path.stem
    if path.suffix.lower() == ".ppm":
        pixels = _read_ppm(path)
    else:
        try:
            from PIL import Image
        except ImportError as e:  # pragma: no cover - depends on extras
            raise DataError(
                f"reading {path.suffix} files needs Pillow (pip install cirkit[images])"
            ) from e
        with Image.open(path) as im:
            pixels = np.asarray(im.convert("RGB"))
    return _pixels_to_grid(pixels, grid, image_id)
