"""Cross-attention fusion of text over image tokens, and attention pooling.

Text rows are the queries, image patch rows the keys and values; the
head-averaged row-stochastic weights are exposed both to the concept
consistency loss and to the attention dump tooling. Pooling attends one
learned seed vector over the fused rows and L2-normalizes, so downstream
cosine similarity reduces to a dot product and the index stores unit
vectors.
"""

from __future__ import annotations

import hashlib
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .encoders import (
    ImageGrid,
    ModelConfig,
    encode_image,
    encode_text,
    init_encoder_params,
    multi_head_attention,
)
from .errors import ShapeError
from .nlp import NPSpan, TokenizedText, tokenize

__all__ = [
    "AttnMap",
    "init_params",
    "cross_attn",
    "attn_pool",
    "embed_query",
    "embed_image_blank",
    "model_fingerprint",
    "np_mean_weights",
    "region_mass",
    "write_np_dump",
    "dump_np_attention",
    "read_dump_mean",
]


@dataclass
class AttnMap:
    """Head-averaged attention weights, text rows by image-patch columns."""

    weights: T.Tensor  # (n_txt, n_img), rows sum to 1
    head_count: int
    layer: str = "fusion"

    def validate(self, atol: float = 1e-6) -> None:
        w = self.weights.data
        if (w < 0).any():
            raise ShapeError("attention map has negative entries")
        if np.abs(w.sum(axis=1) - 1.0).max() > atol:
            raise ShapeError("attention map rows do not sum to 1")


def init_params(cfg: ModelConfig, seed: int) -> dict[str, T.Tensor]:
    """All trainable tensors: both encoders, fusion heads, pooling seed."""
    rng = np.random.default_rng(seed)
    params = {}
    params.update(init_encoder_params(cfg, rng, "img"))
    params.update(init_encoder_params(cfg, rng, "txt"))
    d, dh = cfg.d_model, cfg.head_dim
    for h in range(cfg.n_heads):
        for w in ("wq", "wk", "wv"):
            params[f"fus.attn.h{h}.{w}"] = T.parameter(rng.normal(0, d**-0.5, (d, dh)))
        params[f"fus.attn.h{h}.wo"] = T.parameter(rng.normal(0, dh**-0.5, (dh, d)))
    params["fus.pool.seed"] = T.parameter(rng.normal(0, d**-0.5, (1, d)))
    for h in range(cfg.n_heads):
        for w in ("wq", "wk", "wv"):
            params[f"fus.pool.h{h}.{w}"] = T.parameter(rng.normal(0, d**-0.5, (d, dh)))
        params[f"fus.pool.h{h}.wo"] = T.parameter(rng.normal(0, dh**-0.5, (dh, d)))
    return params


def cross_attn(
    img_tokens: T.Tensor,
    txt_tokens: T.Tensor,
    params: dict[str, T.Tensor],
    cfg: ModelConfig,
) -> tuple[T.Tensor, AttnMap]:
    """Text queries over image keys/values; residual text add on the output."""
    if img_tokens.data.shape[1] != txt_tokens.data.shape[1]:
        raise ShapeError(
            f"fusion width mismatch: image {img_tokens.data.shape} vs text {txt_tokens.data.shape}"
        )
    out, mean_map = multi_head_attention(
        params, "fus.attn", txt_tokens, img_tokens, cfg.n_heads, cfg.head_dim, want_map=True
    )
    fused = T.add(out, txt_tokens)
    return fused, AttnMap(weights=mean_map, head_count=cfg.n_heads)


def attn_pool(fused: T.Tensor, params: dict[str, T.Tensor], cfg: ModelConfig) -> T.Tensor:
    """One learned seed attends over the fused rows; unit-norm output.

    Content-based only (no positions), so the output is invariant to row
    permutations of the input.
    """
    if fused.data.shape[0] < 1:
        raise ShapeError("attn_pool needs at least one row")
    pooled, _ = multi_head_attention(
        params, "fus.pool", params["fus.pool.seed"], fused, cfg.n_heads, cfg.head_dim
    )
    return T.l2_normalize(T.reshape(pooled, (cfg.d_model,)))


def embed_query(
    img: ImageGrid,
    text: TokenizedText,
    params: dict[str, T.Tensor],
    cfg: ModelConfig,
) -> tuple[T.Tensor, AttnMap]:
    """Full composition: encode both sides, fuse, pool. Returns (vector, map)."""
    img_rows = encode_image(img, params, cfg)
    txt_rows = encode_text(text, params, cfg)
    fused, amap = cross_attn(img_rows, txt_rows, params, cfg)
    return attn_pool(fused, params, cfg), amap


def embed_image_blank(
    img: ImageGrid, params: dict[str, T.Tensor], cfg: ModelConfig
) -> T.Tensor:
    """Gallery-side embedding: the image fused with the empty text."""
    r, _ = embed_query(img, tokenize("", cfg.vocab_buckets), params, cfg)
    return r


def model_fingerprint(params: dict[str, T.Tensor], cfg: ModelConfig) -> str:
    """Stable hex digest of the architecture plus every parameter value."""
    h = hashlib.sha256()
    h.update(json.dumps(cfg.__dict__, sort_keys=True).encode())
    for name in sorted(params):
        t = params[name]
        h.update(name.encode())
        h.update(str(t.data.shape).encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()[:16]


# ---------------------------------------------------------------------------
# attention dumps (one grayscale image + one weight sidecar per noun phrase)
# ---------------------------------------------------------------------------


def np_mean_weights(amap: AttnMap, span: NPSpan) -> np.ndarray:
    """Mean attention row over the phrase's in-context token rows.

    Token row i of the text sits at map row i+1 (after BOS). The mean of
    row-stochastic rows still sums to 1.
    """
    rows = np.asarray(span.token_rows, dtype=np.int64) + 1
    if rows.size == 0 or rows.max() >= amap.weights.data.shape[0]:
        raise ShapeError("phrase token rows fall outside the attention map")
    return amap.weights.data[rows].mean(axis=0)


def region_mass(mean_weights: np.ndarray, cells: list[int] | np.ndarray) -> float:
    """Total attention mass a mean row places on the given patch cells."""
    idx = np.asarray(cells, dtype=np.int64)
    return float(mean_weights[idx].sum()) if idx.size else 0.0


def _slug(text: str, max_len: int = 24) -> str:
    s = re.sub(r"[^a-z0-9]+", "-", text.lower()).strip("-")
    return s[:max_len] or "np"


def _write_pgm(path: Path, image: np.ndarray) -> None:
    """ASCII PGM (P2); deterministic bytes for identical inputs."""
    h, w = image.shape
    lines = [f"P2", f"{w} {h}", "255"]
    lines += [" ".join(str(int(v)) for v in row) for row in image]
    path.write_text("\n".join(lines) + "\n", encoding="ascii")


def write_np_dump(
    out_dir: Path,
    index: int,
    span_text: str,
    depth: int,
    rows: np.ndarray,
    row_indices: list[int],
    grid: int,
) -> tuple[Path, Path]:
    """Write one phrase's P2 image plus a text sidecar of the raw weights.

    The sidecar carries each in-context token row (each sums to 1) and the
    mean row; the PGM renders the mean row rescaled so its max is white.
    """
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"np{index:02d}_{_slug(span_text)}"
    mean = rows.mean(axis=0)
    peak = mean.max()
    img = np.zeros((grid, grid)) if peak <= 0 else (mean / peak * 255.0).round().reshape(grid, grid)
    pgm = out_dir / f"{stem}.pgm"
    _write_pgm(pgm, img)
    sidecar = out_dir / f"{stem}.txt"
    lines = [f"# text: {span_text}", f"# depth: {depth}", f"# grid: {grid}"]
    for ridx, row in zip(row_indices, rows):
        lines.append("row " + str(ridx) + " " + " ".join(repr(float(v)) for v in row))
    lines.append("mean " + " ".join(repr(float(v)) for v in mean))
    sidecar.write_text("\n".join(lines) + "\n", encoding="ascii")
    return pgm, sidecar


def dump_np_attention(
    out_dir: str | Path,
    raw_text: str,
    spans: list[NPSpan],
    amap: AttnMap,
    cfg: ModelConfig,
) -> list[tuple[Path, Path]]:
    """One (pgm, sidecar) pair per extracted noun phrase."""
    out_dir = Path(out_dir)
    written = []
    for i, span in enumerate(spans):
        rows_idx = [r + 1 for r in span.token_rows]
        rows = amap.weights.data[np.asarray(rows_idx, dtype=np.int64)]
        written.append(
            write_np_dump(out_dir, i, span.text(raw_text), span.depth, rows, rows_idx, cfg.grid)
        )
    return written


def read_dump_mean(sidecar: str | Path) -> np.ndarray:
    """Recover the mean weight row from a dump sidecar."""
    for line in Path(sidecar).read_text("ascii").splitlines():
        if line.startswith("mean "):
            return np.array([float(v) for v in line.split()[1:]])
    raise ShapeError(f"no mean row in {sidecar}")
