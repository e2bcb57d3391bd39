"""Gallery indexing, exact top-K cosine retrieval, and ranking metrics.

The index holds unit-norm blank-text embeddings in one contiguous float64
matrix, so scoring a query is a single matrix-vector product and cosine
similarity is a plain dot. Search is exhaustive and exact; ties break by
ascending id so rankings are reproducible.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import tensor as T
from .datagen import Triplet
from .encoders import ImageGrid, ModelConfig
from .errors import ContractError, DataError
from .fusion import embed_image_blank, embed_query, model_fingerprint
from .nlp import tokenize

__all__ = [
    "GalleryIndex",
    "EvalRecord",
    "build_index",
    "query_topk",
    "rank_all",
    "recall_at_k",
    "recall_subset_at_k",
    "map_at_k",
    "evaluate_triplets",
    "standard_report",
    "format_report",
    "save_index",
    "load_index",
]


@dataclass
class GalleryIndex:
    ids: list[str]
    vectors: np.ndarray  # (n, d) unit rows, row i embeds ids[i]
    fingerprint: str

    def __post_init__(self):
        if len(self.ids) != self.vectors.shape[0]:
            raise ContractError(
                f"{len(self.ids)} ids for {self.vectors.shape[0]} vectors"
            )
        if len(set(self.ids)) != len(self.ids):
            raise ContractError("gallery ids must be unique")
        if self.vectors.size:
            norms = np.linalg.norm(self.vectors, axis=1)
            if np.abs(norms - 1.0).max() > 1e-6:
                raise ContractError("index vectors must be unit-norm")

    def __len__(self) -> int:
        return len(self.ids)


def build_index(
    gallery: list[ImageGrid], params: dict[str, T.Tensor], cfg: ModelConfig
) -> GalleryIndex:
    """Embed every gallery image with the blank text and stack the vectors."""
    ids = [g.id for g in gallery]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate image id in gallery")
    if gallery:
        vectors = np.stack([embed_image_blank(g, params, cfg).data for g in gallery])
    else:
        vectors = np.zeros((0, cfg.d_model))
    return GalleryIndex(ids=ids, vectors=vectors, fingerprint=model_fingerprint(params, cfg))


def _ranked_order(idx: GalleryIndex, scores: np.ndarray) -> np.ndarray:
    # primary: score descending; tie-break: id ascending
    return np.lexsort((np.asarray(idx.ids), -scores))


def query_topk(idx: GalleryIndex, query_vec: np.ndarray | T.Tensor, k: int) -> list[tuple[str, float]]:
    """Exact descending-similarity ranking of the top k gallery entries."""
    if k < 1:
        raise ContractError("k must be at least 1")
    if len(idx) == 0:
        raise DataError("cannot query an empty index")
    v = query_vec.data if isinstance(query_vec, T.Tensor) else np.asarray(query_vec)
    scores = idx.vectors @ v
    order = _ranked_order(idx, scores)[: min(k, len(idx))]
    return [(idx.ids[i], float(scores[i])) for i in order]


def rank_all(idx: GalleryIndex, query_vec: np.ndarray | T.Tensor) -> list[str]:
    return [gid for gid, _ in query_topk(idx, query_vec, len(idx))]


@dataclass
class EvalRecord:
    """One query's full ranking plus its ground truth (and optional subset)."""

    query_id: str
    ranking: list[str]
    gt_ids: list[str]
    subset_ids: list[str] | None = None

    def __post_init__(self):
        if not self.gt_ids:
            raise ContractError(f"record {self.query_id} has no ground truth")
        if self.subset_ids is not None and not set(self.subset_ids) & set(self.gt_ids):
            raise DataError(f"record {self.query_id} subset contains no ground truth")


def recall_at_k(records: list[EvalRecord], k: int) -> float:
    """Fraction of queries whose top-k ranking contains any ground truth."""
    if not records:
        raise DataError("no evaluation records")
    hits = sum(1 for r in records if set(r.ranking[:k]) & set(r.gt_ids))
    return hits / len(records)


def recall_subset_at_k(records: list[EvalRecord], k: int) -> float:
    """Recall over the ranking induced on each record's candidate subset."""
    if not records:
        raise DataError("no evaluation records")
    hits = 0
    for r in records:
        if r.subset_ids is None:
            raise ContractError(f"record {r.query_id} has no subset ids")
        members = set(r.subset_ids)
        sub_ranking = [gid for gid in r.ranking if gid in members]
        if set(sub_ranking[:k]) & set(r.gt_ids):
            hits += 1
    return hits / len(records)


def map_at_k(records: list[EvalRecord], k: int) -> float:
    """Mean of AP@k, normalized by min(#ground truths, k) per query."""
    if not records:
        raise DataError("no evaluation records")
    total = 0.0
    for r in records:
        gts = set(r.gt_ids)
        hits = 0
        ap = 0.0
        for i, gid in enumerate(r.ranking[:k], start=1):
            if gid in gts:
                hits += 1
                ap += hits / i
        total += ap / min(len(gts), k)
    return total / len(records)


def evaluate_triplets(
    triplets: list[Triplet],
    idx: GalleryIndex,
    params: dict[str, T.Tensor],
    cfg: ModelConfig,
) -> list[EvalRecord]:
    """Embed each (query image, text) and rank the whole gallery."""
    records = []
    for t in triplets:
        if t.query is None:
            raise DataError(f"triplet {t.query_id} has no query grid")
        r, _ = embed_query(t.query, tokenize(t.text, cfg.vocab_buckets), params, cfg)
        records.append(
            EvalRecord(
                query_id=t.query_id,
                ranking=rank_all(idx, r),
                gt_ids=list(t.gt_ids),
                subset_ids=list(t.subset_ids) if t.subset_ids else None,
            )
        )
    return records


RECALL_KS = (1, 5, 10, 50)
SUBSET_KS = (1, 2, 3)
MAP_KS = (5, 10, 25, 50)


def standard_report(records: list[EvalRecord], with_subset: bool = True) -> list[dict]:
    """The benchmark metric grid as machine-readable rows."""
    rows = [
        {"metric": "recall", "k": k, "value": recall_at_k(records, k)} for k in RECALL_KS
    ]
    if with_subset and all(r.subset_ids is not None for r in records):
        rows += [
            {"metric": "recall_subset", "k": k, "value": recall_subset_at_k(records, k)}
            for k in SUBSET_KS
        ]
    rows += [{"metric": "map", "k": k, "value": map_at_k(records, k)} for k in MAP_KS]
    return rows


def format_report(rows: list[dict]) -> str:
    """Plain-text table mirroring the machine-readable rows."""
    labels = {"recall": "Recall", "recall_subset": "Recall_subset", "map": "mAP"}
    lines = [f"{'metric':<16}{'K':>4}{'value':>10}"]
    for row in rows:
        lines.append(f"{labels[row['metric']]:<16}{row['k']:>4}{row['value']:>10.4f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# index file: header {d, n, fingerprint} + id table + row-major vectors
# ---------------------------------------------------------------------------

_IDX_MAGIC = b"CIRIDX01"


def save_index(path: str | Path, idx: GalleryIndex) -> None:
    header = {
        "d": int(idx.vectors.shape[1]) if idx.vectors.size else 0,
        "n": len(idx),
        "fingerprint": idx.fingerprint,
        "ids": idx.ids,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_IDX_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(np.ascontiguousarray(idx.vectors).tobytes())


def load_index(path: str | Path) -> GalleryIndex:
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read index {path}: {e}") from e
    if data[:8] != _IDX_MAGIC:
        raise DataError(f"{path} is not an index file")
    (hlen,) = struct.unpack("<I", data[8:12])
    header = json.loads(data[12 : 12 + hlen])
    n, d = header["n"], header["d"]
    buf = data[12 + hlen : 12 + hlen + n * d * 8]
    if len(buf) != n * d * 8:
        raise DataError(f"{path} is truncated")
    vectors = np.frombuffer(buf, dtype=np.float64).reshape(n, d) if n else np.zeros((0, d))
    return GalleryIndex(ids=list(header["ids"]), vectors=vectors.copy(), fingerprint=header["fingerprint"])
