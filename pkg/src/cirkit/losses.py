"""Training objectives: concept-consistency hinge, contrastive, and total.

The concept-consistency term compares, per noun phrase, the in-context
attention rows of the full text against the rows obtained when the phrase is
encoded alone. The isolated rows are targets: they enter as constants and no
gradient flows into the isolated branch (letting the target move would allow
trivial collapse).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .encoders import ModelConfig
from .errors import ConfigError, ContractError, ShapeError
from .fusion import AttnMap, cross_attn
from .nlp import NPSpan, tokenize

__all__ = [
    "NPConsistency",
    "CCInputs",
    "BatchReps",
    "concept_pairs",
    "cc_loss",
    "contrastive_loss",
    "total_loss",
    "stack_rows",
]


@dataclass
class NPConsistency:
    """One phrase's aligned row pairing between full and isolated maps."""

    row_map: tuple[int, ...]  # rows of the full map (token rows shifted past BOS)
    isolated_map: np.ndarray  # raw isolated weights, (n_iso_rows, n_img), constant
    iso_rows: tuple[int, ...]  # content rows within isolated_map (BOS/EOS excluded)

    def __post_init__(self):
        if len(self.row_map) != len(self.iso_rows):
            raise ContractError(
                f"row misalignment: {len(self.row_map)} in-context rows vs "
                f"{len(self.iso_rows)} isolated rows"
            )


@dataclass
class CCInputs:
    full_map: AttnMap
    pairs: list[NPConsistency] = field(default_factory=list)
    epsilon: float = 0.1

    def __post_init__(self):
        if self.epsilon < 0:
            raise ConfigError(f"epsilon must be nonnegative, got {self.epsilon}")


def concept_pairs(
    img_rows_data: np.ndarray,
    raw_text: str,
    spans: list[NPSpan],
    params: dict[str, T.Tensor],
    cfg: ModelConfig,
) -> list[NPConsistency]:
    """Isolated-encoding attention targets for each phrase, without gradients.

    Re-tokenizing the phrase substring reproduces the covered tokens, so the
    isolated content rows align one-to-one with the phrase's in-context
    token rows.
    """
    from .encoders import encode_text  # local import keeps module load light

    img_const = T.tensor(img_rows_data)
    pairs = []
    for span in spans:
        phrase = span.text(raw_text)
        iso_text = tokenize(phrase, cfg.vocab_buckets)
        if len(iso_text.tokens) != len(span.token_rows):
            raise ContractError(
                f"phrase {phrase!r} retokenizes to {len(iso_text.tokens)} tokens, "
                f"expected {len(span.token_rows)}"
            )
        iso_rows_t = encode_text(iso_text, params, cfg)
        _, iso_map = cross_attn(img_const, iso_rows_t, params, cfg)
        n_rows = iso_map.weights.data.shape[0]
        pairs.append(
            NPConsistency(
                row_map=tuple(r + 1 for r in span.token_rows),
                isolated_map=iso_map.weights.data.copy(),
                iso_rows=tuple(range(1, n_rows - 1)),
            )
        )
    return pairs


def cc_loss(
    c: CCInputs,
    reduction: str = "sum",
    symmetric: bool = False,
) -> T.Tensor:
    """Hinge between in-context and isolated attention, summed over phrases.

    Per aligned row pair and image column: relu(full - isolated - epsilon).
    Zero phrases give exactly zero. The symmetric variant penalizes
    relu(|full - isolated| - epsilon) and exists for study only.
    """
    if reduction not in ("sum", "mean"):
        raise ConfigError(f"unknown reduction {reduction!r}")
    if not c.pairs:
        return T.tensor(0.0)
    total = None
    n_terms = 0
    for pair in c.pairs:
        rows = list(pair.row_map)
        if rows and max(rows) >= c.full_map.weights.data.shape[0]:
            raise ContractError("row_map points outside the full attention map")
        full_rows = T.take_rows(c.full_map.weights, rows)
        target = pair.isolated_map[list(pair.iso_rows)]
        if target.shape != full_rows.data.shape:
            raise ContractError(
                f"aligned shapes differ: full {full_rows.data.shape} vs isolated {target.shape}"
            )
        if symmetric:
            d = T.sub(full_rows, T.tensor(target))
            magnitude = T.add(T.relu(d), T.relu(T.scale(d, -1.0)))
            hinge = T.relu(T.sub(magnitude, T.tensor(np.full_like(target, c.epsilon))))
        else:
            hinge = T.relu(T.sub(full_rows, T.tensor(target + c.epsilon)))
        term = T.sum_all(hinge)
        total = term if total is None else T.add(total, term)
        n_terms += target.size
    if reduction == "mean":
        total = T.scale(total, 1.0 / n_terms)
    return total


@dataclass
class BatchReps:
    """Per-sample embeddings for one contrastive batch.

    r_q: fused query embeddings, r_t: blank-text target embeddings, r_qneg:
    blank-text query embeddings (the extra negative). All (N, d).
    """

    r_q: T.Tensor
    r_t: T.Tensor
    r_qneg: T.Tensor
    tau: float

    @property
    def batch_size(self) -> int:
        return self.r_q.data.shape[0]

    def validate(self, atol: float = 1e-6) -> None:
        shapes = {self.r_q.data.shape, self.r_t.data.shape, self.r_qneg.data.shape}
        if len(shapes) != 1:
            raise ShapeError(f"batch embedding shapes differ: {shapes}")
        if self.batch_size < 1:
            raise ShapeError("batch must contain at least one sample")
        for name, t in (("r_q", self.r_q), ("r_t", self.r_t), ("r_qneg", self.r_qneg)):
            norms = np.linalg.norm(t.data, axis=1)
            if np.abs(norms - 1.0).max() > atol:
                raise ShapeError(f"{name} rows are not unit-norm")


def stack_rows(vectors: list[T.Tensor]) -> T.Tensor:
    """Stack 1-D tensors into an (N, d) matrix, keeping gradients flowing."""
    return T.concat_rows([T.reshape(v, (1, v.data.shape[0])) for v in vectors])


def contrastive_loss(b: BatchReps, include_query_negative: bool = True) -> T.Tensor:
    """Batch-mean InfoNCE with the blank-text query embedding as an extra
    negative in the denominator.

    Similarities are cosine, recomputed from the (re-normalized) rows so the
    loss is invariant to positive rescaling of any embedding. The positive
    pair also appears inside the denominator sum, which keeps the per-sample
    term nonnegative.
    """
    if b.tau <= 0:
        raise ConfigError(f"temperature must be positive, got {b.tau}")
    if b.r_q.data.shape != b.r_t.data.shape or b.r_q.data.shape != b.r_qneg.data.shape:
        raise ShapeError("batch embedding shapes differ")
    n = b.r_q.data.shape[0]
    inv_tau = 1.0 / b.tau
    rq = T.normalize_rows(b.r_q)
    rt = T.normalize_rows(b.r_t)
    pos_logits = T.scale(T.row_sums(T.mul(rq, rt)), inv_tau)  # (N,)
    target_logits = T.scale(T.matmul(rq, T.transpose(rt)), inv_tau)  # (N, N)
    denom = T.row_sums(T.exp(target_logits))
    if include_query_negative:
        rqn = T.normalize_rows(b.r_qneg)
        qneg_logits = T.scale(T.row_sums(T.mul(rq, rqn)), inv_tau)
        denom = T.add(denom, T.exp(qneg_logits))
    per_sample = T.sub(T.log(denom), pos_logits)
    return T.scale(T.sum_all(per_sample), 1.0 / n)


def total_loss(cont: T.Tensor, cc: T.Tensor, weight: float) -> T.Tensor:
    """cont + weight * cc; weight 0 turns the consistency term off."""
    if weight < 0:
        raise ConfigError(f"loss weight must be nonnegative, got {weight}")
    return T.add(cont, T.scale(cc, weight))
