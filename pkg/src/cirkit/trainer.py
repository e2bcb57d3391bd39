"""Mini-batch training loop: AdamW with decoupled decay, cosine-cycled
learning rate, deterministic batching, and bitwise-exact checkpoints.

One tape per step. The per-sample pipeline embeds the fused query, the
blank-text target, and the blank-text query negative, adds the concept
consistency term for the precomputed noun phrases, and applies one AdamW
update. Everything is a pure function of (dataset, config, seed).
"""

from __future__ import annotations

import contextlib
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from . import tensor as T
from .datagen import Triplet
from .encoders import ModelConfig, encode_image, encode_text
from .errors import ConfigError, ContractError, DataError, NumericError
from .fusion import attn_pool, cross_attn, model_fingerprint
from .losses import BatchReps, CCInputs, cc_loss, concept_pairs, contrastive_loss, stack_rows, total_loss
from .nlp import tokenize

__all__ = [
    "TrainConfig",
    "OptimizerState",
    "lr_at",
    "batch_loss",
    "precompute_cc_targets",
    "train_step",
    "train",
    "frozen_names",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class TrainConfig:
    batch_size: int = 32
    steps: int = 3000
    lr_max: float = 2e-5
    lr_min: float = 2e-7
    period: int = 1000  # steps from peak to floor; the full cosine wave is 2*period
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    cc_weight: float = 0.08
    cc_epsilon: float = 0.1
    tau: float = 0.07
    np_limit: int = 10
    seed: int = 0
    freeze_image: bool = False
    freeze_text: bool = False
    leaf_only: bool = False
    use_query_negative: bool = True
    grad_clip: float = 1.0  # 0 disables clipping
    cc_reduction: str = "sum"
    cc_symmetric: bool = False

    def __post_init__(self):
        if not (self.lr_max >= self.lr_min > 0):
            raise ConfigError(f"need lr_max >= lr_min > 0, got {self.lr_max}, {self.lr_min}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be at least 1")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.cc_weight < 0 or self.cc_epsilon < 0:
            raise ConfigError("cc_weight and cc_epsilon must be nonnegative")
        if self.period < 1:
            raise ConfigError("period must be at least 1")


def lr_at(step: int, period: int, cfg: TrainConfig) -> float:
    """Cosine-cycled rate: peak at step 0, floor at `period`, peak at 2*period."""
    if period <= 0:
        raise ContractError("period must be positive")
    phase = math.pi * (step % (2 * period)) / period
    return cfg.lr_min + 0.5 * (cfg.lr_max - cfg.lr_min) * (1.0 + math.cos(phase))


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step_count: int = 0

    @classmethod
    def for_params(cls, params: dict[str, T.Tensor]) -> "OptimizerState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def frozen_names(params: dict[str, T.Tensor], cfg: TrainConfig) -> set[str]:
    frozen = set()
    if cfg.freeze_image:
        frozen |= {k for k in params if k.startswith("img.")}
    if cfg.freeze_text:
        frozen |= {k for k in params if k.startswith("txt.")}
    return frozen


def _adamw_update(
    params: dict[str, T.Tensor],
    opt: OptimizerState,
    lr: float,
    cfg: TrainConfig,
    frozen: set[str],
) -> None:
    opt.step_count += 1
    t = opt.step_count
    bc1 = 1.0 - cfg.beta1**t
    bc2 = 1.0 - cfg.beta2**t
    for name, p in params.items():
        if name in frozen:
            continue
        p.data *= 1.0 - lr * cfg.weight_decay  # decoupled decay
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        m = opt.m[name]
        v = opt.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps_adam)


def _sample_forward(trip: Triplet, blank_rows, params, mcfg):
    """Recorded forward for one triplet; returns embeddings plus query pieces."""
    if trip.query is None or trip.target is None:
        raise DataError(f"triplet {trip.query_id} has no image grids attached")
    img_q = encode_image(trip.query, params, mcfg)
    img_t = encode_image(trip.target, params, mcfg)
    txt = encode_text(tokenize(trip.text, mcfg.vocab_buckets), params, mcfg)
    fused, full_map = cross_attn(img_q, txt, params, mcfg)
    r_q = attn_pool(fused, params, mcfg)
    fused_t, _ = cross_attn(img_t, blank_rows, params, mcfg)
    r_t = attn_pool(fused_t, params, mcfg)
    fused_qn, _ = cross_attn(img_q, blank_rows, params, mcfg)
    r_qneg = attn_pool(fused_qn, params, mcfg)
    return img_q, full_map, r_q, r_t, r_qneg


def _spans_for(trip: Triplet, cfg: TrainConfig):
    spans = trip.np_spans[: cfg.np_limit]
    if cfg.leaf_only:
        # precomputed spans are breadth-first; leaves are re-derivable by depth:
        # a span is a leaf iff no other span is strictly inside it
        spans = [
            s
            for s in spans
            if not any(
                o is not s
                and s.char_start <= o.char_start
                and o.char_end <= s.char_end
                and (o.char_start, o.char_end) != (s.char_start, s.char_end)
                for o in trip.np_spans
            )
        ]
        spans = spans[: cfg.np_limit]
    return spans


def precompute_cc_targets(
    batch: list[Triplet],
    params: dict[str, T.Tensor],
    cfg: TrainConfig,
    mcfg: ModelConfig,
) -> list[list]:
    """Per-sample isolated-map targets, computed without recording.

    The consistency loss treats these as constants (targets), so gradient
    checks of the full objective must hold them fixed too.
    """
    targets = []
    for trip in batch:
        spans = _spans_for(trip, cfg)
        if not spans or cfg.cc_weight == 0:
            targets.append([])
            continue
        img_q = encode_image(trip.query, params, mcfg)
        targets.append(concept_pairs(img_q.data, trip.text, spans, params, mcfg))
    return targets


def batch_loss(
    batch: list[Triplet],
    params: dict[str, T.Tensor],
    cfg: TrainConfig,
    mcfg: ModelConfig,
    tape: T.Tape | None = None,
    cc_targets: list[list] | None = None,
):
    """Forward pass of the full objective over one batch.

    Records onto ``tape`` when given. ``cc_targets`` (from
    :func:`precompute_cc_targets`) pins the isolated maps; when omitted they
    are recomputed from the current parameters, still outside the tape.
    Returns (total, contrastive, consistency, query embeddings).
    """
    ctx = T.recording(tape) if tape is not None else contextlib.nullcontext()
    r_qs, r_ts, r_qns = [], [], []
    sample_ctx = []
    with ctx:
        blank_rows = encode_text(tokenize("", mcfg.vocab_buckets), params, mcfg)
        for trip in batch:
            img_q, full_map, r_q, r_t, r_qneg = _sample_forward(trip, blank_rows, params, mcfg)
            r_qs.append(r_q)
            r_ts.append(r_t)
            r_qns.append(r_qneg)
            sample_ctx.append((trip, img_q, full_map))

    if cc_targets is None:
        cc_targets = []
        for trip, img_q, _ in sample_ctx:
            spans = _spans_for(trip, cfg)
            if cfg.cc_weight > 0 and spans:
                cc_targets.append(concept_pairs(img_q.data, trip.text, spans, params, mcfg))
            else:
                cc_targets.append([])

    ctx = T.recording(tape) if tape is not None else contextlib.nullcontext()
    with ctx:
        cc_terms = []
        for (trip, _, full_map), pairs in zip(sample_ctx, cc_targets):
            if not pairs:
                continue
            cc_terms.append(
                cc_loss(
                    CCInputs(full_map=full_map, pairs=pairs, epsilon=cfg.cc_epsilon),
                    reduction=cfg.cc_reduction,
                    symmetric=cfg.cc_symmetric,
                )
            )
        reps = BatchReps(
            r_q=stack_rows(r_qs), r_t=stack_rows(r_ts), r_qneg=stack_rows(r_qns), tau=cfg.tau
        )
        cont = contrastive_loss(reps, include_query_negative=cfg.use_query_negative)
        if cc_terms:
            acc = cc_terms[0]
            for term in cc_terms[1:]:
                acc = T.add(acc, term)
            cc = T.scale(acc, 1.0 / len(batch))  # batch mean, matching the contrastive term
        else:
            cc = T.tensor(0.0)
        ltot = total_loss(cont, cc, cfg.cc_weight)
    return ltot, cont, cc, (r_qs, r_ts, r_qns)


def train_step(
    batch: list[Triplet],
    params: dict[str, T.Tensor],
    opt: OptimizerState,
    cfg: TrainConfig,
    mcfg: ModelConfig,
    step: int,
) -> dict:
    """One optimization step over exactly batch_size triplets."""
    if len(batch) != cfg.batch_size:
        raise ContractError(f"batch has {len(batch)} triplets, config says {cfg.batch_size}")
    lr = lr_at(step, cfg.period, cfg)
    tape = T.Tape()
    ltot, cont, cc, (r_qs, r_ts, r_qns) = batch_loss(batch, params, cfg, mcfg, tape=tape)

    if not np.isfinite(ltot.data).all():
        bad = _first_bad_sample(batch, r_qs, r_ts, r_qns)
        raise NumericError(f"non-finite loss at step {step}; first bad sample: {bad}")

    T.backward(tape, ltot)
    frozen = frozen_names(params, cfg)
    sq = 0.0
    for name, p in params.items():
        if name in frozen or p.grad is None:
            continue
        sq += float((p.grad * p.grad).sum())
    grad_norm = math.sqrt(sq)
    if cfg.grad_clip > 0 and grad_norm > cfg.grad_clip:
        factor = cfg.grad_clip / grad_norm
        for name, p in params.items():
            if p.grad is not None:
                p.grad *= factor
    _adamw_update(params, opt, lr, cfg, frozen)
    return {
        "step": step,
        "lr": lr,
        "L_cont": float(cont.data),
        "L_cc": float(cc.data),
        "L_tot": float(ltot.data),
        "grad_norm": grad_norm,
    }


def _first_bad_sample(batch, r_qs, r_ts, r_qns) -> str:
    for trip, *vecs in zip(batch, r_qs, r_ts, r_qns):
        if any(not np.isfinite(v.data).all() for v in vecs):
            return trip.query_id
    return batch[0].query_id if batch else "<empty>"


def _batch_stream(n_items: int, batch_size: int, rng: np.random.Generator) -> Iterable[list[int]]:
    """Endless deterministic batches; reshuffles each epoch, always full-size."""
    queue: list[int] = []
    while True:
        while len(queue) < batch_size:
            queue.extend(rng.permutation(n_items).tolist())
        yield queue[:batch_size]
        del queue[:batch_size]


def train(
    triplets: list[Triplet],
    params: dict[str, T.Tensor],
    opt: OptimizerState,
    cfg: TrainConfig,
    mcfg: ModelConfig,
    metrics_path: str | Path | None = None,
    on_step: Callable[[dict], None] | None = None,
    start_step: int = 0,
) -> list[dict]:
    """Run steps [start_step, cfg.steps); append one metrics record per step."""
    if not triplets:
        raise DataError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    stream = _batch_stream(len(triplets), cfg.batch_size, rng)
    # burn batches consumed by earlier steps so resume matches an unbroken run
    for _ in range(start_step):
        next(stream)
    history = []
    sink = open(metrics_path, "a", encoding="utf-8") if metrics_path else None
    try:
        for step in range(start_step, cfg.steps):
            batch = [triplets[i] for i in next(stream)]
            metrics = train_step(batch, params, opt, cfg, mcfg, step)
            history.append(metrics)
            if sink:
                sink.write(json.dumps(metrics, sort_keys=True) + "\n")
            if on_step:
                on_step(metrics)
    finally:
        if sink:
            sink.close()
    return history


# ---------------------------------------------------------------------------
# checkpoints: versioned binary, named entries, bitwise round-trip
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"CIRCKPT1"


def save_checkpoint(
    path: str | Path,
    params: dict[str, T.Tensor],
    opt: OptimizerState,
    mcfg: ModelConfig,
    tcfg: TrainConfig,
    step: int,
) -> None:
    frozen = frozen_names(params, tcfg)
    entries = [
        {"name": k, "shape": list(p.data.shape), "frozen": k in frozen}
        for k, p in params.items()
    ]
    manifest = {
        "version": 1,
        "model": asdict(mcfg),
        "train": asdict(tcfg),
        "step": step,
        "opt_step": opt.step_count,
        "fingerprint": model_fingerprint(params, mcfg),
        "entries": entries,
    }
    blob = json.dumps(manifest, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        for k in params:
            f.write(np.ascontiguousarray(params[k].data).tobytes())
        for k in params:
            f.write(np.ascontiguousarray(opt.m[k]).tobytes())
            f.write(np.ascontiguousarray(opt.v[k]).tobytes())


def load_checkpoint(path: str | Path):
    """Returns (params, opt, model_config, train_config, step)."""
    try:
        data = Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read checkpoint {path}: {e}") from e
    if data[:8] != _CKPT_MAGIC:
        raise DataError(f"{path} is not a checkpoint (bad magic)")
    (mlen,) = struct.unpack("<I", data[8:12])
    try:
        manifest = json.loads(data[12 : 12 + mlen])
    except json.JSONDecodeError as e:
        raise DataError(f"{path} has a corrupt manifest") from e
    if manifest.get("version") != 1:
        raise DataError(f"{path} has unsupported checkpoint version {manifest.get('version')}")
    mcfg = ModelConfig(**manifest["model"])
    tcfg = TrainConfig(**manifest["train"])
    ofs = 12 + mlen
    params: dict[str, T.Tensor] = {}
    for e in manifest["entries"]:
        shape = tuple(e["shape"])
        size = int(np.prod(shape)) * 8
        buf = data[ofs : ofs + size]
        if len(buf) != size:
            raise DataError(f"{path} is truncated in entry {e['name']!r}")
        params[e["name"]] = T.parameter(np.frombuffer(buf, dtype=np.float64).reshape(shape).copy())
        ofs += size
    opt = OptimizerState(m={}, v={}, step_count=manifest["opt_step"])
    for e in manifest["entries"]:
        shape = tuple(e["shape"])
        size = int(np.prod(shape)) * 8
        m = data[ofs : ofs + size]
        v = data[ofs + size : ofs + 2 * size]
        if len(v) != size:
            raise DataError(f"{path} is truncated in optimizer state for {e['name']!r}")
        opt.m[e["name"]] = np.frombuffer(m, dtype=np.float64).reshape(shape).copy()
        opt.v[e["name"]] = np.frombuffer(v, dtype=np.float64).reshape(shape).copy()
        ofs += 2 * size
    if manifest["fingerprint"] != model_fingerprint(params, mcfg):
        raise DataError(f"{path} fingerprint mismatch; file is corrupt")
    return params, opt, mcfg, tcfg, manifest["step"]
