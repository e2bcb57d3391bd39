"""Deterministic synthetic scenes and ground-truth-known retrieval triplets.

Scenes are objects (glyph, color, size) on cells of the patch grid over a
black background; rendering produces the same 8-bin histogram features the
encoders consume, so a triplet's target grid is exactly reproducible from
the query scene plus its edit list. Captions come from templates that the
noun-phrase grammar fully covers (this coupling is deliberate), and every
caption carries at least one noun phrase.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .encoders import COLOR_NAMES, ImageGrid, ModelConfig
from .errors import ConfigError, ContractError, DataError
from .nlp import NPSpan, parse_noun_phrases

__all__ = [
    "SceneObject",
    "SceneSpec",
    "EditOp",
    "Triplet",
    "GLYPHS",
    "OBJECT_COLORS",
    "render_scene",
    "apply_edit",
    "caption_for",
    "gen_synthetic",
    "gen_synthetic_detailed",
    "edited_cells",
    "save_dataset",
    "load_dataset",
    "save_grids",
    "load_grids",
]

# glyph -> (cell coverage, accent bin, accent fraction); the accent bin makes
# glyph class recoverable from pixel statistics alone
GLYPHS = {
    "ball": (0.62, 1, 0.10),
    "box": (0.88, 0, 0.15),
    "star": (0.46, 1, 0.22),
    "cross": (0.52, 0, 0.08),
}

SIZES = {"small": 0.55, "large": 1.0}

OBJECT_COLORS = ("red", "green", "blue", "yellow", "orange", "purple")

_BIN = {name: i for i, name in enumerate(COLOR_NAMES)}


@dataclass(frozen=True)
class SceneObject:
    glyph: str
    color: str
    cell: int
    size: str


@dataclass(frozen=True)
class SceneSpec:
    objects: tuple[SceneObject, ...]
    background: str = "black"

    def __post_init__(self):
        cells = [o.cell for o in self.objects]
        if len(set(cells)) != len(cells):
            raise ContractError("scene objects must occupy distinct cells")


@dataclass(frozen=True)
class EditOp:
    kind: str  # add | remove | modify
    obj: SceneObject  # referent in the scene it applies to (for add: the new object)
    new_color: str | None = None
    with_region: bool = True


@dataclass
class Triplet:
    query_id: str
    target_id: str
    text: str
    gt_ids: list[str]
    subset_ids: list[str] = field(default_factory=list)
    np_spans: list[NPSpan] = field(default_factory=list)
    query: ImageGrid | None = None
    target: ImageGrid | None = None


def _cell_features(obj: SceneObject | None, background: str, d_in: int) -> np.ndarray:
    f = np.zeros(d_in)
    bg = _BIN[background]
    if obj is None:
        f[bg] = 1.0
        return f
    coverage, accent_bin, accent_frac = GLYPHS[obj.glyph]
    coverage *= SIZES[obj.size]
    f[bg] = 1.0 - coverage
    f[_BIN[obj.color]] += coverage * (1.0 - accent_frac)
    f[accent_bin] += coverage * accent_frac
    return f


def render_scene(spec: SceneSpec, cfg: ModelConfig) -> np.ndarray:
    """(P*P, d_in) histogram rows; pure function of the scene."""
    by_cell = {o.cell: o for o in spec.objects}
    if by_cell and max(by_cell) >= cfg.n_img_tokens:
        raise ContractError("scene object outside the patch grid")
    return np.stack(
        [_cell_features(by_cell.get(c), spec.background, cfg.d_in) for c in range(cfg.n_img_tokens)]
    )


def apply_edit(spec: SceneSpec, op: EditOp) -> SceneSpec:
    objs = list(spec.objects)
    if op.kind == "add":
        if any(o.cell == op.obj.cell for o in objs):
            raise ContractError("add target cell is occupied")
        objs.append(op.obj)
    elif op.kind == "remove":
        if op.obj not in objs:
            raise ContractError("remove referent is not in the scene")
        objs.remove(op.obj)
    elif op.kind == "modify":
        if op.obj not in objs:
            raise ContractError("modify referent is not in the scene")
        if not op.new_color or op.new_color == op.obj.color:
            raise ContractError("modify needs a different color")
        objs[objs.index(op.obj)] = replace(op.obj, color=op.new_color)
    else:
        raise ContractError(f"unknown edit kind {op.kind!r}")
    return SceneSpec(objects=tuple(objs), background=spec.background)


def _region_phrase(cell: int, grid: int) -> str:
    row, col = divmod(cell, grid)
    vert = "top" if row < grid / 2 else "bottom"
    horiz = "left" if col < grid / 2 else "right"
    return f"the {vert} {horiz}"


def caption_for(op: EditOp, grid: int) -> str:
    o = op.obj
    noun = f"{o.size} {o.color} {o.glyph}"
    region = _region_phrase(o.cell, grid)
    if op.kind == "add":
        return f"add a {noun} in {region}"
    if op.kind == "remove":
        tail = f" in {region}" if op.with_region else ""
        return f"remove the {noun}{tail}"
    tail = f" in {region}" if op.with_region else ""
    return f"make the {noun}{tail} {op.new_color}"


def edited_cells(query: ImageGrid, target: ImageGrid) -> list[int]:
    """Patch cells whose features differ between the two grids."""
    diff = np.abs(query.patches - target.patches).max(axis=1)
    return [int(i) for i in np.where(diff > 0)[0]]


@dataclass
class SynthDetail:
    """One generated triplet plus its construction record, for verification."""

    triplet: Triplet
    scene: SceneSpec
    ops: list[EditOp]


def _sample_scene(rng: np.random.Generator, cfg: ModelConfig, n_objects: int) -> SceneSpec:
    cells = rng.choice(cfg.n_img_tokens, size=n_objects, replace=False)
    combos = [(c, g) for c in OBJECT_COLORS for g in GLYPHS]
    picks = rng.choice(len(combos), size=n_objects, replace=False)
    objs = []
    for cell, pick in zip(cells, picks):
        color, glyph = combos[pick]
        size = "small" if rng.random() < 0.5 else "large"
        objs.append(SceneObject(glyph=glyph, color=color, cell=int(cell), size=size))
    return SceneSpec(objects=tuple(objs))


def _sample_ops(
    rng: np.random.Generator,
    scene: SceneSpec,
    cfg: ModelConfig,
    n_ops: int,
    kinds: tuple[str, ...],
    region_prob: float,
) -> list[EditOp]:
    ops: list[EditOp] = []
    current = scene
    for _ in range(n_ops):
        used = {(o.color, o.glyph) for o in current.objects}
        free_cells = sorted(set(range(cfg.n_img_tokens)) - {o.cell for o in current.objects})
        free_combos = [(c, g) for c in OBJECT_COLORS for g in GLYPHS if (c, g) not in used]
        choices = [
            k
            for k in kinds
            if (k == "add" and free_cells and free_combos) or (k != "add" and current.objects)
        ]
        if not choices:
            raise ContractError(f"no applicable edit among {kinds} for this scene")
        kind = choices[int(rng.integers(len(choices)))]
        if kind == "add":
            color, glyph = free_combos[int(rng.integers(len(free_combos)))]
            obj = SceneObject(
                glyph=glyph,
                color=color,
                cell=int(free_cells[int(rng.integers(len(free_cells)))]),
                size="small" if rng.random() < 0.5 else "large",
            )
            op = EditOp(kind="add", obj=obj, with_region=True)
        elif kind == "remove":
            obj = current.objects[int(rng.integers(len(current.objects)))]
            op = EditOp(kind="remove", obj=obj, with_region=bool(rng.random() < region_prob))
        else:
            obj = current.objects[int(rng.integers(len(current.objects)))]
            fresh = [c for c in OBJECT_COLORS if c != obj.color and (c, obj.glyph) not in used]
            if not fresh:
                op = EditOp(kind="remove", obj=obj, with_region=bool(rng.random() < region_prob))
            else:
                op = EditOp(
                    kind="modify",
                    obj=obj,
                    new_color=fresh[int(rng.integers(len(fresh)))],
                    with_region=bool(rng.random() < region_prob),
                )
        current = apply_edit(current, op)
        ops.append(op)
    return ops


def gen_synthetic_detailed(
    n: int,
    ops_per_pair: int = 1,
    seed: int = 0,
    cfg: ModelConfig | None = None,
    np_limit: int = 10,
    kinds: tuple[str, ...] = ("add", "remove", "modify"),
    region_prob: float = 0.5,
    subset_size: int = 6,
) -> list[SynthDetail]:
    """Triplets plus their scene/edit provenance. Deterministic per seed."""
    if n < 1:
        raise ConfigError("need at least one triplet")
    if not 1 <= ops_per_pair <= 4:
        raise ConfigError("ops_per_pair must be between 1 and 4")
    cfg = cfg or ModelConfig()
    rng = np.random.default_rng(seed)
    details: list[SynthDetail] = []
    seen_targets: set[bytes] = set()
    for i in range(n):
        for _attempt in range(64):
            n_obj = int(rng.integers(2, min(5, cfg.n_img_tokens)))
            scene = _sample_scene(rng, cfg, n_obj)
            ops = _sample_ops(rng, scene, cfg, ops_per_pair, kinds, region_prob)
            text = " and ".join(caption_for(op, cfg.grid) for op in ops)
            tokenized, spans = parse_noun_phrases(
                text, limit=np_limit, vocab_buckets=cfg.vocab_buckets
            )
            if len(tokenized.tokens) > cfg.max_text_tokens or not spans:
                continue
            target_scene = scene
            for op in ops:
                target_scene = apply_edit(target_scene, op)
            target_patches = render_scene(target_scene, cfg)
            key = target_patches.tobytes()
            if key in seen_targets:
                continue
            seen_targets.add(key)
            break
        else:
            raise DataError(f"could not generate a fresh triplet after 64 attempts (index {i})")
        qid, tid = f"q{i:05d}", f"t{i:05d}"
        trip = Triplet(
            query_id=qid,
            target_id=tid,
            text=text,
            gt_ids=[tid],
            np_spans=list(spans),
            query=ImageGrid(id=qid, patches=render_scene(scene, cfg)),
            target=ImageGrid(id=tid, patches=target_patches),
        )
        details.append(SynthDetail(triplet=trip, scene=scene, ops=ops))
    target_ids = [d.triplet.target_id for d in details]
    for d in details:
        others = [t for t in target_ids if t != d.triplet.target_id]
        k = min(subset_size - 1, len(others))
        picks = list(rng.choice(len(others), size=k, replace=False)) if k else []
        subset = [others[int(p)] for p in picks] + [d.triplet.target_id]
        d.triplet.subset_ids = sorted(subset)
    return details


def gen_synthetic(
    n: int,
    ops_per_pair: int = 1,
    seed: int = 0,
    cfg: ModelConfig | None = None,
    **kwargs,
) -> list[Triplet]:
    return [d.triplet for d in gen_synthetic_detailed(n, ops_per_pair, seed, cfg, **kwargs)]


# ---------------------------------------------------------------------------
# dataset files: jsonl records + binary grid sidecar with an id->offset table
# ---------------------------------------------------------------------------

_GRID_MAGIC = b"CIRGRID1"


def save_grids(path: str | Path, grids: list[ImageGrid]) -> None:
    ids = [g.id for g in grids]
    if len(set(ids)) != len(ids):
        raise ContractError("grid ids must be unique")
    if not grids:
        raise DataError("refusing to write an empty grid sidecar")
    n_cells, d_in = grids[0].patches.shape
    offsets = {}
    blob = bytearray()
    for g in grids:
        if g.patches.shape != (n_cells, d_in):
            raise ContractError("all grids in one sidecar must share a shape")
        offsets[g.id] = len(blob)
        blob += np.ascontiguousarray(g.patches).tobytes()
    table = json.dumps(offsets, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(_GRID_MAGIC)
        f.write(struct.pack("<IIII", n_cells, d_in, len(grids), len(table)))
        f.write(table)
        f.write(bytes(blob))


def load_grids(path: str | Path) -> dict[str, ImageGrid]:
    data = Path(path).read_bytes()
    if data[:8] != _GRID_MAGIC:
        raise DataError(f"{path} is not a grid sidecar")
    n_cells, d_in, count, table_len = struct.unpack("<IIII", data[8:24])
    table = json.loads(data[24 : 24 + table_len])
    if len(table) != count:
        raise DataError(f"{path} table length disagrees with header")
    base = 24 + table_len
    span = n_cells * d_in * 8
    out = {}
    for gid, ofs in table.items():
        buf = data[base + ofs : base + ofs + span]
        if len(buf) != span:
            raise DataError(f"{path} is truncated at grid {gid!r}")
        out[gid] = ImageGrid(
            id=gid, patches=np.frombuffer(buf, dtype=np.float64).reshape(n_cells, d_in)
        )
    return out


def _span_to_json(s: NPSpan) -> dict:
    return {
        "start": s.char_start,
        "end": s.char_end,
        "rows": list(s.token_rows),
        "depth": s.depth,
    }


def _span_from_json(d: dict) -> NPSpan:
    return NPSpan(
        char_start=d["start"],
        char_end=d["end"],
        token_rows=tuple(d["rows"]),
        depth=d["depth"],
    )


def save_dataset(jsonl_path: str | Path, triplets: list[Triplet]) -> None:
    """Line-delimited records plus a .grids sidecar next to the jsonl."""
    jsonl_path = Path(jsonl_path)
    lines = []
    grids: dict[str, ImageGrid] = {}
    for t in triplets:
        rec = {
            "query_id": t.query_id,
            "target_id": t.target_id,
            "text": t.text,
            "subset_ids": t.subset_ids,
            "gt_ids": t.gt_ids,
            "np_spans": [_span_to_json(s) for s in t.np_spans],
        }
        lines.append(json.dumps(rec, sort_keys=True))
        for g in (t.query, t.target):
            if g is not None:
                grids.setdefault(g.id, g)
    jsonl_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if grids:
        save_grids(jsonl_path.with_suffix(".grids"), list(grids.values()))


def load_dataset(jsonl_path: str | Path) -> list[Triplet]:
    jsonl_path = Path(jsonl_path)
    if not jsonl_path.exists():
        raise DataError(f"dataset {jsonl_path} does not exist")
    sidecar = jsonl_path.with_suffix(".grids")
    grids = load_grids(sidecar) if sidecar.exists() else {}
    out = []
    for line_no, line in enumerate(jsonl_path.read_text("utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as e:
            raise DataError(f"{jsonl_path}:{line_no}: bad record: {e}") from e
        out.append(
            Triplet(
                query_id=rec["query_id"],
                target_id=rec["target_id"],
                text=rec["text"],
                gt_ids=list(rec["gt_ids"]),
                subset_ids=list(rec.get("subset_ids", [])),
                np_spans=[_span_from_json(s) for s in rec.get("np_spans", [])],
                query=grids.get(rec["query_id"]),
                target=grids.get(rec["target_id"]),
            )
        )
    if not out:
        raise DataError(f"dataset {jsonl_path} has no records")
    return out
