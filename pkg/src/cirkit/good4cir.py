"""Four-stage LLM pipeline for synthesizing retrieval triplets from image
pairs: query object inventory, consistency-checked target inventory,
single-edit difference captions, and multi-edit composition.

The transport is pluggable. Tests and offline runs use fixture playback
keyed by a hash of the canonical request; the live gateway speaks JSON over
HTTP and is configured entirely through environment variables. Responses
are schema-validated; free-form prose is rejected, and the stage-2
consistency rules (adopted descriptor lists byte-equal to stage 1) are
enforced mechanically.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import os
import time
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Protocol

from pydantic import BaseModel, Field, ValidationError

from .datagen import Triplet
from .errors import ConfigError, DataError
from .nlp import parse_noun_phrases

__all__ = [
    "ObjectInfo",
    "ObjectList",
    "DiffCaption",
    "Transport",
    "FixtureTransport",
    "RecordingTransport",
    "LiveTransport",
    "request_hash",
    "stage1_query_objects",
    "stage2_target_objects",
    "stage3_diff_captions",
    "stage4_compose",
    "build_pipeline_triplets",
    "load_pairs",
]

log = logging.getLogger(__name__)

STAGE1_PROMPT = (
    "List the salient objects in the image. For each object give a short "
    "name and an ordered list of concrete visual descriptors. Respond only "
    'with JSON shaped as {"objects": [{"name": str, "descriptors": [str]}]}.'
)
STAGE2_PROMPT = (
    "You are given the object inventory of a first image and a second image. "
    "Produce the second image's inventory. If an object only appears in the "
    "second image, add it with status 'new' and fresh descriptors. If an "
    "object matches its listed appearance, copy its descriptors exactly and "
    "mark it 'adopted'. If the object is present but looks different, write "
    "new descriptors and mark it 're-described'. Respond only with JSON "
    'shaped as {"objects": [{"name": str, "descriptors": [str], "status": str}]}.'
)
STAGE3_PROMPT = (
    "Compare the two inventories and write one caption per changed object. "
    "Each caption must describe a single addition, removal, or modification "
    "and reference exactly one object. Respond only with JSON shaped as "
    '{"captions": [{"text": str, "object": str, "kind": str}]}.'
)


# ---------------------------------------------------------------------------
# response schemas
# ---------------------------------------------------------------------------


class _ObjectEntry(BaseModel):
    name: str = Field(min_length=1)
    descriptors: list[str] = Field(min_length=1)


class _Stage1Response(BaseModel):
    objects: list[_ObjectEntry]


class _Stage2Entry(_ObjectEntry):
    status: Literal["new", "adopted", "re-described"]


class _Stage2Response(BaseModel):
    objects: list[_Stage2Entry]


class DiffCaption(BaseModel):
    text: str = Field(min_length=1)
    object: str = Field(min_length=1)
    kind: Literal["addition", "removal", "modification"]


class _Stage3Response(BaseModel):
    captions: list[DiffCaption]


@dataclass(frozen=True)
class ObjectInfo:
    name: str
    descriptors: tuple[str, ...]
    status: str | None = None  # stage-2 tag: new | adopted | re-described


@dataclass
class ObjectList:
    objects: list[ObjectInfo]

    def names(self) -> list[str]:
        return [o.name for o in self.objects]

    def get(self, name: str) -> ObjectInfo | None:
        for o in self.objects:
            if o.name == name:
                return o
        return None

    def to_payload(self) -> list[dict]:
        return [{"name": o.name, "descriptors": list(o.descriptors)} for o in self.objects]


# ---------------------------------------------------------------------------
# transports
# ---------------------------------------------------------------------------


class Transport(Protocol):
    def send(self, request: dict) -> dict: ...


def request_hash(request: dict) -> str:
    canon = json.dumps(request, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()[:16]


class FixtureTransport:
    """Replays recorded responses keyed by the canonical request hash."""

    def __init__(self, fixtures_dir: str | Path):
        self.dir = Path(fixtures_dir)
        if not self.dir.is_dir():
            raise DataError(f"fixtures directory {self.dir} does not exist")
        self._responses: dict[str, dict] = {}
        for f in sorted(self.dir.glob("*.json")):
            try:
                payload = json.loads(f.read_text("utf-8"))
            except json.JSONDecodeError as e:
                raise DataError(f"fixture {f} is not valid JSON: {e}") from e
            if "request" not in payload or "response" not in payload:
                continue  # pairs.jsonl etc. live elsewhere; tolerate stray files
            self._responses[request_hash(payload["request"])] = payload["response"]
        if not self._responses:
            raise DataError(f"no usable fixtures under {self.dir}")

    def send(self, request: dict) -> dict:
        key = request_hash(request)
        if key not in self._responses:
            raise DataError(
                f"no fixture for request {key} "
                f"(stage={request.get('stage')}, image={request.get('image')})"
            )
        return self._responses[key]


class RecordingTransport:
    """Wraps another transport and writes each exchange as a fixture file."""

    def __init__(self, inner: Transport, out_dir: str | Path):
        self.inner = inner
        self.dir = Path(out_dir)
        self.dir.mkdir(parents=True, exist_ok=True)

    def send(self, request: dict) -> dict:
        response = self.inner.send(request)
        key = request_hash(request)
        (self.dir / f"{key}.json").write_text(
            json.dumps({"request": request, "response": response}, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
        return response


class LiveTransport:
    """JSON-over-HTTP gateway client; settings come from the environment."""

    ENV_URL = "CIRKIT_GATEWAY_URL"
    ENV_TOKEN = "CIRKIT_GATEWAY_TOKEN"
    ENV_MODEL = "CIRKIT_GATEWAY_MODEL"

    def __init__(self, url: str, token: str = "", model: str = "", retries: int = 2, timeout: float = 60.0):
        if not url:
            raise ConfigError("live transport needs a gateway url")
        self.url = url
        self.token = token
        self.model = model
        self.retries = retries
        self.timeout = timeout

    @classmethod
    def from_env(cls) -> "LiveTransport":
        url = os.environ.get(cls.ENV_URL, "")
        if not url:
            raise ConfigError(f"set {cls.ENV_URL} to use the live transport")
        return cls(
            url=url,
            token=os.environ.get(cls.ENV_TOKEN, ""),
            model=os.environ.get(cls.ENV_MODEL, ""),
        )

    def send(self, request: dict) -> dict:
        body = json.dumps({"model": self.model, **request}).encode("utf-8")
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        last_err: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                req = urllib.request.Request(self.url, data=body, headers=headers)
                with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                    return json.loads(resp.read().decode("utf-8"))
            except (urllib.error.URLError, json.JSONDecodeError, TimeoutError) as e:
                last_err = e
                if attempt < self.retries:
                    time.sleep(0.5 * (attempt + 1))
        raise DataError(f"gateway request failed after {self.retries + 1} attempts: {last_err}")


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def _validated(model_cls, raw: dict, stage: str):
    try:
        return model_cls.model_validate(raw)
    except ValidationError as e:
        raise DataError(f"{stage} response failed schema validation: {e}; raw payload: {raw!r}") from e


def _dedup_names(entries: list[_ObjectEntry]) -> list[_ObjectEntry]:
    seen: dict[str, int] = {}
    out = []
    for e in entries:
        if e.name in seen:
            seen[e.name] += 1
            fresh = f"{e.name}-{seen[e.name]}"
            log.warning("duplicate object name %r; renamed to %r", e.name, fresh)
            e = e.model_copy(update={"name": fresh})
        else:
            seen[e.name] = 1
        out.append(e)
    return out


def stage1_query_objects(image_ref: str, transport: Transport) -> ObjectList:
    """Inventory of the query image: names with ordered descriptor lists."""
    request = {"stage": "stage1", "image": image_ref, "prompt": STAGE1_PROMPT}
    parsed = _validated(_Stage1Response, transport.send(request), "stage1")
    if not parsed.objects:
        raise DataError(f"stage1 returned no objects for {image_ref!r}")
    entries = _dedup_names(parsed.objects)
    return ObjectList([ObjectInfo(e.name, tuple(e.descriptors)) for e in entries])


def stage2_target_objects(
    image_ref: str, query_list: ObjectList, transport: Transport
) -> ObjectList:
    """Target inventory with consistency tags, checked against the query list.

    adopted: name exists in the query list and descriptors are byte-equal;
    re-described: name exists but descriptors differ; new: name is absent.
    """
    request = {
        "stage": "stage2",
        "image": image_ref,
        "prompt": STAGE2_PROMPT,
        "query_objects": query_list.to_payload(),
    }
    parsed = _validated(_Stage2Response, transport.send(request), "stage2")
    entries = _dedup_names(list(parsed.objects))
    out = []
    for e in entries:
        src = query_list.get(e.name)
        if e.status == "adopted":
            if src is None:
                raise DataError(f"adopted object {e.name!r} is not in the query list")
            if tuple(e.descriptors) != src.descriptors:
                raise DataError(
                    f"adopted object {e.name!r} changed its descriptors; "
                    f"an adopted object must copy them exactly"
                )
        elif e.status == "re-described":
            if src is None:
                raise DataError(f"re-described object {e.name!r} is not in the query list")
            if tuple(e.descriptors) == src.descriptors:
                raise DataError(
                    f"re-described object {e.name!r} kept identical descriptors; tag it adopted"
                )
        elif src is not None:
            raise DataError(f"object {e.name!r} exists in the query list but is tagged new")
        out.append(ObjectInfo(e.name, tuple(e.descriptors), status=e.status))
    return ObjectList(out)


def changed_objects(query_list: ObjectList, target_list: ObjectList) -> dict[str, str]:
    """Name -> expected caption kind for every non-adopted object."""
    changes: dict[str, str] = {}
    target_names = set(target_list.names())
    for o in target_list.objects:
        if o.status == "new":
            changes[o.name] = "addition"
        elif o.status == "re-described":
            changes[o.name] = "modification"
    for o in query_list.objects:
        if o.name not in target_names:
            changes[o.name] = "removal"
    return changes


def stage3_diff_captions(
    query_list: ObjectList, target_list: ObjectList, transport: Transport
) -> list[DiffCaption]:
    """One single-edit caption per changed object; equal lists give none."""
    changes = changed_objects(query_list, target_list)
    if not changes:
        return []
    request = {
        "stage": "stage3",
        "prompt": STAGE3_PROMPT,
        "query_objects": query_list.to_payload(),
        "target_objects": [
            {"name": o.name, "descriptors": list(o.descriptors), "status": o.status}
            for o in target_list.objects
        ],
    }
    parsed = _validated(_Stage3Response, transport.send(request), "stage3")
    covered: set[str] = set()
    for cap in parsed.captions:
        if cap.object not in changes:
            raise DataError(f"caption references unchanged object {cap.object!r}")
        if cap.kind != changes[cap.object]:
            raise DataError(
                f"caption for {cap.object!r} has kind {cap.kind!r}, expected {changes[cap.object]!r}"
            )
        covered.add(cap.object)
    missing = set(changes) - covered
    if missing:
        raise DataError(f"no caption for changed objects: {sorted(missing)}")
    return list(parsed.captions)


def _join_captions(parts: tuple[str, ...]) -> str:
    head, *rest = parts
    pieces = [head] + [p[0].lower() + p[1:] for p in rest]
    return ", and ".join(pieces)


def stage4_compose(captions: list[str], arity: int, cap: int = 256) -> list[str]:
    """All combinations up to the given arity, joined with a fixed connective.

    Arity 1 returns the originals; arity 2 adds every pair in index order;
    the output list is truncated at `cap` entries.
    """
    if arity < 1:
        raise ConfigError("arity must be at least 1")
    out = list(captions)
    for r in range(2, arity + 1):
        for combo in itertools.combinations(captions, r):
            out.append(_join_captions(combo))
    return out[:cap]


def load_pairs(path: str | Path) -> list[tuple[str, str]]:
    """Read {query, target} image-ref pairs from a jsonl file."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"pairs file {path} does not exist")
    pairs = []
    for line in path.read_text("utf-8").splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        pairs.append((rec["query"], rec["target"]))
    if not pairs:
        raise DataError(f"pairs file {path} is empty")
    return pairs


def build_pipeline_triplets(
    pairs: list[tuple[str, str]],
    transport: Transport,
    arity: int = 2,
    np_limit: int = 10,
    vocab_buckets: int = 512,
) -> list[Triplet]:
    """Run all four stages over each image pair and emit dataset records.

    Modifier texts that yield no noun phrase under the chunker are dropped
    with a warning (validated-with-drop); synthetic-scene data never needs
    this, but LLM output can.
    """
    triplets = []
    for pair_no, (query_ref, target_ref) in enumerate(pairs):
        qlist = stage1_query_objects(query_ref, transport)
        tlist = stage2_target_objects(target_ref, qlist, transport)
        captions = stage3_diff_captions(qlist, tlist, transport)
        texts = stage4_compose([c.text for c in captions], arity=arity)
        for i, text in enumerate(texts):
            _, spans = parse_noun_phrases(text, limit=np_limit, vocab_buckets=vocab_buckets)
            if not spans:
                log.warning("dropping caption with no noun phrase: %r", text)
                continue
            triplets.append(
                Triplet(
                    query_id=query_ref,
                    target_id=target_ref,
                    text=text,
                    gt_ids=[target_ref],
                    subset_ids=[],
                    np_spans=list(spans),
                )
            )
    return triplets
