#!/usr/bin/env python3
"""Regenerate the offline fixture corpus under fixtures/good4cir/.

Canned responses for three image pairs are pushed through the real pipeline
stages behind a RecordingTransport, so fixture files are keyed by the exact
request hashes the pipeline produces, and the canned data is validated by
the same consistency rules as live output. Also writes pairs.jsonl and small
PPM renderings of each image ref so ingestion paths can be exercised.

Run from the repo root:  python3 scripts/make_fixtures.py
"""

import json
import shutil
import sys
from pathlib import Path

import numpy as np

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT / "src"))

from cirkit.good4cir import (  # noqa: E402
    RecordingTransport,
    stage1_query_objects,
    stage2_target_objects,
    stage3_diff_captions,
)

OUT = ROOT / "fixtures" / "good4cir"

HOTEL_Q = [
    {"name": "bed", "descriptors": ["queen size", "white duvet"]},
    {"name": "bedspread", "descriptors": ["teal", "diamond quilting"]},
    {"name": "nightstand", "descriptors": ["dark walnut", "two drawers"]},
    {"name": "lamp", "descriptors": ["brushed nickel", "drum shade"]},
    {"name": "armchair", "descriptors": ["beige upholstery", "wooden legs"]},
    {"name": "painting", "descriptors": ["coastal landscape", "gold frame"]},
    {"name": "curtain", "descriptors": ["floor length", "gray linen"]},
]
HOTEL_T = [
    {"name": "bed", "descriptors": ["queen size", "white duvet"], "status": "adopted"},
    {"name": "bedspread", "descriptors": ["burnt orange", "diamond quilting"], "status": "re-described"},
    {"name": "nightstand", "descriptors": ["dark walnut", "two drawers"], "status": "adopted"},
    {"name": "lamp", "descriptors": ["brushed nickel", "drum shade"], "status": "adopted"},
    {"name": "armchair", "descriptors": ["beige upholstery", "wooden legs"], "status": "adopted"},
    {"name": "painting", "descriptors": ["coastal landscape", "gold frame"], "status": "adopted"},
    {"name": "curtain", "descriptors": ["floor length", "gray linen"], "status": "adopted"},
    {"name": "floor lamp", "descriptors": ["tripod base", "linen shade"], "status": "new"},
]
HOTEL_CAPS = [
    {
        "text": "Add a floor lamp with a tripod base and a linen shade beside the armchair",
        "object": "floor lamp",
        "kind": "addition",
    },
    {
        "text": "Change the bedspread from teal to burnt orange",
        "object": "bedspread",
        "kind": "modification",
    },
]

OFFICE_Q = [
    {"name": "monitors", "descriptors": ["left and right pair", "black bezels"]},
    {"name": "laptop", "descriptors": ["silver body", "closed lid"]},
    {"name": "desk", "descriptors": ["white laminate", "cable tray"]},
    {"name": "chair", "descriptors": ["mesh back", "black frame"]},
    {"name": "keyboard", "descriptors": ["wireless", "compact layout"]},
]
OFFICE_T = [
    {
        "name": "laptop",
        "descriptors": ["2-in-1 convertible", "visible hinge", "silver frame"],
        "status": "re-described",
    },
    {"name": "desk", "descriptors": ["white laminate", "cable tray"], "status": "adopted"},
    {"name": "chair", "descriptors": ["mesh back", "black frame"], "status": "adopted"},
    {"name": "keyboard", "descriptors": ["wireless", "compact layout"], "status": "adopted"},
]
OFFICE_CAPS = [
    {"text": "Remove the left and right monitors", "object": "monitors", "kind": "removal"},
    {
        "text": "Replace the laptop with a 2-in-1 convertible featuring a visible hinge and silver frame",
        "object": "laptop",
        "kind": "modification",
    },
]

PATIO_Q = [
    {"name": "table", "descriptors": ["round glass top", "metal frame"]},
    {"name": "chairs", "descriptors": ["four wicker", "cream cushions"]},
    {"name": "umbrella", "descriptors": ["cantilever arm", "olive canopy"]},
    {"name": "planter", "descriptors": ["terracotta", "boxwood shrub"]},
]
PATIO_T = [{**o, "status": "adopted"} for o in PATIO_Q]

PAIRS = [
    ("hotel_room_01", "hotel_room_02"),
    ("office_desk_01", "office_desk_02"),
    ("garden_patio_01", "garden_patio_02"),
]


class CannedGateway:
    """Looks canned responses up by stage and image (or object inventory)."""

    def __init__(self):
        self.by_key = {
            ("stage1", "hotel_room_01"): {"objects": HOTEL_Q},
            ("stage2", "hotel_room_02"): {"objects": HOTEL_T},
            ("stage1", "office_desk_01"): {"objects": OFFICE_Q},
            ("stage2", "office_desk_02"): {"objects": OFFICE_T},
            ("stage1", "garden_patio_01"): {"objects": PATIO_Q},
            ("stage2", "garden_patio_02"): {"objects": PATIO_T},
            ("stage3", ("bedspread", "floor lamp")): {"captions": HOTEL_CAPS},
            ("stage3", ("laptop", "monitors")): {"captions": OFFICE_CAPS},
        }

    def send(self, request):
        stage = request["stage"]
        if stage in ("stage1", "stage2"):
            key = (stage, request["image"])
        else:
            changed = {o["name"] for o in request["target_objects"] if o["status"] != "adopted"}
            changed |= {o["name"] for o in request["query_objects"]} - {
                o["name"] for o in request["target_objects"]
            }
            key = (stage, tuple(sorted(changed)))
        return self.by_key[key]


def write_ppm(path: Path, seed: int) -> None:
    """A deterministic 16x16 color-block image for the given ref."""
    rng = np.random.default_rng(seed)
    palette = np.array(
        [(0, 0, 0), (255, 255, 255), (220, 30, 30), (30, 180, 30), (30, 60, 220), (235, 220, 40)]
    )
    blocks = rng.integers(0, len(palette), size=(4, 4))
    pixels = palette[np.repeat(np.repeat(blocks, 4, axis=0), 4, axis=1)].astype(np.uint8)
    path.write_bytes(b"P6\n16 16\n255\n" + pixels.tobytes())


def main() -> None:
    if OUT.exists():
        shutil.rmtree(OUT)
    OUT.mkdir(parents=True)
    transport = RecordingTransport(CannedGateway(), OUT)
    for query_ref, target_ref in PAIRS:
        qlist = stage1_query_objects(query_ref, transport)
        tlist = stage2_target_objects(target_ref, qlist, transport)
        stage3_diff_captions(qlist, tlist, transport)
    with open(OUT / "pairs.jsonl", "w", encoding="utf-8") as f:
        for q, t in PAIRS:
            f.write(json.dumps({"query": q, "target": t}) + "\n")
    images = OUT / "images"
    images.mkdir()
    for i, ref in enumerate(r for pair in PAIRS for r in pair):
        write_ppm(images / f"{ref}.ppm", seed=100 + i)
    n = len(list(OUT.glob("*.json")))
    print(f"wrote {n} fixture files plus pairs.jsonl and images/ under {OUT}")


if __name__ == "__main__":
    main()
