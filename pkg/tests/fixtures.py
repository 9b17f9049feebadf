"""Hand-built mini COCO corpus.

Every subject is an axis-aligned rectangle, so its true mask area is simply
``w * h``; tests use that number as the oracle instead of shoelace or RLE.
With alpha=2, beta=0.015 exactly images 2, 5 and 7 survive:

  img  size     subjects (w x h = area)                    salient
  1    100x100  20x20=400, 10x10=100                        1
  2    100x100  20x20=400, 15x20=300 (overlapping)          2  kept
  3    100x100  10x15=150 (ratio exactly .015), 20x20=400   1
  4    100x100  40x50=2000 crowd (RLE), 20x20=400           1  (2 with crowd)
  5    100x100  50x50=2500, 20x20=400 (compressed RLE), 10x10=100   2  kept
  6    100x100  none                                        0
  7    200x100  30x30=900, 30x30=900 (tie), 20x20=400, 15x20=300 (ratio .015)  3  kept
  8    100x100  16x10=160, 10x10=100                        1
  9    640x480  64x72=4608 (ratio exactly .015), 50x100=5000   1
  10   100x100  collinear triangle (area 0), 20x20=400      1
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from msi_forge.coco import rle_encode

CATEGORIES = [{"id": 1, "name": "person"}, {"id": 2, "name": "dog"}, {"id": 3, "name": "cat"}]

IMAGES = {
    1: (100, 100),
    2: (100, 100),
    3: (100, 100),
    4: (100, 100),
    5: (100, 100),
    6: (100, 100),
    7: (200, 100),
    8: (100, 100),
    9: (640, 480),
    10: (100, 100),
}

# (ann_id, image_id, category_id, x, y, w, h, form, iscrowd); form in poly|rle|rle_str|degenerate
SUBJECTS = [
    (101, 1, 1, 10, 10, 20, 20, "poly", 0),
    (102, 1, 2, 50, 50, 10, 10, "poly", 0),
    (201, 2, 1, 10, 10, 20, 20, "poly", 0),
    (202, 2, 2, 20, 15, 15, 20, "poly", 0),
    (301, 3, 1, 0, 0, 10, 15, "poly", 0),
    (302, 3, 3, 40, 40, 20, 20, "poly", 0),
    (401, 4, 1, 0, 0, 40, 50, "rle", 1),
    (402, 4, 2, 60, 60, 20, 20, "poly", 0),
    (501, 5, 1, 0, 0, 50, 50, "poly", 0),
    (502, 5, 3, 40, 40, 20, 20, "rle_str", 0),
    (503, 5, 2, 80, 80, 10, 10, "poly", 0),
    (701, 7, 2, 10, 10, 30, 30, "poly", 0),
    (702, 7, 3, 100, 10, 30, 30, "poly", 0),
    (703, 7, 1, 30, 30, 20, 20, "poly", 0),
    (704, 7, 1, 150, 50, 15, 20, "poly", 0),
    (801, 8, 1, 0, 0, 16, 10, "poly", 0),
    (802, 8, 2, 50, 50, 10, 10, "poly", 0),
    (901, 9, 1, 0, 0, 64, 72, "poly", 0),
    (902, 9, 2, 100, 100, 50, 100, "poly", 0),
    (1001, 10, 1, 0, 0, 0, 0, "degenerate", 0),
    (1002, 10, 3, 30, 30, 20, 20, "poly", 0),
]

EXPECTED_RETAINED = [2, 5, 7]


def true_area(sub) -> int:
    _, _, _, x, y, w, h, form, _ = sub
    return 0 if form == "degenerate" else w * h


def _segmentation(sub, img_w, img_h):
    _, _, _, x, y, w, h, form, _ = sub
    if form == "poly":
        return [[x, y, x + w, y, x + w, y + h, x, y + h]]
    if form == "degenerate":
        return [[0, 0, 5, 5, 10, 10]]
    mask = np.zeros((img_h, img_w), dtype=bool)
    mask[y:y + h, x:x + w] = True
    rle = rle_encode(mask, compressed=(form == "rle_str"))
    counts = rle.counts if rle.compressed else list(rle.counts)
    return {"counts": counts, "size": [img_h, img_w]}


def instances_doc() -> dict:
    images = [
        {"id": i, "width": w, "height": h, "file_name": f"{i:012d}.jpg"} for i, (w, h) in IMAGES.items()
    ]
    anns = []
    for sub in SUBJECTS:
        ann_id, image_id, cat, x, y, w, h, form, crowd = sub
        iw, ih = IMAGES[image_id]
        anns.append({
            "id": ann_id,
            "image_id": image_id,
            "category_id": cat,
            "bbox": [x, y, w, h] if form != "degenerate" else [0, 0, 10, 10],
            "segmentation": _segmentation(sub, iw, ih),
            "area": true_area(sub),
            "iscrowd": crowd,
        })
    return {"images": images, "annotations": anns, "categories": CATEGORIES}


def captions_doc() -> dict:
    images = [{"id": i, "width": w, "height": h, "file_name": f"{i:012d}.jpg"} for i, (w, h) in IMAGES.items()]
    anns = []
    cid = 9000
    for image_id in IMAGES:
        n = 5 if image_id == 5 else 2
        # ids deliberately emitted in descending order
        for k in reversed(range(n)):
            anns.append({"id": cid + 10 * image_id + k, "image_id": image_id, "caption": f"image {image_id} caption {k}"})
    return {"images": images, "annotations": anns}


POOL_COLOURS = {
    1: [(200, 10, 10), (220, 40, 40), (240, 70, 70)],
    2: [(10, 200, 10), (40, 220, 40), (70, 240, 70)],
    3: [(10, 10, 200), (40, 40, 220), (70, 70, 240)],
}


def write_corpus(root: Path) -> dict[str, Path]:
    """Write instances, captions, scene images, reference images and a pool manifest under ``root``."""
    root.mkdir(parents=True, exist_ok=True)
    paths = {
        "instances": root / "instances_mini.json",
        "captions": root / "captions_mini.json",
        "images": root / "images",
        "pool": root / "pool" / "pool.json",
    }
    paths["instances"].write_text(json.dumps(instances_doc()))
    paths["captions"].write_text(json.dumps(captions_doc()))
    paths["images"].mkdir(exist_ok=True)
    for i, (w, h) in IMAGES.items():
        Image.new("RGB", (w, h), (128, 128, 128)).save(paths["images"] / f"{i:012d}.jpg")
    (root / "pool" / "refs").mkdir(parents=True, exist_ok=True)
    cats = []
    for cid, colours in POOL_COLOURS.items():
        entries = []
        for j, colour in enumerate(colours):
            w, h = 12 + 4 * j, 9 + 2 * j
            arr = np.zeros((h, w, 3), dtype=np.uint8)
            arr[:] = colour
            arr[:, : w // 2, 0] = (np.arange(h)[:, None] * 17 % 256)  # some structure for the resampler
            rel = f"refs/c{cid}_{j}.png"
            Image.fromarray(arr).save(root / "pool" / rel)
            entries.append({"ref_id": f"c{cid}-{j}", "path": rel, "width": w, "height": h})
        cats.append({"category_id": cid, "entries": entries})
    paths["pool"].write_text(json.dumps({"categories": cats}, indent=1))
    return paths
