"""Layout maps: reference images pasted onto a black canvas at subject boxes.

Placements are drawn in ascending ``order``; a later placement overwrites an
earlier one wherever their boxes overlap. Ranks come from mask areas, so the
largest subject sits at the back and the smallest ends up on top.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from PIL import Image, ImageDraw

from ._io import write_bytes_atomic
from .coco import BBox, ImageMeta
from .errors import ImageLoadFailure, ZeroSizeBox
from .reference_pool import ReferenceEntry
from .scene_filter import SalientSubject

PixelSource = Callable[[ReferenceEntry], np.ndarray]

# outline colours for annotated previews, cycled by order
PALETTE = [
    (255, 64, 64),
    (64, 255, 64),
    (64, 128, 255),
    (255, 255, 0),
    (255, 0, 255),
    (0, 255, 255),
    (255, 160, 0),
    (255, 255, 255),
]


@dataclass(frozen=True)
class Placement:
    ref: ReferenceEntry
    bbox: BBox
    order: int
    mask_area: float
    annotation_id: int = -1


@dataclass(frozen=True)
class LayoutMap:
    width: int
    height: int
    raster: np.ndarray  # uint8, (height, width, 3)
    placements: tuple[Placement, ...]


def round_half_away(v: float) -> int:
    return int(math.copysign(math.floor(abs(v) + 0.5), v))


def pixel_box(bbox: BBox, width: int, height: int) -> tuple[int, int, int, int]:
    """Snap an (x, y, w, h) box to the pixel grid and clamp it to the canvas.

    Corners are rounded half away from zero. Returns (x0, y0, x1, y1), exclusive
    on the right and bottom.
    """
    x, y, w, h = bbox
    x0 = min(max(round_half_away(x), 0), width)
    y0 = min(max(round_half_away(y), 0), height)
    x1 = min(max(round_half_away(x + w), 0), width)
    y1 = min(max(round_half_away(y + h), 0), height)
    return x0, y0, max(x1, x0), max(y1, y0)


def depth_rank(subjects: Sequence[SalientSubject]) -> list[int]:
    """Compositing rank per subject, aligned with the input list."""
    if not subjects:
        raise ValueError("depth_rank needs at least one subject")
    order = sorted(range(len(subjects)), key=lambda i: (-subjects[i].area, subjects[i].annotation_id))
    ranks = [0] * len(subjects)
    for rank, i in enumerate(order):
        ranks[i] = rank
    return ranks


def resize_rgb(img: np.ndarray, width: int, height: int) -> np.ndarray:
    if img.shape[1] == width and img.shape[0] == height:
        return img
    pil = Image.fromarray(img)
    return np.asarray(pil.resize((width, height), Image.Resampling.BILINEAR), dtype=np.uint8)


def _as_rgb(arr, ref: ReferenceEntry) -> np.ndarray:
    arr = np.asarray(arr)
    if arr.ndim == 2:
        arr = np.repeat(arr[:, :, None], 3, axis=2)
    if arr.ndim != 3 or arr.shape[2] not in (3, 4) or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ImageLoadFailure(f"reference {ref.ref_id}: unexpected pixel array shape {arr.shape}")
    return np.ascontiguousarray(arr[:, :, :3].astype(np.uint8, copy=False))


def compose_layout(
    scene: ImageMeta,
    placements: Sequence[Placement],
    pixel_source: PixelSource,
    resize_mode: str = "stretch",
) -> LayoutMap:
    ranks = sorted(p.order for p in placements)
    if ranks != list(range(len(placements))):
        raise ValueError(f"placement orders must be a permutation of 0..{len(placements) - 1}, got {ranks}")
    if resize_mode not in ("stretch", "letterbox"):
        raise ValueError(f"unknown resize mode {resize_mode!r}")

    canvas = np.zeros((scene.height, scene.width, 3), dtype=np.uint8)
    for p in sorted(placements, key=lambda p: p.order):
        x0, y0, x1, y1 = pixel_box(p.bbox, scene.width, scene.height)
        w, h = x1 - x0, y1 - y0
        if w == 0 or h == 0:
            raise ZeroSizeBox(f"placement {p.ref.ref_id} at {p.bbox} collapses to {w}x{h} pixels")
        try:
            src = pixel_source(p.ref)
        except ImageLoadFailure:
            raise
        except Exception as exc:
            raise ImageLoadFailure(f"cannot load reference {p.ref.ref_id} ({p.ref.image_path}): {exc}") from exc
        src = _as_rgb(src, p.ref)
        if resize_mode == "stretch":
            canvas[y0:y1, x0:x1] = resize_rgb(src, w, h)
        else:
            sh, sw = src.shape[:2]
            scale = min(w / sw, h / sh)
            nw = min(w, max(1, round_half_away(sw * scale)))
            nh = min(h, max(1, round_half_away(sh * scale)))
            ox, oy = x0 + (w - nw) // 2, y0 + (h - nh) // 2
            canvas[oy:oy + nh, ox:ox + nw] = resize_rgb(src, nw, nh)
    return LayoutMap(scene.width, scene.height, canvas, tuple(placements))


class ImageDirLoader:
    """Load reference pixels from ``root / entry.image_path`` as 8-bit RGB."""

    def __init__(self, root: str | Path):
        self.root = Path(root)

    def __call__(self, ref: ReferenceEntry) -> np.ndarray:
        path = self.root / ref.image_path
        try:
            with Image.open(path) as im:
                return np.asarray(im.convert("RGB"), dtype=np.uint8)
        except (OSError, ValueError) as exc:
            raise ImageLoadFailure(f"cannot load reference {ref.ref_id} from {path}: {exc}") from exc


def encode_png(raster: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(raster).save(buf, format="PNG")
    return buf.getvalue()


def annotate_raster(layout: LayoutMap) -> np.ndarray:
    """Copy of the raster with 1-px box outlines and ``o<order>`` labels burned in."""
    pil = Image.fromarray(layout.raster.copy())
    draw = ImageDraw.Draw(pil)
    for p in sorted(layout.placements, key=lambda p: p.order):
        x0, y0, x1, y1 = pixel_box(p.bbox, layout.width, layout.height)
        if x1 <= x0 or y1 <= y0:
            continue
        colour = PALETTE[p.order % len(PALETTE)]
        draw.rectangle([x0, y0, x1 - 1, y1 - 1], outline=colour, width=1)
        draw.text((x0 + 2, y0 + 1), f"o{p.order}", fill=colour)
    return np.asarray(pil, dtype=np.uint8)


def render_preview(layout: LayoutMap, out: str | Path, annotate: bool = False) -> None:
    raster = annotate_raster(layout) if annotate else layout.raster
    write_bytes_atomic(out, encode_png(raster))


def read_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"), dtype=np.uint8)
