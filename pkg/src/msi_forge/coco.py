"""COCO annotation ingestion and segmentation areas.

Reads the ``instances_*.json`` and ``captions_*.json`` layouts of COCO 2017
into an immutable :class:`AnnotationIndex`. Segmentations are kept in their
original form (polygon list, uncompressed RLE, or compressed RLE) so that mask
areas can be recomputed on demand instead of trusting the stored ``area``.

RLE follows the COCO mask API conventions: run lengths are taken over the
column-major (Fortran order) scan of an ``h x w`` raster and always start with
a run of zeros, which may be empty. The compressed form packs those runs into
a printable string, 5 bits per character with a continuation bit, and stores
runs after the second as deltas against the run two positions earlier.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Literal, Sequence, Union

import numpy as np

from .errors import (
    DanglingReference,
    DegeneratePolygon,
    InvalidEncoding,
    MalformedDocument,
    MissingSegmentation,
    RunLengthMismatch,
    SchemaViolation,
)

log = logging.getLogger(__name__)

AreaMode = Literal["stored", "recomputed"]
Polygon = tuple[tuple[float, float], ...]
BBox = tuple[float, float, float, float]  # x, y, w, h with top-left origin


@dataclass(frozen=True)
class RLE:
    """Run-length encoded mask. ``counts`` is a tuple of ints or a packed string."""

    counts: Union[tuple[int, ...], str]
    height: int
    width: int

    @property
    def compressed(self) -> bool:
        return isinstance(self.counts, str)


Segmentation = Union[tuple[Polygon, ...], RLE]


@dataclass(frozen=True)
class ImageMeta:
    id: int
    width: int
    height: int
    file_name: str

    @property
    def area(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class InstanceAnnotation:
    id: int
    image_id: int
    category_id: int
    bbox: BBox
    segmentation: Segmentation | None
    stored_area: float
    iscrowd: bool = False


@dataclass(frozen=True)
class BinaryMask:
    width: int
    height: int
    bits: np.ndarray = field(compare=False, repr=False)  # bool, shape (height, width)

    @property
    def area(self) -> int:
        return int(np.count_nonzero(self.bits))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and np.array_equal(self.bits, other.bits)
        )

    __hash__ = None  # type: ignore[assignment]


@dataclass(frozen=True)
class AnnotationIndex:
    images: dict[int, ImageMeta]
    annotations: dict[int, tuple[InstanceAnnotation, ...]]
    categories: dict[int, str]
    captions: dict[int, tuple[str, ...]] = field(default_factory=dict)

    def annotations_for(self, image_id: int) -> tuple[InstanceAnnotation, ...]:
        return self.annotations.get(image_id, ())

    def captions_for(self, image_id: int) -> tuple[str, ...]:
        return self.captions.get(image_id, ())

    @property
    def n_annotations(self) -> int:
        return sum(len(v) for v in self.annotations.values())

    def with_captions(self, captions: dict[int, Sequence[str]]) -> "AnnotationIndex":
        return replace(self, captions={k: tuple(v) for k, v in captions.items()})


# ---------------------------------------------------------------------------
# parsing


def _load_json(path: str | Path) -> dict:
    try:
        with open(path, "rb") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise MalformedDocument(f"{path}: invalid JSON ({exc})") from exc
    except UnicodeDecodeError as exc:
        raise MalformedDocument(f"{path}: not UTF-8 ({exc})") from exc
    if not isinstance(doc, dict):
        raise MalformedDocument(f"{path}: top level must be an object")
    return doc


def _require(obj: dict, key: str, where: str):
    if not isinstance(obj, dict):
        raise SchemaViolation(f"{where}: expected an object, got {type(obj).__name__}")
    if key not in obj:
        raise SchemaViolation(f"{where}: missing required field '{key}'")
    return obj[key]


def _int_field(obj: dict, key: str, where: str) -> int:
    value = _require(obj, key, where)
    if isinstance(value, bool) or not isinstance(value, (int, float)) or int(value) != value:
        raise SchemaViolation(f"{where}: field '{key}' must be an integer, got {value!r}")
    return int(value)


def _parse_image(raw: dict, i: int) -> ImageMeta:
    where = f"images[{i}]"
    img = ImageMeta(
        id=_int_field(raw, "id", where),
        width=_int_field(raw, "width", where),
        height=_int_field(raw, "height", where),
        file_name=str(_require(raw, "file_name", where)),
    )
    if img.width <= 0 or img.height <= 0:
        raise SchemaViolation(f"{where}: degenerate image size {img.width}x{img.height}")
    return img


def _parse_segmentation(raw, where: str) -> Segmentation:
    if isinstance(raw, list):
        rings = []
        for j, flat in enumerate(raw):
            if not isinstance(flat, list) or not all(
                isinstance(v, (int, float)) and not isinstance(v, bool) for v in flat
            ):
                raise SchemaViolation(f"{where}.segmentation[{j}]: polygon must be a flat number list")
            if len(flat) % 2:
                raise SchemaViolation(f"{where}.segmentation[{j}]: odd coordinate count {len(flat)}")
            rings.append(tuple((float(flat[k]), float(flat[k + 1])) for k in range(0, len(flat), 2)))
        return tuple(rings)
    if isinstance(raw, dict):
        counts = _require(raw, "counts", f"{where}.segmentation")
        size = _require(raw, "size", f"{where}.segmentation")
        if not (isinstance(size, list) and len(size) == 2 and all(isinstance(v, int) for v in size)):
            raise SchemaViolation(f"{where}.segmentation: size must be [h, w], got {size!r}")
        h, w = size
        if isinstance(counts, str):
            return RLE(counts, h, w)
        if isinstance(counts, list) and all(isinstance(v, int) and not isinstance(v, bool) for v in counts):
            return RLE(tuple(counts), h, w)
        raise SchemaViolation(f"{where}.segmentation: counts must be an int list or a string")
    raise SchemaViolation(f"{where}: unsupported segmentation type {type(raw).__name__}")


def _clamp_bbox(bbox: Sequence[float], img: ImageMeta) -> BBox:
    x, y, w, h = (float(v) for v in bbox)
    x0 = min(max(x, 0.0), img.width)
    y0 = min(max(y, 0.0), img.height)
    x1 = min(max(x + max(w, 0.0), 0.0), img.width)
    y1 = min(max(y + max(h, 0.0), 0.0), img.height)
    return (x0, y0, x1 - x0, y1 - y0)


def _parse_annotation(raw: dict, i: int, images: dict[int, ImageMeta], categories: dict[int, str]):
    where = f"annotations[{i}]"
    ann_id = _int_field(raw, "id", where)
    image_id = _int_field(raw, "image_id", where)
    category_id = _int_field(raw, "category_id", where)
    bbox = _require(raw, "bbox", where)
    if not (isinstance(bbox, list) and len(bbox) == 4):
        raise SchemaViolation(f"{where}: bbox must be [x, y, w, h]")
    area = _require(raw, "area", where)
    if not isinstance(area, (int, float)) or isinstance(area, bool):
        raise SchemaViolation(f"{where}: area must be a number")
    if image_id not in images:
        raise DanglingReference(f"{where} (id {ann_id}): image_id {image_id} not in images")
    if category_id not in categories:
        raise DanglingReference(f"{where} (id {ann_id}): category_id {category_id} not in categories")
    seg = raw.get("segmentation")
    return InstanceAnnotation(
        id=ann_id,
        image_id=image_id,
        category_id=category_id,
        bbox=_clamp_bbox(bbox, images[image_id]),
        segmentation=None if seg is None or seg == [] else _parse_segmentation(seg, where),
        stored_area=float(area),
        iscrowd=bool(raw.get("iscrowd", 0)),
    )


def index_from_document(doc: dict, source: str = "<document>") -> AnnotationIndex:
    images: dict[int, ImageMeta] = {}
    for i, raw in enumerate(_require(doc, "images", source)):
        img = _parse_image(raw, i)
        if img.id in images:
            raise SchemaViolation(f"{source}: duplicate image id {img.id}")
        images[img.id] = img

    categories: dict[int, str] = {}
    for i, raw in enumerate(doc.get("categories", [])):
        cid = _int_field(raw, "id", f"categories[{i}]")
        if cid in categories:
            raise SchemaViolation(f"{source}: duplicate category id {cid}")
        categories[cid] = str(_require(raw, "name", f"categories[{i}]"))

    grouped: dict[int, list[InstanceAnnotation]] = {}
    seen: set[int] = set()
    for i, raw in enumerate(_require(doc, "annotations", source)):
        ann = _parse_annotation(raw, i, images, categories)
        if ann.id in seen:
            raise SchemaViolation(f"{source}: duplicate annotation id {ann.id}")
        seen.add(ann.id)
        grouped.setdefault(ann.image_id, []).append(ann)

    annotations = {k: tuple(sorted(v, key=lambda a: a.id)) for k, v in sorted(grouped.items())}
    return AnnotationIndex(images=dict(sorted(images.items())), annotations=annotations, categories=categories)


def parse_instances(path: str | Path) -> AnnotationIndex:
    """Parse a COCO instances file into a cross-linked index.

    Raises MalformedDocument on invalid JSON, SchemaViolation when a required
    field is missing or ids repeat, and DanglingReference when an annotation
    points at an unknown image or category.
    """
    index = index_from_document(_load_json(path), str(path))
    log.info("event=instances_parsed path=%s images=%d annotations=%d categories=%d",
             path, len(index.images), index.n_annotations, len(index.categories))
    return index


def parse_captions(path: str | Path) -> dict[int, tuple[str, ...]]:
    """Map image id to its captions, ordered by ascending caption id.

    Images listed in the document's ``images`` array but without captions map
    to an empty tuple.
    """
    doc = _load_json(path)
    source = str(path)
    out: dict[int, list[tuple[int, str]]] = {}
    for i, raw in enumerate(doc.get("images", [])):
        out.setdefault(_int_field(raw, "id", f"images[{i}]"), [])
    seen: set[int] = set()
    for i, raw in enumerate(_require(doc, "annotations", source)):
        where = f"annotations[{i}]"
        cap_id = _int_field(raw, "id", where)
        if cap_id in seen:
            raise SchemaViolation(f"{source}: duplicate caption id {cap_id}")
        seen.add(cap_id)
        text = _require(raw, "caption", where)
        if not isinstance(text, str):
            raise SchemaViolation(f"{where}: caption must be a string")
        out.setdefault(_int_field(raw, "image_id", where), []).append((cap_id, text.strip()))
    return {k: tuple(t for _, t in sorted(v)) for k, v in sorted(out.items())}


# ---------------------------------------------------------------------------
# geometry


def polygon_area(polygons: Sequence[Sequence[tuple[float, float]]], skip_degenerate: bool = False) -> float:
    """Sum of absolute shoelace areas. Self-intersections are not detected.

    Rings with fewer than three vertices raise DegeneratePolygon unless
    ``skip_degenerate`` is set, in which case they contribute their (zero)
    enclosed area.
    """
    total = 0.0
    for ring in polygons:
        if len(ring) < 3:
            if skip_degenerate:
                continue
            raise DegeneratePolygon(f"polygon needs >= 3 vertices, got {len(ring)}")
        pts = np.asarray(ring, dtype=np.float64)
        # shift to the first vertex to keep the cross products small
        x = pts[:, 0] - pts[0, 0]
        y = pts[:, 1] - pts[0, 1]
        total += abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))) / 2.0
    return total


def rle_string_to_counts(s: str) -> tuple[int, ...]:
    counts: list[int] = []
    p = 0
    n = len(s)
    while p < n:
        x = 0
        k = 0
        more = True
        while more:
            if p >= n:
                raise InvalidEncoding("compressed RLE ends inside a run")
            c = ord(s[p]) - 48
            if not 0 <= c < 64:
                raise InvalidEncoding(f"invalid character {s[p]!r} at offset {p}")
            x |= (c & 0x1F) << (5 * k)
            more = bool(c & 0x20)
            p += 1
            k += 1
            if not more and (c & 0x10):
                x |= -1 << (5 * k)
        if len(counts) > 2:
            x += counts[-2]
        counts.append(x)
    if any(c < 0 for c in counts):
        raise InvalidEncoding("compressed RLE decodes to a negative run length")
    return tuple(counts)


def rle_counts_to_string(counts: Sequence[int]) -> str:
    out = []
    for i, x in enumerate(counts):
        x = int(x)
        if i > 2:
            x -= int(counts[i - 2])
        more = True
        while more:
            c = x & 0x1F
            x >>= 5
            more = (x != -1) if (c & 0x10) else (x != 0)
            if more:
                c |= 0x20
            out.append(chr(c + 48))
    return "".join(out)


def rle_decode(rle: RLE) -> BinaryMask:
    counts = rle_string_to_counts(rle.counts) if rle.compressed else tuple(rle.counts)
    h, w = rle.height, rle.width
    if h < 0 or w < 0:
        raise InvalidEncoding(f"negative mask size {h}x{w}")
    if any(c < 0 for c in counts):
        raise InvalidEncoding("negative run length")
    if sum(counts) != h * w:
        raise RunLengthMismatch(f"runs sum to {sum(counts)}, expected {h}*{w}={h * w}")
    values = np.zeros(len(counts), dtype=bool)
    values[1::2] = True
    flat = np.repeat(values, counts)
    bits = flat.reshape(w, h).T.copy()
    return BinaryMask(width=w, height=h, bits=bits)


def rle_encode(mask: BinaryMask | np.ndarray, compressed: bool = False) -> RLE:
    bits = mask.bits if isinstance(mask, BinaryMask) else np.asarray(mask, dtype=bool)
    h, w = bits.shape
    flat = bits.T.reshape(-1)
    if flat.size == 0:
        counts: tuple[int, ...] = (0,)
    else:
        change = np.flatnonzero(flat[1:] != flat[:-1]) + 1
        bounds = np.concatenate(([0], change, [flat.size]))
        runs = np.diff(bounds).tolist()
        if flat[0]:
            runs.insert(0, 0)
        counts = tuple(int(r) for r in runs)
    return RLE(rle_counts_to_string(counts) if compressed else counts, h, w)


def annotation_area(ann: InstanceAnnotation, mode: AreaMode = "recomputed", skip_degenerate: bool = False) -> float:
    if mode == "stored":
        return ann.stored_area
    if mode != "recomputed":
        raise ValueError(f"unknown area mode {mode!r}")
    seg = ann.segmentation
    if seg is None:
        raise MissingSegmentation(f"annotation {ann.id} has no segmentation")
    if isinstance(seg, RLE):
        return float(rle_decode(seg).area)
    if skip_degenerate and any(len(ring) < 3 for ring in seg):
        log.warning("event=degenerate_ring_skipped annotation=%d image=%d", ann.id, ann.image_id)
    return polygon_area(seg, skip_degenerate=skip_degenerate)


def scene_area(ann: InstanceAnnotation, mode: AreaMode) -> float:
    """Area used for scene selection: never aborts a corpus-wide pass on one bad mask.

    Degenerate rings enclose nothing and are skipped; a missing segmentation
    in recomputed mode counts as zero area (the subject cannot be salient).
    """
    try:
        return annotation_area(ann, mode, skip_degenerate=True)
    except MissingSegmentation:
        log.warning("event=segmentation_missing annotation=%d image=%d", ann.id, ann.image_id)
        return 0.0


@dataclass(frozen=True)
class AreaDiscrepancy:
    annotation_id: int
    image_id: int
    stored: float
    recomputed: float

    @property
    def relative_deviation(self) -> float:
        if self.stored == 0:
            return 0.0 if self.recomputed == 0 else float("inf")
        return abs(self.stored - self.recomputed) / self.stored


def area_cross_check(ann: InstanceAnnotation) -> AreaDiscrepancy:
    return AreaDiscrepancy(ann.id, ann.image_id, ann.stored_area, annotation_area(ann, "recomputed", skip_degenerate=True))


def area_discrepancies(index: AnnotationIndex, tolerance: float = 0.02) -> list[AreaDiscrepancy]:
    """Annotations whose stored and recomputed areas differ by more than ``tolerance`` (relative)."""
    out = []
    for anns in index.annotations.values():
        for ann in anns:
            if ann.segmentation is None:
                continue
            d = area_cross_check(ann)
            if d.relative_deviation > tolerance:
                out.append(d)
    if out:
        log.warning("event=area_discrepancy count=%d tolerance=%g", len(out), tolerance)
    return out
