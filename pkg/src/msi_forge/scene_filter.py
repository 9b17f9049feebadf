"""Salient-subject and scene selection.

A subject is salient when its mask area covers strictly more than ``beta`` of
the image; a scene is kept when it holds at least ``alpha`` salient subjects.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Iterable, Sequence

from .coco import AnnotationIndex, BBox, ImageMeta, InstanceAnnotation, scene_area
from .config import FilterConfig


@dataclass(frozen=True)
class SalientSubject:
    annotation_id: int
    category_id: int
    area: float
    ratio: float
    bbox: BBox


@dataclass(frozen=True)
class SceneRecord:
    image: ImageMeta
    salient_subjects: tuple[SalientSubject, ...]

    @property
    def n_salient(self) -> int:
        return len(self.salient_subjects)

    def to_json(self) -> dict:
        return {
            "image": asdict(self.image),
            "n_salient": self.n_salient,
            "salient_subjects": [
                {**asdict(s), "bbox": list(s.bbox)} for s in self.salient_subjects
            ],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "SceneRecord":
        subjects = tuple(
            SalientSubject(
                annotation_id=int(s["annotation_id"]),
                category_id=int(s["category_id"]),
                area=float(s["area"]),
                ratio=float(s["ratio"]),
                bbox=tuple(float(v) for v in s["bbox"]),
            )
            for s in obj["salient_subjects"]
        )
        return cls(image=ImageMeta(**obj["image"]), salient_subjects=subjects)


def _saliency(ann: InstanceAnnotation, img: ImageMeta, cfg: FilterConfig) -> tuple[float, float, bool]:
    area = scene_area(ann, cfg.area_mode)
    ratio = area / (img.width * img.height)
    eligible = cfg.include_crowd or not ann.iscrowd
    return area, ratio, bool(eligible and ratio > cfg.beta)


def subject_saliency(ann: InstanceAnnotation, img: ImageMeta, cfg: FilterConfig) -> tuple[float, bool]:
    _, ratio, salient = _saliency(ann, img, cfg)
    return ratio, salient


def count_salient(img: ImageMeta, anns: Iterable[InstanceAnnotation], cfg: FilterConfig) -> SceneRecord:
    """Collect the salient subjects of one image, largest first (ties: lower id first)."""
    subjects = []
    for ann in anns:
        if ann.image_id != img.id:
            raise ValueError(f"annotation {ann.id} belongs to image {ann.image_id}, not {img.id}")
        area, ratio, salient = _saliency(ann, img, cfg)
        if salient:
            subjects.append(
                SalientSubject(
                    annotation_id=ann.id,
                    category_id=ann.category_id,
                    area=area,
                    ratio=ratio,
                    bbox=ann.bbox,
                )
            )
    subjects.sort(key=lambda s: (-s.area, s.annotation_id))
    return SceneRecord(image=img, salient_subjects=tuple(subjects))


def filter_scenes(index: AnnotationIndex, cfg: FilterConfig) -> list[SceneRecord]:
    kept = []
    for image_id in sorted(index.images):
        rec = count_salient(index.images[image_id], index.annotations_for(image_id), cfg)
        if rec.n_salient >= cfg.alpha:
            kept.append(rec)
    return kept


def write_scenes_jsonl(scenes: Sequence[SceneRecord], fh) -> None:
    for rec in scenes:
        fh.write(json.dumps(rec.to_json(), sort_keys=True, separators=(",", ":")) + "\n")


def read_scenes_jsonl(path) -> list[SceneRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(SceneRecord.from_json(json.loads(line)))
    return out
