"""Training-tuple assembly and dataset manifests.

One tuple per retained scene: the sampled references, a caption, the layout
map raster and the untouched scene image. The dataset is written as
``manifest.jsonl`` (one tuple per line, sorted by image id) plus
``manifest.header.json``. Scene images are referenced in place; only layout
rasters are produced.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from . import __version__
from ._io import write_bytes_atomic, write_json_atomic, write_jsonl_atomic
from .coco import parse_captions, parse_instances
from .config import PipelineConfig
from .errors import BuildFailed, ConfigInvalid, EmptyCategory, ImageLoadFailure, MissingCaption, MsiForgeError
from .layout import ImageDirLoader, PixelSource, Placement, compose_layout, depth_rank, encode_png
from .reference_pool import ReferencePool, build_pool, derive_rng, sample_references
from .scene_filter import SceneRecord, filter_scenes

log = logging.getLogger(__name__)

MANIFEST = "manifest.jsonl"
HEADER = "manifest.header.json"
LAYOUT_DIR = "layouts"
# run settings kept out of headers so identical datasets serialize identically
_VOLATILE = ("workers", "log_level", "out")


@dataclass(frozen=True)
class SubjectEntry:
    annotation_id: int
    category_id: int
    ref_id: str
    ref_path: str
    bbox: tuple[float, float, float, float]
    order: int
    mask_area: float


@dataclass(frozen=True)
class MsiTuple:
    sample_id: str
    image_id: int
    scene_image: str
    width: int
    height: int
    caption: str
    layout_map: str
    subjects: tuple[SubjectEntry, ...]
    seed_trace: tuple[str, ...]
    split: str = "train"

    def to_json(self) -> dict:
        d = asdict(self)
        d["subjects"] = [{**asdict(s), "bbox": list(s.bbox)} for s in self.subjects]
        d["seed_trace"] = list(self.seed_trace)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "MsiTuple":
        subjects = tuple(
            SubjectEntry(**{**s, "bbox": tuple(float(v) for v in s["bbox"])}) for s in obj["subjects"]
        )
        return cls(**{**obj, "subjects": subjects, "seed_trace": tuple(obj["seed_trace"])})


@dataclass
class DatasetManifest:
    tuples: list[MsiTuple]
    config_snapshot: dict
    failures: list[dict] = field(default_factory=list)

    @property
    def counts(self) -> dict:
        cats = {s.category_id for t in self.tuples for s in t.subjects}
        return {
            "tuples": len(self.tuples),
            "scenes": len(self.tuples) + len(self.failures),
            "categories": len(cats),
            "subjects": sum(len(t.subjects) for t in self.tuples),
            "failures": len(self.failures),
        }

    def header(self) -> dict:
        return {"config": self.config_snapshot, "counts": self.counts, "failures": self.failures}


def sample_id_for(image_id: int) -> str:
    return f"{image_id:012d}"


def plan_placements(
    scene: SceneRecord, pool: ReferencePool, seed: int, reuse_references: bool = True
) -> tuple[list[Placement], list[str]]:
    """Sample a reference per salient subject and rank the subjects for compositing."""
    subjects = scene.salient_subjects
    if not subjects:
        raise ValueError(f"scene {scene.image.id} has no salient subjects")
    for s in subjects:
        if not pool.entries(s.category_id):
            raise EmptyCategory(f"scene {scene.image.id}: no pool entries for category {s.category_id}")
    picks = sample_references(
        pool, seed, scene.image.id, [(s.annotation_id, s.category_id) for s in subjects], replace=reuse_references
    )
    ranks = depth_rank(subjects)
    placements = [
        Placement(ref=ref, bbox=s.bbox, order=rank, mask_area=s.area, annotation_id=s.annotation_id)
        for s, (ref, _), rank in zip(subjects, picks, ranks)
    ]
    trace = [key for _, key in picks]
    return placements, list(dict.fromkeys(trace))


def choose_caption(captions: Sequence[str], strategy: str, seed: int, image_id: int) -> str:
    if not captions:
        raise MissingCaption(f"scene {image_id} has no captions")
    if strategy == "first":
        return captions[0]
    if strategy == "random":
        return captions[int(derive_rng(seed, image_id, "caption").integers(len(captions)))]
    raise ValueError(f"unknown caption strategy {strategy!r}")


def split_for(image_id: int, val_fraction: float) -> str:
    if val_fraction <= 0:
        return "train"
    h = int(hashlib.sha256(f"split:{image_id}".encode()).hexdigest()[:16], 16) / 2**64
    return "val" if h < val_fraction else "train"


def assemble_tuple(
    scene: SceneRecord,
    pool: ReferencePool,
    captions: Mapping[int, Sequence[str]],
    seed: int,
    pixel_source: PixelSource,
    out_dir: str | Path,
    caption_strategy: str = "first",
    resize_mode: str = "stretch",
    reuse_references: bool = True,
    val_fraction: float = 0.0,
    scene_root: str | Path | None = None,
) -> MsiTuple:
    img = scene.image
    if scene_root is not None and not (Path(scene_root) / img.file_name).is_file():
        raise ImageLoadFailure(f"scene image {img.file_name} not found under {scene_root}")
    caption = choose_caption(captions.get(img.id, ()), caption_strategy, seed, img.id)
    placements, trace = plan_placements(scene, pool, seed, reuse_references)
    layout = compose_layout(img, placements, pixel_source, resize_mode=resize_mode)
    rel = f"{LAYOUT_DIR}/{sample_id_for(img.id)}.png"
    write_bytes_atomic(Path(out_dir) / rel, encode_png(layout.raster))
    subjects = tuple(
        SubjectEntry(
            annotation_id=p.annotation_id,
            category_id=p.ref.category_id,
            ref_id=p.ref.ref_id,
            ref_path=p.ref.image_path,
            bbox=tuple(p.bbox),
            order=p.order,
            mask_area=p.mask_area,
        )
        for p in placements
    )
    return MsiTuple(
        sample_id=sample_id_for(img.id),
        image_id=img.id,
        scene_image=img.file_name,
        width=img.width,
        height=img.height,
        caption=caption,
        layout_map=rel,
        subjects=subjects,
        seed_trace=tuple(trace),
        split=split_for(img.id, val_fraction),
    )


def config_snapshot(cfg: PipelineConfig, pool: ReferencePool | None = None) -> dict:
    snap = {k: v for k, v in cfg.snapshot().items() if k not in _VOLATILE}
    snap["pool_digest"] = pool.manifest_digest if pool is not None else None
    snap["tool_version"] = __version__
    return snap


def validate_build_inputs(cfg: PipelineConfig) -> None:
    missing = []
    for name in ("instances", "captions", "pool", "images", "out"):
        if getattr(cfg, name) in (None, ""):
            missing.append(name)
    if missing:
        raise ConfigInvalid(f"build needs: {', '.join(missing)}")
    for name in ("instances", "captions", "pool"):
        if not Path(getattr(cfg, name)).is_file():
            raise ConfigInvalid(f"{name} file not found: {getattr(cfg, name)}")
    if not Path(cfg.images).is_dir():
        raise ConfigInvalid(f"images directory not found: {cfg.images}")
    if cfg.pool_root is not None and not Path(cfg.pool_root).is_dir():
        raise ConfigInvalid(f"pool root directory not found: {cfg.pool_root}")


def assemble_scenes(
    scenes: Sequence[SceneRecord],
    pool: ReferencePool,
    captions: Mapping[int, Sequence[str]],
    cfg: PipelineConfig,
    pixel_source: PixelSource,
    out_dir: str | Path,
) -> tuple[list[MsiTuple], list[dict]]:
    """Assemble every scene; failures are collected rather than raised."""

    def one(scene: SceneRecord):
        try:
            return assemble_tuple(
                scene, pool, captions, cfg.seed, pixel_source, out_dir,
                caption_strategy=cfg.caption_strategy,
                resize_mode=cfg.resize_mode,
                reuse_references=cfg.reuse_references,
                val_fraction=cfg.val_fraction,
                scene_root=cfg.images,
            )
        except MsiForgeError as exc:
            return {"image_id": scene.image.id, "error": type(exc).__name__, "message": str(exc)}

    ordered = sorted(scenes, key=lambda s: s.image.id)
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(one, ordered))
    else:
        results = [one(s) for s in ordered]
    tuples = [r for r in results if isinstance(r, MsiTuple)]
    failures = [r for r in results if isinstance(r, dict)]
    return tuples, failures


def write_manifest(manifest: DatasetManifest, out_dir: str | Path) -> None:
    out = Path(out_dir)
    write_jsonl_atomic(out / MANIFEST, (t.to_json() for t in manifest.tuples))
    write_json_atomic(out / HEADER, manifest.header())


def load_manifest(out_dir: str | Path) -> tuple[dict, list[MsiTuple]]:
    out = Path(out_dir)
    header = json.loads((out / HEADER).read_text(encoding="utf-8")) if (out / HEADER).exists() else {}
    tuples = []
    with open(out / MANIFEST, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                tuples.append(MsiTuple.from_json(json.loads(line)))
    return header, tuples


def build_dataset(cfg: PipelineConfig, pixel_source: PixelSource | None = None) -> DatasetManifest:
    """Run filter, sampling, compositing and manifest writing end to end.

    The run fails with BuildFailed when the share of failing scenes exceeds
    ``cfg.error_ceiling``; the per-scene error report is still written to
    ``build_errors.json`` in that case, but no manifest is.
    """
    validate_build_inputs(cfg)
    index = parse_instances(cfg.instances)
    captions = parse_captions(cfg.captions)
    pool = build_pool(cfg.pool, min_size=cfg.min_pool_size)
    if pixel_source is None:
        pixel_source = ImageDirLoader(cfg.pool_root if cfg.pool_root is not None else Path(cfg.pool).parent)

    scenes = filter_scenes(index, cfg.filter)
    log.info("event=scenes_filtered retained=%d images=%d", len(scenes), len(index.images))
    out = Path(cfg.out)
    tuples, failures = assemble_scenes(scenes, pool, captions, cfg, pixel_source, out)
    manifest = DatasetManifest(tuples=tuples, config_snapshot=config_snapshot(cfg, pool), failures=failures)

    if scenes and len(failures) / len(scenes) > cfg.error_ceiling:
        write_json_atomic(out / "build_errors.json", {"counts": manifest.counts, "failures": failures})
        raise BuildFailed(
            f"{len(failures)} of {len(scenes)} scenes failed (ceiling {cfg.error_ceiling:.2%}); "
            f"first: {failures[0]['error']}: {failures[0]['message']}",
            failures,
        )
    if not scenes:
        log.warning("event=empty_dataset reason=no_scene_retained")
    write_manifest(manifest, out)
    log.info("event=manifest_written out=%s tuples=%d failures=%d", out, len(tuples), len(failures))
    return manifest


def compose_scenes(
    scenes: Sequence[SceneRecord],
    pool: ReferencePool,
    pixel_source: PixelSource,
    out_dir: str | Path,
    seed: int,
    resize_mode: str = "stretch",
    reuse_references: bool = True,
    workers: int = 1,
) -> list[dict]:
    """Layouts only: write one PNG per scene and return placement records sorted by image id."""

    def one(scene: SceneRecord) -> dict:
        placements, trace = plan_placements(scene, pool, seed, reuse_references)
        layout = compose_layout(scene.image, placements, pixel_source, resize_mode=resize_mode)
        rel = f"{LAYOUT_DIR}/{sample_id_for(scene.image.id)}.png"
        write_bytes_atomic(Path(out_dir) / rel, encode_png(layout.raster))
        return {
            "sample_id": sample_id_for(scene.image.id),
            "image_id": scene.image.id,
            "layout_map": rel,
            "placements": [
                {
                    "annotation_id": p.annotation_id,
                    "category_id": p.ref.category_id,
                    "ref_id": p.ref.ref_id,
                    "bbox": list(p.bbox),
                    "order": p.order,
                    "mask_area": p.mask_area,
                }
                for p in placements
            ],
            "seed_trace": trace,
        }

    ordered = sorted(scenes, key=lambda s: s.image.id)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(one, ordered))
    return [one(s) for s in ordered]
