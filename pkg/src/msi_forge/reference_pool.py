"""Per-category exemplar pools and seeded uniform sampling.

Randomness is drawn from independent streams keyed by (global seed, *labels),
so any subject's reference can be reproduced without replaying the draws made
for other subjects or scenes.
"""

from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import EmptyCategory, MalformedManifest

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ReferenceEntry:
    ref_id: str
    category_id: int
    image_path: str
    width: int
    height: int


@dataclass(frozen=True)
class ReferencePool:
    pools: dict[int, tuple[ReferenceEntry, ...]]
    manifest_digest: str

    def entries(self, category_id: int) -> tuple[ReferenceEntry, ...]:
        return self.pools.get(category_id, ())

    def lookup(self, ref_id: str) -> ReferenceEntry:
        for entries in self.pools.values():
            for e in entries:
                if e.ref_id == ref_id:
                    return e
        raise KeyError(ref_id)

    @property
    def size(self) -> int:
        return sum(len(v) for v in self.pools.values())


def stream_key(seed: int, *labels) -> str:
    """Stable hex id for the stream derived from ``seed`` and ``labels``."""
    text = ":".join(str(x) for x in (seed, *labels))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:32]


def derive_rng(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(stream_key(seed, *labels), 16)))


def _entry(raw, category_id: int, where: str) -> ReferenceEntry:
    if not isinstance(raw, dict):
        raise MalformedManifest(f"{where}: entry must be an object")
    try:
        entry = ReferenceEntry(
            ref_id=str(raw["ref_id"]),
            category_id=category_id,
            image_path=str(raw["path"]),
            width=int(raw["width"]),
            height=int(raw["height"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedManifest(f"{where}: bad or missing field ({exc})") from exc
    if entry.width <= 0 or entry.height <= 0:
        raise MalformedManifest(f"{where}: non-positive size {entry.width}x{entry.height}")
    return entry


def pool_from_bytes(data: bytes, source: str = "<manifest>", min_size: int = 30) -> ReferencePool:
    try:
        doc = json.loads(data)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise MalformedManifest(f"{source}: invalid JSON ({exc})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("categories"), list):
        raise MalformedManifest(f"{source}: expected an object with a 'categories' list")

    pools: dict[int, tuple[ReferenceEntry, ...]] = {}
    seen_ids: set[str] = set()
    for i, cat in enumerate(doc["categories"]):
        where = f"{source}: categories[{i}]"
        if not isinstance(cat, dict) or "category_id" not in cat or not isinstance(cat.get("entries"), list):
            raise MalformedManifest(f"{where}: needs 'category_id' and an 'entries' list")
        try:
            cid = int(cat["category_id"])
        except (TypeError, ValueError) as exc:
            raise MalformedManifest(f"{where}: bad category_id") from exc
        if cid in pools:
            raise MalformedManifest(f"{where}: category {cid} listed twice")
        entries = tuple(_entry(raw, cid, f"{where}.entries[{j}]") for j, raw in enumerate(cat["entries"]))
        for e in entries:
            if e.ref_id in seen_ids:
                raise MalformedManifest(f"{where}: duplicate ref_id {e.ref_id!r}")
            seen_ids.add(e.ref_id)
        if len(entries) < min_size:
            log.warning("event=pool_small category_id=%d entries=%d minimum=%d", cid, len(entries), min_size)
        pools[cid] = entries

    return ReferencePool(pools=pools, manifest_digest=hashlib.sha256(data).hexdigest())


def build_pool(manifest_path: str | Path, min_size: int = 30) -> ReferencePool:
    try:
        data = Path(manifest_path).read_bytes()
    except OSError as exc:
        raise MalformedManifest(f"cannot read pool manifest {manifest_path}: {exc}") from exc
    pool = pool_from_bytes(data, str(manifest_path), min_size=min_size)
    log.info("event=pool_built path=%s categories=%d entries=%d digest=%s",
             manifest_path, len(pool.pools), pool.size, pool.manifest_digest)
    return pool


def sample_reference(pool: ReferencePool, category_id: int, rng: np.random.Generator) -> ReferenceEntry:
    entries = pool.entries(category_id)
    if not entries:
        raise EmptyCategory(f"no reference entries for category {category_id}")
    return entries[int(rng.integers(len(entries)))]


def sample_references(
    pool: ReferencePool,
    seed: int,
    image_id: int,
    subjects: Sequence[tuple[int, int]],
    replace: bool = True,
) -> list[tuple[ReferenceEntry, str]]:
    """Pick one reference per ``(annotation_id, category_id)`` subject.

    With ``replace`` each subject uses its own stream, keyed by annotation id.
    Without it, same-category subjects in a scene draw distinct entries from a
    per-(scene, category) shuffle; subjects are served in ascending annotation
    id order so the outcome does not depend on the order of ``subjects``.
    Returns ``(entry, stream_key)`` pairs aligned with ``subjects``.
    """
    if replace:
        return [
            (sample_reference(pool, cid, derive_rng(seed, image_id, ann_id)), stream_key(seed, image_id, ann_id))
            for ann_id, cid in subjects
        ]

    by_cat: dict[int, list[int]] = {}
    for ann_id, cid in subjects:
        by_cat.setdefault(cid, []).append(ann_id)
    chosen: dict[int, tuple[ReferenceEntry, str]] = {}
    for cid, ann_ids in by_cat.items():
        entries = pool.entries(cid)
        if not entries:
            raise EmptyCategory(f"no reference entries for category {cid}")
        if len(ann_ids) > len(entries):
            raise EmptyCategory(
                f"category {cid} has {len(entries)} entries, scene {image_id} needs {len(ann_ids)} distinct"
            )
        key = stream_key(seed, image_id, "category", cid)
        order = derive_rng(seed, image_id, "category", cid).permutation(len(entries))
        for pos, ann_id in enumerate(sorted(ann_ids)):
            chosen[ann_id] = (entries[int(order[pos])], key)
    return [chosen[ann_id] for ann_id, _ in subjects]
