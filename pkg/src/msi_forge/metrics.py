"""Layout and identity scores computed from detector and embedding files.

YOLO-L is the mean, over a sample's target boxes, of the IoU with the
detection assigned to each target (0 for unassigned targets); assignments are
made per category by maximum-total-IoU bipartite matching. YOLO-Subj is the
size of the multiset intersection between requested and detected categories
divided by the number requested. Both are averaged over samples. The
similarity scores (DINO-I, CLIP-I, CLIP-B) are mean cosine similarities over
paired embeddings.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import DimensionMismatch, EmptyCorpus, SampleIdMismatch, UnpairedId, ZeroVector, DataError

BBox = tuple[float, float, float, float]

YOLO_L_FORMULA = "per sample: mean over targets of IoU with the matched detection (unmatched = 0); corpus: mean over samples"
YOLO_SUBJ_FORMULA = "per sample: |requested ∩ detected(conf >= conf_min)| / |requested| on category multisets; corpus: mean over samples"
SIMILARITY_FORMULA = "mean cosine similarity over (reference, generated) embedding pairs joined by id"


@dataclass(frozen=True)
class Target:
    category_id: int
    bbox: BBox


@dataclass(frozen=True)
class Detection:
    category_id: int
    bbox: BBox
    confidence: float = 1.0


@dataclass(frozen=True)
class TargetLayout:
    sample_id: str
    targets: tuple[Target, ...]


@dataclass(frozen=True)
class DetectionSet:
    sample_id: str
    detections: tuple[Detection, ...]


@dataclass(frozen=True)
class Match:
    target_index: int
    detection_index: int
    iou: float


@dataclass
class ScoreReport:
    per_sample: dict[str, dict[str, float]] = field(default_factory=dict)
    means: dict[str, float] = field(default_factory=dict)
    matched: int = 0
    unmatched_targets: int = 0
    unmatched_detections: int = 0
    similarity_per_id: dict[str, dict[str, float]] = field(default_factory=dict)
    formulas: dict[str, str] = field(default_factory=dict)
    settings: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return asdict(self)


def iou(a: BBox, b: BBox) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    if min(aw, ah, bw, bh) < 0:
        raise ValueError(f"negative box size in {a} or {b}")
    iw = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    ih = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    if union <= 0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def _by_category(items) -> dict[int, list[int]]:
    out: dict[int, list[int]] = {}
    for i, it in enumerate(items):
        out.setdefault(it.category_id, []).append(i)
    return out


def match_detections(targets: TargetLayout, dets: DetectionSet, mode: str = "optimal") -> list[Match]:
    """Pair targets with same-category detections.

    ``optimal`` maximizes total IoU within each category; ``greedy`` walks
    detections by descending confidence and gives each the free target it
    overlaps most. Pairs with zero IoU are never reported.
    """
    tg = _by_category(targets.targets)
    dg = _by_category(dets.detections)
    matches: list[Match] = []
    for cid, t_idx in sorted(tg.items()):
        d_idx = dg.get(cid, [])
        if not d_idx:
            continue
        m = np.array([[iou(targets.targets[i].bbox, dets.detections[j].bbox) for j in d_idx] for i in t_idx])
        if mode == "optimal":
            # deferred: scipy.optimize dominates CLI start-up for every other subcommand
            from scipy.optimize import linear_sum_assignment

            rows, cols = linear_sum_assignment(m, maximize=True)
            pairs = zip(rows.tolist(), cols.tolist())
        elif mode == "greedy":
            pairs = []
            free = set(range(len(t_idx)))
            for c in sorted(range(len(d_idx)), key=lambda c: (-dets.detections[d_idx[c]].confidence, c)):
                best = max(free, key=lambda r: (m[r, c], -r), default=None)
                if best is not None and m[best, c] > 0:
                    pairs.append((best, c))
                    free.discard(best)
        else:
            raise ValueError(f"unknown matching mode {mode!r}")
        for r, c in pairs:
            if m[r, c] > 0:
                matches.append(Match(t_idx[r], d_idx[c], float(m[r, c])))
    matches.sort(key=lambda mt: mt.target_index)
    return matches


def _aligned(targets: Sequence[TargetLayout], dets: Sequence[DetectionSet]) -> list[tuple[TargetLayout, DetectionSet]]:
    if not targets:
        raise EmptyCorpus("no samples to score")
    t_map = {t.sample_id: t for t in targets}
    d_map = {d.sample_id: d for d in dets}
    if len(t_map) != len(targets) or len(d_map) != len(dets):
        raise SampleIdMismatch("duplicate sample ids")
    if set(t_map) != set(d_map):
        missing = sorted(set(t_map) ^ set(d_map))
        raise SampleIdMismatch(f"sample ids do not align one-to-one: {missing[:5]}")
    return [(t_map[k], d_map[k]) for k in sorted(t_map)]


def sample_yolo_l(targets: TargetLayout, dets: DetectionSet, mode: str = "optimal") -> float:
    if not targets.targets:
        raise DataError(f"sample {targets.sample_id} has no targets")
    return sum(m.iou for m in match_detections(targets, dets, mode)) / len(targets.targets)


def yolo_l(targets: Sequence[TargetLayout], dets: Sequence[DetectionSet], mode: str = "optimal") -> float:
    pairs = _aligned(targets, dets)
    return float(np.mean([sample_yolo_l(t, d, mode) for t, d in pairs]))


def sample_yolo_subj(requested: Iterable[int], dets: DetectionSet, conf_min: float = 0.5) -> float:
    req = Counter(requested)
    n = sum(req.values())
    if n == 0:
        raise DataError(f"sample {dets.sample_id} requests no subjects")
    got = Counter(d.category_id for d in dets.detections if d.confidence >= conf_min)
    return sum((req & got).values()) / n


def yolo_subj(
    requested: Mapping[str, Sequence[int]], dets: Sequence[DetectionSet], conf_min: float = 0.5
) -> float:
    if not 0.0 <= conf_min <= 1.0:
        raise ValueError(f"conf_min must lie in [0, 1], got {conf_min}")
    if not requested:
        raise EmptyCorpus("no samples to score")
    d_map = {d.sample_id: d for d in dets}
    if set(requested) != set(d_map):
        raise SampleIdMismatch("requested and detected sample ids differ")
    return float(np.mean([sample_yolo_subj(requested[k], d_map[k], conf_min) for k in sorted(requested)]))


def cosine_similarity(u, v) -> float:
    u = np.asarray(u, dtype=np.float64).reshape(-1)
    v = np.asarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise DimensionMismatch(f"dimensions differ: {u.size} vs {v.size}")
    nu, nv = float(np.linalg.norm(u)), float(np.linalg.norm(v))
    if nu == 0 or nv == 0:
        raise ZeroVector("cosine similarity of a zero vector")
    return max(-1.0, min(1.0, float(np.dot(u, v)) / (nu * nv)))


def pair_embeddings(ref: Mapping[str, np.ndarray], gen: Mapping[str, np.ndarray]) -> list[tuple[str, np.ndarray, np.ndarray]]:
    missing = sorted(set(ref) - set(gen))
    extra = sorted(set(gen) - set(ref))
    if missing or extra:
        raise UnpairedId(f"unpaired ids: missing generated {missing[:5]}, missing reference {extra[:5]}")
    return [(k, ref[k], gen[k]) for k in sorted(ref)]


def similarity_report(pairs: Sequence[tuple[str, np.ndarray, np.ndarray]], metric_name: str) -> tuple[float, dict[str, float]]:
    """Mean cosine similarity over ``(id, ref_vector, gen_vector)`` pairs, plus per-id values."""
    if metric_name not in ("dino_i", "clip_i", "clip_b"):
        raise ValueError(f"unknown similarity metric {metric_name!r}")
    if not pairs:
        raise EmptyCorpus(f"no pairs for {metric_name}")
    per = {k: cosine_similarity(r, g) for k, r, g in pairs}
    return float(np.mean(list(per.values()))), per


# ---------------------------------------------------------------------------
# file formats


def _read_jsonl(path: str | Path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{n}: invalid JSON ({exc})") from exc
    return out


def _bbox(raw, where: str) -> BBox:
    if not (isinstance(raw, list) and len(raw) == 4):
        raise DataError(f"{where}: bbox must be [x, y, w, h]")
    return tuple(float(v) for v in raw)


def read_targets(path: str | Path) -> list[TargetLayout]:
    out = []
    for rec in _read_jsonl(path):
        ts = tuple(Target(int(t["category_id"]), _bbox(t["bbox"], str(path))) for t in rec["targets"])
        out.append(TargetLayout(str(rec["sample_id"]), ts))
    return out


def read_detections(path: str | Path) -> list[DetectionSet]:
    out = []
    for rec in _read_jsonl(path):
        ds = []
        for d in rec["detections"]:
            conf = float(d.get("confidence", 1.0))
            if not 0.0 <= conf <= 1.0:
                raise DataError(f"{path}: confidence {conf} outside [0, 1]")
            ds.append(Detection(int(d["category_id"]), _bbox(d["bbox"], str(path)), conf))
        out.append(DetectionSet(str(rec["sample_id"]), tuple(ds)))
    return out


def read_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    dim = None
    for rec in _read_jsonl(path):
        key = str(rec["id"])
        vec = np.asarray(rec["vector"], dtype=np.float64)
        if vec.ndim != 1:
            raise DataError(f"{path}: vector for {key!r} must be flat")
        if dim is None:
            dim = vec.size
        elif vec.size != dim:
            raise DimensionMismatch(f"{path}: vector for {key!r} has dimension {vec.size}, expected {dim}")
        if not np.any(vec):
            raise ZeroVector(f"{path}: vector for {key!r} is zero")
        if key in out:
            raise DataError(f"{path}: duplicate id {key!r}")
        out[key] = vec
    return out


def targets_from_tuples(tuples) -> list[TargetLayout]:
    """Target layouts from assembled tuples (``MsiTuple`` objects), one per sample."""
    return [
        TargetLayout(t.sample_id, tuple(Target(s.category_id, tuple(s.bbox)) for s in t.subjects))
        for t in tuples
    ]


def targets_to_jsonl(layouts: Sequence[TargetLayout]) -> list[dict]:
    return [
        {"sample_id": t.sample_id, "targets": [{"category_id": x.category_id, "bbox": list(x.bbox)} for x in t.targets]}
        for t in layouts
    ]


def score(
    targets: Sequence[TargetLayout],
    dets: Sequence[DetectionSet],
    conf_min: float = 0.5,
    mode: str = "optimal",
    embeddings: Mapping[str, tuple[Mapping[str, np.ndarray], Mapping[str, np.ndarray]]] | None = None,
) -> ScoreReport:
    """Full report: YOLO-L and YOLO-Subj per sample and overall, plus any similarity metrics.

    ``embeddings`` maps a metric name (dino_i, clip_i, clip_b) to a pair of
    (reference, generated) id-to-vector maps.
    """
    pairs = _aligned(targets, dets)
    rep = ScoreReport(
        formulas={"yolo_l": YOLO_L_FORMULA, "yolo_subj": YOLO_SUBJ_FORMULA},
        settings={"conf_min": conf_min, "matching": mode},
    )
    for t, d in pairs:
        if not t.targets:
            raise DataError(f"sample {t.sample_id} has no targets")
        matches = match_detections(t, d, mode)
        rep.matched += len(matches)
        rep.unmatched_targets += len(t.targets) - len(matches)
        rep.unmatched_detections += len(d.detections) - len(matches)
        rep.per_sample[t.sample_id] = {
            "yolo_l": sum(m.iou for m in matches) / len(t.targets),
            "yolo_subj": sample_yolo_subj([x.category_id for x in t.targets], d, conf_min),
        }
    for name in ("yolo_l", "yolo_subj"):
        rep.means[name] = float(np.mean([v[name] for v in rep.per_sample.values()]))
    for name, (ref, gen) in (embeddings or {}).items():
        mean, per = similarity_report(pair_embeddings(ref, gen), name)
        rep.means[name] = mean
        rep.formulas[name] = SIMILARITY_FORMULA
        rep.similarity_per_id[name] = per
    return rep
