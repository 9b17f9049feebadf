"""``msi-forge`` command line entry point.

Settings resolve as: command-line flag, then ``--config`` file value, then the
built-in default. Failures print a one-line JSON error report on stderr and
exit with 2 (configuration), 3 (input data) or 4 (internal error).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

from . import __version__
from ._io import write_bytes_atomic, write_json_atomic, write_jsonl_atomic
from .assemble import MANIFEST, build_dataset, compose_scenes, config_snapshot, load_manifest
from .coco import area_discrepancies, parse_instances
from .config import (
    DstConfig,
    FilterConfig,
    PipelineConfig,
    load_config_file,
    pipeline_config_from_dict,
)
from .diffusion import build_noise_schedule, schedule_csv
from .errors import ConfigInvalid, MsiForgeError
from .layout import ImageDirLoader, LayoutMap, Placement, read_png, render_preview
from .metrics import (
    read_detections,
    read_embeddings,
    read_targets,
    score,
    targets_from_tuples,
    targets_to_jsonl,
)
from .reference_pool import ReferenceEntry, build_pool
from .scene_filter import filter_scenes, read_scenes_jsonl
from .schedule import export_schedule, schedule_to_json

log = logging.getLogger("msi_forge")

# flag dest -> (config section or None, config key)
_FLAG_MAP = {
    "instances": (None, "instances"),
    "captions": (None, "captions"),
    "images": (None, "images"),
    "pool": (None, "pool"),
    "pool_root": (None, "pool_root"),
    "out": (None, "out"),
    "seed": (None, "seed"),
    "workers": (None, "workers"),
    "log_level": (None, "log_level"),
    "caption_strategy": (None, "caption_strategy"),
    "resize_mode": (None, "resize_mode"),
    "reuse_references": (None, "reuse_references"),
    "min_pool_size": (None, "min_pool_size"),
    "error_ceiling": (None, "error_ceiling"),
    "val_fraction": (None, "val_fraction"),
    "alpha": ("filter", "alpha"),
    "beta": ("filter", "beta"),
    "area_mode": ("filter", "area_mode"),
    "include_crowd": ("filter", "include_crowd"),
    "e1": ("dst", "e1"),
    "e2": ("dst", "e2"),
    "eta1": ("dst", "eta1"),
    "eta2": ("dst", "eta2"),
    "kmin": ("clsq", "k_min"),
    "kmax": ("clsq", "k_max"),
    "gamma": ("clsq", "gamma"),
    "epochs": ("clsq", "total_epochs"),
}


def resolve_config(args: argparse.Namespace, require_alpha: bool = False) -> PipelineConfig:
    data: dict[str, Any] = load_config_file(args.config) if getattr(args, "config", None) else {}
    data = {str(k).replace("-", "_"): v for k, v in data.items()}
    for section in ("filter", "dst", "clsq"):
        if section in data and isinstance(data[section], dict):
            data[section] = {str(k).replace("-", "_"): v for k, v in data[section].items()}
    for dest, (section, key) in _FLAG_MAP.items():
        value = getattr(args, dest, None)
        if value is None:
            continue
        if section is None:
            data[key] = value
        else:
            data.setdefault(section, {})[key] = value
    # the curriculum length follows the dual-stage total unless set explicitly
    dst = data.get("dst", {})
    if "total_epochs" not in data.get("clsq", {}) and ("e1" in dst or "e2" in dst):
        e1 = dst.get("e1", DstConfig.e1)
        e2 = dst.get("e2", DstConfig.e2)
        data.setdefault("clsq", {})["total_epochs"] = e1 + e2
    if "alpha" not in data.get("filter", {}):
        if require_alpha:
            raise ConfigInvalid("alpha is required (flag --alpha or config filter.alpha)")
        if "filter" in data:
            data["filter"]["alpha"] = FilterConfig(alpha=2).alpha
    return pipeline_config_from_dict(data)


def _emit(text: str, out: str | None, cfg: PipelineConfig | None = None, **extra) -> None:
    """Write to ``out`` (plus a ``<stem>.header.json`` config sidecar) or to stdout."""
    if out:
        write_bytes_atomic(out, text.encode("utf-8"))
        if cfg is not None:
            _write_sidecar(out, cfg, **extra)
    else:
        sys.stdout.write(text)


def _write_sidecar(out: str | Path, cfg: PipelineConfig, **extra) -> None:
    out = Path(out)
    write_json_atomic(out.with_name(out.stem + ".header.json"),
                      {"config": config_snapshot(cfg), **extra})


# ---------------------------------------------------------------------------
# subcommands


def cmd_filter(args, cfg: PipelineConfig) -> int:
    if not cfg.instances:
        raise ConfigInvalid("filter needs --instances")
    if not Path(cfg.instances).is_file():
        raise ConfigInvalid(f"instances file not found: {cfg.instances}")
    out = Path(args.out or "scenes.jsonl")
    index = parse_instances(cfg.instances)
    scenes = filter_scenes(index, cfg.filter)
    write_jsonl_atomic(out, (s.to_json() for s in scenes))
    summary = {
        "event": "filter_summary",
        "images": len(index.images),
        "annotations": index.n_annotations,
        "retained": len(scenes),
        "subjects": sum(s.n_salient for s in scenes),
        "config": config_snapshot(cfg),
    }
    if cfg.filter.area_mode == "recomputed":
        disc = area_discrepancies(index)
        disc_path = out.with_name(out.stem + ".area_discrepancies.jsonl")
        write_jsonl_atomic(
            disc_path,
            (
                {
                    "annotation_id": d.annotation_id,
                    "image_id": d.image_id,
                    "stored": d.stored,
                    "recomputed": d.recomputed,
                    "relative_deviation": d.relative_deviation,
                }
                for d in disc
            ),
        )
        summary["area_discrepancies"] = len(disc)
        summary["area_discrepancies_path"] = str(disc_path)
    write_json_atomic(out.with_name(out.stem + ".header.json"), summary)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_pool_validate(args, cfg: PipelineConfig) -> int:
    manifest = args.manifest or cfg.pool
    if not manifest:
        raise ConfigInvalid("pool validate needs --manifest")
    pool = build_pool(manifest, min_size=cfg.min_pool_size)
    small = {cid: len(v) for cid, v in sorted(pool.pools.items()) if len(v) < cfg.min_pool_size}
    print(json.dumps({
        "event": "pool_valid",
        "digest": pool.manifest_digest,
        "categories": len(pool.pools),
        "entries": pool.size,
        "below_minimum": small,
    }, sort_keys=True))
    return 0


def cmd_compose(args, cfg: PipelineConfig) -> int:
    for name in ("pool", "out"):
        if not getattr(cfg, name):
            raise ConfigInvalid(f"compose needs --{name}")
    if not Path(args.scenes).is_file():
        raise ConfigInvalid(f"scenes file not found: {args.scenes}")
    if not Path(cfg.pool).is_file():
        raise ConfigInvalid(f"pool manifest not found: {cfg.pool}")

    pool = build_pool(cfg.pool, min_size=cfg.min_pool_size)
    root = cfg.pool_root if cfg.pool_root is not None else Path(cfg.pool).parent
    records = compose_scenes(
        read_scenes_jsonl(args.scenes), pool, ImageDirLoader(root), cfg.out, cfg.seed,
        resize_mode=cfg.resize_mode, reuse_references=cfg.reuse_references, workers=cfg.workers,
    )
    write_jsonl_atomic(Path(cfg.out) / "layouts.jsonl", records)
    write_json_atomic(Path(cfg.out) / "layouts.header.json",
                      {"config": config_snapshot(cfg, pool), "counts": {"layouts": len(records)}})
    if args.annotate:
        for rec in records:
            _preview_from_record(rec, pool, Path(cfg.out))
    print(json.dumps({"event": "compose_summary", "layouts": len(records)}, sort_keys=True))
    return 0


def _preview_from_record(rec: dict, pool, out_dir: Path) -> None:
    raster = read_png(out_dir / rec["layout_map"])
    placements = tuple(
        Placement(
            ref=pool.lookup(p["ref_id"]),
            bbox=tuple(p["bbox"]), order=p["order"], mask_area=p["mask_area"], annotation_id=p["annotation_id"],
        )
        for p in rec["placements"]
    )
    layout = LayoutMap(raster.shape[1], raster.shape[0], raster, placements)
    render_preview(layout, out_dir / "previews" / f"{rec['sample_id']}.png", annotate=True)


def cmd_build(args, cfg: PipelineConfig) -> int:
    manifest = build_dataset(cfg)
    print(json.dumps({"event": "build_summary", **manifest.counts, "out": cfg.out}, sort_keys=True))
    return 0


def cmd_schedule(args, cfg: PipelineConfig) -> int:
    plans = export_schedule(cfg.dst, cfg.clsq)
    _emit(json.dumps(schedule_to_json(plans)) + "\n", args.out, cfg)
    return 0


def cmd_noise_schedule(args, cfg: PipelineConfig) -> int:
    sched = build_noise_schedule(args.T, args.beta_start, args.beta_end)
    _emit(schedule_csv(sched), args.out, cfg,
          noise_schedule={"T": args.T, "beta_start": args.beta_start, "beta_end": args.beta_end})
    return 0


def _manifest_dir(path: str) -> Path:
    p = Path(path)
    return p if p.is_dir() else p.parent


def cmd_targets(args, cfg: PipelineConfig) -> int:
    d = _manifest_dir(args.manifest)
    if not (d / MANIFEST).is_file():
        raise ConfigInvalid(f"no {MANIFEST} found at {args.manifest}")
    _, tuples = load_manifest(d)
    lines = [json.dumps(r, sort_keys=True, separators=(",", ":")) for r in targets_to_jsonl(targets_from_tuples(tuples))]
    _emit("".join(line + "\n" for line in lines), args.out, cfg, manifest=str(args.manifest))
    return 0


def cmd_score(args, cfg: PipelineConfig) -> int:
    for p in (args.targets, args.detections):
        if not Path(p).is_file():
            raise ConfigInvalid(f"file not found: {p}")
    embeddings = None
    if bool(args.embeddings_ref) != bool(args.embeddings_gen):
        raise ConfigInvalid("--embeddings-ref and --embeddings-gen must be given together")
    if args.embeddings_ref:
        embeddings = {args.metric_name: (read_embeddings(args.embeddings_ref), read_embeddings(args.embeddings_gen))}
    rep = score(read_targets(args.targets), read_detections(args.detections),
                conf_min=args.conf_min, mode=args.matching, embeddings=embeddings)
    doc = rep.to_json()
    doc["tool_version"] = __version__
    doc["config"] = config_snapshot(cfg)
    if args.out:
        write_json_atomic(args.out, doc)
    print(json.dumps({"event": "score_summary", **rep.means}, sort_keys=True))
    return 0


def cmd_preview(args, cfg: PipelineConfig) -> int:
    d = _manifest_dir(args.manifest)
    _, tuples = load_manifest(d)
    match = [t for t in tuples if t.sample_id == args.sample_id or str(t.image_id) == args.sample_id]
    if not match:
        raise ConfigInvalid(f"sample {args.sample_id} not in manifest")
    t = match[0]
    raster = read_png(d / t.layout_map)
    placements = tuple(
        Placement(ReferenceEntry(s.ref_id, s.category_id, s.ref_path, 1, 1), s.bbox, s.order, s.mask_area, s.annotation_id)
        for s in t.subjects
    )
    render_preview(LayoutMap(t.width, t.height, raster, placements), args.out, annotate=args.annotate)
    _write_sidecar(args.out, cfg, manifest=str(args.manifest), sample_id=t.sample_id)
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_filter_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--instances")
    p.add_argument("--alpha", type=int)
    p.add_argument("--beta", type=float)
    p.add_argument("--area-mode", choices=["stored", "recomputed"])
    p.add_argument("--include-crowd", action="store_const", const=True)


def _add_pool_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--pool", help="reference pool manifest (JSON)")
    p.add_argument("--pool-root", help="directory reference paths resolve against (default: manifest directory)")
    p.add_argument("--images", help="COCO scene image directory")
    p.add_argument("--out")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.add_argument("--resize-mode", choices=["stretch", "letterbox"])
    p.add_argument("--no-reuse", dest="reuse_references", action="store_const", const=False,
                   help="draw distinct references for same-category subjects of a scene")
    p.add_argument("--min-pool-size", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="msi-forge", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON or YAML config file")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("filter", parents=[common], help="select scenes with enough salient subjects")
    _add_filter_flags(p)
    p.add_argument("--out", help="output JSONL (default scenes.jsonl)")
    p.set_defaults(func=cmd_filter)

    p = sub.add_parser("pool", parents=[common], help="reference pool utilities")
    pool_sub = p.add_subparsers(dest="pool_command", metavar="ACTION")
    pool_sub.required = True
    pv = pool_sub.add_parser("validate", parents=[common], help="check a pool manifest and print its digest")
    pv.add_argument("--manifest")
    pv.add_argument("--min-pool-size", type=int)
    pv.set_defaults(func=cmd_pool_validate)

    p = sub.add_parser("compose", parents=[common], help="compose layout maps for filtered scenes")
    p.add_argument("--scenes", required=True)
    _add_pool_flags(p)
    p.add_argument("--annotate", action="store_true", help="also write annotated previews")
    p.set_defaults(func=cmd_compose)

    p = sub.add_parser("build", parents=[common], help="build the full training-tuple dataset")
    _add_filter_flags(p)
    _add_pool_flags(p)
    p.add_argument("--captions")
    p.add_argument("--caption-strategy", choices=["first", "random"])
    p.add_argument("--error-ceiling", type=float)
    p.add_argument("--val-fraction", type=float)
    p.set_defaults(func=cmd_build)

    p = sub.add_parser("schedule", parents=[common], help="print the per-epoch learning rate and subject cap")
    p.add_argument("--e1", type=int)
    p.add_argument("--e2", type=int)
    p.add_argument("--eta1", type=float)
    p.add_argument("--eta2", type=float)
    p.add_argument("--kmin", type=int)
    p.add_argument("--kmax", type=int)
    p.add_argument("--gamma", type=float)
    p.add_argument("--epochs", type=int, help="curriculum length (default e1 + e2)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_schedule)

    p = sub.add_parser("noise-schedule", parents=[common], help="dump t, beta_t, alpha_bar_t as CSV")
    p.add_argument("--T", type=int, default=1000)
    p.add_argument("--beta-start", type=float, default=1e-4)
    p.add_argument("--beta-end", type=float, default=0.02)
    p.add_argument("--out")
    p.set_defaults(func=cmd_noise_schedule)

    p = sub.add_parser("targets", parents=[common], help="export target layouts from a dataset manifest")
    p.add_argument("--manifest", required=True, help="dataset directory or its manifest.jsonl")
    p.add_argument("--out")
    p.set_defaults(func=cmd_targets)

    p = sub.add_parser("score", parents=[common], help="score detections and embeddings")
    p.add_argument("--targets", required=True)
    p.add_argument("--detections", required=True)
    p.add_argument("--embeddings-ref")
    p.add_argument("--embeddings-gen")
    p.add_argument("--metric-name", choices=["dino_i", "clip_i", "clip_b"], default="dino_i")
    p.add_argument("--conf-min", type=float, default=0.5)
    p.add_argument("--matching", choices=["optimal", "greedy"], default="optimal")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("preview", parents=[common], help="render one layout map with optional box outlines")
    p.add_argument("--manifest", required=True)
    p.add_argument("--sample-id", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--annotate", action="store_true")
    p.set_defaults(func=cmd_preview)
    return parser


def _setup_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s level=%(levelname)s logger=%(name)s %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _error_report(exc: BaseException, code: int) -> None:
    sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}) + "\n")


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args, require_alpha=args.command in ("filter", "build"))
        _setup_logging(cfg.log_level)
        return args.func(args, cfg)
    except MsiForgeError as exc:
        _error_report(exc, exc.exit_code)
        return exc.exit_code
    except Exception as exc:
        log.exception("event=internal_error")
        _error_report(exc, 4)
        return 4


if __name__ == "__main__":
    sys.exit(main())
