"""Command-line pipeline driver.

Each subcommand runs one stage and persists its artifact under the config's
workdir, so stages can be re-run and re-queried independently:

    ingest  -> tracks.json            (mask validation + periodic detection)
    group   -> groups.json            (lift, hard-assign, refine)
    distill -> registry.json          (names + embeddings per object)
    query   -> queries/<slug>/        (matches + rendered selection masks)
    segment -> labels.json            (per-Gaussian class labels)
    eval    -> report_*.json          (2D selection / 3D segmentation metrics)
    render  -> renders/               (color frames, for eyeballing)

Exit codes: 0 ok, 2 input/config error, 3 external-client error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np
from PIL import Image

from . import evaluate, neutral, ply, query as querymod
from .adapter import AdapterClient
from .config import PipelineConfig, load_config
from .distill import (
    InstanceRegistry,
    MockEmbeddingClient,
    MockVlmClient,
    distill,
)
from .errors import ClientError, ConfigError, DataError, FormatError, PipelineError
from .grouping import build_groups
from .masks import MaskSet, ingest_masks, load_mask, run_periodic_detection
from .render import rasterize, render_selection
from .scene import load_cameras, load_ply

logger = logging.getLogger("splatquery")

TRACKS_FORMAT = "tracks/1"
GROUPS_FORMAT = "groups/1"
LABELS_FORMAT = "labels/1"
QUERY_FORMAT = "query/1"

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_CLIENT = 3


def _require(path: Path, producer: str) -> Path:
    if not path.exists():
        raise DataError(
            f"missing artifact '{path}'; run `splatquery {producer}` first"
        )
    return path


def _check_format(doc: dict, expected: str, path: Path) -> None:
    if doc.get("format") != expected:
        raise DataError(
            f"{path}: artifact format '{doc.get('format')}' does not match "
            f"expected '{expected}'"
        )


def _write_json(path: Path, doc: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True))


def _load_scene(cfg: PipelineConfig):
    if cfg.scene_ply is None or cfg.cameras_json is None:
        raise ConfigError("config must set paths.scene and paths.cameras")
    if not Path(cfg.scene_ply).is_file():
        raise DataError(f"scene file '{cfg.scene_ply}' does not exist")
    scene = load_ply(cfg.scene_ply)
    scene.cameras.extend(load_cameras(cfg.cameras_json))
    return scene


def _load_registry_masks(cfg: PipelineConfig, cameras):
    if cfg.masks_root is None:
        raise ConfigError("config must set paths.masks")
    return ingest_masks(
        cfg.masks_root,
        cameras,
        detection_interval=cfg.detection_interval,
        new_track_iou=cfg.new_track_iou,
    )


def _clients(cfg: PipelineConfig):
    if cfg.adapter == "mock":
        vlm = MockVlmClient(names_by_track=cfg.mock_names)
        embedder = MockEmbeddingClient()
        return vlm, embedder
    client = AdapterClient(cfg.adapter)
    return client, client


def _slug(text: str) -> str:
    return "-".join("".join(c if c.isalnum() else " " for c in text.lower()).split())


def cmd_ingest(cfg: PipelineConfig, args) -> int:
    scene = _load_scene(cfg)
    registry = _load_registry_masks(cfg, scene.cameras)
    if cfg.detect_root is not None:
        new = run_periodic_detection(registry, cfg.detect_root, scene.cameras)
        for gran, ids in new.items():
            print(f"detected {len(ids)} new {gran} tracks: {ids}")
    granularities = {}
    for gran in registry.granularities():
        tracks = registry.tracks_for(gran)
        granularities[gran] = {
            "next_id": registry.next_id.get(gran, 0),
            "tracks": [
                {
                    "track_id": t.track_id,
                    "views": {str(v): bool(ok) for v, ok in sorted(t.validity.items())},
                }
                for t in sorted(tracks, key=lambda t: t.track_id)
            ],
        }
    _write_json(
        cfg.tracks_path,
        {
            "format": TRACKS_FORMAT,
            "detection_interval": registry.detection_interval,
            "granularities": granularities,
        },
    )
    n_tracks = len(registry.tracks)
    n_valid = sum(len(t.valid_views()) for t in registry.tracks)
    print(f"ingested {n_tracks} tracks ({n_valid} valid view-masks) "
          f"-> {cfg.tracks_path}")
    return EXIT_OK


def cmd_group(cfg: PipelineConfig, args) -> int:
    scene = _load_scene(cfg)
    _require(cfg.tracks_path, "ingest")
    manifest = json.loads(cfg.tracks_path.read_text())
    _check_format(manifest, TRACKS_FORMAT, cfg.tracks_path)
    registry = _load_registry_masks(cfg, scene.cameras)
    mask_sets = [m for m in registry.tracks if m.valid_views()]
    if not mask_sets:
        logger.warning("no tracks with valid views; writing empty groups")
        _write_json(cfg.groups_path, {"format": GROUPS_FORMAT, "objects": []})
        print(f"0 groups -> {cfg.groups_path}")
        return EXIT_OK

    groups = build_groups(scene, scene.cameras, mask_sets, threads=cfg.threads)
    objects = []
    print(f"{'track':>12}  {'initial':>8}  {'foreground':>10}  {'neutral':>8}")
    for group, mask_set in zip(groups, mask_sets):
        fg_views, bg_views = neutral.label_by_projection(
            scene, scene.cameras, mask_set
        )
        group.accumulator.fg_views = fg_views
        group.accumulator.bg_views = bg_views
        initial_size = len(group.foreground)
        refined, stats = neutral.refine(
            group,
            fg_views,
            bg_views,
            scene.opacities,
            entropy_threshold=cfg.entropy_threshold,
            opacity_threshold=cfg.opacity_threshold,
        )
        name = f"{refined.granularity}/{refined.track_id}"
        print(f"{name:>12}  {initial_size:>8}  {len(refined.foreground):>10}  "
              f"{len(refined.neutral):>8}")
        objects.append(
            {
                "track_id": refined.track_id,
                "granularity": refined.granularity,
                "foreground": [int(i) for i in refined.foreground],
                "neutral": [int(i) for i in refined.neutral],
                "stats": {
                    "initial_foreground": initial_size,
                    "scored": stats.n_scored,
                    "candidates": stats.n_candidates,
                    "rescued": stats.n_rescued,
                },
            }
        )
    _write_json(cfg.groups_path, {"format": GROUPS_FORMAT, "objects": objects})
    print(f"{len(objects)} groups -> {cfg.groups_path}")
    return EXIT_OK


def _load_groups(cfg: PipelineConfig):
    _require(cfg.groups_path, "group")
    doc = json.loads(cfg.groups_path.read_text())
    _check_format(doc, GROUPS_FORMAT, cfg.groups_path)
    return doc["objects"]


def cmd_distill(cfg: PipelineConfig, args) -> int:
    from .grouping import ObjectGroup

    scene = _load_scene(cfg)
    objects = _load_groups(cfg)
    registry = _load_registry_masks(cfg, scene.cameras)
    if cfg.frames_root is None:
        raise ConfigError("config must set paths.frames")
    frames: dict[int, np.ndarray] = {}
    for cam in scene.cameras:
        frame_path = Path(cfg.frames_root) / f"{cam.view_id}.png"
        if frame_path.is_file():
            frames[cam.view_id] = (
                np.asarray(Image.open(frame_path).convert("RGB"), dtype=np.float64)
                / 255.0
            )
    vlm, embedder = _clients(cfg)
    out = InstanceRegistry(dim=embedder.dim)
    for obj in objects:
        mask_set = registry.get(obj["granularity"], obj["track_id"])
        group = ObjectGroup(
            track_id=obj["track_id"],
            granularity=obj["granularity"],
            foreground=np.asarray(obj["foreground"], dtype=np.int64),
            neutral=np.asarray(obj["neutral"], dtype=np.int64),
        )
        entry = distill(
            group, mask_set, frames, vlm, embedder,
            top_n_views=cfg.top_n_views, prompt=cfg.prompt,
        )
        out.objects.append(entry)
        label = ", ".join(entry.names) if entry.names else "(unnamed)"
        print(f"{entry.granularity}/{entry.track_id}: {label}")
    cfg.registry_path.parent.mkdir(parents=True, exist_ok=True)
    out.save(cfg.registry_path)
    print(f"{len(out.objects)} objects -> {cfg.registry_path}")
    return EXIT_OK


def cmd_query(cfg: PipelineConfig, args) -> int:
    _require(cfg.registry_path, "distill")
    registry = InstanceRegistry.load(cfg.registry_path)
    _, embedder = _clients(cfg)
    result = querymod.select(
        registry,
        args.text,
        embedder,
        threshold=cfg.match_threshold,
        granularity=args.granularity,
        fallback_to_best=cfg.match_fallback,
    )
    out_dir = cfg.workdir / "queries" / _slug(args.text)
    _write_json(
        out_dir / "result.json",
        {
            "format": QUERY_FORMAT,
            "query": result.query,
            "matched": [
                {
                    "track_id": m.track_id,
                    "granularity": m.granularity,
                    "best_name": m.best_name,
                    "similarity": m.similarity,
                }
                for m in result.matched
            ],
            "selected": [int(i) for i in result.selected],
            "used_fallback": result.used_fallback,
        },
    )
    for m in result.matched:
        print(f"match {m.granularity}/{m.track_id} "
              f"'{m.best_name}' sim={m.similarity:.4f}")
    print(f"{len(result.selected)} gaussians selected -> {out_dir}")
    if args.render:
        scene = _load_scene(cfg)
        for cam in scene.cameras:
            mask = render_selection(
                scene, cam, result.selected, threads=cfg.threads
            )
            path = out_dir / "masks" / f"{cam.view_id}.png"
            path.parent.mkdir(parents=True, exist_ok=True)
            Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), "L").save(path)
        print(f"selection masks -> {out_dir / 'masks'}")
    return EXIT_OK


def cmd_segment(cfg: PipelineConfig, args) -> int:
    _require(cfg.registry_path, "distill")
    registry = InstanceRegistry.load(cfg.registry_path)
    scene = _load_scene(cfg)
    _, embedder = _clients(cfg)
    labels = querymod.segment(
        registry,
        args.classes,
        embedder,
        len(scene),
        threshold=cfg.match_threshold,
        granularity=args.granularity,
    )
    _write_json(
        cfg.workdir / "labels.json",
        {
            "format": LABELS_FORMAT,
            "classes": list(args.classes),
            "labels": [int(x) for x in labels],
        },
    )
    counts = {
        cls: int(np.count_nonzero(labels == i))
        for i, cls in enumerate(args.classes)
    }
    counts["(unlabeled)"] = int(np.count_nonzero(labels == querymod.UNLABELED))
    for cls, count in counts.items():
        print(f"{cls:>16}: {count}")
    print(f"labels -> {cfg.workdir / 'labels.json'}")
    return EXIT_OK


def cmd_eval(cfg: PipelineConfig, args) -> int:
    if args.mode == "selection":
        if cfg.gt_masks_root is None:
            raise ConfigError("config must set paths.gt_masks for selection eval")
        gt_root = Path(cfg.gt_masks_root)
        if not gt_root.is_dir():
            raise DataError(f"ground-truth mask root '{gt_root}' does not exist")
        predictions: dict[str, dict[int, np.ndarray]] = {}
        gt: dict[str, dict[int, np.ndarray]] = {}
        queries_dir = cfg.workdir / "queries"
        for qdir in sorted(gt_root.iterdir()):
            if not qdir.is_dir():
                continue
            slug = qdir.name
            gt[slug] = {
                int(f.stem): load_mask(f) for f in sorted(qdir.glob("*.png"))
            }
            pred_dir = _require(queries_dir / slug / "masks", "query --render")
            predictions[slug] = {
                int(f.stem): load_mask(f) for f in sorted(pred_dir.glob("*.png"))
            }
        report = evaluate.eval_selection_2d(predictions, gt)
        out = cfg.workdir / "report_selection.json"
    else:
        if cfg.gt_cloud is None:
            raise ConfigError("config must set paths.gt_cloud for segmentation eval")
        labels_path = _require(cfg.workdir / "labels.json", "segment")
        doc = json.loads(labels_path.read_text())
        _check_format(doc, LABELS_FORMAT, labels_path)
        scene = _load_scene(cfg)
        cloud = ply.read_ply(cfg.gt_cloud)
        if "vertex" not in cloud or "label" not in cloud["vertex"].dtype.names:
            raise FormatError(
                f"{cfg.gt_cloud}: ground-truth cloud needs a per-vertex 'label'"
            )
        vertex = cloud["vertex"]
        gt_points = np.stack(
            [vertex["x"], vertex["y"], vertex["z"]], axis=1
        ).astype(np.float64)
        report = evaluate.eval_segmentation_3d(
            np.asarray(doc["labels"], dtype=np.int64),
            scene.positions,
            gt_points,
            vertex["label"].astype(np.int64),
            doc["classes"],
            radius=cfg.eval_radius,
        )
        out = cfg.workdir / "report_segmentation.json"
    print(report.table())
    _write_json(out, {"format": "report/1", **report.to_json()})
    print(f"report -> {out}")
    return EXIT_OK


def cmd_render(cfg: PipelineConfig, args) -> int:
    scene = _load_scene(cfg)
    out_dir = cfg.workdir / "renders"
    out_dir.mkdir(parents=True, exist_ok=True)
    cameras = scene.cameras
    if args.view is not None:
        cameras = [scene.camera_by_id(args.view)]
    for cam in cameras:
        img = rasterize(scene, cam, mode="color", threads=cfg.threads).color
        arr = np.clip(img * 255.0, 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(out_dir / f"{cam.view_id}.png")
    print(f"{len(cameras)} renders -> {out_dir}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatquery",
        description="Open-vocabulary object grouping and querying "
                    "over Gaussian splat scenes",
    )
    parser.add_argument("-c", "--config", required=True, help="TOML config file")
    parser.add_argument("--adapter", help="override adapter endpoint or 'mock'")
    parser.add_argument("--threads", type=int, help="worker thread count")
    parser.add_argument("--seed", type=int, help="override pipeline seed")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("ingest", help="validate masks and register tracks")
    sub.add_parser("group", help="lift masks into refined 3D object groups")
    sub.add_parser("distill", help="name objects and embed candidate names")

    q = sub.add_parser("query", help="select gaussians matching a text query")
    q.add_argument("text")
    q.add_argument("--granularity", default=None)
    q.add_argument("--render", action="store_true",
                   help="render per-view selection masks")

    s = sub.add_parser("segment", help="assign class labels to gaussians")
    s.add_argument("classes", nargs="+")
    s.add_argument("--granularity", default=None)

    e = sub.add_parser("eval", help="score selection or segmentation quality")
    e.add_argument("--mode", choices=["selection", "segmentation"],
                   default="selection")

    r = sub.add_parser("render", help="render color frames")
    r.add_argument("--view", type=int, default=None)
    return parser


COMMANDS = {
    "ingest": cmd_ingest,
    "group": cmd_group,
    "distill": cmd_distill,
    "query": cmd_query,
    "segment": cmd_segment,
    "eval": cmd_eval,
    "render": cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = load_config(
            args.config,
            overrides={
                "adapter": args.adapter,
                "threads": args.threads,
                "seed": args.seed,
            },
        )
        return COMMANDS[args.command](cfg, args)
    except ClientError as e:
        print(f"error (external client): {e}", file=sys.stderr)
        return EXIT_CLIENT
    except (PipelineError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
