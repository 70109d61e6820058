"""Deterministic two-blob fixtures for tests and experiment scripts.

Writes a complete on-disk scene a pipeline run can consume: splat
checkpoint, cameras, rendered frames, per-track silhouette masks, 2D
ground-truth masks per query, and a labeled ground-truth point cloud.

The halo variant injects low-opacity Gaussians on each blob's boundary
shell (anti-aliasing fuzz by construction) and dilates the masks in half
the views, producing the inconsistent multi-view labels the boundary
refinement stage is built to clean up.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import binary_dilation

from .masks import save_mask
from .render import rasterize, render_selection
from .scene import (
    BlobSpec,
    CameraRing,
    GaussianScene,
    SyntheticSpec,
    build_synthetic_scene,
    save_cameras,
    save_ply,
)
from . import ply as plyio

BLOBS = (
    {"name": "red blob", "center": (-1.6, 0.0, 0.0), "color": (1.0, 0.15, 0.15)},
    {"name": "blue blob", "center": (1.6, 0.0, 0.0), "color": (0.2, 0.3, 1.0)},
)


@dataclass
class Fixture:
    root: Path
    scene: GaussianScene
    labels: np.ndarray        # blob id per Gaussian
    halo: np.ndarray          # bool per Gaussian
    names: dict[int, list[str]]

    @property
    def config_path(self) -> Path:
        return self.root / "config.toml"

    def solid_indices(self, blob: int) -> np.ndarray:
        return np.nonzero((self.labels == blob) & ~self.halo)[0]

    def blob_indices(self, blob: int) -> np.ndarray:
        return np.nonzero(self.labels == blob)[0]


def _halo_shell(
    rng: np.random.Generator, center, blob_radius: float, count: int
) -> np.ndarray:
    # The shell straddles the rendered silhouette edge (which sits outside
    # the geometric ball by the splat tails), so views disagree about it.
    direction = rng.standard_normal((count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = blob_radius * (1.2 + 0.3 * rng.random(count))
    return np.asarray(center) + direction * r[:, None]


def build_two_blob_scene(
    *,
    seed: int = 0,
    count_per_blob: int = 150,
    halo: bool = False,
    halo_opacity: float = 0.4,
    image_size: int = 64,
    occlusion_views: bool = False,
) -> tuple[GaussianScene, np.ndarray, np.ndarray]:
    """Returns (scene, blob labels, halo flags).

    With `occlusion_views`, two low camera pairs sit near the blob axis so
    each blob partially hides the other in two views, and two elevated views
    look down so shell points near the blob poles also reach a silhouette
    edge somewhere; the spread ring stays clear of the axis either way.
    Total view count stays at 13 so that two disagreeing views already push
    the label entropy past the default threshold.
    """
    if occlusion_views:
        common = dict(focal=70.0, width=image_size, height_px=image_size)
        # Near-axis singles: each blob gets occluded in one even (dilated)
        # and one odd (exact) view; the top-down pair stays odd so outside
        # votes from above never get swallowed by the dilation.
        near = dict(count=1, radius=7.0, height=2.1)
        rings = (
            CameraRing(count=7, radius=7.0, height=3.0,
                       azimuth_offset=0.24, **common),
            CameraRing(azimuth_offset=0.10, start_view_id=7, **near, **common),
            CameraRing(azimuth_offset=0.10 + np.pi, start_view_id=8, **near, **common),
            CameraRing(azimuth_offset=-0.10 + np.pi, start_view_id=9, **near, **common),
            CameraRing(azimuth_offset=-0.10, start_view_id=12, **near, **common),
            CameraRing(count=1, radius=3.0, height=6.0,
                       azimuth_offset=0.9, start_view_id=11, **common),
            CameraRing(count=1, radius=3.0, height=6.0,
                       azimuth_offset=0.9 + np.pi, start_view_id=13, **common),
        )
    else:
        rings = (
            CameraRing(count=12, radius=7.0, height=3.0, focal=70.0,
                       width=image_size, height_px=image_size,
                       azimuth_offset=0.13),
        )
    spec = SyntheticSpec(
        blobs=tuple(
            BlobSpec(
                center=b["center"], radius=0.55, count=count_per_blob,
                color=b["color"], opacity=0.95, gaussian_scale=0.07,
            )
            for b in BLOBS
        ),
        rings=rings,
        seed=seed,
    )
    scene, labels = build_synthetic_scene(spec)
    halo_flags = np.zeros(len(scene), dtype=bool)
    if halo:
        rng = np.random.default_rng(seed + 1)
        n_halo = max(1, count_per_blob // 10)
        pos, scale, quat, opac, col, lab = [], [], [], [], [], []
        for blob_id, b in enumerate(BLOBS):
            pos.append(_halo_shell(rng, b["center"], 0.55, n_halo))
            scale.append(np.full((n_halo, 3), 0.09))
            q = rng.standard_normal((n_halo, 4))
            quat.append(q / np.linalg.norm(q, axis=1, keepdims=True))
            opac.append(np.full(n_halo, halo_opacity))
            col.append(np.tile(np.asarray(b["color"]) * 0.9, (n_halo, 1)))
            lab.append(np.full(n_halo, blob_id, dtype=np.int64))
        scene = GaussianScene(
            positions=np.concatenate([scene.positions] + pos),
            scales=np.concatenate([scene.scales] + scale),
            rotations=np.concatenate([scene.rotations] + quat),
            opacities=np.concatenate([scene.opacities] + opac),
            colors=np.concatenate([scene.colors] + col),
            cameras=scene.cameras,
        )
        labels = np.concatenate([labels] + lab)
        halo_flags = np.concatenate(
            [halo_flags, np.ones(2 * n_halo, dtype=bool)]
        )
    return scene, labels, halo_flags


def _slug(text: str) -> str:
    return "-".join("".join(c if c.isalnum() else " " for c in text.lower()).split())


def visible_instance_masks(
    scene: GaussianScene, cam, member_sets: list[np.ndarray]
) -> list[np.ndarray]:
    """Per-view masks a 2D segmenter would produce: a pixel belongs to the
    instance whose members contribute the most rendering weight there, and
    only where the instances themselves dominate the pixel (attributed
    weight above 0.5, so boundary fuzz outside any member set stays
    background)."""
    h, w = cam.height, cam.width
    owner = np.full(len(scene), -1, dtype=np.int64)
    for i, members in enumerate(member_sets):
        owner[members] = i
    sums = np.zeros((len(member_sets), h * w))

    def consumer(pix, src, wgt):
        own = owner[src]
        keep = own >= 0
        np.add.at(sums, (own[keep], pix[keep]), wgt[keep])

    rasterize(scene, cam, mode="weights", consumer=consumer)
    best = np.argmax(sums, axis=0)
    covered = sums.sum(axis=0) > 0.5
    return [
        ((best == i) & covered).reshape(h, w) for i in range(len(member_sets))
    ]


def write_fixture(
    root: str | Path,
    *,
    seed: int = 0,
    halo: bool = False,
    count_per_blob: int = 150,
    dilate_half_views: bool | None = None,
) -> Fixture:
    """Materialize the fixture tree under `root` and return handles to it."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if dilate_half_views is None:
        dilate_half_views = halo
    scene, labels, halo_flags = build_two_blob_scene(
        seed=seed, halo=halo, count_per_blob=count_per_blob,
        occlusion_views=halo,
    )
    save_ply(scene, root / "scene.ply")
    save_cameras(scene.cameras, root / "cameras.json")

    frames_dir = root / "frames"
    frames_dir.mkdir(exist_ok=True)
    for cam in scene.cameras:
        img = rasterize(scene, cam, mode="color").color
        arr = np.clip(img * 255.0, 0, 255).astype(np.uint8)
        Image.fromarray(arr, mode="RGB").save(frames_dir / f"{cam.view_id}.png")

    solids = [
        np.nonzero((labels == blob_id) & ~halo_flags)[0]
        for blob_id in range(len(BLOBS))
    ]
    names: dict[int, list[str]] = {}
    for blob_id, blob in enumerate(BLOBS):
        names[blob_id] = [blob["name"], blob["name"].split()[0] + " sphere"]

    for cam in scene.cameras:
        if halo:
            # What a per-view segmenter sees: occluded parts excluded.
            track_masks = visible_instance_masks(scene, cam, solids)
        else:
            track_masks = [render_selection(scene, cam, s) for s in solids]
        for blob_id, blob in enumerate(BLOBS):
            mask = track_masks[blob_id]
            if dilate_half_views and cam.view_id % 2 == 0:
                mask = binary_dilation(mask, iterations=2)
            save_mask(
                mask, root / "masks" / "object" / str(blob_id) / f"{cam.view_id}.png"
            )
            # Ground truth stays the full (unoccluded) object silhouette,
            # which is exactly what a perfect selection renders.
            save_mask(
                render_selection(scene, cam, solids[blob_id]),
                root / "gt" / "masks" / _slug(blob["name"]) / f"{cam.view_id}.png",
            )

    solid = ~halo_flags
    plyio.write_ply(
        root / "gt" / "cloud.ply",
        {
            "x": scene.positions[solid, 0],
            "y": scene.positions[solid, 1],
            "z": scene.positions[solid, 2],
            "label": labels[solid].astype(np.int32),
        },
    )

    meta = {
        "seed": seed,
        "halo": bool(halo),
        "n_gaussians": len(scene),
        "labels": labels.tolist(),
        "halo_flags": halo_flags.tolist(),
        "blob_names": {str(k): v for k, v in names.items()},
        "queries": [b["name"] for b in BLOBS],
    }
    (root / "metadata.json").write_text(json.dumps(meta, sort_keys=True))

    config = [
        "[paths]",
        'scene = "scene.ply"',
        'cameras = "cameras.json"',
        'masks = "masks"',
        'frames = "frames"',
        'workdir = "out"',
        'gt_masks = "gt/masks"',
        'gt_cloud = "gt/cloud.ply"',
        "",
        "[pipeline]",
        f"seed = {seed}",
        'adapter = "mock"',
        "",
        "[mock.names.object]",
    ]
    for blob_id, blob_names in names.items():
        quoted = ", ".join(f'"{n}"' for n in blob_names)
        config.append(f"{blob_id} = [{quoted}]")
    (root / "config.toml").write_text("\n".join(config) + "\n")

    return Fixture(
        root=root, scene=scene, labels=labels, halo=halo_flags, names=names
    )
