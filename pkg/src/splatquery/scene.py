"""Gaussian splat scene model: attribute arrays, cameras, and file ingestion.

A scene is stored column-wise (one array per attribute) because every
downstream stage operates on whole-scene vectors. Checkpoint files keep the
de-facto splat convention of pre-activation values: log scales, logit
opacities, and a degree-0 spherical-harmonic color term. Activation happens
once at load time and the in-memory scene only ever holds activated values.

Scenes are immutable after construction and safe to share across worker
threads.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ply
from .errors import DataError, FormatError

# Degree-0 spherical harmonic basis constant: color = 0.5 + SH_C0 * f_dc.
SH_C0 = 0.28209479177387814

_REQUIRED_PLY_PROPS = (
    "x", "y", "z",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
    "opacity",
    "f_dc_0", "f_dc_1", "f_dc_2",
)


def sigmoid(x: np.ndarray) -> np.ndarray:
    # Split form avoids overflow warnings for large |x|.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def logit(p: np.ndarray) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), 1e-12, 1.0 - 1e-12)
    return np.log(p) - np.log1p(-p)


def quaternion_to_rotation(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for an (N, 4) array of unit quaternions (w, x, y, z)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    R = np.empty(q.shape[:-1] + (3, 3), dtype=np.float64)
    R[..., 0, 0] = 1 - 2 * (y * y + z * z)
    R[..., 0, 1] = 2 * (x * y - w * z)
    R[..., 0, 2] = 2 * (x * z + w * y)
    R[..., 1, 0] = 2 * (x * y + w * z)
    R[..., 1, 1] = 1 - 2 * (x * x + z * z)
    R[..., 1, 2] = 2 * (y * z - w * x)
    R[..., 2, 0] = 2 * (x * z - w * y)
    R[..., 2, 1] = 2 * (y * z + w * x)
    R[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return R


@dataclass(frozen=True)
class Camera:
    """Pinhole camera with a rigid world-to-camera transform.

    Continuous pixel coordinates follow the integer-grid convention: the
    sample point of pixel (ix, iy) sits at exactly (ix, iy), so a point
    projecting to (0.0, 0.0) lands on pixel (0, 0).
    """

    view_id: int
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    world_to_camera: np.ndarray  # (4, 4), row-major rigid transform

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise DataError(f"camera {self.view_id}: focal lengths must be positive")
        if self.width < 1 or self.height < 1:
            raise DataError(f"camera {self.view_id}: resolution must be at least 1x1")
        w2c = np.asarray(self.world_to_camera, dtype=np.float64).reshape(4, 4)
        object.__setattr__(self, "world_to_camera", w2c)
        R = w2c[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-5):
            raise DataError(f"camera {self.view_id}: rotation block is not orthonormal")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (N, 3) -> camera-frame points (N, 3)."""
        return points @ self.rotation.T + self.translation

    def project_points(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Project world points to continuous pixel coordinates.

        Returns (uv, depth) where uv is (N, 2) and depth is camera-z. Points
        at or behind the camera plane get non-finite uv; callers are expected
        to mask by depth first.
        """
        cam = self.to_camera(np.asarray(points, dtype=np.float64))
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.fx * cam[:, 0] / z + self.cx
            v = self.fy * cam[:, 1] / z + self.cy
        return np.stack([u, v], axis=1), z


@dataclass
class GaussianScene:
    """Column-wise storage of N Gaussians plus the scene's cameras.

    All attribute arrays are activated values: strictly positive scales,
    opacities in [0, 1], unit quaternions, colors in [0, 1].
    """

    positions: np.ndarray  # (N, 3)
    scales: np.ndarray     # (N, 3)
    rotations: np.ndarray  # (N, 4) unit quaternions (w, x, y, z)
    opacities: np.ndarray  # (N,)
    colors: np.ndarray     # (N, 3)
    cameras: list[Camera] = field(default_factory=list)

    def __post_init__(self):
        n = len(self.positions)
        for name in ("scales", "rotations", "opacities", "colors"):
            if len(getattr(self, name)) != n:
                raise DataError(f"attribute array '{name}' has length "
                                f"{len(getattr(self, name))}, expected {n}")
        ids = [c.view_id for c in self.cameras]
        if len(ids) != len(set(ids)):
            raise DataError("camera view_ids are not unique")

    def __len__(self) -> int:
        return len(self.positions)

    def covariances(self, indices: np.ndarray | None = None) -> np.ndarray:
        """World-space covariance R diag(scale^2) R^T, shape (K, 3, 3)."""
        scales = self.scales if indices is None else self.scales[indices]
        quats = self.rotations if indices is None else self.rotations[indices]
        R = quaternion_to_rotation(quats)
        return np.einsum("nij,nj,nkj->nik", R, scales**2, R)

    def camera_by_id(self, view_id: int) -> Camera:
        for c in self.cameras:
            if c.view_id == view_id:
                return c
        raise KeyError(f"no camera with view_id {view_id}")


def load_ply(path: str | Path) -> GaussianScene:
    """Load a splat checkpoint (gaussians only, no cameras).

    Stored values are pre-activation: scale_* are log scales, opacity is a
    logit, f_dc_* is the degree-0 SH color term. Higher-order SH properties
    are ignored when present.
    """
    path = Path(path)
    elements = ply.read_ply(path)
    if "vertex" not in elements:
        raise FormatError(f"{path}: PLY has no 'vertex' element")
    vertex = elements["vertex"]
    for prop in _REQUIRED_PLY_PROPS:
        if prop not in vertex.dtype.names:
            raise FormatError(f"{path}: missing required property '{prop}'")

    def col(*names):
        return np.stack([vertex[n].astype(np.float64) for n in names], axis=1)

    for prop in _REQUIRED_PLY_PROPS:
        vals = vertex[prop].astype(np.float64)
        bad = np.nonzero(~np.isfinite(vals))[0]
        if bad.size:
            raise DataError(
                f"{path}: non-finite value in property '{prop}' at index {bad[0]}"
            )

    positions = col("x", "y", "z")
    scales = np.exp(col("scale_0", "scale_1", "scale_2"))
    quats = col("rot_0", "rot_1", "rot_2", "rot_3")
    norms = np.linalg.norm(quats, axis=1)
    zero = np.nonzero(norms < 1e-12)[0]
    if zero.size:
        raise DataError(f"{path}: zero-norm quaternion at index {zero[0]}")
    quats = quats / norms[:, None]
    opacities = sigmoid(vertex["opacity"].astype(np.float64))
    colors = np.clip(0.5 + SH_C0 * col("f_dc_0", "f_dc_1", "f_dc_2"), 0.0, 1.0)
    return GaussianScene(positions, scales, quats, opacities, colors)


def save_ply(scene: GaussianScene, path: str | Path) -> None:
    """Write a checkpoint in the layout `load_ply` reads.

    Columns are written as doubles so load(save(scene)) round-trips the
    activated attributes well inside 1e-6.
    """
    cols: dict[str, np.ndarray] = {}
    for i, name in enumerate("xyz"):
        cols[name] = scene.positions[:, i].astype(np.float64)
    log_scales = np.log(scene.scales)
    for i in range(3):
        cols[f"scale_{i}"] = log_scales[:, i]
    for i in range(4):
        cols[f"rot_{i}"] = scene.rotations[:, i].astype(np.float64)
    cols["opacity"] = logit(scene.opacities)
    for i in range(3):
        cols[f"f_dc_{i}"] = (scene.colors[:, i] - 0.5) / SH_C0
    ply.write_ply(path, cols)


def load_cameras(path: str | Path) -> list[Camera]:
    """Load the cameras JSON document, sorted by view_id."""
    path = Path(path)
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FormatError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict) or "cameras" not in doc:
        raise FormatError(f"{path}: expected a top-level 'cameras' list")
    cameras = []
    seen: set[int] = set()
    for entry in doc["cameras"]:
        try:
            cam = Camera(
                view_id=int(entry["view_id"]),
                fx=float(entry["fx"]),
                fy=float(entry["fy"]),
                cx=float(entry["cx"]),
                cy=float(entry["cy"]),
                width=int(entry["width"]),
                height=int(entry["height"]),
                world_to_camera=np.asarray(entry["world_to_camera"], dtype=np.float64),
            )
        except KeyError as e:
            raise FormatError(f"{path}: camera entry missing key {e}") from e
        if cam.view_id in seen:
            raise DataError(f"{path}: duplicate view_id {cam.view_id}")
        seen.add(cam.view_id)
        cameras.append(cam)
    cameras.sort(key=lambda c: c.view_id)
    return cameras


def save_cameras(cameras: list[Camera], path: str | Path) -> None:
    doc = {
        "cameras": [
            {
                "view_id": c.view_id,
                "fx": c.fx,
                "fy": c.fy,
                "cx": c.cx,
                "cy": c.cy,
                "width": c.width,
                "height": c.height,
                "world_to_camera": [float(v) for v in c.world_to_camera.reshape(-1)],
            }
            for c in cameras
        ]
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def look_at_camera(
    view_id: int,
    eye: np.ndarray,
    target: np.ndarray,
    *,
    fx: float,
    fy: float,
    width: int,
    height: int,
    up: np.ndarray | None = None,
) -> Camera:
    """Camera at `eye` looking toward `target` (x right, y down, z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up_hint = np.array([0.0, 0.0, 1.0]) if up is None else np.asarray(up, np.float64)
    z = target - eye
    nz = np.linalg.norm(z)
    if nz < 1e-12:
        raise DataError("look_at_camera: eye and target coincide")
    z = z / nz
    x = np.cross(z, up_hint)
    if np.linalg.norm(x) < 1e-8:
        # Viewing direction is parallel to the up hint; fall back to world y.
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x = x / np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z], axis=0)
    w2c = np.eye(4)
    w2c[:3, :3] = R
    w2c[:3, 3] = -R @ eye
    return Camera(
        view_id=view_id,
        fx=fx, fy=fy,
        cx=(width - 1) / 2.0, cy=(height - 1) / 2.0,
        width=width, height=height,
        world_to_camera=w2c,
    )


@dataclass(frozen=True)
class BlobSpec:
    """One ball-shaped cluster of Gaussians with a shared ground-truth label."""

    center: tuple[float, float, float]
    radius: float
    count: int
    color: tuple[float, float, float]
    opacity: float = 0.95
    gaussian_scale: float = 0.08


@dataclass(frozen=True)
class CameraRing:
    """Cameras evenly spaced on a circle, all looking at `target`."""

    count: int
    radius: float
    target: tuple[float, float, float] = (0.0, 0.0, 0.0)
    height: float = 0.0
    focal: float = 70.0
    width: int = 64
    height_px: int = 64
    start_view_id: int = 0
    azimuth_offset: float = 0.0


@dataclass(frozen=True)
class SyntheticSpec:
    blobs: tuple[BlobSpec, ...]
    rings: tuple[CameraRing, ...]
    seed: int = 0


def build_synthetic_scene(spec: SyntheticSpec) -> tuple[GaussianScene, np.ndarray]:
    """Build a deterministic test scene; returns (scene, per-Gaussian blob label)."""
    if not spec.blobs:
        raise DataError("synthetic spec lists no blobs")
    if not spec.rings:
        raise DataError("synthetic spec lists no camera rings")
    total = sum(b.count for b in spec.blobs)
    if total == 0:
        raise DataError("synthetic spec requests zero Gaussians")

    rng = np.random.default_rng(spec.seed)
    positions, scales, quats, opacities, colors, labels = [], [], [], [], [], []
    for label, blob in enumerate(spec.blobs):
        # Uniform sampling inside a ball: random direction, radius ~ r^(1/3).
        direction = rng.standard_normal((blob.count, 3))
        direction /= np.maximum(np.linalg.norm(direction, axis=1, keepdims=True), 1e-12)
        r = blob.radius * rng.random(blob.count) ** (1.0 / 3.0)
        positions.append(np.asarray(blob.center) + direction * r[:, None])
        scales.append(blob.gaussian_scale * (0.8 + 0.4 * rng.random((blob.count, 3))))
        q = rng.standard_normal((blob.count, 4))
        quats.append(q / np.linalg.norm(q, axis=1, keepdims=True))
        opacities.append(np.full(blob.count, blob.opacity))
        colors.append(np.tile(np.asarray(blob.color, dtype=np.float64), (blob.count, 1)))
        labels.append(np.full(blob.count, label, dtype=np.int64))

    cameras: list[Camera] = []
    for ring in spec.rings:
        target = np.asarray(ring.target, dtype=np.float64)
        for k in range(ring.count):
            theta = ring.azimuth_offset + 2 * np.pi * k / ring.count
            eye = target + np.array(
                [ring.radius * np.cos(theta), ring.radius * np.sin(theta), ring.height]
            )
            cameras.append(
                look_at_camera(
                    ring.start_view_id + k, eye, target,
                    fx=ring.focal, fy=ring.focal,
                    width=ring.width, height=ring.height_px,
                )
            )

    scene = GaussianScene(
        positions=np.concatenate(positions),
        scales=np.concatenate(scales),
        rotations=np.concatenate(quats),
        opacities=np.concatenate(opacities),
        colors=np.concatenate(colors),
        cameras=cameras,
    )
    return scene, np.concatenate(labels)
