"""Forward splatting rasterizer with per-Gaussian pixel-weight streaming.

Two render paths share all per-pixel math (projection, effective opacity,
front-to-back compositing) and differ only in traversal strategy:

* `rasterize` bins projected Gaussians into 16x16 tiles, depth-sorts per
  tile, and terminates compositing once transmittance is exhausted.
* `rasterize_reference` evaluates every projected Gaussian at every pixel
  with one global depth sort and no termination. It materializes dense
  weight arrays and exists to verify the tiled path on small scenes.

The contribution of Gaussian j at pixel r is w = T * a, where a is the
clamped effective opacity at that pixel and T the transmittance accumulated
through all closer Gaussians. `rasterize(mode="weights")` streams
(pixel, gaussian, weight) triples to a consumer in chunks instead of
materializing them; a dense per-pixel-per-Gaussian tensor is never built.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from threading import Lock
from typing import Callable

import numpy as np

from .scene import Camera, GaussianScene

NEAR_PLANE = 0.01
LOWPASS = 0.3            # added to cov2d diagonal against sub-pixel aliasing
ALPHA_CLAMP = 0.99
ALPHA_SKIP = 1.0 / 255.0
TERMINATE_T = 1e-4       # stop after transmittance drops below this
CULL_SIGMA = 3.0         # image-bounds cull radius, in projected sigmas
BIN_SIGMA = 3.4          # tile-binning radius; outside it alpha < ALPHA_SKIP
TILE = 16

# Consumer receives equal-length arrays: flat pixel indices (y * width + x),
# source Gaussian indices, and weights. It may be called from worker threads,
# but never concurrently (calls are serialized by the rasterizer).
WeightConsumer = Callable[[np.ndarray, np.ndarray, np.ndarray], None]


@dataclass
class ProjectedGaussians:
    """Screen-space Gaussians surviving near-plane and image-bounds culling."""

    mean2d: np.ndarray        # (M, 2) continuous pixel coordinates
    cov2d: np.ndarray         # (M, 3) upper triangle (a, b, c), pixels^2
    conic: np.ndarray         # (M, 3) inverse covariance (A, B, C)
    depth: np.ndarray         # (M,) camera-space z
    source_index: np.ndarray  # (M,) index into the full scene
    base_opacity: np.ndarray  # (M,)
    color: np.ndarray         # (M, 3)
    radius: np.ndarray        # (M,) CULL_SIGMA * sqrt(max eigenvalue)
    n_culled_depth: int = 0
    n_culled_bounds: int = 0
    n_skipped_singular: int = 0

    def __len__(self) -> int:
        return len(self.depth)


@dataclass
class RenderResult:
    color: np.ndarray | None = None   # (H, W, 3)
    alpha: np.ndarray | None = None   # (H, W) accumulated opacity
    projected: ProjectedGaussians | None = None


@dataclass
class ReferenceResult:
    """Dense output of the brute-force path, for oracle comparisons."""

    color: np.ndarray          # (H, W, 3)
    alpha: np.ndarray          # (H, W)
    weights: np.ndarray        # (H*W, M) in projected order
    transmittance: np.ndarray  # (H*W, M) T before each contribution, depth order
    order: np.ndarray          # depth sort applied to the projected set
    projected: ProjectedGaussians

    def weights_by_source(self, n_gaussians: int) -> np.ndarray:
        """Scatter dense weights to (H*W, N) keyed by scene index."""
        full = np.zeros((self.weights.shape[0], n_gaussians))
        src = self.projected.source_index[self.order]
        full[:, src] = self.weights
        return full


def project(
    scene: GaussianScene, camera: Camera, subset: np.ndarray | None = None
) -> ProjectedGaussians:
    """Project (a subset of) the scene into screen space.

    cov2d is J W Sigma W^T J^T with J the perspective Jacobian at the mean
    and W the world-to-camera rotation, low-pass regularized by adding
    LOWPASS to both diagonal entries. Gaussians behind the near plane or
    whose CULL_SIGMA ellipse misses the image are culled silently.
    """
    if subset is None:
        indices = np.arange(len(scene))
    else:
        indices = np.asarray(subset, dtype=np.int64)
    if indices.size == 0:
        return _empty_projection()

    positions = scene.positions[indices]
    cam_pts = camera.to_camera(positions)
    z = cam_pts[:, 2]
    in_front = z > NEAR_PLANE
    n_culled_depth = int(np.count_nonzero(~in_front))
    indices = indices[in_front]
    if indices.size == 0:
        return _empty_projection(n_culled_depth=n_culled_depth)
    cam_pts = cam_pts[in_front]
    z = z[in_front]

    tx, ty = cam_pts[:, 0], cam_pts[:, 1]
    u = camera.fx * tx / z + camera.cx
    v = camera.fy * ty / z + camera.cy
    mean2d = np.stack([u, v], axis=1)

    # Perspective Jacobian rows, evaluated at the mean.
    J = np.zeros((len(z), 2, 3))
    J[:, 0, 0] = camera.fx / z
    J[:, 0, 2] = -camera.fx * tx / (z * z)
    J[:, 1, 1] = camera.fy / z
    J[:, 1, 2] = -camera.fy * ty / (z * z)

    W = camera.rotation
    Sigma = scene.covariances(indices)
    JW = J @ W
    cov = np.einsum("nij,njk,nlk->nil", JW, Sigma, JW)
    a = cov[:, 0, 0] + LOWPASS
    b = cov[:, 0, 1]
    c = cov[:, 1, 1] + LOWPASS

    mid = 0.5 * (a + c)
    disc = np.sqrt(np.maximum((0.5 * (a - c)) ** 2 + b * b, 0.0))
    lam_max = mid + disc
    radius = CULL_SIGMA * np.sqrt(np.maximum(lam_max, 0.0))

    # Pixel sample points span [0, width-1] x [0, height-1].
    visible = (
        (mean2d[:, 0] + radius >= 0.0)
        & (mean2d[:, 0] - radius <= camera.width - 1)
        & (mean2d[:, 1] + radius >= 0.0)
        & (mean2d[:, 1] - radius <= camera.height - 1)
    )
    n_culled_bounds = int(np.count_nonzero(~visible))

    det = a * c - b * b
    singular = det <= 1e-12
    n_singular = int(np.count_nonzero(singular & visible))
    keep = visible & ~singular

    a, b, c, det = a[keep], b[keep], c[keep], det[keep]
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    return ProjectedGaussians(
        mean2d=mean2d[keep],
        cov2d=np.stack([a, b, c], axis=1),
        conic=conic,
        depth=z[keep],
        source_index=indices[keep],
        base_opacity=scene.opacities[indices[keep]],
        color=scene.colors[indices[keep]],
        radius=radius[keep],
        n_culled_depth=n_culled_depth,
        n_culled_bounds=n_culled_bounds,
        n_skipped_singular=n_singular,
    )


def _empty_projection(n_culled_depth: int = 0) -> ProjectedGaussians:
    return ProjectedGaussians(
        mean2d=np.zeros((0, 2)),
        cov2d=np.zeros((0, 3)),
        conic=np.zeros((0, 3)),
        depth=np.zeros(0),
        source_index=np.zeros(0, dtype=np.int64),
        base_opacity=np.zeros(0),
        color=np.zeros((0, 3)),
        radius=np.zeros(0),
        n_culled_depth=n_culled_depth,
    )


def _effective_alpha(
    px: np.ndarray, py: np.ndarray, proj: ProjectedGaussians, cols: np.ndarray
) -> np.ndarray:
    """Clamped effective opacity for pixels (P,) x selected Gaussians (K,).

    Entries below ALPHA_SKIP are zeroed, which both render paths treat as
    "not evaluated": they neither contribute weight nor attenuate.
    """
    dx = px[:, None] - proj.mean2d[cols, 0][None, :]
    dy = py[:, None] - proj.mean2d[cols, 1][None, :]
    A = proj.conic[cols, 0][None, :]
    B = proj.conic[cols, 1][None, :]
    C = proj.conic[cols, 2][None, :]
    power = -0.5 * (A * dx * dx + 2.0 * B * dx * dy + C * dy * dy)
    alpha = proj.base_opacity[cols][None, :] * np.exp(power)
    np.minimum(alpha, ALPHA_CLAMP, out=alpha)
    alpha[alpha < ALPHA_SKIP] = 0.0
    return alpha


def _composite(alpha: np.ndarray, terminate: bool) -> tuple[np.ndarray, np.ndarray]:
    """Front-to-back weights for depth-ordered alphas (P, K).

    Returns (weights, transmittance-before-contribution). With termination,
    a contribution is kept iff the transmittance in front of it is still at
    least TERMINATE_T; the contribution that crosses the threshold is the
    last one kept.
    """
    t_before = np.cumprod(1.0 - alpha, axis=1)
    t_before = np.concatenate(
        [np.ones((alpha.shape[0], 1)), t_before[:, :-1]], axis=1
    )
    weights = alpha * t_before
    if terminate:
        weights[t_before < TERMINATE_T] = 0.0
    return weights, t_before


def rasterize(
    scene: GaussianScene,
    camera: Camera,
    mode: str = "color",
    *,
    subset: np.ndarray | None = None,
    consumer: WeightConsumer | None = None,
    threads: int = 1,
) -> RenderResult:
    """Tiled front-to-back rasterization.

    mode "color" fills RenderResult.color (and alpha), mode "alpha" only the
    accumulated-opacity image, mode "weights" streams (pixel, gaussian,
    weight) chunks to `consumer`. Tiles are independent, so multi-threaded
    runs produce the same images as single-threaded ones.
    """
    if mode not in ("color", "weights", "alpha"):
        raise ValueError(f"unknown rasterize mode '{mode}'")
    if mode == "weights" and consumer is None:
        raise ValueError("weights mode requires a consumer")

    H, W = camera.height, camera.width
    proj = project(scene, camera, subset=subset)
    result = RenderResult(projected=proj)
    if mode in ("color", "alpha"):
        result.alpha = np.zeros((H, W))
    if mode == "color":
        result.color = np.zeros((H, W, 3))
    if len(proj) == 0:
        return result

    # Global depth order, ties broken by scene index so every traversal of
    # equal-depth Gaussians agrees with the reference path.
    order = np.lexsort((proj.source_index, proj.depth))

    tiles_x = (W + TILE - 1) // TILE
    tiles_y = (H + TILE - 1) // TILE

    # Bin with a radius under which any excluded pixel sees alpha < ALPHA_SKIP,
    # so tile binning never changes the composited result.
    bin_radius = proj.radius[order] * (BIN_SIGMA / CULL_SIGMA)
    mx = proj.mean2d[order, 0]
    my = proj.mean2d[order, 1]
    tx0 = np.clip(np.floor((mx - bin_radius) / TILE).astype(np.int64), 0, tiles_x - 1)
    tx1 = np.clip(np.floor((mx + bin_radius) / TILE).astype(np.int64), 0, tiles_x - 1)
    ty0 = np.clip(np.floor((my - bin_radius) / TILE).astype(np.int64), 0, tiles_y - 1)
    ty1 = np.clip(np.floor((my + bin_radius) / TILE).astype(np.int64), 0, tiles_y - 1)

    span_x = tx1 - tx0 + 1
    counts = span_x * (ty1 - ty0 + 1)
    entry_rank = np.repeat(np.arange(len(order)), counts)
    offsets = np.arange(int(counts.sum())) - np.repeat(
        np.cumsum(counts) - counts, counts
    )
    ox = offsets % span_x[entry_rank]
    oy = offsets // span_x[entry_rank]
    tile_ids = (ty0[entry_rank] + oy) * tiles_x + (tx0[entry_rank] + ox)

    # Stable sort keeps depth order within each tile.
    tile_order = np.argsort(tile_ids, kind="stable")
    tile_ids = tile_ids[tile_order]
    entry_rank = entry_rank[tile_order]
    boundaries = np.searchsorted(tile_ids, np.arange(tiles_x * tiles_y + 1))

    sorted_cols = order  # entry_rank indexes into this
    consumer_lock = Lock()

    def run_tile(tile_id: int) -> None:
        lo, hi = boundaries[tile_id], boundaries[tile_id + 1]
        if lo == hi:
            return
        cols = sorted_cols[entry_rank[lo:hi]]
        ty, tx = divmod(tile_id, tiles_x)
        x0, y0 = tx * TILE, ty * TILE
        x1, y1 = min(x0 + TILE, W), min(y0 + TILE, H)
        xs = np.arange(x0, x1, dtype=np.float64)
        ys = np.arange(y0, y1, dtype=np.float64)
        grid_x = np.tile(xs, len(ys))
        grid_y = np.repeat(ys, len(xs))
        alpha = _effective_alpha(grid_x, grid_y, proj, cols)
        weights, _ = _composite(alpha, terminate=True)
        if mode == "color":
            result.color[y0:y1, x0:x1] = (weights @ proj.color[cols]).reshape(
                y1 - y0, x1 - x0, 3
            )
        if mode in ("color", "alpha"):
            result.alpha[y0:y1, x0:x1] = weights.sum(axis=1).reshape(
                y1 - y0, x1 - x0
            )
        if mode == "weights":
            rows, kcols = np.nonzero(weights)
            if rows.size:
                flat_pix = (grid_y[rows].astype(np.int64) * W
                            + grid_x[rows].astype(np.int64))
                with consumer_lock:
                    consumer(
                        flat_pix,
                        proj.source_index[cols][kcols],
                        weights[rows, kcols],
                    )

    tile_list = range(tiles_x * tiles_y)
    if threads <= 1:
        for t in tile_list:
            run_tile(t)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_tile, tile_list))
    return result


def rasterize_reference(
    scene: GaussianScene,
    camera: Camera,
    subset: np.ndarray | None = None,
) -> ReferenceResult:
    """Brute-force path: every projected Gaussian at every pixel, one global
    depth sort, no early termination. Quadratic in memory; test scenes only.
    """
    H, W = camera.height, camera.width
    proj = project(scene, camera, subset=subset)
    order = np.lexsort((proj.source_index, proj.depth))
    grid_x = np.tile(np.arange(W, dtype=np.float64), H)
    grid_y = np.repeat(np.arange(H, dtype=np.float64), W)
    alpha = _effective_alpha(grid_x, grid_y, proj, order)
    weights, t_before = _composite(alpha, terminate=False)
    color = (weights @ proj.color[order]).reshape(H, W, 3)
    alpha_img = weights.sum(axis=1).reshape(H, W)
    return ReferenceResult(
        color=color,
        alpha=alpha_img,
        weights=weights,
        transmittance=t_before,
        order=order,
        projected=proj,
    )


def render_selection(
    scene: GaussianScene,
    camera: Camera,
    selected: np.ndarray,
    *,
    threads: int = 1,
) -> np.ndarray:
    """Binary mask of the selected Gaussians: accumulated alpha > 0.5."""
    selected = np.asarray(selected, dtype=np.int64)
    if selected.size and (selected.min() < 0 or selected.max() >= len(scene)):
        raise IndexError("selection indices out of range")
    if selected.size == 0:
        return np.zeros((camera.height, camera.width), dtype=bool)
    res = rasterize(scene, camera, mode="alpha", subset=selected, threads=threads)
    return res.alpha > 0.5


@dataclass
class WeightCollector:
    """Consumer that materializes streamed triples; small scenes and tests."""

    pixels: list = field(default_factory=list)
    sources: list = field(default_factory=list)
    weights: list = field(default_factory=list)

    def __call__(self, pix: np.ndarray, src: np.ndarray, w: np.ndarray) -> None:
        self.pixels.append(pix)
        self.sources.append(src)
        self.weights.append(w)

    def dense(self, n_pixels: int, n_gaussians: int) -> np.ndarray:
        out = np.zeros((n_pixels, n_gaussians))
        if self.pixels:
            pix = np.concatenate(self.pixels)
            src = np.concatenate(self.sources)
            w = np.concatenate(self.weights)
            np.add.at(out, (pix, src), w)
        return out
