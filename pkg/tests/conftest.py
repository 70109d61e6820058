import numpy as np
import pytest

from splatquery.scene import Camera, GaussianScene


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def make_scene(
    positions,
    *,
    opacities=None,
    colors=None,
    scales=None,
    cameras=None,
) -> GaussianScene:
    """Scene with axis-aligned isotropic Gaussians at the given positions."""
    positions = np.atleast_2d(np.asarray(positions, dtype=np.float64))
    n = len(positions)
    quats = np.zeros((n, 4))
    quats[:, 0] = 1.0
    return GaussianScene(
        positions=positions,
        scales=np.full((n, 3), 0.1) if scales is None else np.asarray(scales, float),
        rotations=quats,
        opacities=np.full(n, 0.8) if opacities is None else np.asarray(opacities, float),
        colors=np.full((n, 3), 0.5) if colors is None else np.asarray(colors, float),
        cameras=list(cameras) if cameras else [],
    )


def identity_camera(width=9, height=9, f=1.0, view_id=0, centered=True) -> Camera:
    """Camera at the origin looking down +z with identity extrinsics."""
    return Camera(
        view_id=view_id,
        fx=f, fy=f,
        cx=(width - 1) / 2.0 if centered else 0.0,
        cy=(height - 1) / 2.0 if centered else 0.0,
        width=width, height=height,
        world_to_camera=np.eye(4),
    )


def random_scene(rng, n=80, image=48, seed_cameras=2) -> GaussianScene:
    """Random scatter in front of a small camera rig; for oracle fuzzing."""
    positions = np.column_stack([
        rng.uniform(-1.2, 1.2, n),
        rng.uniform(-1.2, 1.2, n),
        rng.uniform(2.0, 6.0, n),
    ])
    quats = rng.standard_normal((n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scene = GaussianScene(
        positions=positions,
        scales=rng.uniform(0.02, 0.25, (n, 3)),
        rotations=quats,
        opacities=rng.uniform(0.05, 1.0, n),
        colors=rng.uniform(0.0, 1.0, (n, 3)),
        cameras=[
            identity_camera(width=image, height=image, f=image * 0.6, view_id=i)
            for i in range(seed_cameras)
        ],
    )
    return scene
