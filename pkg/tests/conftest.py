"""Shared fixtures: small trained checkpoints for CLI/service/UI tests."""

import numpy as np
import pytest

from palettefield import dataio, optimizer
from palettefield.optimizer import TrainConfig
from palettefield.palette import Palette


@pytest.fixture(scope="session")
def small_image():
    """A 24x24 composite of two blob layers over a dark background."""
    palette = Palette(
        np.array([[0.08, 0.08, 0.12], [0.85, 0.12, 0.1], [0.1, 0.75, 0.25]])
    )
    layers = dataio.make_blob_layers(24, 24, palette.K, seed=11)
    image, _ = dataio.generate_synthetic_2d(dataio.SyntheticSpec2D(palette, layers))
    return image, palette


@pytest.fixture(scope="session")
def small_image_png(small_image, tmp_path_factory):
    image, _ = small_image
    path = tmp_path_factory.mktemp("inputs") / "small.png"
    dataio.write_png(path, image)
    return path


@pytest.fixture(scope="session")
def ckpt_2d(small_image, tmp_path_factory):
    image, palette = small_image
    config = TrainConfig(mode="2d", K=palette.K, iterations=120, batch_rays=256,
                         seed=7)
    path = tmp_path_factory.mktemp("ckpts") / "small2d.pf"
    result = optimizer.fit(image, config, checkpoint_path=path)
    return path, result


@pytest.fixture(scope="session")
def ckpt_3d(tmp_path_factory):
    """Tiny 3D checkpoint whose views include miss regions (box corners)."""
    palette = Palette(
        np.array([[0.9, 0.9, 0.85], [0.8, 0.15, 0.1], [0.12, 0.2, 0.8]])
    )
    spec = dataio.SyntheticSpec3D(
        palette,
        [
            dataio.SpherePrimitive((-0.3, 0.0, 0.0), 0.35, layer=1),
            dataio.BoxPrimitive((0.4, 0.0, 0.0), (0.25, 0.25, 0.25), layer=2),
        ],
        grid_resolution=16,
    )
    cameras = dataio.orbit_cameras(3, radius=4.5, width=24, height=24,
                                   fov_x_deg=50.0, far=10.0)
    dataset = dataio.generate_synthetic_3d(spec, cameras, samples_per_ray=32)
    config = TrainConfig(mode="3d", K=2, iterations=10, batch_rays=256,
                         grid_resolution=16, samples_per_ray=32, seed=2)
    path = tmp_path_factory.mktemp("ckpts") / "small3d.pf"
    result = optimizer.fit(dataset, config, checkpoint_path=path)
    return path, result
