"""Test configuration and fixtures."""

import tempfile
from collections.abc import Callable, Generator
from pathlib import Path
from typing import Any

import numpy as np
import pytest
import yaml
from config import parse_config
from core import ImageF, save_png
from schemas import RunConfig


@pytest.fixture()
def rng() -> np.random.Generator:
    """Deterministic numpy generator for building test inputs."""
    return np.random.default_rng(1234)


@pytest.fixture()
def random_image(rng: np.random.Generator) -> Callable[..., ImageF]:
    """Factory for random images in [0, 1)."""

    def make(height: int = 16, width: int = 16, channels: int = 3) -> ImageF:
        return ImageF(rng.random((height, width, channels)))

    return make


@pytest.fixture()
def small_config_data() -> dict[str, Any]:
    """Configuration document sized for fast tests."""
    return {
        "optics": {
            "pupil_grid": 16,
            "radius_frac": 0.5,
            "kernel_size": 7,
            "anchor_rows": 2,
            "anchor_cols": 2,
        },
        "turbulence": {"n_modes": 6, "base_sigma": 0.5, "decay_alpha": 1.0},
        "basis": {"n_bases": 2},
        "augment": {"translation_px": [-4.0, 4.0]},
        "composite": {"resolution": [32, 32]},
        "model": {"stages": 2, "base_channels": 8, "blocks_per_stage": 1},
    }


@pytest.fixture()
def small_config(small_config_data: dict[str, Any]) -> RunConfig:
    """Validated `RunConfig` built from `small_config_data`."""
    return parse_config(small_config_data)


@pytest.fixture()
def temp_config_file(small_config_data: dict[str, Any]) -> Generator[Path, None, None]:
    """Create a temporary config file."""
    with tempfile.NamedTemporaryFile(mode="w", suffix=".yaml", delete=False) as f:
        yaml.dump(small_config_data, f)
        temp_path = Path(f.name)

    yield temp_path
    temp_path.unlink()


@pytest.fixture()
def png_dir(tmp_path: Path, rng: np.random.Generator) -> Callable[..., Path]:
    """Factory writing a directory of random RGB PNGs named `img_000.png`, `img_001.png`, ..."""

    def make(name: str, count: int = 2, height: int = 24, width: int = 24) -> Path:
        directory = tmp_path / name
        directory.mkdir()
        for index in range(count):
            save_png(ImageF(rng.random((height, width, 3))), directory / f"img_{index:03d}.png")
        return directory

    return make


@pytest.fixture()
def flare_dir(tmp_path: Path) -> Path:
    """Two synthetic flare PNGs: a bright spot with a soft halo on black."""
    directory = tmp_path / "flares"
    directory.mkdir()
    y, x = np.mgrid[0:40, 0:40]
    for index, (cy, cx) in enumerate(((20, 20), (12, 28))):
        radius2 = (y - cy) ** 2 + (x - cx) ** 2
        glow = np.exp(-radius2 / 40.0)
        flare = ImageF(np.stack([glow, 0.8 * glow, 0.6 * glow], axis=2))
        save_png(flare, directory / f"f{index}.png")
    return directory
