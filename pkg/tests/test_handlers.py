"""Tests for handlers module."""

import json
from collections.abc import Callable
from pathlib import Path
from typing import Any

import numpy as np
import pytest
from core import ImageF, SeededRng, load_png, save_png
from errors import DataError
from handlers import (
    handle_augment,
    handle_composite,
    handle_eval,
    handle_forward,
    handle_gen_psf,
    handle_init_weights,
    handle_synthesize,
    handle_vae_sample,
    render_psf_basis,
    render_psf_grid,
    run_batch,
    to_channels,
)
from schemas import AugmentConfig, RunConfig
from scipy import special
from weights_store import load_tensors


def _records(path: Path) -> list[dict[str, Any]]:
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


class TestRenderPsf:
    """Test cases for render_psf_grid and render_psf_basis."""

    def test_grid_shapes(self, small_config: RunConfig) -> None:
        """Test one kernel per configured anchor."""
        field, grid = render_psf_grid(small_config, SeededRng(1))
        assert field.coeffs.shape == (2, 2, 6)
        assert grid.kernels.shape == (2, 2, 7, 7)

    def test_basis_at_composite_resolution(self, small_config: RunConfig) -> None:
        """Test that coefficient maps cover the composite resolution."""
        _, _, basis = render_psf_basis(small_config, SeededRng(1))
        assert basis.n_bases == 2  # noqa: PLR2004
        assert basis.image_size == (32, 32)


class TestToChannels:
    """Test cases for to_channels function."""

    def test_gray_to_rgb(self) -> None:
        """Test that grayscale is repeated across channels."""
        out = to_channels(ImageF(np.full((2, 2, 1), 0.3)), 3)
        assert out.shape == (2, 2, 3)
        np.testing.assert_allclose(out.data, 0.3)

    def test_rgb_to_gray(self) -> None:
        """Test that RGB reduces to luminance."""
        out = to_channels(ImageF(np.ones((2, 2, 3))), 1)
        np.testing.assert_allclose(out.data, 1.0)

    def test_unsupported(self) -> None:
        """Test that other conversions are refused."""
        with pytest.raises(DataError, match="Cannot convert"):
            to_channels(ImageF(np.ones((2, 2, 1))), 2)


class TestRunBatch:
    """Test cases for run_batch function."""

    def test_records_in_index_order(self, tmp_path: Path) -> None:
        """Test that records follow index order whatever the thread count."""
        manifest = tmp_path / "m.jsonl"

        def item(index: int, rng: SeededRng) -> dict[str, Any]:
            return {"index": index, "seed": rng.seed}

        assert run_batch("test", 10, 5, 4, manifest, item) == 5  # noqa: PLR2004
        records = _records(manifest)
        assert [r["index"] for r in records] == [0, 1, 2, 3, 4]
        assert [r["seed"] for r in records] == [10 ^ i for i in range(5)]

    def test_count_must_be_positive(self, tmp_path: Path) -> None:
        """Test that an empty batch is refused."""
        with pytest.raises(ValueError, match="count"):
            run_batch("test", 0, 0, 1, tmp_path / "m.jsonl", lambda i, r: {})

    def test_failure_keeps_prefix(self, tmp_path: Path) -> None:
        """Test that records before a failing item stay on disk."""
        manifest = tmp_path / "m.jsonl"

        def item(index: int, rng: SeededRng) -> dict[str, Any]:
            if index == 2:  # noqa: PLR2004
                msg = "broken input"
                raise DataError(msg)
            return {"index": index}

        with pytest.raises(DataError, match="broken input"):
            run_batch("test", 0, 4, 1, manifest, item)
        assert [r["index"] for r in _records(manifest)] == [0, 1]


class TestHandleGenPsf:
    """Test cases for handle_gen_psf function."""

    def test_writes_tensors_and_heatmaps(self, small_config: RunConfig, tmp_path: Path) -> None:
        """Test the tensor manifest and one heatmap per anchor."""
        result = handle_gen_psf(small_config, 3, tmp_path / "psf")
        assert result["kernels"] == 4  # noqa: PLR2004
        assert all(Path(p).is_file() for p in result["heatmaps"])
        tensors, meta = load_tensors(tmp_path / "psf")
        assert meta["kind"] == "psf"
        assert meta["anchors"] == [2, 2]
        assert tensors["psf_grid"].shape == (2, 2, 7, 7)
        np.testing.assert_allclose(tensors["psf_grid"].sum(axis=(2, 3)), 1.0, atol=1e-5)
        assert tensors["coeff_maps"].shape == (2, 32, 32)


class TestHandleSynthesize:
    """Test cases for handle_synthesize function."""

    def test_pairs_and_manifest(
        self, small_config: RunConfig, flare_dir: Path, png_dir: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test that every pair is written with a plan inside the supports."""
        out = tmp_path / "out"
        result = handle_synthesize(small_config, flare_dir, png_dir("bg"), out, 7, 3, threads=2)
        assert result["pairs"] == 3  # noqa: PLR2004
        for sub in ("input", "gt", "flare"):
            names = sorted(p.name for p in (out / sub).iterdir())
            assert names == ["00000.png", "00001.png", "00002.png"]
        assert load_png(out / "input" / "00000.png").shape == (32, 32, 3)
        records = _records(out / "manifest.jsonl")
        assert [r["flare"] for r in records] == ["f0.png", "f1.png", "f0.png"]
        assert [r["background"] for r in records] == ["img_000.png", "img_001.png", "img_000.png"]
        config = small_config.augment
        for record in records:
            gamma = record["plan"]["gamma"]
            assert config.gamma[0] <= gamma <= config.gamma[1]
            low, high = config.translation_px
            assert all(low <= t <= high for t in record["plan"]["translation"])

    def test_deterministic(
        self, small_config: RunConfig, flare_dir: Path, png_dir: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test that the same seed reproduces byte-identical outputs."""
        bg = png_dir("bg")
        handle_synthesize(small_config, flare_dir, bg, tmp_path / "a", 11, 2, threads=1)
        handle_synthesize(small_config, flare_dir, bg, tmp_path / "b", 11, 2, threads=3)
        for sub in ("input", "gt", "flare"):
            for name in ("00000.png", "00001.png"):
                first = (tmp_path / "a" / sub / name).read_bytes()
                assert first == (tmp_path / "b" / sub / name).read_bytes()
        first = (tmp_path / "a" / "manifest.jsonl").read_text(encoding="utf-8")
        assert first == (tmp_path / "b" / "manifest.jsonl").read_text(encoding="utf-8")

    def test_missing_input_dir(self, small_config: RunConfig, tmp_path: Path) -> None:
        """Test that a missing flare directory raises DataError."""
        with pytest.raises(DataError, match="does not exist"):
            handle_synthesize(small_config, tmp_path / "x", tmp_path / "y", tmp_path / "o", 0, 1)


class TestHandleAugment:
    """Test cases for handle_augment function."""

    def test_background_kind(self, png_dir: Callable[..., Path], tmp_path: Path) -> None:
        """Test background augmentation outputs and op traces."""
        config = RunConfig(augment=AugmentConfig(translation_px=(-2.0, 2.0)))
        out = tmp_path / "aug"
        result = handle_augment(config, png_dir("in", count=1), out, 1, 2, kind="background")
        assert result["outputs"] == 2  # noqa: PLR2004
        records = _records(out / "manifest.jsonl")
        assert records[0]["ops"] == ["inverse_gamma", "rgb_scale", "gaussian_noise"]
        assert records[1]["source"] == "img_000.png"
        assert load_png(out / "00001.png").shape == (24, 24, 3)

    def test_flare_kind(self, small_config: RunConfig, flare_dir: Path, tmp_path: Path) -> None:
        """Test that flare augmentation runs the six flare ops."""
        handle_augment(small_config, flare_dir, tmp_path / "aug", 5, 1)
        record = _records(tmp_path / "aug" / "manifest.jsonl")[0]
        assert record["kind"] == "flare"
        assert len(record["ops"]) == 6  # noqa: PLR2004


class TestHandleComposite:
    """Test cases for handle_composite function."""

    def test_black_flare_keeps_background(
        self, small_config: RunConfig, png_dir: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test that a black flare leaves input and ground truth equal to the background."""
        flares = tmp_path / "black"
        flares.mkdir()
        save_png(ImageF(np.zeros((32, 32, 3))), flares / "dark.png")
        bg = png_dir("bg", height=32, width=32)
        out = tmp_path / "comp"
        handle_composite(small_config, flares, bg, out, 0, 2)
        for index in range(2):
            name = f"{index:05d}.png"
            source = load_png(bg / f"img_{index:03d}.png").data
            np.testing.assert_allclose(load_png(out / "input" / name).data, source, atol=1 / 255)
            np.testing.assert_allclose(load_png(out / "gt" / name).data, source, atol=1 / 255)
        assert len(_records(out / "manifest.jsonl")) == 2  # noqa: PLR2004


class TestHandleEval:
    """Test cases for handle_eval function."""

    def test_identical_sets(
        self, small_config: RunConfig, png_dir: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test that identical images give SSIM 1 and an infinite-PSNR flag."""
        images = png_dir("gt")
        report = tmp_path / "report.json"
        document = handle_eval(small_config, images, images, report)
        assert document["aggregate"]["ssim"] == pytest.approx(1.0)
        assert document["aggregate"]["psnr"] is None
        assert document["aggregate"]["psnr_infinite"] == 2  # noqa: PLR2004
        assert set(document["flags"]) == {
            "glare_masks_missing",
            "streak_masks_missing",
            "lpips_missing",
            "psnr_infinite",
        }
        assert json.loads(report.read_text(encoding="utf-8")) == document

    def test_masks_and_scores(
        self, small_config: RunConfig, png_dir: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test region PSNR statuses and external LPIPS scores."""
        pred, gt = png_dir("pred"), png_dir("gt")
        masks = tmp_path / "glare"
        masks.mkdir()
        save_png(ImageF(np.ones((24, 24, 1))), masks / "img_000.png")
        save_png(ImageF(np.zeros((24, 24, 1))), masks / "img_001.png")
        scores = tmp_path / "lpips.json"
        scores.write_text('{"img_000.png": 0.2, "img_001.png": 0.4}', encoding="utf-8")

        document = handle_eval(
            small_config, pred, gt, tmp_path / "r.json", glare_masks=masks, lpips_scores=scores
        )
        first, second = document["per_image"]
        assert first["g_psnr_status"] == "ok"
        assert first["g_psnr"] == pytest.approx(first["psnr"])
        assert second["g_psnr_status"] == "empty_mask"
        assert second["g_psnr"] is None
        assert first["s_psnr_status"] == "no_mask"
        assert document["aggregate"]["lpips"] == pytest.approx(0.3)
        assert document["aggregate"]["g_psnr_count"] == 1
        assert "glare_masks_empty" in document["flags"]
        assert "lpips_missing" not in document["flags"]

    def test_shape_mismatch_names_files(
        self, small_config: RunConfig, png_dir: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test that differently sized pairs are reported with their paths."""
        pred = png_dir("pred", count=1, height=24, width=24)
        gt = png_dir("gt", count=1, height=24, width=32)
        with pytest.raises(DataError, match="img_000.png"):
            handle_eval(small_config, pred, gt, tmp_path / "r.json")


class TestModelHandlers:
    """Test cases for handle_init_weights, handle_forward and handle_vae_sample."""

    def test_zero_weights_forward(
        self, small_config: RunConfig, png_dir: Callable[..., Path], tmp_path: Path
    ) -> None:
        """Test that zero weights produce sigmoid(input)."""
        weights = tmp_path / "w"
        handle_init_weights(small_config, 0, weights, "slcformer", zero=True, size=32)
        source = png_dir("in", count=1, height=16, width=16) / "img_000.png"
        output = tmp_path / "restored.png"
        result = handle_forward(small_config, source, weights, output)
        assert result["shape"] == [16, 16, 3]
        expected = special.expit(load_png(source).data)
        np.testing.assert_allclose(load_png(output).data, expected, atol=0.5 / 255 + 1e-9)

    def test_vae_sample_seeded(self, small_config: RunConfig, tmp_path: Path) -> None:
        """Test that VAE samples repeat for a seed and follow the stored weights."""
        weights = tmp_path / "zvae"
        handle_init_weights(small_config, 4, weights, "zvae", zero=False, size=8)
        handle_vae_sample(small_config, 9, tmp_path / "a.png", weights, size=32)
        handle_vae_sample(small_config, 9, tmp_path / "b.png", weights, size=32)
        assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
        assert load_png(tmp_path / "a.png").shape == (8, 8, 3)

    def test_vae_input_width_checked(self, small_config: RunConfig, tmp_path: Path) -> None:
        """Test that VAE weights built for another anchor grid are refused."""
        weights = tmp_path / "zvae"
        handle_init_weights(RunConfig(), 4, weights, "zvae", zero=True, size=4)
        with pytest.raises(DataError, match="encoder takes"):
            handle_vae_sample(small_config, 1, tmp_path / "x.png", weights, size=4)
