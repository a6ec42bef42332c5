"""Tests for datasets module."""

from collections.abc import Callable
from pathlib import Path

import pytest
from datasets import find_mask, list_images, pair_by_name
from errors import DataError


class TestListImages:
    """Test cases for list_images function."""

    def test_sorted_png_only(self, png_dir: Callable[..., Path]) -> None:
        """Test that only PNG files are listed, in name order."""
        directory = png_dir("imgs", count=3)
        (directory / "notes.txt").write_text("ignored", encoding="utf-8")
        names = [path.name for path in list_images(directory)]
        assert names == ["img_000.png", "img_001.png", "img_002.png"]

    def test_missing_directory(self, tmp_path: Path) -> None:
        """Test that a missing directory raises DataError."""
        with pytest.raises(DataError, match="does not exist"):
            list_images(tmp_path / "absent")

    def test_empty_directory(self, tmp_path: Path) -> None:
        """Test that a directory without images raises DataError."""
        with pytest.raises(DataError, match="No PNG images"):
            list_images(tmp_path)


class TestPairByName:
    """Test cases for pair_by_name function."""

    def test_pairs_matching_names(self, png_dir: Callable[..., Path]) -> None:
        """Test that files are paired by name."""
        pred, gt = png_dir("pred"), png_dir("gt")
        pairs = pair_by_name(pred, gt)
        assert [name for name, _, _ in pairs] == ["img_000.png", "img_001.png"]
        assert pairs[0][1].parent == pred
        assert pairs[0][2].parent == gt

    def test_unpaired_file(self, png_dir: Callable[..., Path]) -> None:
        """Test that a file without a counterpart is reported."""
        pred, gt = png_dir("pred", count=3), png_dir("gt", count=2)
        with pytest.raises(DataError, match="img_002.png"):
            pair_by_name(pred, gt)


class TestFindMask:
    """Test cases for find_mask function."""

    def test_present_and_absent(self, png_dir: Callable[..., Path]) -> None:
        """Test lookup of an existing and a missing mask."""
        masks = png_dir("masks", count=1)
        assert find_mask(masks, "img_000.png") == masks / "img_000.png"
        assert find_mask(masks, "img_001.png") is None

    def test_no_directory(self) -> None:
        """Test that no mask directory means no mask."""
        assert find_mask(None, "img_000.png") is None
