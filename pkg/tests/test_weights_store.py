"""Tests for weights_store module."""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest
from core import dump_tensor
from errors import DataError
from weights_store import (
    flatten_params,
    load_manifest,
    load_tensors,
    require,
    restore_params,
    save_tensors,
)


@dataclass(frozen=True, eq=False)
class _Inner:
    w: np.ndarray
    rate: int = 2


@dataclass(frozen=True, eq=False)
class _Outer:
    head: np.ndarray
    blocks: tuple[_Inner, ...]


class TestSaveLoad:
    """Test cases for save_tensors and load_tensors."""

    def test_round_trip_keeps_order_and_meta(self, tmp_path: Path) -> None:
        """Test that names, order, values and meta come back."""
        tensors = {"b": np.arange(6.0).reshape(2, 3), "a": np.ones(4)}
        save_tensors(tmp_path, tensors, {"kind": "test", "stages": 2})
        loaded, meta = load_tensors(tmp_path)
        assert list(loaded) == ["b", "a"]
        np.testing.assert_array_equal(loaded["b"], tensors["b"])
        assert loaded["a"].dtype == np.float64
        assert meta == {"kind": "test", "stages": 2}

    def test_accepts_manifest_path(self, tmp_path: Path) -> None:
        """Test that the manifest file itself can be passed."""
        save_tensors(tmp_path, {"x": np.zeros(1)}, {})
        loaded, _ = load_tensors(tmp_path / "manifest.json")
        assert list(loaded) == ["x"]

    def test_missing_manifest(self, tmp_path: Path) -> None:
        """Test that a directory without a manifest raises FileNotFoundError."""
        with pytest.raises(FileNotFoundError, match="manifest"):
            load_manifest(tmp_path)

    def test_malformed_manifest(self, tmp_path: Path) -> None:
        """Test that an unparsable manifest raises DataError."""
        (tmp_path / "manifest.json").write_text("{not json", encoding="utf-8")
        with pytest.raises(DataError, match="Cannot parse"):
            load_manifest(tmp_path)

    def test_unsupported_version(self, tmp_path: Path) -> None:
        """Test that other manifest versions are refused."""
        payload = json.dumps({"version": 9, "tensors": []})
        (tmp_path / "manifest.json").write_text(payload, encoding="utf-8")
        with pytest.raises(DataError, match="Unsupported"):
            load_manifest(tmp_path)

    def test_shape_disagreement(self, tmp_path: Path) -> None:
        """Test that a tensor whose shape differs from the manifest is rejected."""
        save_tensors(tmp_path, {"x": np.zeros((2, 2))}, {})
        manifest = json.loads((tmp_path / "manifest.json").read_text(encoding="utf-8"))
        dump_tensor(tmp_path / manifest["tensors"][0]["file"], np.zeros(3))
        with pytest.raises(DataError, match="manifest says"):
            load_tensors(tmp_path)

    def test_require_missing(self) -> None:
        """Test that require names the missing tensor."""
        with pytest.raises(DataError, match="'gone'"):
            require({}, "gone")


class TestParamTrees:
    """Test cases for flatten_params and restore_params."""

    def test_flatten_names(self) -> None:
        """Test dotted names through dataclasses and tuples."""
        params = _Outer(head=np.zeros(2), blocks=(_Inner(w=np.ones(3)), _Inner(w=np.ones(1))))
        assert list(flatten_params(params)) == ["head", "blocks.0.w", "blocks.1.w"]

    def test_restore_replaces_arrays(self) -> None:
        """Test that arrays are swapped in and plain leaves are kept."""
        template = _Outer(head=np.zeros(2), blocks=(_Inner(w=np.zeros(3), rate=4),))
        tensors = {"head": np.array([1.0, 2.0]), "blocks.0.w": np.array([3.0, 4.0, 5.0])}
        restored = restore_params(template, tensors)
        np.testing.assert_array_equal(restored.head, [1.0, 2.0])
        np.testing.assert_array_equal(restored.blocks[0].w, [3.0, 4.0, 5.0])
        assert restored.blocks[0].rate == 4  # noqa: PLR2004

    def test_restore_shape_mismatch(self) -> None:
        """Test that a wrongly shaped tensor is rejected."""
        template = _Outer(head=np.zeros(2), blocks=())
        with pytest.raises(DataError, match="expected"):
            restore_params(template, {"head": np.zeros(3)})
