"""Named-tensor weight sets on disk: one tensor dump per parameter plus `manifest.json`."""

import dataclasses
import json
from pathlib import Path
from typing import Any

import numpy as np
from constants import MANIFEST_FILENAME
from core import FloatArray, dump_tensor, load_tensor
from errors import DataError
from logging_config import get_logger
from utils import atomic_write_text

logger = get_logger(__name__)

MANIFEST_VERSION = 1
TENSOR_SUFFIX = ".tensor"


def save_tensors(directory: Path, tensors: dict[str, FloatArray], meta: dict[str, Any]) -> None:
    """Write every tensor in insertion order and a manifest recording order, shapes and `meta`."""
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for index, (name, tensor) in enumerate(tensors.items()):
        filename = f"{index:04d}_{name}{TENSOR_SUFFIX}"
        dump_tensor(directory / filename, tensor)
        entries.append({"name": name, "file": filename, "shape": list(np.shape(tensor))})
    manifest = {"version": MANIFEST_VERSION, "tensors": entries, "meta": meta}
    atomic_write_text(directory / MANIFEST_FILENAME, json.dumps(manifest, indent=2, sort_keys=True))
    logger.info("Saved %d tensors to %s", len(entries), directory)


def load_manifest(directory: Path) -> dict[str, Any]:
    """Read and check the manifest of a weight directory (or the manifest file itself).

    Raises:
        FileNotFoundError: If the manifest is missing.
        DataError: If the manifest is malformed.
    """
    manifest_path = directory if directory.is_file() else directory / MANIFEST_FILENAME
    if not manifest_path.is_file():
        msg = f"Weight manifest not found: {manifest_path}"
        logger.error(msg)
        raise FileNotFoundError(msg)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as err:
        msg = f"Cannot parse weight manifest {manifest_path}: {err}"
        logger.exception(msg)
        raise DataError(msg) from err
    if (
        not isinstance(manifest, dict)
        or manifest.get("version") != MANIFEST_VERSION
        or not isinstance(manifest.get("tensors"), list)
    ):
        msg = f"Unsupported weight manifest layout in {manifest_path}"
        logger.error(msg)
        raise DataError(msg)
    return manifest


def load_tensors(directory: Path) -> tuple[dict[str, FloatArray], dict[str, Any]]:
    """Load every tensor listed in the manifest, as float64, with the manifest's `meta`.

    Raises:
        FileNotFoundError: If the manifest or a listed tensor is missing.
        DataError: If a tensor is corrupt or its shape disagrees with the manifest.
    """
    if directory.is_file():
        directory = directory.parent
    manifest = load_manifest(directory)
    tensors: dict[str, FloatArray] = {}
    for entry in manifest["tensors"]:
        try:
            name, filename, shape = entry["name"], entry["file"], tuple(entry["shape"])
        except (KeyError, TypeError) as err:
            msg = f"Malformed tensor entry {entry!r} in {directory}"
            raise DataError(msg) from err
        values = load_tensor(directory / filename).astype(np.float64)
        if values.shape != shape:
            msg = f"Tensor {name} has shape {values.shape}, manifest says {shape}"
            logger.error(msg)
            raise DataError(msg)
        tensors[name] = values
    logger.debug("Loaded %d tensors from %s", len(tensors), directory)
    return tensors, dict(manifest.get("meta", {}))


def require(tensors: dict[str, FloatArray], name: str) -> FloatArray:
    """Fetch a named tensor.

    Raises:
        DataError: If the weight set lacks `name`.
    """
    try:
        return tensors[name]
    except KeyError as err:
        msg = f"Weight set is missing tensor {name!r}"
        raise DataError(msg) from err


def flatten_params(params: Any, prefix: str = "") -> dict[str, FloatArray]:
    """Name every array reachable through nested dataclasses and tuples, e.g. `ffem.se.w1`."""
    if isinstance(params, np.ndarray):
        return {prefix: params}
    named: dict[str, FloatArray] = {}
    if dataclasses.is_dataclass(params) and not isinstance(params, type):
        for field in dataclasses.fields(params):
            key = f"{prefix}.{field.name}" if prefix else field.name
            named |= flatten_params(getattr(params, field.name), key)
    elif isinstance(params, tuple | list):
        for index, item in enumerate(params):
            named |= flatten_params(item, f"{prefix}.{index}" if prefix else str(index))
    return named


def restore_params(template: Any, tensors: dict[str, FloatArray], prefix: str = "") -> Any:
    """Rebuild `template` with every array replaced by the equally named, equally shaped tensor.

    Non-array leaves (activations, dilation rates) are kept from the template.

    Raises:
        DataError: If a tensor is missing or has the wrong shape.
    """
    if isinstance(template, np.ndarray):
        values = require(tensors, prefix)
        if values.shape != template.shape:
            msg = f"Tensor {prefix} has shape {values.shape}, expected {template.shape}"
            raise DataError(msg)
        return values
    if dataclasses.is_dataclass(template) and not isinstance(template, type):
        updates = {
            field.name: restore_params(
                getattr(template, field.name),
                tensors,
                f"{prefix}.{field.name}" if prefix else field.name,
            )
            for field in dataclasses.fields(template)
        }
        return dataclasses.replace(template, **updates)
    if isinstance(template, tuple | list):
        return type(template)(
            restore_params(item, tensors, f"{prefix}.{index}" if prefix else str(index))
            for index, item in enumerate(template)
        )
    return template
