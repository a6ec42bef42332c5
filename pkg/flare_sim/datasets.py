from pathlib import Path

from constants import IMAGE_SUFFIXES
from errors import DataError
from logging_config import get_logger

logger = get_logger(__name__)


def list_images(directory: Path) -> list[Path]:
    """List the PNG images of a directory, sorted by file name.

    Args:
        directory: Directory holding the images (not searched recursively)

    Returns:
        list[Path]: Image paths in file-name order

    Raises:
        DataError: If the directory does not exist or holds no image
    """
    if not directory.is_dir():
        msg = f"Image directory does not exist: {directory}"
        logger.error(msg)
        raise DataError(msg)
    images = sorted(
        path
        for path in directory.iterdir()
        if path.is_file() and path.suffix.lower() in IMAGE_SUFFIXES
    )
    if not images:
        msg = f"No PNG images found in {directory}"
        logger.error(msg)
        raise DataError(msg)
    logger.debug("Found %d images in %s", len(images), directory)
    return images


def pair_by_name(pred_dir: Path, gt_dir: Path) -> list[tuple[str, Path, Path]]:
    """Pair the images of two directories by file name.

    Args:
        pred_dir: Directory of restored images
        gt_dir: Directory of ground-truth images

    Returns:
        list[tuple[str, Path, Path]]: (name, prediction, ground truth) in name order

    Raises:
        DataError: If either directory is empty or a file has no counterpart
    """
    preds = {path.name: path for path in list_images(pred_dir)}
    gts = {path.name: path for path in list_images(gt_dir)}
    unpaired = sorted(set(preds) ^ set(gts))
    if unpaired:
        msg = f"Unpaired files between {pred_dir} and {gt_dir}: {unpaired}"
        logger.error(msg)
        raise DataError(msg)
    return [(name, preds[name], gts[name]) for name in sorted(preds)]


def find_mask(mask_dir: Path | None, name: str) -> Path | None:
    """Mask image for `name` in `mask_dir`, or None when there is no mask directory or file."""
    if mask_dir is None:
        return None
    candidate = mask_dir / name
    return candidate if candidate.is_file() else None
