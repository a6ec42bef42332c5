"""Spatially varying PSF convolution and flare/background compositing."""

import numpy as np
from constants import BRUTE_FORCE_MAX_SIDE, DEFAULT_LIGHT_THRESHOLD
from core import ImageF, luminance
from errors import DataError
from logging_config import get_logger
from optics import PSFBasis
from schemas import CompositeRecipe
from scipy import signal

logger = get_logger(__name__)


def _check_resolution(clear: ImageF, basis: PSFBasis) -> None:
    if basis.image_size != (clear.height, clear.width):
        msg = (
            f"Coefficient maps are {basis.image_size[0]}x{basis.image_size[1]} "
            f"but the image is {clear.height}x{clear.width}"
        )
        raise DataError(msg)


def sv_convolve(clear: ImageF, basis: PSFBasis) -> ImageF:
    """Blur `clear` with a per-pixel PSF assembled from the basis.

    out(x) = sum_i beta_i(x) * (phi_i conv clear)(x), with each kernel centred on its middle
    tap and zero padding outside the image. Channels are processed independently.

    Raises:
        DataError: If the coefficient maps do not match the image resolution.
    """
    _check_resolution(clear, basis)
    out = np.zeros(clear.shape)
    for channel in range(clear.channels):
        plane = clear.data[:, :, channel]
        for kernel, weights in zip(basis.bases, basis.coeff_maps, strict=True):
            out[:, :, channel] += weights * signal.convolve(plane, kernel, mode="same")
    return ImageF(out)


def brute_force_sv(clear: ImageF, basis: PSFBasis) -> ImageF:
    """Per-pixel reference: out(x) = sum_u h_x(u) * clear(x - u), h_x rebuilt at every pixel.

    Raises:
        ValueError: If either image side exceeds 64 pixels.
        DataError: If the coefficient maps do not match the image resolution.
    """
    if max(clear.height, clear.width) > BRUTE_FORCE_MAX_SIDE:
        msg = f"brute_force_sv is limited to {BRUTE_FORCE_MAX_SIDE}px sides, got {clear.shape[:2]}"
        raise ValueError(msg)
    _check_resolution(clear, basis)

    size = basis.kernel_size
    half = size // 2
    padded = np.pad(clear.data, ((half, half), (half, half), (0, 0)))
    out = np.zeros(clear.shape)
    for row in range(clear.height):
        for col in range(clear.width):
            kernel = np.tensordot(basis.coeff_maps[:, row, col], basis.bases, axes=1)
            window = padded[row : row + size, col : col + size][::-1, ::-1]
            out[row, col] = np.tensordot(kernel, window, axes=([0, 1], [0, 1]))
    return ImageF(out)


def light_source_core(
    flare: ImageF, luminance_threshold: float = DEFAULT_LIGHT_THRESHOLD
) -> ImageF:
    """Keep the flare only where its luminance reaches `luminance_threshold`.

    Raises:
        ValueError: If the threshold is outside (0, 1].
    """
    if not 0 < luminance_threshold <= 1:
        msg = f"luminance_threshold must be in (0, 1], got {luminance_threshold}"
        raise ValueError(msg)
    mask = luminance(flare) >= luminance_threshold
    return ImageF(flare.data * mask[:, :, np.newaxis])


def composite(
    background: ImageF, flare: ImageF, recipe: CompositeRecipe
) -> tuple[ImageF, ImageF]:
    """Merge a flare onto a background in linear light.

    Returns:
        tuple[ImageF, ImageF]: `input = clip(background + gain * flare, 0, clip_high)` and the
        ground truth, the background plus (when enabled) the flare's light-source core,
        clipped to the same range.

    Raises:
        DataError: If the images differ in shape or are not RGB.
    """
    if background.shape != flare.shape:
        msg = f"Background {background.shape} and flare {flare.shape} differ in shape"
        raise DataError(msg)
    if background.channels != 3:  # noqa: PLR2004
        msg = f"Compositing needs RGB images, got {background.channels} channel(s)"
        raise DataError(msg)

    scaled_flare = flare.data * recipe.flare_gain
    merged = np.clip(background.data + scaled_flare, 0.0, recipe.clip_high)
    target = background.data
    if recipe.include_light_source_in_gt:
        core = light_source_core(ImageF(scaled_flare), recipe.light_threshold)
        target = target + core.data
    target = np.clip(target, 0.0, recipe.clip_high)
    return ImageF(merged), ImageF(target)
