"""Restoration metrics (PSNR, SSIM, region PSNR) and training-loss terms with analytic gradients."""

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from constants import LOSS_WEIGHTS_DEFAULT, SSIM_K1, SSIM_K2, SSIM_SIGMA, SSIM_WINDOW
from core import FloatArray, ImageF, load_png, luminance, resize
from errors import DataError
from logging_config import get_logger
from scipy import signal
from skimage.metrics import structural_similarity
from utils import load_json_document

logger = get_logger(__name__)

MaskKind = Literal["glare", "streak", "full"]

LAPLACIAN = np.array([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
SOBEL_X = np.array([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])
SOBEL_Y = SOBEL_X.T


@dataclass(frozen=True, eq=False)
class RegionMask:
    grid: FloatArray
    kind: MaskKind = "full"

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=np.float64)
        if grid.ndim != 2 or grid.min() < 0 or grid.max() > 1:  # noqa: PLR2004
            msg = "Region mask must be a 2-D grid with values in [0, 1]"
            raise ValueError(msg)
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True)
class LossWeights:
    l1: float = LOSS_WEIGHTS_DEFAULT[0]
    vgg: float = LOSS_WEIGHTS_DEFAULT[1]
    rec: float = LOSS_WEIGHTS_DEFAULT[2]
    hf: float = LOSS_WEIGHTS_DEFAULT[3]

    def __post_init__(self) -> None:
        if min(self.l1, self.vgg, self.rec, self.hf) < 0:
            msg = f"Loss weights must be >= 0, got {self}"
            raise ValueError(msg)


@dataclass(frozen=True)
class LossParts:
    """Loss components; `vgg` is None when no perceptual score is plugged in."""

    l1: float
    rec: float
    hf: float
    vgg: float | None = None


def _check_shapes(a: ImageF, b: ImageF) -> None:
    if a.shape != b.shape:
        msg = f"Image shapes differ: {a.shape} vs {b.shape}"
        raise ValueError(msg)


def _psnr_from_diff(diff: FloatArray, peak: float) -> float:
    mse = float(np.mean(diff * diff))
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def psnr(a: ImageF, b: ImageF, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over every sample; `math.inf` when the images are equal.

    Raises:
        ValueError: If the shapes differ or `peak` is not positive.
    """
    _check_shapes(a, b)
    if peak <= 0:
        msg = f"peak must be positive, got {peak}"
        raise ValueError(msg)
    return _psnr_from_diff((a.data - b.data).ravel(), peak)


def masked_psnr(
    a: ImageF, b: ImageF, mask: RegionMask, thresh: float = 0.5, peak: float = 1.0
) -> float:
    """PSNR over the pixels where `mask >= thresh` (G-PSNR for glare, S-PSNR for streak masks).

    Raises:
        ValueError: If the shapes differ or the mask selects no pixel.
    """
    _check_shapes(a, b)
    if mask.grid.shape != (a.height, a.width):
        msg = f"Mask shape {mask.grid.shape} does not match image {a.shape[:2]}"
        raise ValueError(msg)
    selected = mask.grid >= thresh
    if not selected.any():
        msg = f"{mask.kind} mask selects no pixel at threshold {thresh}"
        raise ValueError(msg)
    return _psnr_from_diff((a.data - b.data)[selected].ravel(), peak)


def _gray(img: ImageF) -> FloatArray:
    return img.data.mean(axis=2)


def ssim(a: ImageF, b: ImageF, peak: float = 1.0) -> float:
    """Mean structural similarity of the channel-mean images.

    Gaussian-weighted 11×11 window (sigma 1.5), population statistics, K1 = 0.01, K2 = 0.03,
    dynamic range `peak`, averaged over the positions where the window fits.

    Raises:
        ValueError: If the shapes differ or the image is smaller than the window.
    """
    _check_shapes(a, b)
    if min(a.height, a.width) < SSIM_WINDOW:
        msg = f"SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {a.shape[:2]}"
        raise ValueError(msg)
    score = structural_similarity(
        _gray(a),
        _gray(b),
        data_range=peak,
        gaussian_weights=True,
        sigma=SSIM_SIGMA,
        use_sample_covariance=False,
        K1=SSIM_K1,
        K2=SSIM_K2,
    )
    return float(score)


def l1_loss(pred: ImageF, gt: ImageF) -> float:
    _check_shapes(pred, gt)
    return float(np.mean(np.abs(pred.data - gt.data)))


def grad_l1(pred: ImageF, gt: ImageF) -> ImageF:
    """Subgradient of `l1_loss` with respect to `pred` (zero at ties)."""
    _check_shapes(pred, gt)
    diff = pred.data - gt.data
    return ImageF(np.sign(diff) / diff.size)


def _reflect_index(height: int, width: int) -> np.ndarray:
    """Flat source index of every sample of the 1-pixel reflect-padded plane."""
    return np.pad(np.arange(height * width).reshape(height, width), 1, mode="reflect")


def _responses(
    plane: FloatArray, index: np.ndarray, kernels: tuple[FloatArray, ...]
) -> FloatArray:
    padded = plane.ravel()[index]
    return np.stack([signal.correlate2d(padded, kernel, mode="valid") for kernel in kernels])


def _adjoint(
    upstream: FloatArray, index: np.ndarray, kernels: tuple[FloatArray, ...], shape: tuple[int, int]
) -> FloatArray:
    """Pull response gradients back through the correlation and the reflect padding."""
    padded_grad = sum(
        signal.convolve2d(grad, kernel, mode="full")
        for grad, kernel in zip(upstream, kernels, strict=True)
    )
    grad = np.zeros(shape[0] * shape[1])
    np.add.at(grad, index.ravel(), np.asarray(padded_grad).ravel())
    return grad.reshape(shape)


def _hf_terms(pred: ImageF, gt: ImageF) -> list[tuple[tuple[FloatArray, ...], FloatArray]]:
    """Per operator: its kernels and the stacked response differences (channel, k, H, W)."""
    if min(pred.height, pred.width) < 3:  # noqa: PLR2004
        msg = f"hf_loss needs images of at least 3x3, got {pred.shape[:2]}"
        raise ValueError(msg)
    index = _reflect_index(pred.height, pred.width)
    diff = pred.data - gt.data
    terms = []
    for kernels in ((LAPLACIAN,), (SOBEL_X, SOBEL_Y)):
        responses = np.stack(
            [_responses(diff[:, :, c], index, kernels) for c in range(pred.channels)]
        )
        terms.append((kernels, responses))
    return terms


def hf_loss(pred: ImageF, gt: ImageF) -> float:
    """High-frequency loss over reflect-padded Laplacian and Sobel responses.

    Half the mean absolute Laplacian difference plus half the mean absolute difference of
    the stacked Sobel x/y responses.

    Raises:
        ValueError: If the shapes differ or the images are smaller than 3×3.
    """
    _check_shapes(pred, gt)
    return sum(0.5 * float(np.mean(np.abs(r))) for _, r in _hf_terms(pred, gt))


def grad_hf(pred: ImageF, gt: ImageF) -> ImageF:
    """Gradient of `hf_loss` with respect to `pred`, via the kernels' adjoints on the sign maps."""
    _check_shapes(pred, gt)
    index = _reflect_index(pred.height, pred.width)
    grad = np.zeros(pred.shape)
    for kernels, responses in _hf_terms(pred, gt):
        upstream = 0.5 * np.sign(responses) / responses.size
        for channel in range(pred.channels):
            grad[:, :, channel] += _adjoint(
                upstream[channel], index, kernels, (pred.height, pred.width)
            )
    return ImageF(grad)


def rec_loss(
    pred_scene: ImageF, input_flare_img: ImageF, gt_flare: ImageF, mask: RegionMask
) -> float:
    """Masked L1 between the implied flare (`input - pred_scene`) and the ground-truth flare.

    Raises:
        ValueError: If shapes differ or the mask is empty.
    """
    _check_shapes(pred_scene, input_flare_img)
    _check_shapes(pred_scene, gt_flare)
    if mask.grid.shape != (pred_scene.height, pred_scene.width):
        msg = f"Mask shape {mask.grid.shape} does not match image {pred_scene.shape[:2]}"
        raise ValueError(msg)
    weight = mask.grid[:, :, np.newaxis]
    total = float(weight.sum()) * pred_scene.channels
    if total == 0:
        msg = "rec_loss mask is empty"
        raise ValueError(msg)
    residual = np.abs(input_flare_img.data - pred_scene.data - gt_flare.data)
    return float(np.sum(residual * weight) / total)


def flare_reconstruction_mask(flare: ImageF, luminance_threshold: float) -> RegionMask:
    """Mask for `rec_loss`: every pixel outside the flare's saturated light-source core."""
    core = luminance(flare) >= luminance_threshold
    return RegionMask(grid=(~core).astype(np.float64), kind="full")


def total_loss(parts: LossParts, w: LossWeights | None = None) -> float:
    """Weighted sum l1, vgg, rec, hf (default weights 0.5, 0.5, 1.0, 1.0).

    A missing vgg term contributes 0 and is reported in the log.

    Raises:
        ValueError: If any component is negative.
    """
    w = w or LossWeights()
    values = [parts.l1, parts.rec, parts.hf] + ([] if parts.vgg is None else [parts.vgg])
    if min(values) < 0:
        msg = f"Loss components must be >= 0, got {parts}"
        raise ValueError(msg)
    if parts.vgg is None:
        logger.warning("vgg loss term absent; contributing 0")
    vgg = 0.0 if parts.vgg is None else parts.vgg
    return w.l1 * parts.l1 + w.vgg * vgg + w.rec * parts.rec + w.hf * parts.hf


def load_region_mask(path: Path, kind: MaskKind, height: int, width: int) -> RegionMask:
    """Read a mask image (luminance for RGB files) at the evaluated resolution."""
    image = resize(load_png(path), height, width)
    return RegionMask(grid=np.clip(luminance(image), 0.0, 1.0), kind=kind)


def load_external_scores(path: Path) -> dict[str, float]:
    """Read `{filename: score}` from a JSON file (LPIPS or other perceptual scores).

    Raises:
        FileNotFoundError: If the file is missing.
        DataError: If the document is not a mapping of names to numbers.
    """
    if not path.is_file():
        msg = f"Score file not found: {path}"
        raise FileNotFoundError(msg)
    try:
        document = load_json_document(path)
    except ValueError as err:
        msg = f"Cannot parse score file {path}: {err}"
        logger.exception(msg)
        raise DataError(msg) from err
    if not isinstance(document, dict) or not all(
        isinstance(v, int | float) and not isinstance(v, bool) for v in document.values()
    ):
        msg = f"Score file {path} must map file names to numbers"
        logger.error(msg)
        raise DataError(msg)
    return {str(name): float(score) for name, score in document.items()}
