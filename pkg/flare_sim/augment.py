"""Seeded photometric and geometric augmentation of flare and background images.

Flare pipeline, in order: inverse_gamma, rgb_scale, affine_warp, gaussian_blur, color_jitter,
intensity_offset. Background pipeline: inverse_gamma, rgb_scale, gaussian_noise.
"""

import math
from dataclasses import asdict, dataclass
from typing import Any

import numpy as np
from core import FloatArray, ImageF, SeededRng
from logging_config import get_logger
from schemas import AugmentConfig
from scipy import ndimage

logger = get_logger(__name__)

IDENTITY_BLUR_SIGMA = 1e-3

Triple = tuple[float, float, float]


@dataclass(frozen=True)
class AugPlan:
    """Every parameter of one augmentation draw; angles in radians, translation in pixels."""

    gamma: float
    rgb_gains: Triple
    noise_var: float
    offset: float
    jitter_gains: Triple
    rotation: float
    translation: tuple[float, float]
    shear: float
    scale: float
    blur_sigma: float

    @classmethod
    def identity(cls) -> "AugPlan":
        """Plan that both pipelines leave images unchanged under; its blur kernel is a delta."""
        return cls(
            gamma=1.0,
            rgb_gains=(1.0, 1.0, 1.0),
            noise_var=0.0,
            offset=0.0,
            jitter_gains=(1.0, 1.0, 1.0),
            rotation=0.0,
            translation=(0.0, 0.0),
            shear=0.0,
            scale=1.0,
            blur_sigma=IDENTITY_BLUR_SIGMA,
        )

    def to_record(self) -> dict[str, Any]:
        record = asdict(self)
        return {key: list(v) if isinstance(v, tuple) else v for key, v in record.items()}

    def support_violations(self, cfg: AugmentConfig) -> list[str]:
        """Names of the fields lying outside the configured supports (empty when valid)."""
        checks: list[tuple[str, tuple[float, ...], tuple[float, float]]] = [
            ("gamma", (self.gamma,), cfg.gamma),
            ("rgb_gains", self.rgb_gains, cfg.rgb_gain),
            ("offset", (self.offset,), cfg.offset),
            ("jitter_gains", self.jitter_gains, cfg.jitter_gain),
            ("rotation", (self.rotation,), cfg.rotation),
            ("translation", self.translation, cfg.translation_px),
            ("shear", (self.shear,), cfg.shear),
            ("scale", (self.scale,), cfg.scale),
            ("blur_sigma", (self.blur_sigma,), cfg.blur_sigma),
        ]
        violations = [
            name
            for name, values, (low, high) in checks
            if any(not low <= value <= high for value in values)
        ]
        if not self.noise_var >= 0:
            violations.append("noise_var")
        return violations


def draw_plan(rng: SeededRng, cfg: AugmentConfig | None = None) -> AugPlan:
    """Draw every parameter independently; the noise variance is `noise_scale * chi2(1)`."""
    cfg = cfg or AugmentConfig()
    generator = rng.generator("augment.plan")

    def uniform(interval: tuple[float, float], size: int | None = None) -> Any:
        return generator.uniform(interval[0], interval[1], size)

    gains = uniform(cfg.rgb_gain, 3)
    jitter = uniform(cfg.jitter_gain, 3)
    translation = uniform(cfg.translation_px, 2)
    return AugPlan(
        gamma=float(uniform(cfg.gamma)),
        rgb_gains=(float(gains[0]), float(gains[1]), float(gains[2])),
        noise_var=float(cfg.noise_scale * generator.chisquare(1)),
        offset=float(uniform(cfg.offset)),
        jitter_gains=(float(jitter[0]), float(jitter[1]), float(jitter[2])),
        rotation=float(uniform(cfg.rotation)),
        translation=(float(translation[0]), float(translation[1])),
        shear=float(uniform(cfg.shear)),
        scale=float(uniform(cfg.scale)),
        blur_sigma=float(uniform(cfg.blur_sigma)),
    )


def _require_rgb(img: ImageF, op: str) -> None:
    if img.channels != 3:  # noqa: PLR2004
        msg = f"{op} needs a 3-channel image, got {img.channels}"
        raise ValueError(msg)


def inverse_gamma(img: ImageF, gamma: float) -> ImageF:
    """Linearize: out = in ** gamma.

    Raises:
        ValueError: If any sample is negative.
    """
    if np.any(img.data < 0):
        msg = "inverse_gamma needs non-negative samples"
        raise ValueError(msg)
    return ImageF(np.power(img.data, gamma))


def rgb_scale(img: ImageF, gains: Triple) -> ImageF:
    _require_rgb(img, "rgb_scale")
    return ImageF(img.data * np.asarray(gains))


def color_jitter(img: ImageF, jitter_gains: Triple) -> ImageF:
    """Per-channel multiplicative gain on a flare."""
    _require_rgb(img, "color_jitter")
    return ImageF(img.data * np.asarray(jitter_gains))


def intensity_offset(img: ImageF, offset: float) -> ImageF:
    """Add `offset` to every sample and clip at zero."""
    _require_rgb(img, "intensity_offset")
    return ImageF(np.maximum(img.data + offset, 0.0))


def gaussian_noise(img: ImageF, var: float, rng: SeededRng) -> ImageF:
    """Add i.i.d. Normal(0, var) samples; no clipping.

    Raises:
        ValueError: If `var` is negative.
    """
    if var < 0:
        msg = f"Noise variance must be >= 0, got {var}"
        raise ValueError(msg)
    if var == 0:
        return img
    noise = rng.generator("augment.noise").normal(0.0, math.sqrt(var), img.shape)
    return ImageF(img.data + noise)


def _forward_matrix(rotation: float, shear: float, scale: float) -> FloatArray:
    """(x, y) matrix of scale, then shear along x, then rotation."""
    cos, sin = math.cos(rotation), math.sin(rotation)
    rotate = np.array([[cos, -sin], [sin, cos]])
    shear_x = np.array([[1.0, math.tan(shear)], [0.0, 1.0]])
    return rotate @ shear_x @ (scale * np.eye(2))


def affine_warp(
    img: ImageF,
    rotation: float,
    translation: tuple[float, float],
    shear: float,
    scale: float,
) -> ImageF:
    """Warp about the image centre: scale, shear, rotate, then translate by (tx, ty) pixels.

    Output pixels are sampled bilinearly from the source through the inverse map; samples
    falling outside the source are zero.
    """
    forward = _forward_matrix(rotation, shear, scale)
    if np.array_equal(forward, np.eye(2)) and translation == (0.0, 0.0):
        return img

    # ndimage works in (row, col) = (y, x) order.
    swap = np.array([[0.0, 1.0], [1.0, 0.0]])
    inverse = np.linalg.inv(swap @ forward @ swap)
    center = np.array([(img.height - 1) / 2.0, (img.width - 1) / 2.0])
    shift = np.array([translation[1], translation[0]])
    offset = center - inverse @ (center + shift)

    out = np.empty(img.shape)
    for channel in range(img.channels):
        out[:, :, channel] = ndimage.affine_transform(
            img.data[:, :, channel], inverse, offset=offset, order=1, mode="constant", cval=0.0
        )
    return ImageF(out)


def gaussian_kernel(sigma: float) -> FloatArray:
    radius = math.ceil(3 * sigma)
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(taps**2) / (2 * sigma**2))
    return kernel / kernel.sum()


def gaussian_blur(img: ImageF, sigma: float) -> ImageF:
    """Separable Gaussian of radius ceil(3 * sigma), unit-sum, reflected at the borders.

    Raises:
        ValueError: If `sigma` is not positive.
    """
    if sigma <= 0:
        msg = f"Blur sigma must be positive, got {sigma}"
        raise ValueError(msg)
    kernel = gaussian_kernel(sigma)
    blurred = ndimage.correlate1d(img.data, kernel, axis=0, mode="reflect")
    blurred = ndimage.correlate1d(blurred, kernel, axis=1, mode="reflect")
    return ImageF(blurred)


def apply_flare_pipeline(img: ImageF, plan: AugPlan, trace: list[str] | None = None) -> ImageF:
    """Run the flare ops in their fixed order; op names are appended to `trace` as they run."""
    steps = [
        ("inverse_gamma", lambda x: inverse_gamma(x, plan.gamma)),
        ("rgb_scale", lambda x: rgb_scale(x, plan.rgb_gains)),
        (
            "affine_warp",
            lambda x: affine_warp(x, plan.rotation, plan.translation, plan.shear, plan.scale),
        ),
        ("gaussian_blur", lambda x: gaussian_blur(x, plan.blur_sigma)),
        ("color_jitter", lambda x: color_jitter(x, plan.jitter_gains)),
        ("intensity_offset", lambda x: intensity_offset(x, plan.offset)),
    ]
    for name, step in steps:
        img = step(img)
        if trace is not None:
            trace.append(name)
    return img


def apply_background_pipeline(
    img: ImageF, plan: AugPlan, rng: SeededRng, trace: list[str] | None = None
) -> ImageF:
    """Run the background ops in their fixed order; noise comes from `rng`."""
    steps = [
        ("inverse_gamma", lambda x: inverse_gamma(x, plan.gamma)),
        ("rgb_scale", lambda x: rgb_scale(x, plan.rgb_gains)),
        ("gaussian_noise", lambda x: gaussian_noise(x, plan.noise_var, rng)),
    ]
    for name, step in steps:
        img = step(img)
        if trace is not None:
            trace.append(name)
    return img
