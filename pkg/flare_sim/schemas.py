import math
from dataclasses import dataclass, field
from pathlib import Path

from constants import (
    AUG_BLUR_SIGMA,
    AUG_GAMMA,
    AUG_JITTER_GAIN,
    AUG_NOISE_SCALE,
    AUG_OFFSET,
    AUG_RGB_GAIN,
    AUG_ROTATION,
    AUG_SCALE,
    AUG_SHEAR,
    AUG_TRANSLATION_PX,
    DEFAULT_LIGHT_THRESHOLD,
)
from errors import ConfigError

Interval = tuple[float, float]


def _require(condition: bool, key: str, reason: str) -> None:  # noqa: FBT001
    if not condition:
        raise ConfigError(key, reason)


def _check_interval(interval: Interval, key: str) -> None:
    low, high = interval
    _require(math.isfinite(low) and math.isfinite(high), key, "bounds must be finite")
    _require(low <= high, key, f"lower bound {low} exceeds upper bound {high}")


@dataclass(frozen=True)
class OpticsConfig:
    pupil_grid: int = 64
    radius_frac: float = 0.5
    kernel_size: int = 31
    anchor_rows: int = 3
    anchor_cols: int = 3
    aperture_path: Path | None = None

    def __post_init__(self) -> None:
        _require(self.pupil_grid >= 8, "pupil_grid", "must be >= 8")  # noqa: PLR2004
        _require(0 < self.radius_frac <= 1, "radius_frac", "must be in (0, 1]")
        _require(self.kernel_size >= 1, "kernel_size", "must be >= 1")
        _require(self.kernel_size % 2 == 1, "kernel_size", "must be odd")
        _require(self.kernel_size <= self.pupil_grid, "kernel_size", "must be <= pupil_grid")
        _require(self.anchor_rows >= 1, "anchor_rows", "must be >= 1")
        _require(self.anchor_cols >= 1, "anchor_cols", "must be >= 1")


@dataclass(frozen=True)
class TurbulenceConfig:
    """Coefficient statistics: mode j gets standard deviation `base_sigma * j**-decay_alpha`."""

    n_modes: int = 15
    base_sigma: float = 1.0
    decay_alpha: float = 1.0
    skip_piston: bool = True

    def __post_init__(self) -> None:
        _require(self.n_modes >= 1, "n_modes", "must be >= 1")
        _require(self.base_sigma >= 0, "base_sigma", "must be >= 0")
        _require(self.decay_alpha >= 0, "decay_alpha", "must be >= 0")


@dataclass(frozen=True)
class BasisConfig:
    n_bases: int = 4

    def __post_init__(self) -> None:
        _require(self.n_bases >= 1, "n_bases", "must be >= 1")


@dataclass(frozen=True)
class AugmentConfig:
    """Supports of the augmentation parameters; angles in radians."""

    gamma: Interval = AUG_GAMMA
    rgb_gain: Interval = AUG_RGB_GAIN
    noise_scale: float = AUG_NOISE_SCALE
    offset: Interval = AUG_OFFSET
    jitter_gain: Interval = AUG_JITTER_GAIN
    rotation: Interval = AUG_ROTATION
    translation_px: Interval = AUG_TRANSLATION_PX
    shear: Interval = AUG_SHEAR
    scale: Interval = AUG_SCALE
    blur_sigma: Interval = AUG_BLUR_SIGMA

    def __post_init__(self) -> None:
        for key in (
            "gamma",
            "rgb_gain",
            "offset",
            "jitter_gain",
            "rotation",
            "translation_px",
            "shear",
            "scale",
            "blur_sigma",
        ):
            _check_interval(getattr(self, key), key)
        _require(self.gamma[0] > 0, "gamma", "must be positive")
        _require(self.rgb_gain[0] >= 0, "rgb_gain", "must be non-negative")
        _require(self.jitter_gain[0] >= 0, "jitter_gain", "must be non-negative")
        _require(self.scale[0] > 0, "scale", "must be positive")
        _require(self.blur_sigma[0] > 0, "blur_sigma", "must be positive")
        _require(self.noise_scale >= 0, "noise_scale", "must be >= 0")


@dataclass(frozen=True)
class CompositeRecipe:
    """How flare and background are merged into an (input, ground truth) pair."""

    gamma: float = 2.2
    clip_high: float = 1.0
    include_light_source_in_gt: bool = True
    light_threshold: float = DEFAULT_LIGHT_THRESHOLD
    resolution: tuple[int, int] = (512, 512)
    flare_gain: float = 1.0

    def __post_init__(self) -> None:
        _require(self.gamma > 0, "gamma", "must be positive")
        _require(self.clip_high > 0, "clip_high", "must be positive")
        _require(0 < self.light_threshold <= 1, "light_threshold", "must be in (0, 1]")
        _require(min(self.resolution) >= 1, "resolution", "must be positive")
        _require(self.flare_gain >= 0, "flare_gain", "must be >= 0")


@dataclass(frozen=True)
class ModelConfig:
    stages: int = 3
    base_channels: int = 16
    blocks_per_stage: int = 1
    expansion: int = 2
    dilation: int = 2
    se_reduction: int = 4
    mlp_ratio: int = 2
    use_ffem: bool = True
    use_desm: bool = True

    def __post_init__(self) -> None:
        _require(self.stages >= 1, "stages", "must be >= 1")
        _require(self.base_channels >= 4, "base_channels", "must be >= 4")  # noqa: PLR2004
        _require(self.base_channels % 4 == 0, "base_channels", "must be divisible by 4")
        _require(self.blocks_per_stage >= 1, "blocks_per_stage", "must be >= 1")
        _require(self.expansion >= 1, "expansion", "must be >= 1")
        _require(self.dilation >= 1, "dilation", "must be >= 1")
        _require(self.se_reduction >= 1, "se_reduction", "must be >= 1")
        _require(self.mlp_ratio >= 1, "mlp_ratio", "must be >= 1")

    def channels_at(self, stage: int) -> int:
        return self.base_channels * 2**stage

    @property
    def size_multiple(self) -> int:
        """Input height and width must be multiples of this."""
        return 2 ** (self.stages - 1)


@dataclass(frozen=True)
class EvalConfig:
    peak: float = 1.0
    mask_threshold: float = 0.5
    gamma: float = 1.0

    def __post_init__(self) -> None:
        _require(self.peak > 0, "peak", "must be positive")
        _require(0 <= self.mask_threshold <= 1, "mask_threshold", "must be in [0, 1]")
        _require(self.gamma > 0, "gamma", "must be positive")


@dataclass(frozen=True)
class RunConfig:
    optics: OpticsConfig = field(default_factory=OpticsConfig)
    turbulence: TurbulenceConfig = field(default_factory=TurbulenceConfig)
    basis: BasisConfig = field(default_factory=BasisConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    composite: CompositeRecipe = field(default_factory=CompositeRecipe)
    model: ModelConfig = field(default_factory=ModelConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self) -> None:
        n_anchors = self.optics.anchor_rows * self.optics.anchor_cols
        _require(
            self.basis.n_bases <= n_anchors,
            "basis.n_bases",
            f"must not exceed the anchor count {n_anchors}",
        )
