"""Zernike modes on the unit disk (Noll ordering and normalization) and aberration sampling."""

import math
from dataclasses import dataclass
from functools import cache

import numpy as np
from core import FloatArray, SeededRng
from logging_config import get_logger
from schemas import TurbulenceConfig

logger = get_logger(__name__)

MIN_GRID_SIZE = 8


@dataclass(frozen=True)
class AnchorGrid:
    """Uniform rows×cols grid of anchor positions over a height×width image, corners included."""

    rows: int
    cols: int
    height: int
    width: int

    def __post_init__(self) -> None:
        if min(self.rows, self.cols) < 1:
            msg = f"Anchor grid needs at least one anchor, got {self.rows}x{self.cols}"
            raise ValueError(msg)
        if min(self.height, self.width) < 1:
            msg = f"Image size must be positive, got {self.height}x{self.width}"
            raise ValueError(msg)

    @property
    def xs(self) -> FloatArray:
        return _axis_positions(self.cols, self.width)

    @property
    def ys(self) -> FloatArray:
        return _axis_positions(self.rows, self.height)

    @property
    def positions(self) -> FloatArray:
        """(rows, cols, 2) array of (x, y) image coordinates."""
        grid_x, grid_y = np.meshgrid(self.xs, self.ys)
        return np.stack([grid_x, grid_y], axis=-1)

    @property
    def count(self) -> int:
        return self.rows * self.cols


def _axis_positions(n_anchors: int, size: int) -> FloatArray:
    if n_anchors == 1:
        return np.array([(size - 1) / 2.0])
    return np.linspace(0.0, size - 1.0, n_anchors)


@dataclass(frozen=True, eq=False)
class ZernikeBasis:
    grid_size: int
    values: FloatArray  # (modes, grid, grid)
    disk_mask: np.ndarray

    @property
    def modes(self) -> int:
        return int(self.values.shape[0])


@dataclass(frozen=True, eq=False)
class ZernikeCoeffs:
    """Per-mode phase amplitudes in radians, index 0 being Noll mode 1 (piston)."""

    a: FloatArray

    def __post_init__(self) -> None:
        a = np.array(self.a, dtype=np.float64)
        if a.ndim != 1 or a.size == 0 or not np.all(np.isfinite(a)):
            msg = "Zernike coefficients must be a non-empty finite vector"
            raise ValueError(msg)
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    def __add__(self, other: "ZernikeCoeffs") -> "ZernikeCoeffs":
        return ZernikeCoeffs(self.a + other.a)


@dataclass(frozen=True, eq=False)
class CoeffField:
    """Zernike coefficients at every anchor of an `AnchorGrid`; `coeffs` is (rows, cols, modes)."""

    anchors: AnchorGrid
    coeffs: FloatArray

    def __post_init__(self) -> None:
        coeffs = np.array(self.coeffs, dtype=np.float64)
        expected = (self.anchors.rows, self.anchors.cols)
        if coeffs.ndim != 3 or coeffs.shape[:2] != expected or coeffs.shape[2] < 1:  # noqa: PLR2004
            msg = f"Coefficient field shape {coeffs.shape} does not match anchors {expected}"
            raise ValueError(msg)
        if not np.all(np.isfinite(coeffs)):
            msg = "Coefficient field must be finite"
            raise ValueError(msg)
        coeffs.setflags(write=False)
        object.__setattr__(self, "coeffs", coeffs)

    @property
    def n_modes(self) -> int:
        return int(self.coeffs.shape[2])

    def coeffs_at(self, row: int, col: int) -> ZernikeCoeffs:
        return ZernikeCoeffs(self.coeffs[row, col])


def noll_to_nm(j: int) -> tuple[int, int]:
    """Map a Noll index to (radial order n, signed azimuthal order m).

    Even j carry the cosine term (m > 0), odd j the sine term (m < 0).

    Raises:
        ValueError: If `j < 1`.
    """
    if j < 1:
        msg = f"Noll index must be >= 1, got {j}"
        raise ValueError(msg)
    n = 0
    remaining = j - 1
    while remaining > n:
        n += 1
        remaining -= n
    m_abs = (n % 2) + 2 * ((remaining + ((n + 1) % 2)) // 2)
    m = m_abs if j % 2 == 0 else -m_abs
    return n, m


@cache
def _radial_terms(n: int, m_abs: int) -> tuple[tuple[float, int], ...]:
    terms: list[tuple[float, int]] = []
    for k in range((n - m_abs) // 2 + 1):
        weight = (-1) ** k * math.factorial(n - k)
        weight /= (
            math.factorial(k)
            * math.factorial((n + m_abs) // 2 - k)
            * math.factorial((n - m_abs) // 2 - k)
        )
        terms.append((float(weight), n - 2 * k))
    return tuple(terms)


def radial_polynomial(n: int, m_abs: int, rho: FloatArray) -> FloatArray:
    result = np.zeros_like(rho, dtype=np.float64)
    for weight, power in _radial_terms(n, m_abs):
        result = result + weight * rho**power
    return result


def evaluate_mode(j: int, rho: FloatArray, theta: FloatArray) -> FloatArray:
    """Noll-normalized Zernike mode `j` (unit RMS over the disk) at polar coordinates."""
    n, m = noll_to_nm(j)
    radial = radial_polynomial(n, abs(m), np.asarray(rho, dtype=np.float64))
    if m == 0:
        return math.sqrt(n + 1) * radial
    angular = np.cos(m * theta) if m > 0 else np.sin(-m * theta)
    return math.sqrt(2 * (n + 1)) * radial * angular


def unit_disk_coords(grid_size: int) -> tuple[FloatArray, FloatArray]:
    """Polar coordinates of pixel centres, the unit disk inscribed in the square grid."""
    half = grid_size / 2.0
    axis = (np.arange(grid_size) + 0.5 - half) / half
    x, y = np.meshgrid(axis, axis)
    return np.hypot(x, y), np.arctan2(y, x)


def build_basis(grid_size: int, n_modes: int) -> ZernikeBasis:
    """Evaluate Noll modes 1..n_modes at pixel centres; samples outside the disk are zero.

    Raises:
        ValueError: If `grid_size < 8` or `n_modes < 1`.
    """
    if grid_size < MIN_GRID_SIZE:
        msg = f"grid_size must be >= {MIN_GRID_SIZE}, got {grid_size}"
        raise ValueError(msg)
    if n_modes < 1:
        msg = f"n_modes must be >= 1, got {n_modes}"
        raise ValueError(msg)

    rho, theta = unit_disk_coords(grid_size)
    disk_mask = rho <= 1.0
    values = np.stack([evaluate_mode(j, rho, theta) for j in range(1, n_modes + 1)])
    values *= disk_mask
    values.setflags(write=False)
    disk_mask.setflags(write=False)
    logger.debug("Built %d Zernike modes on a %d grid", n_modes, grid_size)
    return ZernikeBasis(grid_size=grid_size, values=values, disk_mask=disk_mask)


def phase_map(basis: ZernikeBasis, coeffs: ZernikeCoeffs) -> FloatArray:
    """Weighted sum of modes, in radians.

    Raises:
        ValueError: If the coefficient count differs from the basis mode count.
    """
    if coeffs.a.size != basis.modes:
        msg = f"Got {coeffs.a.size} coefficients for a basis of {basis.modes} modes"
        raise ValueError(msg)
    return np.tensordot(coeffs.a, basis.values, axes=1)


def mode_sigmas(cfg: TurbulenceConfig) -> FloatArray:
    """Per-mode standard deviations `base_sigma * j**-decay_alpha` (piston zeroed when skipped)."""
    j = np.arange(1, cfg.n_modes + 1, dtype=np.float64)
    sigmas = cfg.base_sigma * j ** (-cfg.decay_alpha)
    if cfg.skip_piston:
        sigmas[0] = 0.0
    return sigmas


def sample_coeff_field(rng: SeededRng, cfg: TurbulenceConfig, anchors: AnchorGrid) -> CoeffField:
    """Draw independent zero-mean Gaussian coefficients at every anchor."""
    generator = rng.generator("zernike.coeff_field")
    draws = generator.standard_normal((anchors.rows, anchors.cols, cfg.n_modes))
    coeffs = draws * mode_sigmas(cfg)
    logger.debug(
        "Sampled coefficient field: %dx%d anchors, %d modes, base_sigma=%s",
        anchors.rows,
        anchors.cols,
        cfg.n_modes,
        cfg.base_sigma,
    )
    return CoeffField(anchors=anchors, coeffs=coeffs)
