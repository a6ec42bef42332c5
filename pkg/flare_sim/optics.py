"""Pupil functions, FFT point spread functions, anchor PSF grids and their low-rank basis."""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from core import ComplexField, FloatArray, ImageF, fft2, load_png, luminance, resize
from logging_config import get_logger
from matplotlib import colormaps
from zernike import AnchorGrid, CoeffField, ZernikeBasis, phase_map, unit_disk_coords

logger = get_logger(__name__)

HEATMAP_COLORMAP = "inferno"


@dataclass(frozen=True, eq=False)
class ApertureMask:
    """Amplitude transmittance in [0, 1]; `radius_frac` is None for user-supplied grids."""

    grid: FloatArray
    radius_frac: float | None = None

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=np.float64)
        if grid.ndim != 2 or grid.shape[0] != grid.shape[1]:  # noqa: PLR2004
            msg = f"Aperture grid must be square, got shape {grid.shape}"
            raise ValueError(msg)
        if not np.all(np.isfinite(grid)) or grid.min() < 0 or grid.max() > 1:
            msg = "Aperture transmittance must lie in [0, 1]"
            raise ValueError(msg)
        grid.setflags(write=False)
        object.__setattr__(self, "grid", grid)

    @property
    def grid_size(self) -> int:
        return int(self.grid.shape[0])


@dataclass(frozen=True, eq=False)
class PSF:
    kernel: FloatArray
    center: tuple[int, int]

    def __post_init__(self) -> None:
        kernel = np.array(self.kernel, dtype=np.float64)
        if kernel.ndim != 2 or not np.all(np.isfinite(kernel)) or kernel.min() < 0:  # noqa: PLR2004
            msg = "PSF kernel must be a finite non-negative 2-D grid"
            raise ValueError(msg)
        kernel.setflags(write=False)
        object.__setattr__(self, "kernel", kernel)


@dataclass(frozen=True, eq=False)
class PSFGrid:
    """Normalized PSFs at every anchor; `kernels` is (rows, cols, k, k)."""

    anchors: AnchorGrid
    kernels: FloatArray

    @property
    def kernel_size(self) -> int:
        return int(self.kernels.shape[-1])

    def psf_at(self, row: int, col: int) -> PSF:
        half = self.kernel_size // 2
        return PSF(kernel=self.kernels[row, col], center=(half, half))


@dataclass(frozen=True, eq=False)
class PSFBasis:
    """K basis kernels and their per-pixel weights: h_x = sum_i coeff_maps[i][x] * bases[i].

    `anchor_coeffs` (K, rows, cols) are the projections the maps are interpolated from.
    """

    bases: FloatArray
    coeff_maps: FloatArray
    anchor_coeffs: FloatArray

    def __post_init__(self) -> None:
        if self.bases.ndim != 3 or self.bases.shape[1] != self.bases.shape[2]:  # noqa: PLR2004
            msg = f"Bases must be (K, k, k), got {self.bases.shape}"
            raise ValueError(msg)
        if self.bases.shape[-1] % 2 == 0:
            msg = f"Basis kernels need an odd size, got {self.bases.shape[-1]}"
            raise ValueError(msg)
        n_bases = self.bases.shape[0]
        if self.coeff_maps.ndim != 3 or self.coeff_maps.shape[0] != n_bases:  # noqa: PLR2004
            msg = f"Expected {n_bases} coefficient maps, got {self.coeff_maps.shape}"
            raise ValueError(msg)

    @property
    def kernel_size(self) -> int:
        return int(self.bases.shape[-1])

    @property
    def n_bases(self) -> int:
        return int(self.bases.shape[0])

    @property
    def image_size(self) -> tuple[int, int]:
        return (int(self.coeff_maps.shape[1]), int(self.coeff_maps.shape[2]))


def anchor_positions(rows: int, cols: int, height: int, width: int) -> AnchorGrid:
    """Uniform anchor layout over a height×width image, corner pixels included."""
    return AnchorGrid(rows=rows, cols=cols, height=height, width=width)


def circular_aperture(grid_size: int, radius_frac: float) -> ApertureMask:
    """Hard-edged disk of radius `radius_frac * grid_size / 2`, tested at pixel centres.

    Raises:
        ValueError: If `radius_frac` is outside (0, 1].
    """
    if not 0 < radius_frac <= 1:
        msg = f"radius_frac must be in (0, 1], got {radius_frac}"
        raise ValueError(msg)
    rho, _ = unit_disk_coords(grid_size)
    return ApertureMask(grid=(rho <= radius_frac).astype(np.float64), radius_frac=radius_frac)


def load_aperture(path: Path, grid_size: int) -> ApertureMask:
    """Read a transmittance image (luminance of RGB files) and resample it to the pupil grid."""
    image = resize(load_png(path), grid_size, grid_size)
    grid = np.clip(luminance(image), 0.0, 1.0)
    logger.info("Loaded aperture %s onto a %d grid", path, grid_size)
    return ApertureMask(grid=grid)


def pupil(aperture: ApertureMask, phase: FloatArray) -> ComplexField:
    """Complex pupil A * exp(j * phase).

    Raises:
        ValueError: If the phase grid does not match the aperture grid.
    """
    if phase.shape != aperture.grid.shape:
        msg = f"Phase shape {phase.shape} does not match aperture {aperture.grid.shape}"
        raise ValueError(msg)
    return ComplexField(re=aperture.grid * np.cos(phase), im=aperture.grid * np.sin(phase))


def psf_from_pupil(p: ComplexField) -> PSF:
    """Squared magnitude of the unitary FFT, shifted so the DC tap sits at (H//2, W//2)."""
    spectrum = fft2(p)
    intensity = np.fft.fftshift(spectrum.re**2 + spectrum.im**2)
    return PSF(kernel=intensity, center=(p.height // 2, p.width // 2))


def normalize_psf(h: PSF) -> PSF:
    """Scale the kernel to unit sum.

    Raises:
        ValueError: If the kernel sums to zero.
    """
    total = float(h.kernel.sum())
    if total <= 0:
        msg = "Cannot normalize an all-zero PSF"
        raise ValueError(msg)
    return PSF(kernel=h.kernel / total, center=h.center)


def crop_psf(h: PSF, kernel_size: int) -> PSF:
    """Keep the kernel_size×kernel_size window centred on the zero-shift tap."""
    half = kernel_size // 2
    row, col = h.center
    top, left = row - half, col - half
    if top < 0 or left < 0 or top + kernel_size > h.kernel.shape[0]:
        msg = f"Cannot crop {kernel_size} taps from a {h.kernel.shape} kernel"
        raise ValueError(msg)
    window = h.kernel[top : top + kernel_size, left : left + kernel_size]
    return PSF(kernel=window, center=(half, half))


def build_psf_grid(
    aperture: ApertureMask,
    basis: ZernikeBasis,
    field: CoeffField,
    kernel_size: int,
) -> PSFGrid:
    """Render the normalized, cropped PSF of every anchor.

    Per anchor: phase_map -> pupil -> psf_from_pupil -> crop to `kernel_size` -> normalize.
    The pupil phase convention is exp(+j * phase) with the phase in radians.

    Raises:
        ValueError: If grids disagree or `kernel_size` exceeds the pupil grid.
    """
    if aperture.grid_size != basis.grid_size:
        msg = f"Aperture grid {aperture.grid_size} does not match basis grid {basis.grid_size}"
        raise ValueError(msg)
    if kernel_size > basis.grid_size:
        msg = f"kernel_size {kernel_size} exceeds the pupil grid {basis.grid_size}"
        raise ValueError(msg)

    rows, cols = field.anchors.rows, field.anchors.cols
    kernels = np.empty((rows, cols, kernel_size, kernel_size))
    for row in range(rows):
        for col in range(cols):
            phase = phase_map(basis, field.coeffs_at(row, col))
            psf = psf_from_pupil(pupil(aperture, phase))
            kernels[row, col] = normalize_psf(crop_psf(psf, kernel_size)).kernel
    logger.debug("Rendered %d anchor PSFs of %d taps", rows * cols, kernel_size)
    return PSFGrid(anchors=field.anchors, kernels=kernels)


def _axis_weights(
    anchor_coords: FloatArray, size: int
) -> tuple[np.ndarray, np.ndarray, FloatArray]:
    n_anchors = anchor_coords.size
    if n_anchors == 1:
        zeros = np.zeros(size, dtype=np.intp)
        return zeros, zeros, np.zeros(size)
    position = np.interp(np.arange(size, dtype=np.float64), anchor_coords, np.arange(n_anchors))
    lower = np.clip(np.floor(position).astype(np.intp), 0, n_anchors - 2)
    return lower, lower + 1, position - lower


def interpolate_anchor_maps(values: FloatArray, anchors: AnchorGrid) -> FloatArray:
    """Bilinearly spread (K, rows, cols) anchor values to (K, height, width) pixel maps."""
    y0, y1, wy = _axis_weights(anchors.ys, anchors.height)
    x0, x1, wx = _axis_weights(anchors.xs, anchors.width)
    wy = wy[:, np.newaxis]
    wx = wx[np.newaxis, :]
    top = values[:, y0][:, :, x0] * (1 - wx) + values[:, y0][:, :, x1] * wx
    bottom = values[:, y1][:, :, x0] * (1 - wx) + values[:, y1][:, :, x1] * wx
    return top * (1 - wy) + bottom * wy


def decompose_basis(grid: PSFGrid, n_bases: int, image_size: tuple[int, int]) -> PSFBasis:
    """Truncated SVD of the anchor PSFs.

    The flattened kernels form the columns of a matrix (mean not removed); the bases are its
    top left singular vectors, anchor coefficients are projections onto them, and the
    coefficient maps interpolate those bilinearly over an `image_size` image.

    Raises:
        ValueError: If `n_bases` is outside 1..number of anchors.
    """
    n_anchors = grid.anchors.count
    if not 1 <= n_bases <= n_anchors:
        msg = f"n_bases must be in 1..{n_anchors}, got {n_bases}"
        raise ValueError(msg)

    size = grid.kernel_size
    matrix = grid.kernels.reshape(n_anchors, size * size).T
    left, _, _ = np.linalg.svd(matrix, full_matrices=False)
    vectors = left[:, :n_bases]
    projections = vectors.T @ matrix

    height, width = image_size
    layout = anchor_positions(grid.anchors.rows, grid.anchors.cols, height, width)
    anchor_coeffs = projections.reshape(n_bases, layout.rows, layout.cols)
    coeff_maps = interpolate_anchor_maps(anchor_coeffs, layout)
    logger.debug("Decomposed %d anchor PSFs into %d bases", n_anchors, n_bases)
    return PSFBasis(
        bases=vectors.T.reshape(n_bases, size, size),
        coeff_maps=coeff_maps,
        anchor_coeffs=anchor_coeffs,
    )


def reconstruct_anchor_psfs(basis: PSFBasis) -> FloatArray:
    """(rows, cols, k, k) kernels rebuilt from the anchor coefficients."""
    return np.einsum("krc,kij->rcij", basis.anchor_coeffs, basis.bases)


def psf_heatmap(psf: PSF) -> ImageF:
    """Max-normalized intensity rendered through the heatmap colormap as an RGB image."""
    peak = float(psf.kernel.max())
    scaled = psf.kernel / peak if peak > 0 else psf.kernel
    rgba = colormaps[HEATMAP_COLORMAP](scaled)
    return ImageF(rgba[:, :, :3])
