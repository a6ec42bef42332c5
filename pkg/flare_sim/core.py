"""Shared value types, image I/O, unitary FFTs, seeded randomness and the tensor dump format."""

import zlib
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import numpy.typing as npt
import scipy.fft
from constants import LUMINANCE_WEIGHTS, TENSOR_MAGIC, TENSOR_MAX_RANK, TENSOR_VERSION
from errors import DataError
from logging_config import get_logger
from utils import atomic_write_bytes

logger = get_logger(__name__)

FloatArray = npt.NDArray[np.float64]

_HEADER_SIZE = len(TENSOR_MAGIC) + 2
_U32_MAX = 2**32 - 1
_U64_MAX = 2**64 - 1

_fft_workers: int | None = None


@dataclass(frozen=True, eq=False)
class ImageF:
    """Linear-light raster stored as a read-only (H, W, C) float64 array, C in {1, 3}."""

    data: FloatArray

    def __post_init__(self) -> None:
        data = np.array(self.data, dtype=np.float64)
        if data.ndim == 2:  # noqa: PLR2004
            data = data[:, :, np.newaxis]
        if data.ndim != 3 or data.shape[2] not in (1, 3):  # noqa: PLR2004
            msg = f"ImageF expects (H, W, 1|3) samples, got shape {data.shape}"
            raise ValueError(msg)
        if data.shape[0] == 0 or data.shape[1] == 0:
            msg = f"ImageF needs positive dimensions, got {data.shape[:2]}"
            raise ValueError(msg)
        if not np.all(np.isfinite(data)):
            msg = "ImageF samples must be finite"
            raise ValueError(msg)
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def channels(self) -> int:
        return int(self.data.shape[2])

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.height, self.width, self.channels)


@dataclass(frozen=True, eq=False)
class ComplexField:
    """H×W grid of complex samples kept as separate real and imaginary planes."""

    re: FloatArray
    im: FloatArray

    def __post_init__(self) -> None:
        re = np.array(self.re, dtype=np.float64)
        im = np.array(self.im, dtype=np.float64)
        if re.ndim != 2 or re.shape != im.shape:  # noqa: PLR2004
            msg = f"ComplexField planes must be equal 2-D grids, got {re.shape} and {im.shape}"
            raise ValueError(msg)
        if not (np.all(np.isfinite(re)) and np.all(np.isfinite(im))):
            msg = "ComplexField samples must be finite"
            raise ValueError(msg)
        re.setflags(write=False)
        im.setflags(write=False)
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def from_complex(cls, values: npt.NDArray[np.complex128]) -> "ComplexField":
        return cls(re=np.real(values), im=np.imag(values))

    def to_complex(self) -> npt.NDArray[np.complex128]:
        return self.re + 1j * self.im

    @property
    def height(self) -> int:
        return int(self.re.shape[0])

    @property
    def width(self) -> int:
        return int(self.re.shape[1])


@dataclass(frozen=True)
class SeededRng:
    """Seed for Philox4x64-10 streams.

    Every stream is keyed by `SeedSequence(entropy=seed, spawn_key=(crc32(purpose),))`, so a seed
    and a purpose string fully determine the numbers drawn, on every platform.
    """

    seed: int
    algorithm: str = "philox4x64-10"

    def __post_init__(self) -> None:
        if not 0 <= self.seed <= _U64_MAX:
            msg = f"Seed must fit in 64 unsigned bits, got {self.seed}"
            raise ValueError(msg)

    def generator(self, purpose: str = "") -> np.random.Generator:
        spawn_key = (zlib.crc32(purpose.encode("utf-8")),)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=spawn_key)
        return np.random.Generator(np.random.Philox(sequence))

    def derive(self, index: int) -> "SeededRng":
        """Per-item seed for batch work: `seed XOR index`."""
        return SeededRng(seed=self.seed ^ index, algorithm=self.algorithm)


def set_fft_workers(workers: int | None) -> None:
    """Set the worker count passed to `scipy.fft` (None or 0 means all cores)."""
    global _fft_workers  # noqa: PLW0603
    _fft_workers = -1 if not workers else workers


def fft2(field: ComplexField) -> ComplexField:
    """Unitary 2-D DFT (each direction scaled by 1/sqrt(HW))."""
    spectrum = scipy.fft.fft2(field.to_complex(), norm="ortho", workers=_fft_workers)
    return ComplexField.from_complex(spectrum)


def ifft2(field: ComplexField) -> ComplexField:
    """Inverse of `fft2`."""
    values = scipy.fft.ifft2(field.to_complex(), norm="ortho", workers=_fft_workers)
    return ComplexField.from_complex(values)


def fft2_array(values: npt.NDArray[np.complexfloating] | FloatArray) -> npt.NDArray[np.complex128]:
    """Unitary 2-D DFT over the two leading axes of a raw array."""
    return scipy.fft.fft2(values, axes=(0, 1), norm="ortho", workers=_fft_workers)


def ifft2_array(values: npt.NDArray[np.complexfloating]) -> npt.NDArray[np.complex128]:
    return scipy.fft.ifft2(values, axes=(0, 1), norm="ortho", workers=_fft_workers)


def load_png(path: Path, gamma: float = 1.0) -> ImageF:
    """Read an 8- or 16-bit grayscale/RGB PNG into linear light.

    Samples are mapped to [0, 1] by the bit depth and raised to `gamma` (1 leaves them as is).
    An alpha channel, if present, is dropped.

    Args:
        path: PNG file.
        gamma: Linearization exponent, > 0.

    Returns:
        ImageF: Image with 1 or 3 channels.

    Raises:
        FileNotFoundError: If `path` does not exist.
        DataError: If the file cannot be decoded or has an unsupported bit depth.
    """
    if gamma <= 0:
        msg = f"gamma must be positive, got {gamma}"
        raise ValueError(msg)
    if not path.is_file():
        msg = f"Image file not found: {path}"
        logger.error(msg)
        raise FileNotFoundError(msg)

    raw = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if raw is None:
        msg = f"Unreadable image: {path}"
        logger.error(msg)
        raise DataError(msg)

    if raw.dtype == np.uint8:
        samples = raw.astype(np.float64) / 255.0
    elif raw.dtype == np.uint16:
        samples = raw.astype(np.float64) / 65535.0
    else:
        msg = f"Unsupported bit depth {raw.dtype} in {path}"
        logger.error(msg)
        raise DataError(msg)

    if samples.ndim == 3:  # noqa: PLR2004
        n_channels = samples.shape[2]
        if n_channels in (3, 4):
            samples = samples[:, :, 2::-1]  # BGR(A) -> RGB
        else:
            samples = samples[:, :, :1]

    if gamma != 1.0:
        samples = np.power(samples, gamma)
    logger.debug("Loaded %s with shape %s", path, samples.shape)
    return ImageF(samples)


def encode_png(img: ImageF, inv_gamma: float = 1.0) -> bytes:
    """Encode `img` as an 8-bit PNG: clip to [0, 1], raise to 1/inv_gamma, round to nearest."""
    if inv_gamma <= 0:
        msg = f"inv_gamma must be positive, got {inv_gamma}"
        raise ValueError(msg)
    samples = np.clip(img.data, 0.0, 1.0)
    if inv_gamma != 1.0:
        samples = np.power(samples, 1.0 / inv_gamma)
    quantized = np.floor(samples * 255.0 + 0.5).astype(np.uint8)
    quantized = quantized[:, :, 0] if img.channels == 1 else quantized[:, :, ::-1]
    ok, buffer = cv2.imencode(".png", np.ascontiguousarray(quantized))
    if not ok:
        msg = "PNG encoding failed"
        raise DataError(msg)
    return buffer.tobytes()


def save_png(img: ImageF, path: Path, inv_gamma: float = 1.0) -> None:
    """Write `img` to `path` as an 8-bit PNG (see `encode_png`), atomically.

    Raises:
        DataError: If `path` cannot be written.
    """
    payload = encode_png(img, inv_gamma)
    try:
        atomic_write_bytes(path, payload)
    except OSError as err:
        msg = f"Cannot write image {path}: {err}"
        logger.exception(msg)
        raise DataError(msg) from err


def resize(img: ImageF, height: int, width: int) -> ImageF:
    """Resample to (height, width); area averaging when shrinking, bilinear when growing."""
    if (img.height, img.width) == (height, width):
        return img
    shrinking = height * width < img.height * img.width
    interpolation = cv2.INTER_AREA if shrinking else cv2.INTER_LINEAR
    resized = cv2.resize(img.data.copy(), (width, height), interpolation=interpolation)
    return ImageF(resized)


def luminance(img: ImageF) -> FloatArray:
    """Rec. 709 luminance of an RGB image; grayscale images are returned as is."""
    if img.channels == 1:
        return img.data[:, :, 0].copy()
    return img.data @ np.asarray(LUMINANCE_WEIGHTS)


def encode_tensor(tensor: npt.ArrayLike) -> bytes:
    """Serialize to the tensor dump format.

    Layout: magic `FFTD`, u8 version, u8 rank (1..4), rank little-endian u32 dims, then the
    little-endian f32 payload, row-major with the last axis fastest.

    Raises:
        DataError: If the rank is outside 1..4 or a dimension does not fit in u32.
    """
    array = np.asarray(tensor, dtype="<f4")
    if not 1 <= array.ndim <= TENSOR_MAX_RANK:
        msg = f"Tensor rank must be in 1..{TENSOR_MAX_RANK}, got {array.ndim}"
        raise DataError(msg)
    if any(dim > _U32_MAX for dim in array.shape):
        msg = f"Tensor shape overflow: {array.shape}"
        raise DataError(msg)
    header = TENSOR_MAGIC + bytes([TENSOR_VERSION, array.ndim])
    dims = np.asarray(array.shape, dtype="<u4").tobytes()
    return header + dims + np.ascontiguousarray(array).tobytes()


def decode_tensor(payload: bytes) -> npt.NDArray[np.float32]:
    """Parse a tensor dump produced by `encode_tensor`.

    Raises:
        DataError: On bad magic, unsupported version, invalid rank, or a size mismatch.
    """
    if len(payload) < _HEADER_SIZE or payload[: len(TENSOR_MAGIC)] != TENSOR_MAGIC:
        msg = "Bad tensor magic"
        raise DataError(msg)
    version, rank = payload[4], payload[5]
    if version != TENSOR_VERSION:
        msg = f"Unsupported tensor version {version}"
        raise DataError(msg)
    if not 1 <= rank <= TENSOR_MAX_RANK:
        msg = f"Invalid tensor rank {rank}"
        raise DataError(msg)
    dims_end = _HEADER_SIZE + 4 * rank
    if len(payload) < dims_end:
        msg = "Truncated tensor header"
        raise DataError(msg)
    shape = tuple(int(d) for d in np.frombuffer(payload[_HEADER_SIZE:dims_end], dtype="<u4"))
    count = 1
    for dim in shape:
        count *= dim
    expected = dims_end + 4 * count
    if len(payload) < expected:
        msg = f"Truncated tensor payload: shape {shape} needs {expected} bytes, got {len(payload)}"
        raise DataError(msg)
    if len(payload) > expected:
        msg = f"Trailing bytes after tensor payload of shape {shape}"
        raise DataError(msg)
    values = np.frombuffer(payload[dims_end:], dtype="<f4").reshape(shape)
    return values.astype(np.float32)


def dump_tensor(path: Path, tensor: npt.ArrayLike) -> None:
    """Write `tensor` to `path` in the tensor dump format, atomically."""
    atomic_write_bytes(path, encode_tensor(tensor))
    logger.debug("Dumped tensor to %s", path)


def load_tensor(path: Path) -> npt.NDArray[np.float32]:
    """Read a tensor dump from `path`.

    Raises:
        FileNotFoundError: If `path` does not exist.
        DataError: If the file is not a valid tensor dump.
    """
    if not path.is_file():
        msg = f"Tensor dump not found: {path}"
        raise FileNotFoundError(msg)
    try:
        return decode_tensor(path.read_bytes())
    except DataError as err:
        msg = f"{path}: {err}"
        logger.exception(msg)
        raise DataError(msg) from err
