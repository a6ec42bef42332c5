"""ZernikeVAE plumbing: MLP encoder/decoder, reparameterized sampling and weight persistence.

Only the forward machinery lives here. Weights are either loaded from a weight manifest or
initialized deterministically from a seed.
"""

import math
from collections.abc import Callable
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from constants import (
    KERNEL_ENERGY_FRAC,
    LOGVAR_CLAMP,
    SIGMOID_EPS,
    VAE_HIDDEN,
    VAE_LATENT_DIM,
)
from core import FloatArray, ImageF, SeededRng
from errors import DataError
from logging_config import get_logger
from optics import PSFGrid
from scipy import special
from weights_store import load_tensors, require, save_tensors
from zernike import CoeffField

logger = get_logger(__name__)


def _gelu(x: FloatArray) -> FloatArray:
    return 0.5 * x * (1.0 + special.erf(x / math.sqrt(2.0)))


def bounded_sigmoid(x: FloatArray) -> FloatArray:
    """Logistic sigmoid clamped to [SIGMOID_EPS, 1 - SIGMOID_EPS]."""
    return np.clip(special.expit(x), SIGMOID_EPS, 1.0 - SIGMOID_EPS)


ACTIVATIONS: dict[str, Callable[[FloatArray], FloatArray]] = {
    "identity": lambda x: x,
    "relu": lambda x: np.maximum(x, 0.0),
    "gelu": _gelu,
    "tanh": np.tanh,
    "sigmoid": special.expit,
}


@dataclass(frozen=True, eq=False)
class LatentStats:
    """Gaussian posterior parameters; `logvar` is clamped to [-20, 20] on construction."""

    mu: FloatArray
    logvar: FloatArray

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=np.float64)
        logvar = np.array(self.logvar, dtype=np.float64)
        if mu.ndim != 1 or mu.shape != logvar.shape:
            msg = f"mu {mu.shape} and logvar {logvar.shape} must be vectors of equal length"
            raise ValueError(msg)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(logvar))):
            msg = "Latent statistics must be finite"
            raise ValueError(msg)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "logvar", np.clip(logvar, -LOGVAR_CLAMP, LOGVAR_CLAMP))

    @property
    def dim(self) -> int:
        return int(self.mu.size)


@dataclass(frozen=True, eq=False)
class KernelSizeMap:
    """Effective PSF support, in taps, at every anchor."""

    grid: FloatArray

    def __post_init__(self) -> None:
        grid = np.array(self.grid, dtype=np.float64)
        if grid.ndim != 2 or not np.all(grid >= 1):  # noqa: PLR2004
            msg = "Kernel size map must be a 2-D grid of values >= 1"
            raise ValueError(msg)
        object.__setattr__(self, "grid", grid)


@dataclass(frozen=True, eq=False)
class MlpWeights:
    """Dense layers `x @ weights[i] + biases[i]`, each followed by its named activation."""

    weights: tuple[FloatArray, ...]
    biases: tuple[FloatArray, ...]
    activations: tuple[str, ...]

    def __post_init__(self) -> None:
        counts = {len(self.weights), len(self.biases), len(self.activations)}
        if not self.weights or len(counts) != 1:
            msg = "MLP needs matching, non-empty weight, bias and activation lists"
            raise ValueError(msg)
        for index, (weight, bias, activation) in enumerate(
            zip(self.weights, self.biases, self.activations, strict=True)
        ):
            if weight.ndim != 2 or bias.shape != (weight.shape[1],):  # noqa: PLR2004
                msg = f"Layer {index}: weight {weight.shape} and bias {bias.shape} do not chain"
                raise ValueError(msg)
            if index and weight.shape[0] != self.weights[index - 1].shape[1]:
                previous = self.weights[index - 1].shape[1]
                msg = f"Layer {index} expects {weight.shape[0]} inputs, got {previous}"
                raise ValueError(msg)
            if activation not in ACTIVATIONS:
                msg = f"Unknown activation {activation!r}; expected one of {sorted(ACTIVATIONS)}"
                raise ValueError(msg)
            if not (np.all(np.isfinite(weight)) and np.all(np.isfinite(bias))):
                msg = f"Layer {index} has non-finite parameters"
                raise ValueError(msg)

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (int(self.weights[0].shape[0]), *(int(w.shape[1]) for w in self.weights))

    @property
    def in_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def out_dim(self) -> int:
        return self.layer_sizes[-1]

    def forward(self, x: FloatArray) -> FloatArray:
        """Apply the layers along the last axis of `x`."""
        if x.shape[-1] != self.in_dim:
            msg = f"MLP expects {self.in_dim} inputs, got {x.shape[-1]}"
            raise ValueError(msg)
        layers = zip(self.weights, self.biases, self.activations, strict=True)
        for weight, bias, activation in layers:
            x = ACTIVATIONS[activation](x @ weight + bias)
        return x


@dataclass(frozen=True, eq=False)
class ZernikeVAE:
    encoder: MlpWeights
    decoder: MlpWeights
    out_shape: tuple[int, int, int]

    @property
    def latent_dim(self) -> int:
        return self.decoder.in_dim


def init_mlp(
    generator: np.random.Generator,
    sizes: tuple[int, ...],
    activations: tuple[str, ...],
    *,
    zero: bool = False,
) -> MlpWeights:
    """Gaussian weights with std 1/sqrt(fan_in) and zero biases (all zero when `zero`)."""
    weights = []
    biases = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:], strict=True):
        if zero:
            weights.append(np.zeros((fan_in, fan_out)))
        else:
            weights.append(generator.standard_normal((fan_in, fan_out)) / math.sqrt(fan_in))
        biases.append(np.zeros(fan_out))
    return MlpWeights(weights=tuple(weights), biases=tuple(biases), activations=activations)


def kernel_size_map(grid: PSFGrid, energy_frac: float = KERNEL_ENERGY_FRAC) -> KernelSizeMap:
    """Smallest centred odd window holding `energy_frac` of each anchor PSF's energy.

    Raises:
        ValueError: If `energy_frac` is outside (0, 1].
    """
    if not 0 < energy_frac <= 1:
        msg = f"energy_frac must be in (0, 1], got {energy_frac}"
        raise ValueError(msg)
    size = grid.kernel_size
    center = size // 2
    rows, cols = grid.anchors.rows, grid.anchors.cols
    sizes = np.full((rows, cols), float(size))
    for row in range(rows):
        for col in range(cols):
            kernel = grid.kernels[row, col]
            target = energy_frac * kernel.sum()
            for width in range(1, size + 1, 2):
                half = width // 2
                span = slice(center - half, center + half + 1)
                window = kernel[span, span]
                if window.sum() >= target - 1e-12:
                    sizes[row, col] = width
                    break
    return KernelSizeMap(grid=sizes)


def reparameterize(stats: LatentStats, eps: FloatArray) -> FloatArray:
    """z = mu + exp(logvar / 2) * eps.

    Raises:
        ValueError: If `eps` does not match the latent dimension.
    """
    eps = np.asarray(eps, dtype=np.float64)
    if eps.shape != stats.mu.shape:
        msg = f"eps has shape {eps.shape}, expected {stats.mu.shape}"
        raise ValueError(msg)
    return stats.mu + np.exp(0.5 * stats.logvar) * eps


def encode(coeffs: CoeffField, ksize: KernelSizeMap, w: MlpWeights) -> LatentStats:
    """Run the encoder on the flattened coefficients followed by the flattened kernel sizes.

    Raises:
        ValueError: If the input or output widths do not fit the weights.
    """
    features = np.concatenate([coeffs.coeffs.ravel(), ksize.grid.ravel()])
    if features.size != w.in_dim:
        msg = f"Encoder expects {w.in_dim} inputs, got {features.size}"
        raise ValueError(msg)
    if w.out_dim % 2:
        msg = f"Encoder output width {w.out_dim} cannot split into (mu, logvar)"
        raise ValueError(msg)
    output = w.forward(features)
    half = w.out_dim // 2
    return LatentStats(mu=output[:half], logvar=output[half:])


def decode(z: FloatArray, w: MlpWeights, out_shape: tuple[int, ...]) -> ImageF:
    """Decoder MLP reshaped to `out_shape` through a final sigmoid, strictly inside (0, 1).

    Raises:
        ValueError: If `z` or `out_shape` do not fit the weights.
    """
    z = np.asarray(z, dtype=np.float64)
    if z.shape != (w.in_dim,):
        msg = f"Decoder expects a latent of size {w.in_dim}, got shape {z.shape}"
        raise ValueError(msg)
    if math.prod(out_shape) != w.out_dim:
        msg = f"Decoder produces {w.out_dim} values, cannot reshape to {out_shape}"
        raise ValueError(msg)
    return ImageF(bounded_sigmoid(w.forward(z)).reshape(out_shape))


def init_vae(  # noqa: PLR0913
    seed: int,
    n_inputs: int,
    out_shape: tuple[int, int, int],
    hidden: tuple[int, ...] = VAE_HIDDEN,
    latent_dim: int = VAE_LATENT_DIM,
    *,
    zero: bool = False,
) -> ZernikeVAE:
    """Seeded encoder/decoder pair: ReLU hidden layers, linear heads."""
    generator = SeededRng(seed).generator("zvae.init")
    activations = (*("relu" for _ in hidden), "identity")
    encoder = init_mlp(generator, (n_inputs, *hidden, 2 * latent_dim), activations, zero=zero)
    decoder = init_mlp(
        generator, (latent_dim, *hidden, math.prod(out_shape)), activations, zero=zero
    )
    logger.debug(
        "Initialized ZernikeVAE: %d inputs, latent %d, output %s", n_inputs, latent_dim, out_shape
    )
    return ZernikeVAE(encoder=encoder, decoder=decoder, out_shape=out_shape)


def sample_flare(
    vae: ZernikeVAE, coeffs: CoeffField, ksize: KernelSizeMap, rng: SeededRng
) -> ImageF:
    """encode -> reparameterize with seeded noise -> decode."""
    stats = encode(coeffs, ksize, vae.encoder)
    eps = rng.generator("zvae.eps").standard_normal(stats.dim)
    return decode(reparameterize(stats, eps), vae.decoder, vae.out_shape)


def _mlp_tensors(prefix: str, mlp: MlpWeights) -> dict[str, FloatArray]:
    tensors: dict[str, FloatArray] = {}
    for index, (weight, bias) in enumerate(zip(mlp.weights, mlp.biases, strict=True)):
        tensors[f"{prefix}.{index}.weight"] = weight
        tensors[f"{prefix}.{index}.bias"] = bias
    return tensors


def _mlp_from_tensors(
    tensors: dict[str, FloatArray], prefix: str, activations: list[str]
) -> MlpWeights:
    weights = tuple(require(tensors, f"{prefix}.{i}.weight") for i in range(len(activations)))
    biases = tuple(require(tensors, f"{prefix}.{i}.bias") for i in range(len(activations)))
    try:
        return MlpWeights(weights=weights, biases=biases, activations=tuple(activations))
    except ValueError as err:
        msg = f"Invalid {prefix} weights: {err}"
        raise DataError(msg) from err


def save_vae(directory: Path, vae: ZernikeVAE) -> None:
    tensors = _mlp_tensors("encoder", vae.encoder) | _mlp_tensors("decoder", vae.decoder)
    meta = {
        "kind": "zvae",
        "out_shape": list(vae.out_shape),
        "encoder_activations": list(vae.encoder.activations),
        "decoder_activations": list(vae.decoder.activations),
    }
    save_tensors(directory, tensors, meta)


def load_vae(directory: Path) -> ZernikeVAE:
    """Rebuild a `ZernikeVAE` from a weight directory written by `save_vae`.

    Raises:
        DataError: If the directory holds a different kind of weight set or broken weights.
    """
    tensors, meta = load_tensors(directory)
    if meta.get("kind") != "zvae":
        msg = f"{directory} holds {meta.get('kind')!r} weights, expected 'zvae'"
        raise DataError(msg)
    try:
        out_shape = tuple(int(v) for v in meta["out_shape"])
        encoder_acts = list(meta["encoder_activations"])
        decoder_acts = list(meta["decoder_activations"])
    except (KeyError, TypeError, ValueError) as err:
        msg = f"Incomplete zvae manifest in {directory}"
        raise DataError(msg) from err
    if len(out_shape) != 3:  # noqa: PLR2004
        msg = f"zvae output shape must be (H, W, C), got {out_shape}"
        raise DataError(msg)
    return ZernikeVAE(
        encoder=_mlp_from_tensors(tensors, "encoder", encoder_acts),
        decoder=_mlp_from_tensors(tensors, "decoder", decoder_acts),
        out_shape=(out_shape[0], out_shape[1], out_shape[2]),
    )
