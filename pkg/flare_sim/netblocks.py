"""Inference-only SLCFormer building blocks on (H, W, C) feature arrays.

Convolutions are cross-correlations with reflect padding that keeps H×W. Weights are plain
frozen dataclasses, created by `init_weights` from a seed or restored from a weight manifest.
"""

import math
from collections.abc import Iterator
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
import numpy.typing as npt
from core import FloatArray, ImageF, SeededRng, fft2_array, ifft2_array
from errors import DataError
from logging_config import get_logger
from schemas import ModelConfig
from scipy import special
from weights_store import flatten_params, load_tensors, restore_params, save_tensors
from zvae import ACTIVATIONS, MlpWeights, bounded_sigmoid, init_mlp

logger = get_logger(__name__)

FeatureBlock = npt.NDArray[np.float64]

BN_EPS = 1e-5
LN_EPS = 1e-6


@dataclass(frozen=True, eq=False)
class ConvWeights:
    """Kernel (kh, kw, c_in, c_out), bias (c_out,), dilation rate."""

    kernel: FloatArray
    bias: FloatArray
    dilation: int = 1

    def __post_init__(self) -> None:
        if self.kernel.ndim != 4 or self.bias.shape != (self.kernel.shape[3],):  # noqa: PLR2004
            msg = f"Conv kernel {self.kernel.shape} and bias {self.bias.shape} do not chain"
            raise ValueError(msg)
        if self.kernel.shape[0] % 2 == 0 or self.kernel.shape[1] % 2 == 0:
            msg = f"Conv kernels need odd spatial sizes, got {self.kernel.shape[:2]}"
            raise ValueError(msg)

    @property
    def in_channels(self) -> int:
        return int(self.kernel.shape[2])

    @property
    def out_channels(self) -> int:
        return int(self.kernel.shape[3])


@dataclass(frozen=True, eq=False)
class DepthwiseWeights:
    """Per-channel kernel (kh, kw, C) and bias (C,)."""

    kernel: FloatArray
    bias: FloatArray
    dilation: int = 1


@dataclass(frozen=True, eq=False)
class BatchNormParams:
    """Inference batch norm: running statistics plus affine."""

    mean: FloatArray
    var: FloatArray
    gamma: FloatArray
    beta: FloatArray


@dataclass(frozen=True, eq=False)
class LayerNormParams:
    gamma: FloatArray
    beta: FloatArray


@dataclass(frozen=True, eq=False)
class FcmWeights:
    conv_freq: ConvWeights
    conv_act: ConvWeights
    bn: BatchNormParams


@dataclass(frozen=True, eq=False)
class LemWeights:
    mlp: MlpWeights
    conv: ConvWeights


@dataclass(frozen=True, eq=False)
class SeWeights:
    w1: FloatArray
    b1: FloatArray
    w2: FloatArray
    b2: FloatArray


@dataclass(frozen=True, eq=False)
class FfemWeights:
    proj_in: ConvWeights
    lem: LemWeights
    fcm: FcmWeights
    proj_out: ConvWeights
    se: SeWeights


@dataclass(frozen=True, eq=False)
class ScaWeights:
    weight: FloatArray
    bias: FloatArray


@dataclass(frozen=True, eq=False)
class DesmWeights:
    proj_in: ConvWeights
    depthwise: DepthwiseWeights
    dilated: ConvWeights
    sca: ScaWeights
    proj_out: ConvWeights


@dataclass(frozen=True, eq=False)
class GltbWeights:
    """A sub-layer whose norm and weights are None is switched off."""

    norm1: LayerNormParams | None
    ffem: FfemWeights | None
    norm2: LayerNormParams | None
    desm: DesmWeights | None


@dataclass(frozen=True, eq=False)
class EncoderStage:
    blocks: tuple[GltbWeights, ...]
    down: ConvWeights


@dataclass(frozen=True, eq=False)
class DecoderStage:
    up: ConvWeights
    fuse: ConvWeights
    blocks: tuple[GltbWeights, ...]


@dataclass(frozen=True, eq=False)
class SlcformerWeights:
    """Full network; `decoders` run deepest first."""

    stem: ConvWeights
    encoders: tuple[EncoderStage, ...]
    bottleneck: tuple[GltbWeights, ...]
    decoders: tuple[DecoderStage, ...]
    head: ConvWeights


def _check_block(x: FeatureBlock, channels: int | None = None) -> None:
    if x.ndim != 3 or min(x.shape) < 1:  # noqa: PLR2004
        msg = f"Feature blocks are (H, W, C) arrays with positive sizes, got {x.shape}"
        raise ValueError(msg)
    if channels is not None and x.shape[2] != channels:
        msg = f"Expected {channels} channels, got {x.shape[2]}"
        raise ValueError(msg)


def _check_even(x: FeatureBlock, op: str) -> None:
    if x.shape[2] % 2:
        msg = f"{op} needs an even channel count, got {x.shape[2]}"
        raise ValueError(msg)


def _reflect_pad(x: FeatureBlock, pad_h: int, pad_w: int) -> FeatureBlock:
    return np.pad(x, ((pad_h, pad_h), (pad_w, pad_w), (0, 0)), mode="reflect")


def _taps(
    x: FeatureBlock, kernel_hw: tuple[int, ...], dilation: int
) -> Iterator[tuple[int, int, FeatureBlock]]:
    """Yield (a, b, shifted view) for every kernel tap over the reflect-padded input."""
    height, width = x.shape[:2]
    kh, kw = kernel_hw
    padded = _reflect_pad(x, dilation * (kh // 2), dilation * (kw // 2))
    for a in range(kh):
        for b in range(kw):
            top, left = a * dilation, b * dilation
            yield a, b, padded[top : top + height, left : left + width]


def conv2d(x: FeatureBlock, w: ConvWeights) -> FeatureBlock:
    """out[i, j, o] = bias[o] + sum_{a, b, c} kernel[a, b, c, o] * x[i + d(a - r), j + d(b - r), c].

    Raises:
        ValueError: If the input channels do not match the kernel.
    """
    _check_block(x, w.in_channels)
    out = np.broadcast_to(w.bias, (*x.shape[:2], w.out_channels)).copy()
    for a, b, view in _taps(x, w.kernel.shape[:2], w.dilation):
        out += view @ w.kernel[a, b]
    return out


def pointwise_conv(x: FeatureBlock, w: ConvWeights) -> FeatureBlock:
    if w.kernel.shape[:2] != (1, 1):
        msg = f"pointwise_conv needs a 1x1 kernel, got {w.kernel.shape[:2]}"
        raise ValueError(msg)
    return conv2d(x, w)


def dilated_conv(x: FeatureBlock, w: ConvWeights) -> FeatureBlock:
    """`conv2d` at the weights' dilation rate (2 unless configured otherwise)."""
    return conv2d(x, w)


def depthwise_conv(x: FeatureBlock, w: DepthwiseWeights) -> FeatureBlock:
    """Each channel correlated with its own kernel."""
    _check_block(x, int(w.kernel.shape[2]))
    out = np.broadcast_to(w.bias, x.shape).copy()
    for a, b, view in _taps(x, w.kernel.shape[:2], w.dilation):
        out += view * w.kernel[a, b]
    return out


def pixel_unshuffle(x: FeatureBlock, r: int = 2) -> FeatureBlock:
    """(H, W, C) -> (H/r, W/r, C*r*r); output channel c*r*r + i*r + j holds sub-pixel (i, j).

    Raises:
        ValueError: If H or W is not divisible by `r`.
    """
    _check_block(x)
    height, width, channels = x.shape
    if height % r or width % r:
        msg = f"pixel_unshuffle needs H and W divisible by {r}, got {height}x{width}"
        raise ValueError(msg)
    blocks = x.reshape(height // r, r, width // r, r, channels).transpose(0, 2, 4, 1, 3)
    return blocks.reshape(height // r, width // r, channels * r * r)


def pixel_shuffle(x: FeatureBlock, r: int = 2) -> FeatureBlock:
    """Inverse of `pixel_unshuffle`.

    Raises:
        ValueError: If the channel count is not divisible by r*r.
    """
    _check_block(x)
    height, width, channels = x.shape
    if channels % (r * r):
        msg = f"pixel_shuffle needs channels divisible by {r * r}, got {channels}"
        raise ValueError(msg)
    blocks = x.reshape(height, width, channels // (r * r), r, r).transpose(0, 3, 1, 4, 2)
    return blocks.reshape(height * r, width * r, channels // (r * r))


def gelu(x: FeatureBlock) -> FeatureBlock:
    return ACTIVATIONS["gelu"](x)


def batch_norm(x: FeatureBlock, p: BatchNormParams) -> FeatureBlock:
    return (x - p.mean) / np.sqrt(p.var + BN_EPS) * p.gamma + p.beta


def layer_norm(x: FeatureBlock, p: LayerNormParams) -> FeatureBlock:
    """Normalize every pixel across its channels."""
    mean = x.mean(axis=2, keepdims=True)
    var = x.var(axis=2, keepdims=True)
    return (x - mean) / np.sqrt(var + LN_EPS) * p.gamma + p.beta


def fcm(x: FeatureBlock, w: FcmWeights) -> FeatureBlock:
    """Frequency branch: FFT, two 1×1 convs, ReLU, batch norm, inverse FFT, residual.

    Real and imaginary parts are stacked along channels while in the frequency domain.
    """
    _check_block(x)
    channels = x.shape[2]
    spectrum = fft2_array(x)
    freq = np.concatenate([spectrum.real, spectrum.imag], axis=2)
    freq = pointwise_conv(freq, w.conv_freq) + freq
    freq = gelu(pointwise_conv(freq, w.conv_act))
    freq = batch_norm(np.maximum(freq, 0.0), w.bn)
    restored = ifft2_array(freq[:, :, :channels] + 1j * freq[:, :, channels:])
    return x + restored.real


def lem(x: FeatureBlock, w: LemWeights) -> FeatureBlock:
    """Local branch: per-pixel MLP on the first channel half, dilated conv on the second.

    Raises:
        ValueError: On an odd channel count.
    """
    _check_block(x)
    _check_even(x, "lem")
    half = x.shape[2] // 2
    tokens = w.mlp.forward(x[:, :, :half])
    local = dilated_conv(x[:, :, half:], w.conv)
    return np.concatenate([tokens, local], axis=2)


def se_block(x: FeatureBlock, w: SeWeights) -> FeatureBlock:
    """Squeeze-and-excitation: sigmoid(w2 relu(w1 avgpool(x))) gates every channel."""
    _check_block(x, int(w.w1.shape[0]))
    pooled = x.mean(axis=(0, 1))
    gate = special.expit(np.maximum(pooled @ w.w1 + w.b1, 0.0) @ w.w2 + w.b2)
    return x * gate


def ffem(x: FeatureBlock, w: FfemWeights) -> FeatureBlock:
    """PWConv, split, (LEM | FCM), concat, GELU, PWConv, SE."""
    _check_block(x)
    _check_even(x, "ffem")
    projected = pointwise_conv(x, w.proj_in)
    half = projected.shape[2] // 2
    merged = np.concatenate(
        [lem(projected[:, :, :half], w.lem), fcm(projected[:, :, half:], w.fcm)], axis=2
    )
    return se_block(pointwise_conv(gelu(merged), w.proj_out), w.se)


def simple_gate(x: FeatureBlock) -> FeatureBlock:
    """Product of the two channel halves.

    Raises:
        ValueError: On an odd channel count.
    """
    _check_block(x)
    _check_even(x, "simple_gate")
    half = x.shape[2] // 2
    return x[:, :, :half] * x[:, :, half:]


def sca(x: FeatureBlock, w: ScaWeights) -> FeatureBlock:
    """Simplified channel attention: S = conv1x1(avgpool(x)), output S * x."""
    _check_block(x, int(w.weight.shape[0]))
    scale = x.mean(axis=(0, 1)) @ w.weight + w.bias
    return x * scale


def desm(x: FeatureBlock, w: DesmWeights) -> FeatureBlock:
    """Expand, then depthwise+dilated and SimpleGate+SCA branches, concat, project back."""
    _check_block(x)
    expanded = pointwise_conv(x, w.proj_in)
    directional = dilated_conv(depthwise_conv(expanded, w.depthwise), w.dilated)
    gated = sca(simple_gate(expanded), w.sca)
    return pointwise_conv(np.concatenate([directional, gated], axis=2), w.proj_out)


def gltb(x: FeatureBlock, w: GltbWeights) -> FeatureBlock:
    """Two pre-norm residual sub-layers: FFEM, then DESM. A disabled sub-layer passes x through."""
    if w.ffem is not None and w.norm1 is not None:
        x = x + ffem(layer_norm(x, w.norm1), w.ffem)
    if w.desm is not None and w.norm2 is not None:
        x = x + desm(layer_norm(x, w.norm2), w.desm)
    return x


def _run_blocks(x: FeatureBlock, blocks: tuple[GltbWeights, ...]) -> FeatureBlock:
    for block in blocks:
        x = gltb(x, block)
    return x


def slcformer_forward(img: ImageF, weights: SlcformerWeights, cfg: ModelConfig) -> ImageF:
    """Stem, encoder stages with skips, bottleneck, decoder stages, head, sigmoid(img + residual).

    Raises:
        DataError: If the image height or width is not a multiple of 2**(stages - 1).
    """
    multiple = cfg.size_multiple
    if img.height % multiple or img.width % multiple:
        suggested = (
            max(img.height // multiple, 1) * multiple,
            max(img.width // multiple, 1) * multiple,
        )
        msg = (
            f"Input is {img.height}x{img.width}; with {cfg.stages} stages both sides must be "
            f"multiples of {multiple} (crop or pad to e.g. {suggested[0]}x{suggested[1]})"
        )
        raise DataError(msg)
    if weights.stem.in_channels != img.channels or weights.head.out_channels != img.channels:
        msg = f"Weights expect {weights.stem.in_channels} image channels, got {img.channels}"
        raise DataError(msg)

    x = conv2d(img.data, weights.stem)
    skips = []
    for stage in weights.encoders:
        x = _run_blocks(x, stage.blocks)
        skips.append(x)
        x = pixel_unshuffle(pointwise_conv(x, stage.down))
    x = _run_blocks(x, weights.bottleneck)
    for stage in weights.decoders:
        x = pixel_shuffle(pointwise_conv(x, stage.up))
        x = pointwise_conv(np.concatenate([x, skips.pop()], axis=2), stage.fuse)
        x = _run_blocks(x, stage.blocks)
    residual = conv2d(x, weights.head)
    return ImageF(bounded_sigmoid(img.data + residual))


class _Init:
    """Draws parameters in a fixed order so a seed fully determines the weights."""

    def __init__(self, seed: int, *, zero: bool) -> None:
        self.generator = SeededRng(seed).generator("netblocks.init")
        self.zero = zero

    def normal(self, shape: tuple[int, ...], fan_in: int) -> FloatArray:
        if self.zero:
            return np.zeros(shape)
        return self.generator.standard_normal(shape) / math.sqrt(fan_in)

    def conv(self, size: int, c_in: int, c_out: int, dilation: int = 1) -> ConvWeights:
        kernel = self.normal((size, size, c_in, c_out), size * size * c_in)
        return ConvWeights(kernel=kernel, bias=np.zeros(c_out), dilation=dilation)

    def layer_norm(self, channels: int) -> LayerNormParams:
        gamma = np.zeros(channels) if self.zero else np.ones(channels)
        return LayerNormParams(gamma=gamma, beta=np.zeros(channels))

    def ffem(self, channels: int, cfg: ModelConfig) -> FfemWeights:
        quarter = channels // 4
        reduced = max(channels // cfg.se_reduction, 1)
        mlp = init_mlp(
            self.generator,
            (quarter, cfg.mlp_ratio * quarter, quarter),
            ("gelu", "identity"),
            zero=self.zero,
        )
        return FfemWeights(
            proj_in=self.conv(1, channels, channels),
            lem=LemWeights(mlp=mlp, conv=self.conv(3, quarter, quarter, cfg.dilation)),
            fcm=FcmWeights(
                conv_freq=self.conv(1, channels, channels),
                conv_act=self.conv(1, channels, channels),
                # Running statistics (0, 1) and zero affine make the branch start as identity.
                bn=BatchNormParams(
                    mean=np.zeros(channels),
                    var=np.ones(channels),
                    gamma=np.zeros(channels),
                    beta=np.zeros(channels),
                ),
            ),
            proj_out=self.conv(1, channels, channels),
            se=SeWeights(
                w1=self.normal((channels, reduced), channels),
                b1=np.zeros(reduced),
                w2=self.normal((reduced, channels), reduced),
                b2=np.zeros(channels),
            ),
        )

    def desm(self, channels: int, cfg: ModelConfig) -> DesmWeights:
        expanded = cfg.expansion * channels
        return DesmWeights(
            proj_in=self.conv(1, channels, expanded),
            depthwise=DepthwiseWeights(
                kernel=self.normal((3, 3, expanded), 9), bias=np.zeros(expanded)
            ),
            dilated=self.conv(3, expanded, expanded // 2, cfg.dilation),
            sca=ScaWeights(
                weight=self.normal((expanded // 2, expanded // 2), expanded // 2),
                bias=np.zeros(expanded // 2),
            ),
            proj_out=self.conv(1, expanded, channels),
        )

    def gltb(self, channels: int, cfg: ModelConfig) -> GltbWeights:
        weights = GltbWeights(norm1=None, ffem=None, norm2=None, desm=None)
        if cfg.use_ffem:
            ffem_weights = self.ffem(channels, cfg)
            weights = replace(weights, norm1=self.layer_norm(channels), ffem=ffem_weights)
        if cfg.use_desm:
            desm_weights = self.desm(channels, cfg)
            weights = replace(weights, norm2=self.layer_norm(channels), desm=desm_weights)
        return weights

    def blocks(self, channels: int, cfg: ModelConfig) -> tuple[GltbWeights, ...]:
        return tuple(self.gltb(channels, cfg) for _ in range(cfg.blocks_per_stage))


def init_weights(
    cfg: ModelConfig, seed: int, *, zero: bool = False, image_channels: int = 3
) -> SlcformerWeights:
    """Deterministic weights for `cfg`: Gaussian with std 1/sqrt(fan_in), or all zeros.

    Batch-norm running variances stay 1 in both cases.
    """
    init = _Init(seed, zero=zero)
    stem = init.conv(3, image_channels, cfg.base_channels)
    encoders = []
    for stage in range(cfg.stages - 1):
        channels = cfg.channels_at(stage)
        blocks = init.blocks(channels, cfg)
        encoders.append(EncoderStage(blocks=blocks, down=init.conv(1, channels, channels // 2)))
    bottleneck = init.blocks(cfg.channels_at(cfg.stages - 1), cfg)
    decoders = []
    for stage in reversed(range(cfg.stages - 1)):
        deeper, channels = cfg.channels_at(stage + 1), cfg.channels_at(stage)
        decoders.append(
            DecoderStage(
                up=init.conv(1, deeper, 2 * deeper),
                fuse=init.conv(1, 2 * channels, channels),
                blocks=init.blocks(channels, cfg),
            )
        )
    head = init.conv(3, cfg.base_channels, image_channels)
    logger.debug("Initialized SLCFormer weights (seed=%d, zero=%s)", seed, zero)
    return SlcformerWeights(
        stem=stem,
        encoders=tuple(encoders),
        bottleneck=bottleneck,
        decoders=tuple(decoders),
        head=head,
    )


def save_weights(directory: Path, weights: SlcformerWeights, cfg: ModelConfig) -> None:
    save_tensors(directory, flatten_params(weights), {"kind": "slcformer", "model": asdict(cfg)})


def load_weights(directory: Path, cfg: ModelConfig) -> SlcformerWeights:
    """Load a weight manifest written for `cfg`.

    Raises:
        DataError: If the manifest holds another kind of weights, another model
            configuration, or tensors that do not fit.
    """
    tensors, meta = load_tensors(directory)
    if meta.get("kind") != "slcformer":
        msg = f"{directory} holds {meta.get('kind')!r} weights, expected 'slcformer'"
        raise DataError(msg)
    if meta.get("model") != asdict(cfg):
        msg = (
            f"Weights in {directory} were built for model config {meta.get('model')}, "
            f"not {asdict(cfg)}"
        )
        raise DataError(msg)
    template = init_weights(cfg, seed=0, zero=True, image_channels=_image_channels(tensors))
    return restore_params(template, tensors)


def _image_channels(tensors: dict[str, FloatArray]) -> int:
    stem = tensors.get("stem.kernel")
    if stem is None or stem.ndim != 4:  # noqa: PLR2004
        msg = "Weight set has no usable stem.kernel tensor"
        raise DataError(msg)
    return int(stem.shape[2])
