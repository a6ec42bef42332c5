"""Tests for zvae module."""

import math
from pathlib import Path

import numpy as np
import pytest
from core import SeededRng
from errors import DataError
from optics import PSFGrid, anchor_positions
from weights_store import save_tensors
from zernike import AnchorGrid, CoeffField
from zvae import (
    KernelSizeMap,
    LatentStats,
    MlpWeights,
    decode,
    encode,
    init_mlp,
    init_vae,
    kernel_size_map,
    load_vae,
    reparameterize,
    sample_flare,
    save_vae,
)

ANCHORS = AnchorGrid(rows=2, cols=2, height=16, width=16)


def _field(rng: np.random.Generator) -> CoeffField:
    return CoeffField(anchors=ANCHORS, coeffs=rng.normal(size=(2, 2, 6)))


class TestReparameterize:
    """Test cases for reparameterize and LatentStats."""

    def test_zero_logvar_adds_eps(self) -> None:
        """Test z = mu + eps when the variance is one."""
        stats = LatentStats(mu=np.array([0.5, -1.0]), logvar=np.zeros(2))
        np.testing.assert_array_equal(reparameterize(stats, np.ones(2)), [1.5, 0.0])

    def test_sample_std(self) -> None:
        """Test that 10k draws have the standard deviation exp(logvar / 2)."""
        stats = LatentStats(mu=np.zeros(10_000), logvar=np.full(10_000, math.log(4.0)))
        eps = SeededRng(9).generator("zvae.eps").standard_normal(10_000)
        z = reparameterize(stats, eps)
        assert z.std() == pytest.approx(2.0, rel=0.03)

    def test_logvar_clamped(self) -> None:
        """Test that extreme log-variances are clamped to +-20."""
        stats = LatentStats(mu=np.zeros(2), logvar=np.array([-100.0, 100.0]))
        np.testing.assert_array_equal(stats.logvar, [-20.0, 20.0])

    def test_eps_shape_checked(self) -> None:
        """Test that eps must match the latent size."""
        stats = LatentStats(mu=np.zeros(3), logvar=np.zeros(3))
        with pytest.raises(ValueError, match="eps"):
            reparameterize(stats, np.zeros(2))

    def test_non_finite_rejected(self) -> None:
        """Test that NaN statistics are rejected."""
        with pytest.raises(ValueError, match="finite"):
            LatentStats(mu=np.array([np.nan]), logvar=np.zeros(1))


class TestMlp:
    """Test cases for MlpWeights and init_mlp."""

    def test_chain_checked(self) -> None:
        """Test that consecutive layers must agree on width."""
        with pytest.raises(ValueError, match="expects 4 inputs"):
            MlpWeights(
                weights=(np.zeros((2, 3)), np.zeros((4, 1))),
                biases=(np.zeros(3), np.zeros(1)),
                activations=("relu", "identity"),
            )

    def test_unknown_activation(self) -> None:
        """Test that activations come from the known table."""
        with pytest.raises(ValueError, match="Unknown activation"):
            MlpWeights(weights=(np.zeros((2, 2)),), biases=(np.zeros(2),), activations=("elu",))

    def test_init_scale(self) -> None:
        """Test that initial weights have std 1/sqrt(fan_in) and zero biases."""
        generator = SeededRng(3).generator("zvae.init")
        mlp = init_mlp(generator, (400, 300), ("identity",))
        assert mlp.weights[0].std() == pytest.approx(1 / 20, rel=0.05)
        assert not mlp.biases[0].any()

    def test_forward_relu(self) -> None:
        """Test a hand-computed two-layer forward pass."""
        mlp = MlpWeights(
            weights=(np.array([[1.0, -1.0]]), np.array([[1.0], [1.0]])),
            biases=(np.zeros(2), np.array([0.5])),
            activations=("relu", "identity"),
        )
        np.testing.assert_allclose(mlp.forward(np.array([2.0])), [2.5])


class TestKernelSizeMap:
    """Test cases for kernel_size_map function."""

    def test_delta_and_flat_kernels(self) -> None:
        """Test that a delta needs one tap and a flat kernel needs almost the full window."""
        kernels = np.zeros((1, 2, 5, 5))
        kernels[0, 0, 2, 2] = 1.0
        kernels[0, 1] = 1.0 / 25.0
        grid = PSFGrid(anchors=anchor_positions(1, 2, 8, 8), kernels=kernels)
        sizes = kernel_size_map(grid).grid
        assert sizes[0, 0] == 1.0
        assert sizes[0, 1] == 5.0  # noqa: PLR2004

    def test_values_at_least_one(self) -> None:
        """Test that the map rejects sizes below one tap."""
        with pytest.raises(ValueError, match=">= 1"):
            KernelSizeMap(grid=np.zeros((2, 2)))


class TestEncodeDecode:
    """Test cases for encode, decode, init_vae and sample_flare."""

    def test_shapes(self, rng: np.random.Generator) -> None:
        """Test latent and output shapes through a small model."""
        vae = init_vae(1, 4 * 7, (8, 8, 3), hidden=(16,), latent_dim=4)
        stats = encode(_field(rng), KernelSizeMap(grid=np.ones((2, 2))), vae.encoder)
        assert stats.dim == 4  # noqa: PLR2004
        image = decode(stats.mu, vae.decoder, vae.out_shape)
        assert image.shape == (8, 8, 3)
        assert 0.0 < image.data.min() <= image.data.max() < 1.0

    def test_encoder_width_checked(self, rng: np.random.Generator) -> None:
        """Test that the feature count must match the encoder input."""
        vae = init_vae(1, 10, (4, 4, 1), hidden=(8,), latent_dim=2)
        with pytest.raises(ValueError, match="Encoder expects 10"):
            encode(_field(rng), KernelSizeMap(grid=np.ones((2, 2))), vae.encoder)

    def test_decode_shape_checked(self) -> None:
        """Test that out_shape must match the decoder width."""
        vae = init_vae(1, 10, (4, 4, 1), hidden=(8,), latent_dim=2)
        with pytest.raises(ValueError, match="cannot reshape"):
            decode(np.zeros(2), vae.decoder, (4, 4, 3))

    def test_zero_weights_give_half_grey(self, rng: np.random.Generator) -> None:
        """Test that an all-zero decoder produces sigmoid(0) everywhere."""
        vae = init_vae(1, 28, (4, 4, 3), hidden=(8,), latent_dim=2, zero=True)
        image = sample_flare(vae, _field(rng), KernelSizeMap(np.ones((2, 2))), SeededRng(0))
        np.testing.assert_allclose(image.data, 0.5)

    def test_init_deterministic(self) -> None:
        """Test that a seed fully determines the initial weights."""
        first = init_vae(5, 28, (4, 4, 1), hidden=(8,), latent_dim=2)
        second = init_vae(5, 28, (4, 4, 1), hidden=(8,), latent_dim=2)
        for a, b in zip(first.encoder.weights, second.encoder.weights, strict=True):
            np.testing.assert_array_equal(a, b)

    def test_sample_flare_deterministic(self, rng: np.random.Generator) -> None:
        """Test that sampling with the same seed repeats exactly."""
        vae = init_vae(2, 28, (4, 4, 3), hidden=(8,), latent_dim=3)
        field = _field(rng)
        ksize = KernelSizeMap(grid=np.full((2, 2), 3.0))
        first = sample_flare(vae, field, ksize, SeededRng(7))
        second = sample_flare(vae, field, ksize, SeededRng(7))
        np.testing.assert_array_equal(first.data, second.data)

    @pytest.mark.parametrize("bias", [40.0, -800.0])
    def test_decode_strictly_inside_unit_interval(self, bias: float) -> None:
        """Test that a saturating decoder bias still decodes inside (0, 1)."""
        weights = MlpWeights(
            weights=(np.ones((2, 4)),), biases=(np.full(4, bias),), activations=("identity",)
        )
        image = decode(np.zeros(2), weights, (2, 2, 1))
        assert np.all((image.data > 0.0) & (image.data < 1.0))

    def test_decode_increases_with_bias(self) -> None:
        """Test that raising the output bias raises every decoded sample."""
        levels = np.linspace(-5.0, 5.0, 11)
        samples = [
            decode(
                np.array([0.3, -0.2]),
                MlpWeights(
                    weights=(np.ones((2, 4)),),
                    biases=(np.full(4, level),),
                    activations=("identity",),
                ),
                (2, 2, 1),
            ).data
            for level in levels
        ]
        assert np.all(np.diff(np.stack(samples), axis=0) > 0)


class TestVaePersistence:
    """Test cases for save_vae and load_vae."""

    def test_round_trip(self, tmp_path: Path) -> None:
        """Test that weights survive a save/load cycle at float32 precision."""
        vae = init_vae(4, 12, (2, 2, 3), hidden=(6,), latent_dim=2)
        save_vae(tmp_path / "w", vae)
        loaded = load_vae(tmp_path / "w")
        assert loaded.out_shape == vae.out_shape
        assert loaded.encoder.activations == vae.encoder.activations
        for a, b in zip(loaded.decoder.weights, vae.decoder.weights, strict=True):
            np.testing.assert_allclose(a, b, rtol=1e-6)

    def test_wrong_kind(self, tmp_path: Path) -> None:
        """Test that a weight set of another kind is rejected."""
        save_tensors(tmp_path, {"x": np.zeros(2)}, {"kind": "slcformer"})
        with pytest.raises(DataError, match="expected 'zvae'"):
            load_vae(tmp_path)

    def test_missing_tensor(self, tmp_path: Path) -> None:
        """Test that a manifest naming absent layers is rejected."""
        meta = {
            "kind": "zvae",
            "out_shape": [2, 2, 1],
            "encoder_activations": ["identity"],
            "decoder_activations": ["identity"],
        }
        save_tensors(tmp_path, {"encoder.0.weight": np.zeros((2, 2))}, meta)
        with pytest.raises(DataError, match="missing tensor"):
            load_vae(tmp_path)
