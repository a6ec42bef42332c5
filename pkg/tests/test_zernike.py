"""Tests for zernike module."""

import math

import numpy as np
import pytest
from core import SeededRng
from schemas import TurbulenceConfig
from zernike import (
    AnchorGrid,
    CoeffField,
    ZernikeCoeffs,
    build_basis,
    evaluate_mode,
    mode_sigmas,
    noll_to_nm,
    phase_map,
    sample_coeff_field,
)


class TestNollIndex:
    """Test cases for noll_to_nm function."""

    @pytest.mark.parametrize(
        ("j", "expected"),
        [
            (1, (0, 0)),
            (2, (1, 1)),
            (3, (1, -1)),
            (4, (2, 0)),
            (5, (2, -2)),
            (6, (2, 2)),
            (7, (3, -1)),
            (8, (3, 1)),
            (9, (3, -3)),
            (10, (3, 3)),
            (11, (4, 0)),
            (15, (4, -4)),
        ],
    )
    def test_known_indices(self, j: int, expected: tuple[int, int]) -> None:
        """Test the Noll table for the first radial orders."""
        assert noll_to_nm(j) == expected

    def test_rejects_zero(self) -> None:
        """Test that Noll indices start at 1."""
        with pytest.raises(ValueError, match=">= 1"):
            noll_to_nm(0)


class TestEvaluateMode:
    """Test cases for evaluate_mode function."""

    def test_piston_is_one(self) -> None:
        """Test that mode 1 is constant 1."""
        rho = np.array([0.0, 0.3, 1.0])
        np.testing.assert_allclose(evaluate_mode(1, rho, np.zeros(3)), 1.0)

    def test_defocus_zero_crossing(self) -> None:
        """Test that defocus vanishes at rho = 1/sqrt(2)."""
        value = evaluate_mode(4, np.array([1 / math.sqrt(2)]), np.zeros(1))
        assert abs(value[0]) < 1e-6  # noqa: PLR2004

    def test_defocus_edge_value(self) -> None:
        """Test the normalized defocus value sqrt(3) at the rim."""
        value = evaluate_mode(4, np.array([1.0]), np.zeros(1))
        assert value[0] == pytest.approx(math.sqrt(3))

    def test_tilt_angular_term(self) -> None:
        """Test that mode 2 follows cos(theta) and mode 3 follows sin(theta)."""
        theta = np.array([0.0, math.pi / 2])
        rho = np.ones(2)
        np.testing.assert_allclose(evaluate_mode(2, rho, theta), [2.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(evaluate_mode(3, rho, theta), [0.0, 2.0], atol=1e-12)

    @pytest.mark.parametrize("j", [1, 4, 11])
    def test_rotationally_symmetric_modes(self, j: int) -> None:
        """Test that modes with m = 0 do not depend on the polar angle."""
        rho = np.linspace(0.0, 1.0, 7)
        reference = evaluate_mode(j, rho, np.zeros(7))
        for angle in (0.4, 1.3, math.pi, 5.0):
            np.testing.assert_allclose(evaluate_mode(j, rho, np.full(7, angle)), reference)

    @pytest.mark.parametrize("j", [1, 4, 11])
    def test_symmetric_modes_survive_quarter_turn(self, j: int) -> None:
        """Test that the sampled m = 0 modes equal their 90 degree rotation."""
        mode = build_basis(16, 11).values[j - 1]
        np.testing.assert_allclose(np.rot90(mode), mode, atol=1e-12)


class TestBuildBasis:
    """Test cases for build_basis function."""

    def test_orthonormal_on_fine_grid(self) -> None:
        """Test the discrete Gram matrix of modes 1-15 is close to identity."""
        basis = build_basis(256, 15)
        flat = basis.values.reshape(15, -1)
        gram = flat @ flat.T / basis.disk_mask.sum()
        np.testing.assert_allclose(np.diag(gram), 1.0, atol=5e-2)
        norms = np.sqrt(np.diag(gram))
        normalized = gram / np.outer(norms, norms)
        off_diagonal = normalized - np.eye(15)
        assert np.max(np.abs(off_diagonal)) < 1e-2  # noqa: PLR2004

    def test_zero_outside_disk(self) -> None:
        """Test that samples outside the unit disk are zero."""
        basis = build_basis(16, 6)
        assert np.all(basis.values[:, ~basis.disk_mask] == 0.0)

    def test_rejects_small_grid(self) -> None:
        """Test the minimum grid size."""
        with pytest.raises(ValueError, match=">= 8"):
            build_basis(4, 3)


class TestPhaseMap:
    """Test cases for phase_map function."""

    def test_linear_in_coefficients(self) -> None:
        """Test that the phase of a sum is the sum of the phases."""
        basis = build_basis(16, 6)
        a = ZernikeCoeffs(np.array([0.0, 0.3, -0.2, 0.5, 0.0, 0.1]))
        b = ZernikeCoeffs(np.array([0.0, -0.1, 0.4, 0.0, 0.2, 0.0]))
        np.testing.assert_allclose(
            phase_map(basis, a + b), phase_map(basis, a) + phase_map(basis, b), atol=1e-12
        )

    def test_mode_count_mismatch(self) -> None:
        """Test that the coefficient count must match the basis."""
        with pytest.raises(ValueError, match="coefficients"):
            phase_map(build_basis(16, 6), ZernikeCoeffs(np.zeros(4)))


class TestCoeffSampling:
    """Test cases for mode_sigmas and sample_coeff_field."""

    def test_sigma_decay(self) -> None:
        """Test base_sigma * j**-alpha with piston skipped."""
        sigmas = mode_sigmas(TurbulenceConfig(n_modes=4, base_sigma=2.0, decay_alpha=1.0))
        np.testing.assert_allclose(sigmas, [0.0, 1.0, 2.0 / 3.0, 0.5])

    def test_zero_turbulence_gives_zero_field(self) -> None:
        """Test that base_sigma 0 yields an all-zero field."""
        anchors = AnchorGrid(rows=2, cols=3, height=10, width=10)
        field = sample_coeff_field(SeededRng(3), TurbulenceConfig(base_sigma=0.0), anchors)
        assert field.coeffs.shape == (2, 3, 15)
        assert np.all(field.coeffs == 0.0)

    def test_seeded_and_independent_per_anchor(self) -> None:
        """Test determinism and that anchors get different draws."""
        anchors = AnchorGrid(rows=2, cols=2, height=8, width=8)
        config = TurbulenceConfig(n_modes=6)
        first = sample_coeff_field(SeededRng(11), config, anchors)
        second = sample_coeff_field(SeededRng(11), config, anchors)
        np.testing.assert_array_equal(first.coeffs, second.coeffs)
        assert not np.array_equal(first.coeffs[0, 0], first.coeffs[1, 1])

    def test_empirical_std(self) -> None:
        """Test that sample standard deviations follow the configured decay."""
        anchors = AnchorGrid(rows=60, cols=60, height=60, width=60)
        config = TurbulenceConfig(n_modes=5, base_sigma=1.0, decay_alpha=1.0)
        field = sample_coeff_field(SeededRng(5), config, anchors)
        observed = field.coeffs.reshape(-1, 5).std(axis=0)
        np.testing.assert_allclose(observed[1:], mode_sigmas(config)[1:], rtol=0.05)

    def test_field_shape_checked(self) -> None:
        """Test that CoeffField rejects a mismatched coefficient array."""
        anchors = AnchorGrid(rows=2, cols=2, height=8, width=8)
        with pytest.raises(ValueError, match="does not match"):
            CoeffField(anchors=anchors, coeffs=np.zeros((3, 2, 4)))


class TestAnchorGrid:
    """Test cases for AnchorGrid dataclass."""

    def test_corners_included(self) -> None:
        """Test that anchors span the image corner to corner."""
        grid = AnchorGrid(rows=3, cols=3, height=11, width=21)
        np.testing.assert_allclose(grid.xs, [0.0, 10.0, 20.0])
        np.testing.assert_allclose(grid.ys, [0.0, 5.0, 10.0])
        assert grid.positions.shape == (3, 3, 2)
        assert grid.count == 9  # noqa: PLR2004

    def test_single_anchor_centred(self) -> None:
        """Test that one anchor sits at the image centre."""
        grid = AnchorGrid(rows=1, cols=1, height=9, width=5)
        assert (grid.xs[0], grid.ys[0]) == (2.0, 4.0)
