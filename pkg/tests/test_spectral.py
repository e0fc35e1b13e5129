import numpy as np
import pytest
import torch

from mccl.errors import DimensionError
from mccl.spectral import (
    ButterworthFilter,
    SpectralProfile,
    azimuthal_profile,
    butterworth_lowpass,
    fft2,
    frequency_loss,
    ifft2,
    profile_gap,
)

from conftest import random_image


class TestFFT:
    def test_zero_image_gives_zero_spectrum(self):
        spec = fft2(torch.zeros(3, 16, 16, dtype=torch.float64))
        assert torch.all(spec.data == 0)

    def test_constant_image_energy_only_at_dc(self):
        c = 0.37
        spec = fft2(torch.full((1, 16, 16), c, dtype=torch.float64)).shift()
        mag = spec.data.abs()[0]
        dc = mag[8, 8].item()
        mag[8, 8] = 0
        assert dc == pytest.approx(16 * c, rel=1e-12)  # unitary norm: c * sqrt(H*W)
        assert mag.max().item() < 1e-12

    def test_round_trip_identity(self):
        rng = np.random.default_rng(1)
        x = random_image(rng, 32)
        err = (ifft2(fft2(x)) - x).abs().max().item()
        assert err < 1e-6

    def test_shift_round_trip(self):
        rng = np.random.default_rng(2)
        x = random_image(rng, 16)
        spec = fft2(x)
        assert torch.allclose(spec.shift().unshift().data, spec.data)

    def test_rejects_non_finite(self):
        bad = torch.full((1, 8, 8), float("nan"))
        with pytest.raises(ValueError):
            fft2(bad)


class TestFrequencyLoss:
    def test_identical_inputs_zero(self):
        rng = np.random.default_rng(3)
        x = random_image(rng, 16)
        assert float(frequency_loss(x, x)) == 0.0

    def test_parseval_identity(self):
        # with unitary normalization the spectral distance equals the pixel distance
        rng = np.random.default_rng(4)
        for _ in range(10):
            x, y = random_image(rng, 24), random_image(rng, 24)
            lhs = float(frequency_loss(x, y))
            rhs = float(((x - y) ** 2).sum())
            assert lhs == pytest.approx(rhs, rel=1e-10)

    def test_batched_mean_reduction(self):
        rng = np.random.default_rng(5)
        xs = torch.stack([random_image(rng, 16) for _ in range(4)])
        ys = torch.stack([random_image(rng, 16) for _ in range(4)])
        batched = float(frequency_loss(xs, ys))
        singles = np.mean([float(frequency_loss(x, y)) for x, y in zip(xs, ys)])
        assert batched == pytest.approx(singles, rel=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(6)
        x = random_image(rng, 8)
        y = random_image(rng, 8).requires_grad_(True)
        frequency_loss(x, y).backward()
        analytic = y.grad.clone()
        eps = 1e-6
        for idx in [(0, 1, 2), (2, 5, 7), (1, 0, 0)]:
            yp, ym = y.detach().clone(), y.detach().clone()
            yp[idx] += eps
            ym[idx] -= eps
            num = (float(frequency_loss(x, yp)) - float(frequency_loss(x, ym))) / (2 * eps)
            assert float(analytic[idx]) == pytest.approx(num, rel=1e-4)

    def test_shape_mismatch_raises(self):
        with pytest.raises(DimensionError):
            frequency_loss(torch.zeros(3, 8, 8), torch.zeros(3, 8, 16))

    def test_linearity_superposition(self):
        # the transform itself is linear: F(x + z) - F(y + z) == F(x) - F(y) in loss terms
        rng = np.random.default_rng(7)
        x, y, z = (random_image(rng, 16) for _ in range(3))
        assert float(frequency_loss(x + z, y + z)) == pytest.approx(float(frequency_loss(x, y)), rel=1e-9)


class TestButterworth:
    def test_gain_one_at_dc_and_half_at_cutoff(self):
        filt = ButterworthFilter(cutoff_d0=0.1)
        assert filt.gain(0.0) == 1.0
        assert filt.gain(0.1) == pytest.approx(0.5, abs=1e-12)

    def test_gain_monotone_decreasing(self):
        filt = ButterworthFilter(cutoff_d0=0.2)
        d = np.linspace(0, 0.7, 100)
        g = filt.gain(d)
        assert np.all(np.diff(g) <= 0)

    def test_constant_image_unchanged(self):
        x = torch.full((3, 16, 16), 0.25, dtype=torch.float64)
        out = butterworth_lowpass(x, ButterworthFilter(0.1))
        assert torch.allclose(out, x, atol=1e-12)

    def test_nyquist_stripe_attenuation_matches_analytic_gain(self):
        # alternating-pixel pattern along one axis sits at d = 0.5 exactly
        n, d0, amp = 32, 0.1, 0.2
        rows = torch.arange(n, dtype=torch.float64)
        x = 0.5 + amp * (-1.0) ** rows[:, None] * torch.ones(1, n, dtype=torch.float64)
        out = butterworth_lowpass(x.unsqueeze(0), ButterworthFilter(d0))
        measured = (out - 0.5).abs().max().item() / amp
        expected = 1.0 / (1.0 + (0.5 / d0) ** 2)  # = 1/26
        assert measured == pytest.approx(expected, rel=1e-9)

    def test_double_filtering_equals_squared_gain(self):
        rng = np.random.default_rng(8)
        x = random_image(rng, 16)
        filt = ButterworthFilter(0.15)
        twice = butterworth_lowpass(butterworth_lowpass(x, filt), filt)
        gain = filt.gain_grid(16, 16)
        spec = torch.fft.fft2(x, norm="ortho") * gain**2
        direct = torch.fft.ifft2(spec, norm="ortho").real
        assert torch.allclose(twice, direct, atol=1e-10)

    def test_cutoff_validation(self):
        with pytest.raises(ValueError):
            ButterworthFilter(cutoff_d0=0.0)
        with pytest.raises(ValueError):
            ButterworthFilter(cutoff_d0=0.6)
        with pytest.raises(ValueError):
            ButterworthFilter(order=0)


class TestAzimuthalProfile:
    def test_constant_image_dc_only(self):
        prof = azimuthal_profile(torch.full((3, 32, 32), 0.5, dtype=torch.float64))
        assert prof.power[0] > 0
        assert np.all(prof.power[1:] == 0)

    def test_radii_span(self):
        prof = azimuthal_profile(torch.rand(3, 64, 64, dtype=torch.float64))
        assert prof.radii[0] == 0
        assert prof.radii[-1] == 32
        assert len(prof.radii) == len(prof.power) == 33

    def test_white_noise_profile_flat(self):
        # Monte-Carlo oracle: iid noise has a flat expected spectrum
        rng = np.random.default_rng(9)
        acc = None
        n_images = 64
        for _ in range(n_images):
            prof = azimuthal_profile(random_image(rng, 128, channels=1))
            acc = prof.power if acc is None else acc + prof.power
        mean_profile = acc / n_images
        body = mean_profile[1:]
        cv = body.std() / body.mean()
        assert cv < 0.3

    def test_rotation_symmetry(self):
        rng = np.random.default_rng(10)
        x = random_image(rng, 32)
        rotated = torch.flip(x, dims=(-2, -1))  # 180 degrees
        assert np.allclose(azimuthal_profile(x).power, azimuthal_profile(rotated).power, rtol=1e-9)

    def test_translation_invariance(self):
        rng = np.random.default_rng(11)
        x = random_image(rng, 32)
        shifted = torch.roll(x, shifts=(5, -7), dims=(-2, -1))
        assert np.allclose(azimuthal_profile(x).power, azimuthal_profile(shifted).power, rtol=1e-8)


class TestProfileGap:
    def _profiles(self, rng, n=4, size=32):
        return [azimuthal_profile(random_image(rng, size)) for _ in range(n)]

    def test_identical_sets_zero(self):
        rng = np.random.default_rng(12)
        profs = self._profiles(rng)
        assert profile_gap(profs, list(profs)) == 0.0

    def test_symmetry(self):
        rng = np.random.default_rng(13)
        a, b = self._profiles(rng), self._profiles(rng)
        assert profile_gap(a, b) == pytest.approx(profile_gap(b, a), rel=1e-12)

    def test_positive_for_different_sets(self):
        rng = np.random.default_rng(14)
        a = self._profiles(rng)
        b = [azimuthal_profile(2.0 * random_image(rng, 32)) for _ in range(4)]
        assert profile_gap(a, b) > 0

    def test_mismatched_grids_raise(self):
        rng = np.random.default_rng(15)
        a = [azimuthal_profile(random_image(rng, 32))]
        b = [azimuthal_profile(random_image(rng, 64))]
        with pytest.raises(DimensionError):
            profile_gap(a, b)

    def test_empty_set_raises(self):
        with pytest.raises(DimensionError):
            profile_gap([], [])
