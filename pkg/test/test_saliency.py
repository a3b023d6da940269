import math
import time
import unittest
import numpy as np
import pytest

from binloop.binmap import popcount
from binloop.imageio import GrayImage
from binloop.model import SaliencyParams
from binloop.saliency import (
    Spectrum, binarize, compute_binary_content, forward_dft, gaussian_smooth, inverse_dft,
    log_amplitude_and_phase, reconstruct_saliency, saliency_map, spectral_residual
)
from test.test_helpers import blob_image


def naive_dft(data):
    h, w = data.shape
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    out = np.zeros((h, w), dtype=complex)
    for u in range(h):
        for v in range(w):
            out[u, v] = np.sum(data * np.exp(-2j * np.pi * (u * rows / h + v * cols / w)))
    return out


class TestForwardDft(unittest.TestCase):
    def test_constant_image_has_only_dc(self):
        spec = forward_dft(GrayImage(np.full((6, 8), 0.25)))
        self.assertAlmostEqual(spec.re[0, 0], 0.25 * 6 * 8)
        re, im = spec.re.copy(), spec.im
        re[0, 0] = 0.0
        self.assertTrue(np.allclose(re, 0.0, atol=1e-12))
        self.assertTrue(np.allclose(im, 0.0, atol=1e-12))

    def test_impulse_is_flat(self):
        data = np.zeros((5, 7))
        data[0, 0] = 1.0
        spec = forward_dft(GrayImage(data))
        np.testing.assert_allclose(spec.re, 1.0, atol=1e-12)
        np.testing.assert_allclose(spec.im, 0.0, atol=1e-12)

    def test_matches_naive_dft_and_round_trips(self):
        rng = np.random.default_rng(3)
        start = time.perf_counter()
        for _ in range(20):
            img = GrayImage(rng.random((16, 16)))
            spec = forward_dft(img)
            ref = naive_dft(img.data)
            self.assertLess(np.max(np.abs(spec.as_complex() - ref)), 1e-9)
            back = inverse_dft(spec)
            self.assertLess(np.max(np.abs(back.real - img.data)), 1e-9)
            self.assertLess(np.max(np.abs(back.imag)), 1e-9)
        self.assertLess(time.perf_counter() - start, 5.0)


def test_log_amplitude_and_phase_bins():
    spec = Spectrum(np.array([[1.0, 0.0, 0.0]]), np.array([[0.0, 1.0, 0.0]]))
    log_amp, phase = log_amplitude_and_phase(spec, 1e-12)
    assert log_amp[0, 0] == pytest.approx(0.0, abs=1e-9)
    assert phase[0, 0] == 0.0
    assert phase[0, 1] == pytest.approx(math.pi / 2)
    assert log_amp[0, 2] == pytest.approx(math.log(1e-12))
    assert phase[0, 2] == 0.0


def test_spectral_residual_examples():
    np.testing.assert_allclose(spectral_residual(np.full((6, 6), 3.7), 3), 0.0, atol=1e-12)
    rng = np.random.default_rng(0)
    np.testing.assert_array_equal(spectral_residual(rng.random((6, 6)), 1), 0.0)
    field = np.zeros((5, 5))
    field[2, 2] = 1.0
    assert spectral_residual(field, 3)[2, 2] == pytest.approx(8.0 / 9.0)
    with pytest.raises(ValueError):
        spectral_residual(field, 4)


def test_spectral_residual_shift_equivariant_in_interior(rng):
    field = rng.random((20, 20))
    shifted = np.roll(field, (2, 3), axis=(0, 1))
    a = spectral_residual(field, 3)
    b = spectral_residual(shifted, 3)
    np.testing.assert_allclose(b[6:18, 6:18], a[4:16, 3:15], atol=1e-12)


def test_reconstruct_zero_spectrum_peaks_at_origin():
    zeros = np.zeros((16, 20))
    sal = reconstruct_saliency(zeros, zeros, 2.0)
    assert np.unravel_index(np.argmax(sal), sal.shape) == (0, 0)
    raw = reconstruct_saliency(zeros, zeros, 2.0, radius=0)
    assert raw[0, 0] == pytest.approx(1.0)
    assert raw.sum() == pytest.approx(1.0)


def test_reconstruct_is_nonnegative(rng):
    residual = rng.normal(size=(24, 32))
    phase = rng.uniform(-math.pi, math.pi, size=(24, 32))
    assert reconstruct_saliency(residual, phase, 2.5).min() >= 0.0


def test_gaussian_smooth_zero_radius_is_identity(rng):
    field = rng.random((8, 8))
    np.testing.assert_array_equal(gaussian_smooth(field, 2.5, radius=0), field)


def test_gaussian_smooth_preserves_mean_of_constant():
    np.testing.assert_allclose(gaussian_smooth(np.full((9, 9), 2.0), 1.5), 2.0)


class TestBinarize(unittest.TestCase):
    def test_uniform_field_is_empty(self):
        self.assertEqual(popcount(binarize(np.full((4, 4), 0.3), 1.5)), 0)

    def test_worked_example(self):
        bmap = binarize(np.array([[10.0, 0.0], [0.0, 0.0]]), 3.0)
        np.testing.assert_array_equal(bmap.to_bool(), [[True, False], [False, False]])

    def test_zero_field_is_empty(self):
        self.assertEqual(popcount(binarize(np.zeros((3, 5)), 2.0)), 0)

    def test_positive_scaling_gives_same_map(self):
        sal = np.random.default_rng(5).random((12, 12)) ** 4
        self.assertEqual(binarize(sal, 2.0), binarize(4.0 * sal, 2.0))


@pytest.mark.parametrize('value', [0.0, 0.5, 1.0])
def test_constant_image_has_almost_no_salient_cells(value):
    img = GrayImage(np.full((96, 128), value))
    bmap = compute_binary_content(img, SaliencyParams())
    assert popcount(bmap) / (96 * 128) < 0.01


def test_blob_concentrates_salient_cells():
    params = SaliencyParams()
    img, (top, left, bottom, right) = blob_image()
    mask = compute_binary_content(img, params).to_bool()
    assert mask.sum() > 0
    pad = math.ceil(3 * params.gaussian_sigma)
    inside = mask[max(0, top - pad):bottom + pad, max(0, left - pad):right + pad].sum()
    assert inside / mask.sum() >= 0.5


def test_binary_content_is_deterministic():
    img, _ = blob_image()
    params = SaliencyParams()
    assert compute_binary_content(img, params) == compute_binary_content(img, params)


def test_saliency_map_matches_binary_content():
    img, _ = blob_image()
    params = SaliencyParams()
    sal = saliency_map(img, params)
    assert sal.shape == (96, 128)
    assert binarize(sal, params.gamma) == compute_binary_content(img, params)


if __name__ == '__main__':
    unittest.main()
