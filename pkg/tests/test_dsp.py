"""
This unittest tests the STFT, its inverse and the adjoint used for back propagation
"""
import logging
import sys
import unittest

import numpy as np

from pse import GeometryMismatch
from pse.audio import Waveform
from pse.dsp import StftConfig, Spectrogram, Geometry, stft, istft, istft_adjoint, istft_backward, inner
from tests.utils import random_waveform

logging.basicConfig(stream=sys.stdout, level=logging.INFO)


class StftTest(unittest.TestCase):
    config = StftConfig()

    def test_config(self):
        self.assertEqual(self.config.num_bins, 257)
        self.assertEqual(self.config.num_frames(4000), 32)
        self.assertEqual(self.config.num_frames(8000), 63)
        with self.assertRaises(GeometryMismatch):
            StftConfig(fft_size=500)
        with self.assertRaises(GeometryMismatch):
            StftConfig(hop=100)
        with self.assertRaises(GeometryMismatch):
            StftConfig(window='hamming')

    def test_round_trip(self):
        rng = np.random.default_rng(42)
        for i in range(100):
            w = random_waveform(4000, rng)
            r = istft(stft(w, self.config))
            self.assertEqual(len(r), 4000, msg=f'Failed at test elem {i}')
            self.assertLessEqual(float(np.max(np.abs(r.samples - w.samples))), 1e-6, msg=f'Failed at test elem {i}')

    def test_round_trip_odd_lengths(self):
        rng = np.random.default_rng(1)
        for i, n in enumerate([257, 300, 511, 513, 1000, 3333]):
            w = random_waveform(n, rng)
            r = istft(stft(w))
            self.assertEqual(len(r), n, msg=f'Failed at test elem {i}')
            self.assertLessEqual(float(np.max(np.abs(r.samples - w.samples))), 1e-6, msg=f'Failed at test elem {i}')

    def test_zero_input(self):
        spec = stft(Waveform(np.zeros(4000), 8000))
        self.assertEqual(spec.shape, (32, 257))
        self.assertEqual(float(np.max(np.abs(spec.bins))), 0.0)
        self.assertEqual(float(np.max(np.abs(istft(spec).samples))), 0.0)

    def test_impulse(self):
        x = np.zeros(4096)
        x[2048] = 1.0
        spec = stft(Waveform(x, 8000))
        # frame 16 is centred on the impulse where the window is one
        self.assertTrue(np.allclose(np.abs(spec.bins[16]), 1.0, atol=1e-12))
        self.assertTrue(np.allclose(istft(spec).samples, x, atol=1e-9))

    def test_sine_peak(self):
        for i, k in enumerate([8, 32, 100, 200]):
            f = k * 8000 / 512
            t = np.arange(8000) / 8000
            spec = stft(Waveform(0.5 * np.sin(2 * np.pi * f * t), 8000))
            self.assertEqual(int(np.argmax(spec.magnitude().mean(axis=0))), k, msg=f'Failed at test elem {i}')

    def test_linearity(self):
        rng = np.random.default_rng(3)
        x, y = random_waveform(3000, rng), random_waveform(3000, rng)
        combined = stft(x.with_samples(2.0 * x.samples - 0.5 * y.samples))
        self.assertTrue(np.allclose(combined.bins, 2.0 * stft(x).bins - 0.5 * stft(y).bins, atol=1e-10))

        a, b = stft(x), stft(y)
        synthesized = istft(a.with_bins(a.bins + 3.0 * b.bins))
        self.assertTrue(np.allclose(synthesized.samples, istft(a).samples + 3.0 * istft(b).samples, atol=1e-10))

    def test_parseval(self):
        """
        the weighted half spectrum energy of a frame equals fft_size times the energy of the windowed frame
        """
        rng = np.random.default_rng(5)
        w = random_waveform(2048, rng)
        spec = stft(w)
        padded = np.pad(w.samples, 256, mode='reflect')
        window = self.config.window_array()
        frame_energy = sum(float(np.sum((padded[t * 128:t * 128 + 512] * window) ** 2))
                           for t in range(spec.num_frames))
        self.assertAlmostEqual(spec.energy() / (512 * frame_energy), 1.0, places=10)

    def test_adjoint_identity(self):
        """ sum(istft(A) * v) == inner(A, istft_adjoint(v)) for arbitrary complex A """
        rng = np.random.default_rng(7)
        geometry = Geometry(self.config.num_frames(2500), 2500)
        for i in range(20):
            a = rng.standard_normal((geometry.num_frames, 257)) + 1j * rng.standard_normal((geometry.num_frames, 257))
            v = random_waveform(2500, rng)
            spec = Spectrogram(a, self.config, 2500)
            lhs = float(np.sum(istft(spec).samples * v.samples))
            rhs = inner(a, istft_adjoint(v, self.config, geometry).bins, self.config)
            self.assertLessEqual(abs(lhs - rhs), 1e-8 * max(1.0, abs(lhs)), msg=f'Failed at test elem {i}')

    def test_backward_finite_differences(self):
        """ gradient of 0.5 * sum(istft(A) ** 2) with respect to the real and imaginary parts of A """
        rng = np.random.default_rng(11)
        geometry = Geometry(self.config.num_frames(1000), 1000)
        a = 0.1 * (rng.standard_normal((geometry.num_frames, 257)) + 1j * rng.standard_normal((geometry.num_frames, 257)))

        def loss(bins):
            return 0.5 * float(np.sum(istft(Spectrogram(bins, self.config, 1000)).samples ** 2))

        grad = istft_backward(istft(Spectrogram(a, self.config, 1000)), self.config, geometry).bins
        h = 1e-6
        for i in range(30):
            t, k = int(rng.integers(0, geometry.num_frames)), int(rng.integers(0, 257))
            for direction, analytic in ((1.0, grad[t, k].real), (1j, grad[t, k].imag)):
                plus, minus = a.copy(), a.copy()
                plus[t, k] += h * direction
                minus[t, k] -= h * direction
                numeric = (loss(plus) - loss(minus)) / (2 * h)
                self.assertAlmostEqual(numeric, analytic, delta=1e-6 + 1e-4 * abs(analytic),
                                       msg=f'Failed at test elem {i} ({t}, {k}, {direction})')

    def test_geometry_mismatch(self):
        with self.assertRaises(GeometryMismatch):
            Spectrogram(np.zeros((32, 256)), self.config, 4000)
        with self.assertRaises(GeometryMismatch):
            Spectrogram(np.zeros((31, 257)), self.config, 4000)
        with self.assertRaises(GeometryMismatch):
            istft_adjoint(Waveform(np.zeros(3999), 8000), self.config, Geometry(32, 4000))

        spec = stft(Waveform(np.ones(4000), 8000))
        self.assertTrue(spec.same_geometry(stft(Waveform(np.zeros(4000), 8000))))
        self.assertFalse(spec.same_geometry(stft(Waveform(np.zeros(4100), 8000))))


if __name__ == '__main__':
    unittest.main()
