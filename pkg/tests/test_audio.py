"""
This unittest tests reading and writing of wav files
"""
import logging
import os
import sys
import tempfile
import unittest

import numpy as np
from scipy.io import wavfile

from pse import AudioFormatException
from pse.audio import Waveform, read_wav, write_wav

logging.basicConfig(stream=sys.stdout, level=logging.INFO)


class AudioTest(unittest.TestCase):

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def path(self, name: str) -> str:
        return os.path.join(self.tmp.name, name)

    def test_read_pcm16_scaling(self):
        wavfile.write(self.path('a.wav'), 8000, np.array([0, 16384, -32768], dtype=np.int16))
        w = read_wav(self.path('a.wav'))
        self.assertEqual(w.sample_rate, 8000)
        self.assertEqual(w.samples.tolist(), [0.0, 0.5, -1.0])

    def test_read_float32(self):
        wavfile.write(self.path('f.wav'), 16000, np.array([0.25, -0.125], dtype=np.float32))
        w = read_wav(self.path('f.wav'))
        self.assertEqual(w.sample_rate, 16000)
        self.assertEqual(w.samples.tolist(), [0.25, -0.125])

    def test_read_errors(self):
        wavfile.write(self.path('stereo.wav'), 8000, np.zeros((10, 2), dtype=np.int16))
        with self.assertRaises(AudioFormatException) as ctx:
            read_wav(self.path('stereo.wav'))
        self.assertIn('mono required', str(ctx.exception))

        wavfile.write(self.path('int32.wav'), 8000, np.zeros(10, dtype=np.int32))
        with self.assertRaises(AudioFormatException) as ctx:
            read_wav(self.path('int32.wav'))
        self.assertIn('bit depth', str(ctx.exception))

        with self.assertRaises(AudioFormatException) as ctx:
            read_wav(self.path('missing.wav'))
        self.assertIn('missing.wav', str(ctx.exception))

        with open(self.path('text.wav'), 'w') as f:
            f.write('this is not a riff file')
        with self.assertRaises(AudioFormatException):
            read_wav(self.path('text.wav'))

    def test_write_duration_and_clipping(self):
        write_wav(self.path('zeros.wav'), Waveform(np.zeros(8000), 8000))
        sample_rate, data = wavfile.read(self.path('zeros.wav'))
        self.assertEqual(data.dtype, np.int16)
        self.assertEqual(len(data) / sample_rate, 1.0)

        write_wav(self.path('clip.wav'), Waveform(np.array([1.5, -1.5, 1.0, -1.0]), 8000))
        _, data = wavfile.read(self.path('clip.wav'))
        self.assertEqual(data.tolist(), [32767, -32768, 32767, -32768])

    def test_write_rejects_non_finite(self):
        with self.assertRaises(AudioFormatException):
            write_wav(self.path('nan.wav'), Waveform(np.array([0.0, np.nan]), 8000))

    def test_write_creates_directories(self):
        target = os.path.join(self.tmp.name, 'a', 'b', 'c.wav')
        write_wav(target, Waveform(np.zeros(4), 8000))
        self.assertTrue(os.path.isfile(target))

    def test_round_trip(self):
        """
        read_wav(write_wav(w)) == w within one quantization step for in-range signals
        """
        rng = np.random.default_rng(0)
        for i in range(100):
            w = Waveform(rng.uniform(-1, 1 - 2 ** -15, size=int(rng.integers(1, 2000))), 8000)
            write_wav(self.path('rt.wav'), w)
            r = read_wav(self.path('rt.wav'))
            self.assertEqual(len(r), len(w), msg=f'Failed at test elem {i}')
            self.assertLessEqual(float(np.max(np.abs(r.samples - w.samples))), 2 ** -15, msg=f'Failed at test elem {i}')

    def test_waveform_validation(self):
        with self.assertRaises(AudioFormatException):
            Waveform(np.zeros((2, 2)), 8000)
        with self.assertRaises(AudioFormatException):
            Waveform(np.zeros(2), 0)
        with self.assertRaises(AudioFormatException):
            Waveform(np.zeros(0), 8000).require_nonempty()
        self.assertEqual(Waveform(np.zeros(4000), 8000).duration, 0.5)


if __name__ == '__main__':
    unittest.main()
