"""
This module contains the short-time Fourier transform used by every other part of the toolkit.

Analysis: the signal is reflect padded by fft_size/2 samples on both sides, cut into frames of fft_size samples
with a distance of hop samples, multiplied with a periodic square root Hann window and transformed with a real FFT.
Only the non negative frequency bins are stored.

Synthesis: the inverse real FFT of every frame is multiplied with the same window, overlap-added and normalized by
the overlap-added squared window. With a sqrt-Hann window and 75% overlap the squared window is constant-overlap-add,
so the round trip is exact.

Inner products and MSE's on the half spectrum use the weight 1 for DC and Nyquist and 2 for all other bins.
With these weights the values equal the ones computed on the full spectrum.
"""
import csv
import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
from scipy.signal import get_window

from pse import GeometryMismatch
from pse.audio import Waveform

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class StftConfig:
    """
    STFT parameters. The defaults are the 8 kHz configuration: sqrt-Hann window, FFT size 512, hop 128.
    """
    fft_size: int = 512
    hop: int = 128
    window: str = 'sqrt-hann'

    def __post_init__(self) -> None:
        if self.fft_size <= 0 or (self.fft_size & (self.fft_size - 1)) != 0:
            raise GeometryMismatch("fft_size must be a power of two, got {}".format(self.fft_size))
        if self.hop <= 0 or self.fft_size % self.hop != 0:
            raise GeometryMismatch("hop {} must divide fft_size {}".format(self.hop, self.fft_size))
        if self.window != 'sqrt-hann':
            raise GeometryMismatch("Only the sqrt-hann window is supported, got {}".format(self.window))

    @property
    def num_bins(self) -> int:
        return self.fft_size // 2 + 1

    @property
    def pad(self) -> int:
        return self.fft_size // 2

    def num_frames(self, orig_len: int) -> int:
        """ number of frames of a signal with orig_len samples (after padding) """
        padded_len = orig_len + 2 * self.pad
        return 1 + (padded_len - self.fft_size) // self.hop

    def frames_to_samples(self, n_frames: int) -> int:
        """ number of samples spanned by n_frames frame advances """
        return n_frames * self.hop

    def window_array(self) -> np.ndarray:
        return _sqrt_hann(self.fft_size)

    def bin_weights(self) -> np.ndarray:
        return _bin_weights(self.fft_size)


@lru_cache(maxsize=8)
def _sqrt_hann(fft_size: int) -> np.ndarray:
    # periodic Hann (fftbins=True) keeps the squared window constant-overlap-add
    window = np.sqrt(get_window('hann', fft_size, fftbins=True))
    window.setflags(write=False)
    return window


@lru_cache(maxsize=8)
def _bin_weights(fft_size: int) -> np.ndarray:
    weights = np.full(fft_size // 2 + 1, 2.0)
    weights[0] = 1.0
    weights[-1] = 1.0
    weights.setflags(write=False)
    return weights


@dataclass(frozen=True)
class Geometry:
    """ Shape information of a spectrogram: number of frames and length of the signal it was computed from """
    num_frames: int
    orig_len: int


class Spectrogram:
    """
    Class representing a complex spectrogram with shape (num_frames, fft_size / 2 + 1)
    """

    def __init__(self, bins: np.ndarray, config: StftConfig, orig_len: int, sample_rate: int = 8000) -> None:
        """
        :param bins: complex matrix (frames x bins)
        :param config: the StftConfig the spectrogram belongs to
        :param orig_len: length of the time signal before padding
        :param sample_rate: sample rate of the analysed signal, attached to the istft output
        """
        self.bins: np.ndarray = np.asarray(bins, dtype=np.complex128)
        self.config: StftConfig = config
        self.orig_len: int = int(orig_len)
        self.sample_rate: int = int(sample_rate)
        self.check_geometry()

    def __str__(self) -> str:
        return "Spectrogram {} frames x {} bins".format(*self.bins.shape)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.bins.shape

    @property
    def num_frames(self) -> int:
        return self.bins.shape[0]

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.num_frames, self.orig_len)

    def check_geometry(self) -> None:
        if self.bins.ndim != 2 or self.bins.shape[1] != self.config.num_bins:
            raise GeometryMismatch("Spectrogram has shape {} but the config requires {} bins".format(
                self.bins.shape, self.config.num_bins))
        expected = self.config.num_frames(self.orig_len)
        if self.bins.shape[0] != expected:
            raise GeometryMismatch("Spectrogram has {} frames but a signal of {} samples has {} frames".format(
                self.bins.shape[0], self.orig_len, expected))

    def same_geometry(self, other: 'Spectrogram') -> bool:
        return self.config == other.config and self.geometry == other.geometry

    def with_bins(self, bins: np.ndarray) -> 'Spectrogram':
        """ new spectrogram with the same geometry """
        return Spectrogram(bins, self.config, self.orig_len, self.sample_rate)

    def magnitude(self) -> np.ndarray:
        return np.abs(self.bins)

    def energy(self) -> float:
        """ weighted energy, equals the energy of the full (two sided) spectrum """
        return float(np.sum(self.config.bin_weights() * np.abs(self.bins) ** 2))

    def to_csv(self, path: str) -> None:
        """
        Dumps the spectrogram as csv (frame, bin, re, im). Only meant for debugging.
        """
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['frame', 'bin', 're', 'im'])
            for t in range(self.bins.shape[0]):
                for k in range(self.bins.shape[1]):
                    writer.writerow([t, k, repr(float(self.bins[t, k].real)), repr(float(self.bins[t, k].imag))])


def inner(a: np.ndarray, b: np.ndarray, config: StftConfig) -> float:
    """
    Real inner product of two half spectra, weighted with the hermitian symmetry weights

    :return: sum over frames and bins of w_f * Re(a * conj(b))
    """
    return float(np.sum(config.bin_weights() * np.real(a * np.conj(b))))


def _frame_view(padded: np.ndarray, config: StftConfig, num_frames: int) -> np.ndarray:
    stride = padded.strides[0]
    return np.lib.stride_tricks.as_strided(padded, shape=(num_frames, config.fft_size),
                                           strides=(config.hop * stride, stride), writeable=False)


def _overlap_envelope(config: StftConfig, num_frames: int) -> np.ndarray:
    padded_len = (num_frames - 1) * config.hop + config.fft_size
    envelope = np.zeros(padded_len)
    squared = config.window_array() ** 2
    for t in range(num_frames):
        envelope[t * config.hop:t * config.hop + config.fft_size] += squared
    return envelope


def stft(waveform: Waveform, config: StftConfig = StftConfig()) -> Spectrogram:
    """
    Computes the spectrogram of a waveform.
    Frame t covers the padded samples [t * hop, t * hop + fft_size).

    :param waveform: non empty waveform
    :param config:
    :raises AudioFormatException: if the waveform is empty
    :return: Spectrogram with 1 + len // hop frames
    """
    x = waveform.require_nonempty('input of the STFT').samples
    pad = config.pad
    padded = np.pad(x, pad, mode='reflect') if len(x) > 1 else np.pad(x, pad, mode='edge')
    num_frames = config.num_frames(len(x))
    frames = _frame_view(np.ascontiguousarray(padded), config, num_frames) * config.window_array()
    return Spectrogram(np.fft.rfft(frames, n=config.fft_size, axis=1), config, len(x), waveform.sample_rate)


def istft(spec: Spectrogram) -> Waveform:
    """
    Overlap-add synthesis with the sqrt-Hann window, normalized by the summed squared window and truncated to the
    original length. The synthesis is linear in the spectrogram.

    :param spec:
    :raises GeometryMismatch: if the spectrogram does not fit its config
    :return: Waveform at the pipeline sample rate
    """
    spec.check_geometry()
    config = spec.config
    frames = np.fft.irfft(spec.bins, n=config.fft_size, axis=1) * config.window_array()
    envelope = _overlap_envelope(config, spec.num_frames)
    out = np.zeros_like(envelope)
    for t in range(spec.num_frames):
        out[t * config.hop:t * config.hop + config.fft_size] += frames[t]
    out = out[config.pad:config.pad + spec.orig_len] / envelope[config.pad:config.pad + spec.orig_len]
    return Waveform(out, spec.sample_rate)


def istft_adjoint(w_grad: Waveform, config: StftConfig, geometry: Geometry) -> Spectrogram:
    """
    Adjoint of istft with respect to the weighted half spectrum inner product, i.e. for all A and v:
    sum(istft(A) * v) == inner(A, istft_adjoint(v))

    :param w_grad: waveform with geometry.orig_len samples
    :param config:
    :param geometry: geometry of the spectrogram that was synthesized
    :raises GeometryMismatch: if the waveform length does not match the geometry
    :return:
    """
    if len(w_grad) != geometry.orig_len or config.num_frames(geometry.orig_len) != geometry.num_frames:
        raise GeometryMismatch("Adjoint input has {} samples but the geometry expects {} samples / {} frames".format(
            len(w_grad), geometry.orig_len, geometry.num_frames))
    envelope = _overlap_envelope(config, geometry.num_frames)
    embedded = np.zeros_like(envelope)
    embedded[config.pad:config.pad + geometry.orig_len] = \
        w_grad.samples / envelope[config.pad:config.pad + geometry.orig_len]
    frames = _frame_view(embedded, config, geometry.num_frames) * config.window_array()
    return Spectrogram(np.fft.rfft(frames, n=config.fft_size, axis=1) / config.fft_size, config, geometry.orig_len,
                       w_grad.sample_rate)


def istft_backward(w_grad: Waveform, config: StftConfig, geometry: Geometry) -> Spectrogram:
    """
    Pulls a time domain gradient back through istft.
    The result holds d loss / d Re(A) in its real part and d loss / d Im(A) in its imaginary part.
    """
    adjoint = istft_adjoint(w_grad, config, geometry)
    return adjoint.with_bins(adjoint.bins * config.bin_weights())
