"""
This module contains the Waveform type and the functions for reading and writing RIFF/WAVE files.

Reading accepts mono 16-bit integer PCM and 32-bit IEEE float files. Writing always produces 16-bit PCM, values
outside of [-1, 1) are clipped.
"""
import logging
import os
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from pse import AudioFormatException

logger = logging.getLogger(__name__)

# sample rate used by every training and evaluation pipeline of this package
PIPELINE_SAMPLE_RATE: int = 8000
PCM16_SCALE: float = 32768.0


@dataclass(eq=False)
class Waveform:
    """
    Class representing a mono audio signal.

    The samples are stored as float64 numpy array with a nominal range of [-1, 1].
    """
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self) -> None:
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise AudioFormatException("Waveform samples must be one dimensional (mono required), "
                                       "got shape {}".format(self.samples.shape))
        if int(self.sample_rate) <= 0:
            raise AudioFormatException("Sample rate must be positive, got {}".format(self.sample_rate))
        self.sample_rate = int(self.sample_rate)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def __str__(self) -> str:
        return "Waveform with {} samples at {} Hz ({:.2f} s)".format(len(self), self.sample_rate, self.duration)

    @property
    def duration(self) -> float:
        """ duration in seconds """
        return len(self) / self.sample_rate

    def with_samples(self, samples: np.ndarray) -> 'Waveform':
        """ Returns a new Waveform with the same sample rate """
        return Waveform(samples, self.sample_rate)

    def require_nonempty(self, what: str = 'waveform') -> 'Waveform':
        if len(self) == 0:
            raise AudioFormatException("The {} is empty".format(what))
        return self


def read_wav(path: str) -> Waveform:
    """
    Reads a mono RIFF/WAVE file.

    :param path: path to the wav file
    :raises AudioFormatException: if the file is missing, not a wav file, not mono or not 16-bit PCM / 32-bit float
    :return: Waveform, integer PCM is scaled to [-1, 1) by dividing by 32768
    """
    if not os.path.isfile(path):
        raise AudioFormatException("Could not find audio file {}".format(path))
    try:
        sample_rate, data = wavfile.read(path)
    except (ValueError, EOFError) as e:
        raise AudioFormatException("{} is not a readable RIFF/WAVE file: {}".format(path, e))

    if data.ndim != 1:
        raise AudioFormatException(
            "{}: mono required, file has {} channels".format(path, data.shape[1] if data.ndim > 1 else 0))

    if data.dtype == np.int16:
        samples = data.astype(np.float64) / PCM16_SCALE
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    else:
        raise AudioFormatException(
            "{}: unsupported bit depth / sample format {} (expected 16-bit PCM or 32-bit float)".format(
                path, data.dtype))
    return Waveform(samples, sample_rate)


def write_wav(path: str, waveform: Waveform) -> None:
    """
    Writes a Waveform as 16-bit PCM mono file. Samples outside of [-1, 1) are clipped.

    :param path: target path, missing parent directories are created
    :param waveform:
    :raises AudioFormatException: if the samples are not finite or the path is not writable
    """
    if not np.all(np.isfinite(waveform.samples)):
        raise AudioFormatException("Refusing to write {}: samples contain NaN or Inf".format(path))

    scaled = np.round(waveform.samples * PCM16_SCALE)
    n_clipped = int(np.count_nonzero((scaled > 32767) | (scaled < -32768)))
    if n_clipped > 0:
        logger.debug("Clipping {} samples while writing {}".format(n_clipped, path))
    pcm = np.clip(scaled, -32768, 32767).astype(np.int16)

    try:
        parent = os.path.dirname(os.path.abspath(path))
        if not os.path.isdir(parent):
            os.makedirs(parent)
        wavfile.write(path, waveform.sample_rate, pcm)
    except OSError as e:
        raise AudioFormatException("Could not write audio file {}: {}".format(path, e))
