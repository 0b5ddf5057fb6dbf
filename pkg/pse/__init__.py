"""py-pse - Personalized speech enhancement toolkit (acoustic compensation, TF-loss, adaptive focal training)."""

"""
This package contains everything needed to simulate, train and evaluate a small personalized speech enhancement
(PSE) system. The basic building blocks are: Waveforms, Spectrograms, Manifests, Enrollments, Losses and Models.

Waveform:
A mono audio signal (sample values plus sample rate). All pipelines in this package run at 8 kHz.

Spectrogram:
The complex short-time Fourier transform of a Waveform. It is computed with a square root Hann window
(FFT size 512, hop 128) and can be inverted exactly.

Manifest:
A line-delimited json file. Every line describes one simulated example: the noisy input, the clean target,
the enrollment utterance of the target speaker and the condition (noise, mix or nmix).

Enrollment:
A clean recording of the target speaker. Before it is embedded it can be compensated with the background
of the noisy input (dynamic acoustic compensation, DAC).

Losses:
The TF-loss adds the time domain negative SISNR and a frequency domain MSE. The adaptive focal loss re-weights the
TF-losses of one batch so that hard samples get a larger weight.

Model:
A small mask estimator that is conditioned on a speaker embedding. All gradients are derived by hand.
"""


class PseException(Exception):
    """
    Generic class representing an exception raised by the toolkit
    """
    pass


class AudioFormatException(PseException):
    """
    Raised when an audio file can not be read or written (missing file, stereo data, unsupported bit depth)
    """
    pass


class ManifestParseException(PseException):
    """
    Raised when a line of a manifest file could not be parsed
    """

    def __init__(self, line_number: int, reason: str) -> None:
        self.line_number = line_number
        super().__init__("Manifest line {}: {}".format(line_number, reason))


class UnknownCondition(ManifestParseException):
    """
    Raised when a record uses a condition tag other than noise, mix or nmix
    """

    def __init__(self, line_number: int, condition: str) -> None:
        super().__init__(line_number,
                         "unknown condition tag '{}' (expected one of noise, mix, nmix)".format(condition))


class ConfigException(PseException):
    """
    Raised when a configuration file contains an unknown section or key, or a value violates a constraint
    """
    pass


class GeometryMismatch(PseException):
    """
    Raised when the shape of a spectrogram does not fit its configuration, another spectrogram or the model
    """
    pass


class PrepException(PseException):
    """
    Generic class for an exception raised by the acoustic pre-processing (DAC, spectral subtraction, MMSE-LSA, mixing)
    """
    pass


class LossException(PseException):
    """
    Generic class for an exception raised while computing a training loss
    """
    pass


class StaleCacheException(PseException):
    """
    Raised when backward is called with a forward cache that was computed with older parameters
    """

    def __init__(self, cache_version: int, params_version: int) -> None:
        super().__init__(
            "The forward cache was computed with parameter version {} but the parameters are at version {}".format(
                cache_version, params_version))


class CheckpointException(PseException):
    """
    Raised when a model checkpoint can not be loaded (wrong format version or dimensions)
    """
    pass


class TrainingException(PseException):
    """
    Generic class for an exception raised during training
    """
    pass


class NonFiniteGradient(TrainingException):
    """
    Raised when the optimizer receives a gradient containing NaN or Inf. The step is rejected.
    """
    pass


class TrainingDiverged(TrainingException):
    """
    Raised when a training loss becomes non-finite. The exception carries the last good parameters and
    the history recorded so far.
    """

    def __init__(self, message: str, params=None, history=None) -> None:
        super().__init__(message)
        self.params = params
        self.history = history


class SimulationException(PseException):
    """
    Raised when a dataset can not be simulated (i.e. not enough speakers in the clean speech pool)
    """
    pass


class EvaluationException(PseException):
    """
    Raised when enhanced outputs can not be scored (empty score list, baseline scores missing records)
    """
    pass


class NothingScored(EvaluationException):
    """
    Raised when no record of a manifest has an enhanced file. Carries the ids of the missing records.
    """

    def __init__(self, missing: list) -> None:
        self.missing = list(missing)
        super().__init__("No sample could be scored, {} enhanced file(s) missing".format(len(self.missing)))


__version__ = '0.3.0'
__all__ = [
    PseException,
    AudioFormatException,
    ManifestParseException,
    UnknownCondition,
    ConfigException,
    GeometryMismatch,
    PrepException,
    LossException,
    StaleCacheException,
    CheckpointException,
    TrainingException,
    NonFiniteGradient,
    TrainingDiverged,
    SimulationException,
    EvaluationException,
    NothingScored,
]
