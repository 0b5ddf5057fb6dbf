"""
This module contains the acoustic pre-processing of the toolkit.

Dynamic acoustic compensation (DAC):
The first J and the last K frames of the noisy input are taken as background, concatenated and repeated to the
length of the clean enrollment and added to it. Enrollment and noisy input then share their acoustic background.

Spectral subtraction and MMSE-LSA:
The two classical alternatives, they remove the noise from the noisy input instead of adding it to the enrollment.

Mixing:
mix_at_snr scales a noise (or interfering speech) signal so that it is mixed with a given SNR.
"""
import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.special import exp1

from pse import PrepException
from pse.audio import Waveform
from pse.dsp import StftConfig, stft, istft

logger = logging.getLogger(__name__)

CROSSFADE_SAMPLES: int = 8
SS_ALPHA: float = 1.0
SS_BETA: float = 0.01
LSA_DD_ALPHA: float = 0.98
LSA_XI_MIN: float = 10 ** (-2.5)
# lower bound of the exponential integral argument, exp1(0) is infinite
_V_FLOOR: float = 1e-12
_EPS: float = 1e-12


@dataclass(frozen=True)
class DacConfig:
    """
    :param j_frames: number of leading frames of the noisy input used as background
    :param k_frames: number of trailing frames of the noisy input used as background
    :param hop: frame length in samples (hop of the STFT)
    :param crossfade: blend consecutive repetitions over 8 samples instead of plain concatenation
    """
    j_frames: int = 4
    k_frames: int = 2
    hop: int = 128
    crossfade: bool = False

    def __post_init__(self) -> None:
        if self.j_frames < 0 or self.k_frames < 0 or self.j_frames + self.k_frames < 1:
            raise PrepException("DAC needs j_frames >= 0, k_frames >= 0 and j_frames + k_frames >= 1, "
                                "got J={} K={}".format(self.j_frames, self.k_frames))
        if self.hop <= 0:
            raise PrepException("hop must be positive, got {}".format(self.hop))

    @staticmethod
    def from_stft(j_frames: int, k_frames: int, config: StftConfig, crossfade: bool = False) -> 'DacConfig':
        # J and K count STFT frames
        return DacConfig(j_frames, k_frames, config.frames_to_samples(1), crossfade)

    @property
    def base_len(self) -> int:
        return (self.j_frames + self.k_frames) * self.hop

    def __str__(self) -> str:
        return "DAC({}/{})".format(self.j_frames, self.k_frames)


class PrepMethod:
    """ names of the pre-processing methods """
    NONE = 'none'
    DAC = 'dac'
    DAC_UB = 'dac-ub'
    SS = 'ss'
    LSA = 'lsa'

    ENHANCE = (NONE, DAC, DAC_UB, SS, LSA)
    STANDALONE = (DAC, SS, LSA)


@dataclass(frozen=True)
class PrepConfig:
    """
    Settings of the pre-processing applied before enhancement (config section "prep").

    k_frames defaults to 2 for DAC and to 0 for spectral subtraction, the best rows DAC(4/2) and SS(4/0).
    """
    method: str = PrepMethod.NONE
    j_frames: int = 4
    k_frames: Optional[int] = None
    alpha: float = SS_ALPHA
    beta: float = SS_BETA
    dd_alpha: float = LSA_DD_ALPHA
    xi_min: float = LSA_XI_MIN
    crossfade: bool = False

    def __post_init__(self) -> None:
        if self.method not in PrepMethod.ENHANCE:
            raise PrepException("Unknown pre-processing method '{}' (expected one of {})".format(
                self.method, ', '.join(PrepMethod.ENHANCE)))

    @property
    def resolved_k(self) -> int:
        if self.k_frames is not None:
            return self.k_frames
        return 0 if self.method == PrepMethod.SS else 2

    def dac_config(self, config: StftConfig) -> DacConfig:
        return DacConfig.from_stft(self.j_frames, self.resolved_k, config, self.crossfade)


def intercept_background(noisy: Waveform, config: DacConfig) -> np.ndarray:
    """
    Cuts the first J and the last K frames out of the noisy input and concatenates them

    :return: background of (J + K) * hop samples
    """
    y = noisy.samples
    if config.base_len > len(y):
        raise PrepException("{} needs {} samples but the noisy input only has {}".format(
            config, config.base_len, len(y)))
    head = y[:config.j_frames * config.hop]
    tail = y[len(y) - config.k_frames * config.hop:] if config.k_frames > 0 else y[:0]
    return np.concatenate([head, tail])


def tile_to_length(base: np.ndarray, length: int, crossfade: bool = False) -> np.ndarray:
    """
    Repeats base until length samples are filled, the last repetition is truncated

    :param base: signal to repeat
    :param length: output length
    :param crossfade: overlap consecutive repetitions by 8 samples with linear fades
    """
    if len(base) == 0:
        raise PrepException("Can not repeat an empty background")
    if not crossfade or len(base) <= 2 * CROSSFADE_SAMPLES:
        repeats = -(-length // len(base))
        return np.tile(base, repeats)[:length]

    # repetitions advance by len(base) - overlap samples, the fades sum to one inside every overlap
    overlap = CROSSFADE_SAMPLES
    step = len(base) - overlap
    fade_in = np.arange(1, overlap + 1) / (overlap + 1)
    shaped = base.copy()
    shaped[:overlap] *= fade_in
    shaped[-overlap:] *= fade_in[::-1]
    out = np.zeros(length + len(base))
    start = 0
    while start < length:
        segment = shaped if start > 0 else np.concatenate([base[:overlap], shaped[overlap:]])
        out[start:start + len(base)] += segment
        start += step
    return out[:length]


def dac(enroll: Waveform, noisy: Waveform, config: DacConfig = DacConfig(),
        true_noise: Optional[Waveform] = None) -> Waveform:
    """
    Dynamic acoustic compensation: S_n = repeat(Y_1..Y_J, Y_T-K+1..Y_T) + S

    The background is added without any gain normalization.

    :param enroll: clean enrollment S
    :param noisy: noisy input Y
    :param config: J, K and hop
    :param true_noise: if given, this signal is repeated instead of the intercepted background (the DAC(UB)
        upper bound with the ground truth background noise of Y)
    :raises PrepException: if the background is empty, longer than Y or the sample rates differ
    :return: compensated enrollment with the length of enroll
    """
    enroll.require_nonempty('enrollment')
    if enroll.sample_rate != noisy.sample_rate:
        raise PrepException("Sample rate mismatch between enrollment ({} Hz) and noisy input ({} Hz)".format(
            enroll.sample_rate, noisy.sample_rate))
    if true_noise is not None:
        if true_noise.sample_rate != enroll.sample_rate:
            raise PrepException("Sample rate mismatch between enrollment and injected noise")
        base = true_noise.samples
    else:
        base = intercept_background(noisy, config)
    if len(base) == 0:
        raise PrepException("The background segment for DAC is empty")
    return enroll.with_samples(enroll.samples + tile_to_length(base, len(enroll), config.crossfade))


def _noise_frames(n_frames: int, j_frames: int, k_frames: int) -> np.ndarray:
    if j_frames < 0 or k_frames < 0 or j_frames + k_frames < 1:
        raise PrepException("Need j_frames + k_frames >= 1 noise frames, got J={} K={}".format(j_frames, k_frames))
    if j_frames + k_frames > n_frames:
        raise PrepException("Requested {} noise frames but the input only has {} frames".format(
            j_frames + k_frames, n_frames))
    return np.concatenate([np.arange(j_frames), np.arange(n_frames - k_frames, n_frames)]).astype(int)


def spectral_subtract(noisy: Waveform, j_frames: int = 4, k_frames: int = 0, alpha: float = SS_ALPHA,
                      beta: float = SS_BETA, config: StftConfig = StftConfig()) -> Waveform:
    """
    Magnitude spectral subtraction with a spectral floor.
    The noise profile is the mean magnitude of the first j_frames and the last k_frames STFT frames.
    M = max(|Y| - alpha * N, beta * |Y|), the phase of Y is kept.

    :param noisy:
    :param j_frames: leading noise frames
    :param k_frames: trailing noise frames
    :param alpha: over-subtraction factor (>= 1)
    :param beta: spectral floor (0 < beta < 1)
    :param config:
    :return: enhanced waveform
    """
    spec = stft(noisy, config)
    magnitude = spec.magnitude()
    noise_profile = magnitude[_noise_frames(spec.num_frames, j_frames, k_frames)].mean(axis=0)
    return istft(spec.with_bins(spec.bins * subtraction_gain(magnitude, noise_profile, alpha, beta)))


def subtraction_gain(magnitude: np.ndarray, noise_profile: np.ndarray, alpha: float = SS_ALPHA,
                     beta: float = SS_BETA) -> np.ndarray:
    """
    Per bin gain of the spectral subtraction, max(|Y| - alpha * N, beta * |Y|) / |Y|

    :param magnitude: |Y| (frames x bins)
    :param noise_profile: N, one value per bin
    :return: gain in [beta, 1] (0 for bins with |Y| == 0)
    """
    if alpha < 1:
        raise PrepException("Over-subtraction factor alpha must be >= 1, got {}".format(alpha))
    if not 0 < beta < 1:
        raise PrepException("Spectral floor beta must be in (0, 1), got {}".format(beta))
    enhanced = np.maximum(magnitude - alpha * noise_profile, beta * magnitude)
    return np.divide(enhanced, magnitude, out=np.zeros_like(magnitude), where=magnitude > 0)


def lsa_gain(xi: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """
    Log-spectral amplitude gain G = xi / (1 + xi) * exp(0.5 * E1(v)) with v = gamma * xi / (1 + xi).
    The gain is limited to 1, the unlimited formula exceeds 1 for very small a-posteriori SNR's.

    :param xi: a-priori SNR (> 0)
    :param gamma: a-posteriori SNR (> 0)
    :return: gain in (0, 1]
    """
    xi = np.asarray(xi, dtype=np.float64)
    gamma = np.asarray(gamma, dtype=np.float64)
    ratio = xi / (1.0 + xi)
    v = np.maximum(gamma * ratio, _V_FLOOR)
    return np.minimum(ratio * np.exp(0.5 * exp1(v)), 1.0)


def mmse_lsa(noisy: Waveform, j_frames: int = 4, config: StftConfig = StftConfig(),
             dd_alpha: float = LSA_DD_ALPHA, xi_min: float = LSA_XI_MIN) -> Waveform:
    """
    MMSE log-spectral amplitude estimator with decision-directed a-priori SNR estimation.
    The noise power of every bin is the mean power of the first j_frames frames.

    :param noisy:
    :param j_frames: number of leading noise frames (>= 1)
    :param config:
    :param dd_alpha: decision-directed smoothing factor
    :param xi_min: floor of the a-priori SNR
    :return: enhanced waveform
    """
    if j_frames < 1:
        raise PrepException("MMSE-LSA needs at least one noise frame, got {}".format(j_frames))
    if not 0 <= dd_alpha < 1:
        raise PrepException("dd_alpha must be in [0, 1), got {}".format(dd_alpha))
    if xi_min <= 0:
        raise PrepException("xi_min must be positive, got {}".format(xi_min))
    spec = stft(noisy, config)
    power = np.abs(spec.bins) ** 2
    noise_power = power[_noise_frames(spec.num_frames, j_frames, 0)].mean(axis=0)
    noise_power = np.maximum(noise_power, _EPS)

    gain = np.empty_like(power)
    prev_clean = np.ones(spec.bins.shape[1])  # |A_{t-1}|^2 / lambda_N, starts at one (0 dB)
    for t in range(spec.num_frames):
        gamma = np.maximum(power[t] / noise_power, _EPS)
        xi = dd_alpha * prev_clean + (1.0 - dd_alpha) * np.maximum(gamma - 1.0, 0.0)
        xi = np.maximum(xi, xi_min)
        gain[t] = lsa_gain(xi, gamma)
        prev_clean = gain[t] ** 2 * gamma
    return istft(spec.with_bins(spec.bins * gain))


def mix_at_snr(speech: Waveform, noise: Waveform, snr_db: float,
               rng: Optional[np.random.Generator] = None) -> Tuple[Waveform, Waveform]:
    """
    Mixes noise into speech at the requested SNR. Power is the mean square over the whole signal (no VAD).

    :param speech: target signal (not all zero)
    :param noise: noise or interfering speech with at least the length of speech. If it is longer a segment is
        chosen with rng (the first segment if no rng is given).
    :param snr_db: target SNR in dB
    :param rng: numpy random generator
    :raises PrepException: on length / rate mismatch, silent speech or silent noise
    :return: (mixture, scaled noise)
    """
    if speech.sample_rate != noise.sample_rate:
        raise PrepException("Sample rate mismatch between speech ({} Hz) and noise ({} Hz)".format(
            speech.sample_rate, noise.sample_rate))
    if len(noise) < len(speech):
        raise PrepException("Noise has {} samples but speech has {}".format(len(noise), len(speech)))
    n = noise.samples
    if len(n) > len(speech):
        offset = int(rng.integers(0, len(n) - len(speech) + 1)) if rng is not None else 0
        n = n[offset:offset + len(speech)]

    p_speech = float(np.mean(speech.samples ** 2))
    p_noise = float(np.mean(n ** 2))
    if p_speech == 0:
        raise PrepException("Speech signal is all zero, the SNR is undefined")
    if p_noise == 0:
        raise PrepException("Noise signal is all zero, can not reach a finite SNR of {} dB".format(snr_db))
    gain = np.sqrt(p_speech / (p_noise * 10 ** (snr_db / 10)))
    scaled = gain * n
    return speech.with_samples(speech.samples + scaled), speech.with_samples(scaled)


def measure_snr(speech: Waveform, noise: Waveform) -> float:
    """ 10 * log10(P_speech / P_noise) in dB """
    return float(10 * np.log10(np.mean(speech.samples ** 2) / np.mean(noise.samples ** 2)))
