"""
This module contains the training losses and their analytic gradients.

Negative SISNR:
Time domain loss. Both signals are mean subtracted, the estimate is projected onto the reference and the loss is the
negative ratio of projection energy to residual energy in dB. The loss is limited to +-60 dB.

Frequency domain MSE:
Mean squared error of the complex spectrogram (the output of the mask before the inverse STFT).

TF-loss:
The unweighted sum of both. The SISNR gradient is pulled back through the inverse STFT.

Adaptive focal loss (AFT):
Re-weights the TF-losses of one batch with sin(pi/2 * z), z being the clamped z-score of the sample within the batch.
Samples that are harder than the batch average get a positive weight, easier samples a negative one.

Gradient convention for spectrograms: the real part of a gradient holds d loss / d Re(X), the imaginary part
d loss / d Im(X).
"""
import csv
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from pse import LossException, GeometryMismatch
from pse.audio import Waveform
from pse.dsp import Spectrogram, istft_backward

logger = logging.getLogger(__name__)

SISNR_CAP_DB: float = 60.0
AFT_EPS: float = 1e-8
_DB_PER_NEPER: float = 10.0 / math.log(10.0)
# energy ratio that corresponds to the cap (10 ** (60 / 10))
_CAP_RATIO: float = 10 ** (SISNR_CAP_DB / 10)


def _centered_pair(est: np.ndarray, ref: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    if est.shape != ref.shape:
        raise LossException("Estimate has {} samples but the reference has {}".format(len(est), len(ref)))
    if len(ref) < 2:
        raise LossException("SISNR needs at least 2 samples, got {}".format(len(ref)))
    e = est - np.mean(est)
    r = ref - np.mean(ref)
    if not np.any(r):
        raise LossException("The reference signal is constant or all zero, SISNR is undefined")
    return e, r


def _sisnr_terms(e: np.ndarray, r: np.ndarray) -> Tuple[float, np.ndarray, np.ndarray, float, float]:
    """ returns (capped loss, projection s, residual n, energy of s, energy of n) """
    alpha = np.dot(e, r) / np.dot(r, r)
    s = alpha * r
    n = e - s
    s_energy = float(np.dot(s, s))
    n_energy = float(np.dot(n, n))
    if s_energy <= 0 or n_energy >= _CAP_RATIO * s_energy:
        return SISNR_CAP_DB, s, n, s_energy, n_energy
    if n_energy <= 0 or s_energy >= _CAP_RATIO * n_energy:
        return -SISNR_CAP_DB, s, n, s_energy, n_energy
    return -10.0 * math.log10(s_energy / n_energy), s, n, s_energy, n_energy


def neg_sisnr(est: Waveform, ref: Waveform) -> Tuple[float, Waveform]:
    """
    Negative scale invariant SNR

    :param est: estimated signal
    :param ref: clean reference, same length, not constant
    :raises LossException: on length mismatch, less than 2 samples or a constant reference
    :return: (loss in dB limited to [-60, 60], gradient of the loss w.r.t. est). The gradient is zero if the cap is
        active.
    """
    e, r = _centered_pair(est.samples, ref.samples)
    loss, s, n, s_energy, n_energy = _sisnr_terms(e, r)
    if abs(loss) >= SISNR_CAP_DB:
        return loss, est.with_samples(np.zeros_like(e))

    # d/de of 10*log10(|n|^2) - 10*log10(|s|^2), d|s|^2/de = 2s and d|n|^2/de = 2n
    grad = _DB_PER_NEPER * (2.0 * n / n_energy - 2.0 * s / s_energy)
    # the mean subtraction is a symmetric projection
    grad -= np.mean(grad)
    return loss, est.with_samples(grad)


def sisnr_db(est: Waveform, ref: Waveform) -> float:
    """ SISNR in dB with the same cap and the same error rules as neg_sisnr (without gradient) """
    e, r = _centered_pair(est.samples, ref.samples)
    return -_sisnr_terms(e, r)[0]


def mse_freq(est_spec: Spectrogram, ref_spec: Spectrogram) -> Tuple[float, Spectrogram]:
    """
    Mean squared error on the half spectrum, weighted so that it equals the MSE of the full spectrum:
    loss = 1/N * sum(w_f * |est - ref|^2) with N = num_frames * fft_size

    :raises GeometryMismatch: if both spectrograms do not have the same geometry
    :return: (loss, gradient w.r.t. est_spec)
    """
    if not est_spec.same_geometry(ref_spec):
        raise GeometryMismatch("MSE needs spectrograms of identical geometry, got {} and {}".format(
            est_spec, ref_spec))
    weights = est_spec.config.bin_weights()
    n_elements = est_spec.num_frames * est_spec.config.fft_size
    delta = est_spec.bins - ref_spec.bins
    loss = float(np.sum(weights * (delta.real ** 2 + delta.imag ** 2))) / n_elements
    return loss, est_spec.with_bins(2.0 * weights * delta / n_elements)


def tf_loss(est_spec: Spectrogram, ref_spec: Spectrogram, est_wave: Waveform,
            ref_wave: Waveform) -> Tuple[float, Spectrogram]:
    """
    L_TF = L_-SISNR + L_MSE

    :param est_spec: estimated spectrogram
    :param ref_spec: spectrogram of the clean reference
    :param est_wave: istft(est_spec), the caller is responsible for the consistency of both
    :param ref_wave: clean reference waveform
    :return: (loss, gradient w.r.t. est_spec)
    """
    if len(est_wave) != est_spec.orig_len:
        raise GeometryMismatch("Estimated waveform has {} samples but the spectrogram was synthesized to {}".format(
            len(est_wave), est_spec.orig_len))
    sisnr_loss, sisnr_grad = neg_sisnr(est_wave, ref_wave)
    mse_loss, mse_grad = mse_freq(est_spec, ref_spec)
    pulled = istft_backward(sisnr_grad, est_spec.config, est_spec.geometry)
    return sisnr_loss + mse_loss, mse_grad.with_bins(mse_grad.bins + pulled.bins)


@dataclass
class BatchLossReport:
    """
    Result of the adaptive focal loss of one batch.

    :param per_sample_tf: TF-loss of every batch element
    :param mu: batch mean
    :param sigma: population standard deviation
    :param weights: sin transformed z-scores (all 0 if the fallback was used)
    :param aggregate: loss used for the optimizer step
    :param coefficients: d aggregate / d L_TF^i (the weights, or 1/B in the fallback)
    :param fallback: True if sigma < eps and the aggregate is the batch mean
    :param sample_ids: optional ids of the batch elements (i.e. record ids)
    :param grad: combined gradient, if per sample gradients were given
    """
    per_sample_tf: np.ndarray
    mu: float
    sigma: float
    weights: np.ndarray
    aggregate: float
    coefficients: np.ndarray
    fallback: bool = False
    sample_ids: List[str] = field(default_factory=list)
    grad: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.per_sample_tf)

    def to_rows(self) -> List[list]:
        ids = self.sample_ids if len(self.sample_ids) == len(self) else [str(i) for i in range(len(self))]
        return [[ids[i], repr(float(self.per_sample_tf[i])), repr(float(self.weights[i]))] for i in range(len(self))]

    def to_csv(self, path: str) -> None:
        """ Writes the report as csv with the columns sample_id, l_tf, weight """
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['sample_id', 'l_tf', 'weight'])
            writer.writerows(self.to_rows())

    def to_dict(self) -> dict:
        return {
            'mu': self.mu,
            'sigma': self.sigma,
            'aggregate': self.aggregate,
            'fallback': self.fallback,
            'samples': [{'sample_id': row[0], 'l_tf': float(row[1]), 'weight': float(row[2])}
                        for row in self.to_rows()]
        }


def combine_gradients(coefficients: Sequence[float], grads: Sequence[np.ndarray]) -> np.ndarray:
    """ sum_i c_i * g_i, accumulated in batch order """
    if len(coefficients) != len(grads):
        raise LossException("Got {} coefficients but {} gradients".format(len(coefficients), len(grads)))
    total = np.zeros_like(np.asarray(grads[0], dtype=np.float64))
    for c, g in zip(coefficients, grads):
        total += c * np.asarray(g, dtype=np.float64)
    return total


def aft_loss(per_sample_tf: Sequence[float], per_sample_grads: Optional[Sequence[np.ndarray]] = None,
             clamp: bool = True, sample_ids: Optional[List[str]] = None, eps: float = AFT_EPS) -> BatchLossReport:
    """
    Adaptive focal loss: L_AFT = sum_i L_TF^i * sin(pi/2 * clamp((L_TF^i - mu) / sigma, -1, 1))

    The weights are treated as constants for the gradient, i.e. d L_AFT / d L_TF^i = weight_i.
    If sigma < eps the aggregate falls back to the batch mean (weights reported as 0).

    :param per_sample_tf: TF-losses of the batch (B >= 2)
    :param per_sample_grads: optional gradients of the per sample losses (flat arrays), they are combined with the
        coefficients of the aggregate
    :param clamp: clamp the z-scores to [-1, 1] (set to False for the literal, non monotone weighting)
    :param sample_ids: optional ids for the csv audit
    :param eps: degeneracy threshold of sigma
    :raises LossException: if B < 2 or a loss is not finite
    :return: BatchLossReport
    """
    losses = np.asarray(per_sample_tf, dtype=np.float64)
    if losses.ndim != 1 or len(losses) < 2:
        raise LossException("The adaptive focal loss needs a batch of at least 2 samples, got {}".format(losses.size))
    if not np.all(np.isfinite(losses)):
        raise LossException("Non-finite TF-loss in batch: {}".format(losses.tolist()))
    batch_size = len(losses)
    mu = math.fsum(losses) / batch_size
    sigma = math.sqrt(math.fsum((losses - mu) ** 2) / batch_size)

    if sigma < eps:
        weights = np.zeros(batch_size)
        coefficients = np.full(batch_size, 1.0 / batch_size)
        aggregate = mu
        fallback = True
    else:
        z = (losses - mu) / sigma
        if clamp:
            z = np.clip(z, -1.0, 1.0)
        weights = np.sin(0.5 * math.pi * z)
        coefficients = weights
        aggregate = math.fsum(weights * losses)
        fallback = False

    report = BatchLossReport(per_sample_tf=losses, mu=mu, sigma=sigma, weights=weights, aggregate=aggregate,
                             coefficients=coefficients, fallback=fallback, sample_ids=list(sample_ids or []))
    if per_sample_grads is not None:
        report.grad = combine_gradients(coefficients, per_sample_grads)
    return report


def mean_loss(per_sample_tf: Sequence[float], per_sample_grads: Optional[Sequence[np.ndarray]] = None,
              sample_ids: Optional[List[str]] = None) -> BatchLossReport:
    """
    Plain batch mean of the TF-losses (stage 1), returned in the same report format as aft_loss
    """
    losses = np.asarray(per_sample_tf, dtype=np.float64)
    if losses.ndim != 1 or len(losses) < 1:
        raise LossException("Empty batch")
    if not np.all(np.isfinite(losses)):
        raise LossException("Non-finite TF-loss in batch: {}".format(losses.tolist()))
    batch_size = len(losses)
    mu = math.fsum(losses) / batch_size
    sigma = math.sqrt(math.fsum((losses - mu) ** 2) / batch_size)
    coefficients = np.full(batch_size, 1.0 / batch_size)
    report = BatchLossReport(per_sample_tf=losses, mu=mu, sigma=sigma, weights=np.zeros(batch_size), aggregate=mu,
                             coefficients=coefficients, fallback=True, sample_ids=list(sample_ids or []))
    if per_sample_grads is not None:
        report.grad = combine_gradients(coefficients, per_sample_grads)
    return report
