"""
This module contains the small enhancement model of the toolkit and its hand derived gradients.

The model is a frame independent mask estimator conditioned on a speaker embedding:

    x_t    = (log(1 + |Y_t|) - feat_mean) / feat_std
    h1     = relu([x_t ; e] @ W1 + b1)
    h2     = relu(h1 @ W2 + b2)
    mask_t = sigmoid(h2 @ W3 + b3)
    est_t  = mask_t * Y_t

The speaker embedding e is computed from the (possibly compensated) enrollment:

    e = normalize(tanh(mean_t(log(1 + |S_t|)) @ W_s + b_s))

All trainable tensors live in one flat vector, so that every parameter can be addressed with a single index.
"""
import json
import logging
import os
from dataclasses import dataclass
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit

from pse import GeometryMismatch, StaleCacheException, CheckpointException, AudioFormatException
from pse.audio import Waveform
from pse.dsp import StftConfig, Spectrogram, stft, istft

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION: int = 1
# minimal feature standard deviation, keeps the normalization finite for constant bins
_STD_FLOOR: float = 1e-5
_NORM_FLOOR: float = 1e-12


@dataclass(frozen=True)
class ModelDims:
    feat_dim: int = 257
    emb_dim: int = 32
    hidden: int = 128

    @staticmethod
    def from_stft(config: StftConfig, emb_dim: int = 32, hidden: int = 128) -> 'ModelDims':
        return ModelDims(config.num_bins, emb_dim, hidden)

    def layout(self) -> List[Tuple[str, Tuple[int, ...]]]:
        """ names and shapes of all parameter tensors in flat order """
        f, e, h = self.feat_dim, self.emb_dim, self.hidden
        return [
            ('spk_proj.W', (f, e)), ('spk_proj.b', (e,)),
            ('layer1.W', (f + e, h)), ('layer1.b', (h,)),
            ('layer2.W', (h, h)), ('layer2.b', (h,)),
            ('mask_out.W', (h, f)), ('mask_out.b', (f,)),
        ]


class ModelParams:
    """
    Class holding all trainable tensors of the model in a single flat float64 vector.

    The named tensors (i.e. params['layer1.W']) are reshaped views into that vector. Writing to a view changes the
    flat vector and vice versa.
    The version counter is increased by every optimizer step, forward caches remember the version they were
    computed with.
    """

    def __init__(self, dims: ModelDims, values: Optional[np.ndarray] = None, feat_mean: Optional[np.ndarray] = None,
                 feat_std: Optional[np.ndarray] = None) -> None:
        self.dims: ModelDims = dims
        self._slices: Dict[str, Tuple[slice, Tuple[int, ...]]] = {}
        offset = 0
        for name, shape in dims.layout():
            size = int(np.prod(shape))
            self._slices[name] = (slice(offset, offset + size), shape)
            offset += size
        if values is None:
            values = np.zeros(offset)
        values = np.array(values, dtype=np.float64)
        if values.shape != (offset,):
            raise GeometryMismatch("Expected {} parameters for {}, got {}".format(offset, dims, values.shape))
        self.values: np.ndarray = values
        self.feat_mean: np.ndarray = np.zeros(dims.feat_dim) if feat_mean is None \
            else np.array(feat_mean, dtype=np.float64)
        self.feat_std: np.ndarray = np.ones(dims.feat_dim) if feat_std is None \
            else np.array(feat_std, dtype=np.float64)
        if self.feat_mean.shape != (dims.feat_dim,) or self.feat_std.shape != (dims.feat_dim,):
            raise GeometryMismatch("Feature statistics must have {} entries".format(dims.feat_dim))
        self.version: int = 0

    def __getitem__(self, name: str) -> np.ndarray:
        part, shape = self._slices[name]
        return self.values[part].reshape(shape)

    def __str__(self) -> str:
        return "ModelParams {} ({} parameters)".format(self.dims, self.count())

    def count(self) -> int:
        return self.values.shape[0]

    def names(self) -> List[str]:
        return list(self._slices.keys())

    def index_of(self, name: str) -> slice:
        """ flat index range of a named tensor """
        return self._slices[name][0]

    def touch(self) -> None:
        """ marks the parameters as changed, invalidates all forward caches """
        self.version += 1

    def copy(self) -> 'ModelParams':
        other = ModelParams(self.dims, self.values.copy(), self.feat_mean.copy(), self.feat_std.copy())
        other.version = self.version
        return other

    def zeros_like(self) -> 'ModelParams':
        """ parameter shaped container (i.e. for gradients), without feature statistics """
        return ModelParams(self.dims)

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    @staticmethod
    def init(dims: ModelDims, seed: int = 0) -> 'ModelParams':
        """
        Uniform initialization in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for all weight matrices, zero biases.
        The matrices are drawn in layout order from one generator.
        """
        rng = np.random.default_rng(seed)
        params = ModelParams(dims)
        for name, shape in dims.layout():
            if len(shape) == 2:
                bound = 1.0 / np.sqrt(shape[0])
                params[name][...] = rng.uniform(-bound, bound, size=shape)
        return params

    def to_dict(self) -> dict:
        return {
            'format_version': CHECKPOINT_FORMAT_VERSION,
            'feat_dim': self.dims.feat_dim,
            'emb_dim': self.dims.emb_dim,
            'hidden': self.dims.hidden,
            'feat_mean': self.feat_mean.tolist(),
            'feat_std': self.feat_std.tolist(),
            'params': self.values.tolist(),
        }


def save_checkpoint(params: ModelParams, path: str) -> None:
    """
    Writes the parameters as json checkpoint (dims header, feature statistics, flat parameter array).
    Floats are written with their shortest round-trip representation, identical parameters give identical files.
    """
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        os.makedirs(parent)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        json.dump(params.to_dict(), f)
        f.write('\n')


def load_checkpoint(path: str, expected: Optional[ModelDims] = None) -> ModelParams:
    """
    Reads a checkpoint written by save_checkpoint

    :param path:
    :param expected: if given, the dims of the checkpoint must match
    :raises CheckpointException: if the file is missing, has another format version, the dimensions do not match
        or a parameter is not finite
    :return:
    """
    if not os.path.isfile(path):
        raise CheckpointException("Could not find checkpoint {}".format(path))
    try:
        with open(path, 'r', encoding='utf-8') as f:
            obj = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointException("Checkpoint {} is not valid json: {}".format(path, e))

    if obj.get('format_version') != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointException("Checkpoint {} has format version {}, expected {}".format(
            path, obj.get('format_version'), CHECKPOINT_FORMAT_VERSION))
    try:
        dims = ModelDims(int(obj['feat_dim']), int(obj['emb_dim']), int(obj['hidden']))
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointException("Checkpoint {} has an invalid dims header: {}".format(path, e))
    if expected is not None and dims != expected:
        raise CheckpointException("Checkpoint {} has dims {} but {} were expected".format(path, dims, expected))
    try:
        params = ModelParams(dims, np.asarray(obj['params'], dtype=np.float64),
                             obj.get('feat_mean'), obj.get('feat_std'))
    except (GeometryMismatch, KeyError) as e:
        raise CheckpointException("Checkpoint {} does not match its dims header: {}".format(path, e))
    if not params.is_finite():
        raise CheckpointException("Checkpoint {} contains NaN or Inf parameters".format(path))
    return params


def log_magnitude(spec: Spectrogram) -> np.ndarray:
    return np.log1p(np.abs(spec.bins))


def feature_stats(spectrograms: List[Spectrogram]) -> Tuple[np.ndarray, np.ndarray]:
    """
    Per bin mean and standard deviation of the log1p magnitude features over all frames of all spectrograms
    (global mean-variance normalization)
    """
    if len(spectrograms) == 0:
        raise GeometryMismatch("Can not compute feature statistics of zero spectrograms")
    n_frames = 0
    total = np.zeros(spectrograms[0].config.num_bins)
    total_sq = np.zeros_like(total)
    for spec in spectrograms:
        features = log_magnitude(spec)
        n_frames += features.shape[0]
        total += features.sum(axis=0)
        total_sq += (features ** 2).sum(axis=0)
    mean = total / n_frames
    std = np.sqrt(np.maximum(total_sq / n_frames - mean ** 2, 0.0))
    return mean, np.maximum(std, _STD_FLOOR)


class SpeakerEmbedding:
    """
    Unit norm speaker embedding of an enrollment utterance.

    The embedding keeps the intermediate values of its projection, so that backward can propagate an embedding
    gradient into the spk_proj parameters.
    """

    def __init__(self, vector: np.ndarray, features: Optional[np.ndarray] = None,
                 activation: Optional[np.ndarray] = None, norm: float = 0.0, version: Optional[int] = None) -> None:
        self.vector: np.ndarray = np.asarray(vector, dtype=np.float64)
        self.features = features
        self.activation = activation
        self.norm: float = norm
        self.version = version

    def __len__(self) -> int:
        return self.vector.shape[0]

    @property
    def is_silent(self) -> bool:
        return self.norm <= _NORM_FLOOR


def embed_speaker(enroll: Waveform, params: ModelParams, config: StftConfig = StftConfig()) -> SpeakerEmbedding:
    """
    Speaker embedding: mean log1p magnitude over all frames, projected with spk_proj, tanh, L2 normalized.

    :param enroll: enrollment (clean or compensated)
    :param params:
    :param config:
    :raises AudioFormatException: if the enrollment is empty
    :return: unit norm embedding, or the zero vector (with a warning) if the projection is zero
    """
    if len(enroll) == 0:
        raise AudioFormatException("The enrollment is empty")
    spec = stft(enroll, config)
    if spec.bins.shape[1] != params.dims.feat_dim:
        raise GeometryMismatch("Enrollment spectrogram has {} bins, the model expects {}".format(
            spec.bins.shape[1], params.dims.feat_dim))
    features = log_magnitude(spec).mean(axis=0)
    activation = np.tanh(features @ params['spk_proj.W'] + params['spk_proj.b'])
    norm = float(np.linalg.norm(activation))
    if norm <= _NORM_FLOOR:
        logger.warning("Silent enrollment: the speaker projection is zero, using a zero embedding")
        return SpeakerEmbedding(np.zeros(params.dims.emb_dim), features, activation, norm, params.version)
    return SpeakerEmbedding(activation / norm, features, activation, norm, params.version)


@dataclass
class ForwardCache:
    """ Activations of one forward pass, needed by backward """
    noisy: np.ndarray
    inputs: np.ndarray
    pre1: np.ndarray
    hidden1: np.ndarray
    pre2: np.ndarray
    hidden2: np.ndarray
    mask: np.ndarray
    embedding: SpeakerEmbedding
    version: int


def forward(noisy_spec: Spectrogram, emb: SpeakerEmbedding,
            params: ModelParams) -> Tuple[np.ndarray, Spectrogram, ForwardCache]:
    """
    Estimates a real valued mask for every frame and bin and applies it to the noisy spectrogram

    :param noisy_spec: spectrogram of the noisy input
    :param emb: speaker embedding
    :param params:
    :raises GeometryMismatch: if the spectrogram or the embedding do not fit the model dims
    :return: (mask in (0, 1), estimated spectrogram, cache)
    """
    dims = params.dims
    if noisy_spec.bins.shape[1] != dims.feat_dim:
        raise GeometryMismatch("Spectrogram has {} bins, the model expects {}".format(
            noisy_spec.bins.shape[1], dims.feat_dim))
    if len(emb) != dims.emb_dim:
        raise GeometryMismatch("Embedding has {} entries, the model expects {}".format(len(emb), dims.emb_dim))

    y = noisy_spec.bins
    features = (log_magnitude(noisy_spec) - params.feat_mean) / params.feat_std
    inputs = np.hstack([features, np.broadcast_to(emb.vector, (y.shape[0], dims.emb_dim))])
    pre1 = inputs @ params['layer1.W'] + params['layer1.b']
    hidden1 = np.maximum(pre1, 0.0)
    pre2 = hidden1 @ params['layer2.W'] + params['layer2.b']
    hidden2 = np.maximum(pre2, 0.0)
    mask = expit(hidden2 @ params['mask_out.W'] + params['mask_out.b'])
    cache = ForwardCache(y, inputs, pre1, hidden1, pre2, hidden2, mask, emb, params.version)
    return mask, noisy_spec.with_bins(mask * y), cache


def embedding_backward(emb: SpeakerEmbedding, grad_emb: np.ndarray, params: ModelParams,
                       grads: ModelParams) -> None:
    """
    Adds the gradient of the spk_proj parameters for an embedding gradient to grads.
    Zero embeddings (silent enrollments) do not pass any gradient.
    """
    if emb.features is None or emb.is_silent:
        return
    if emb.version != params.version:
        raise StaleCacheException(emb.version, params.version)
    # derivative of a / |a|
    grad_activation = (grad_emb - emb.vector * np.dot(emb.vector, grad_emb)) / emb.norm
    grad_pre = grad_activation * (1.0 - emb.activation ** 2)
    grads['spk_proj.W'][...] += np.outer(emb.features, grad_pre)
    grads['spk_proj.b'][...] += grad_pre


def backward(cache: ForwardCache, grad_est_spec: Spectrogram,
             params: ModelParams) -> Tuple[ModelParams, np.ndarray]:
    """
    Reverse mode gradients of all parameters for the loss whose est_spec gradient is given

    :param cache: cache of the forward pass
    :param grad_est_spec: d loss / d Re(est) + i * d loss / d Im(est)
    :param params: the parameters the forward pass was computed with
    :raises StaleCacheException: if the parameters changed since the forward pass
    :raises GeometryMismatch: if the gradient shape differs from the forward spectrogram
    :return: (parameter gradients, gradient w.r.t. the embedding vector)
    """
    if cache.version != params.version:
        raise StaleCacheException(cache.version, params.version)
    if grad_est_spec.bins.shape != cache.noisy.shape:
        raise GeometryMismatch("Gradient has shape {} but the forward pass had shape {}".format(
            grad_est_spec.bins.shape, cache.noisy.shape))
    dims = params.dims
    grads = params.zeros_like()

    grad_mask = np.real(grad_est_spec.bins * np.conj(cache.noisy))
    grad_out = grad_mask * cache.mask * (1.0 - cache.mask)
    grads['mask_out.W'][...] = cache.hidden2.T @ grad_out
    grads['mask_out.b'][...] = grad_out.sum(axis=0)

    grad_pre2 = (grad_out @ params['mask_out.W'].T) * (cache.pre2 > 0)
    grads['layer2.W'][...] = cache.hidden1.T @ grad_pre2
    grads['layer2.b'][...] = grad_pre2.sum(axis=0)

    grad_pre1 = (grad_pre2 @ params['layer2.W'].T) * (cache.pre1 > 0)
    grads['layer1.W'][...] = cache.inputs.T @ grad_pre1
    grads['layer1.b'][...] = grad_pre1.sum(axis=0)

    grad_emb = (grad_pre1 @ params['layer1.W'][dims.feat_dim:].T).sum(axis=0)
    embedding_backward(cache.embedding, grad_emb, params, grads)
    return grads, grad_emb


def enhance(noisy: Waveform, enroll: Waveform, params: ModelParams, config: StftConfig = StftConfig()) -> Waveform:
    """
    Runs the model on a noisy waveform

    :param noisy: noisy input (already pre-processed, i.e. spectral subtraction)
    :param enroll: enrollment (already compensated, i.e. DAC)
    :return: enhanced waveform with the length of noisy
    """
    emb = embed_speaker(enroll, params, config)
    _, est_spec, _ = forward(stft(noisy, config), emb, params)
    return istft(est_spec)
