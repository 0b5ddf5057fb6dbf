"""
This module contains the training loop of the toolkit.

Training runs in two stages:

Stage 1 (tf):
Minibatch optimization of the mean TF-loss with Adam. After every epoch the mean TF-loss of the validation set is
computed. If it did not improve for patience_epochs epochs, the learning rate is halved. Training stops when the
patience runs out again after max_decays halvings without improvement.

Stage 2 (aft):
The stopped model is trained further with the adaptive focal loss of every batch, for less than 20 epochs, until the
validation loss improves by less than stage2_min_delta for stage2_patience epochs in a row.

In both stages the parameters with the lowest validation loss are returned.

Batches are assembled from a manifest. With DAC enabled the enrollment of every record is compensated with the
background of that record's own noisy input before it is embedded. Batch assembly (file reading, DAC, STFT) runs in a
producer thread with a bounded queue unless the trainer is configured single threaded.
"""
import csv
import logging
import math
import os
import queue
import threading
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import islice
from typing import Iterator, List, Optional, Tuple

import numpy as np

from pse import TrainingException, NonFiniteGradient, TrainingDiverged, AudioFormatException, LossException, \
    ConfigException, PrepException
from pse.audio import Waveform, read_wav, PIPELINE_SAMPLE_RATE
from pse.dsp import StftConfig, Spectrogram, stft, istft
from pse.helper.seeding import derive_rng
from pse.losses import tf_loss, aft_loss, mean_loss, BatchLossReport
from pse.manifest import Manifest, MixtureRecord
from pse.model import ModelParams, ModelDims, embed_speaker, forward, backward, feature_stats, save_checkpoint
from pse.prep import DacConfig, dac

logger = logging.getLogger(__name__)

STAGE_TF = 'tf'
STAGE_AFT = 'aft'
STAGE_MAX_EPOCHS: int = 20
_STAGE_INDEX = {STAGE_TF: 1, STAGE_AFT: 2}


@dataclass
class TrainConfig:
    """
    Settings of a training run (config section "train"). The defaults are the published ones: batch size 32,
    Adam with learning rate 0.001 halved on plateaus, DAC(4/2), stage 2 shorter than 20 epochs.
    """
    batch_size: int = 32
    lr0: float = 1e-3
    lr_decay: float = 0.5
    patience_epochs: int = 3
    max_decays: int = 3
    max_epochs: int = 100
    stage2_max_epochs: int = 19
    stage2_lr: Optional[float] = None
    stage2_min_delta: float = 1e-4
    stage2_patience: int = 3
    seed: int = 0
    dac_enabled: bool = True
    dac_j: int = 4
    dac_k: int = 2
    unclamped: bool = False
    max_seconds: Optional[float] = None
    normalize_features: bool = True
    emb_dim: int = 32
    hidden: int = 128
    workers: int = 1

    def __post_init__(self) -> None:
        if self.batch_size < 2:
            raise ConfigException("batch_size must be >= 2 (the adaptive focal loss needs batch statistics), "
                                  "got {}".format(self.batch_size))
        if not self.stage2_max_epochs < STAGE_MAX_EPOCHS:
            raise ConfigException("stage2_max_epochs must be < {}, got {}".format(
                STAGE_MAX_EPOCHS, self.stage2_max_epochs))
        if self.lr0 <= 0 or (self.stage2_lr is not None and self.stage2_lr <= 0):
            raise ConfigException("Learning rates must be positive")
        if not 0 < self.lr_decay < 1:
            raise ConfigException("lr_decay must be in (0, 1), got {}".format(self.lr_decay))
        if self.max_epochs < 1 or self.stage2_max_epochs < 1:
            raise ConfigException("Epoch limits must be >= 1")
        if self.max_seconds is not None and self.max_seconds <= 0:
            raise ConfigException("max_seconds must be positive, got {}".format(self.max_seconds))

    @property
    def single_threaded(self) -> bool:
        return self.workers <= 1

    def dac_config(self, stft_config: StftConfig) -> Optional[DacConfig]:
        return DacConfig.from_stft(self.dac_j, self.dac_k, stft_config) if self.dac_enabled else None

    def max_samples(self, sample_rate: int = PIPELINE_SAMPLE_RATE) -> Optional[int]:
        return None if self.max_seconds is None else int(round(self.max_seconds * sample_rate))


class AdamState:
    """
    First and second moment accumulators of Adam, aligned with the flat parameter vector
    """

    def __init__(self, size: int, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
        self.m: np.ndarray = np.zeros(size)
        self.v: np.ndarray = np.zeros(size)
        self.step: int = 0
        self.beta1: float = beta1
        self.beta2: float = beta2
        self.eps: float = eps

    @staticmethod
    def for_params(params) -> 'AdamState':
        values = params.values if isinstance(params, ModelParams) else np.asarray(params)
        return AdamState(values.shape[0])


def adam_step(params, grads, state: AdamState, lr: float):
    """
    One bias corrected Adam update, applied in place.

    :param params: ModelParams or a float64 numpy vector
    :param grads: gradient of the same shape (ModelParams or numpy vector)
    :param state: AdamState aligned with params
    :param lr: learning rate
    :raises NonFiniteGradient: if the gradient contains NaN or Inf (params and state stay unchanged)
    :raises TrainingException: if the shapes do not agree
    :return: (params, state)
    """
    values = params.values if isinstance(params, ModelParams) else params
    g = grads.values if isinstance(grads, ModelParams) else np.asarray(grads, dtype=np.float64)
    if g.shape != values.shape or state.m.shape != values.shape:
        raise TrainingException("Shape mismatch in Adam step: params {}, grads {}, state {}".format(
            values.shape, g.shape, state.m.shape))
    if not np.all(np.isfinite(g)):
        bad = np.flatnonzero(~np.isfinite(g))
        raise NonFiniteGradient("Rejected Adam step: {} non-finite gradient entries (first index {})".format(
            len(bad), int(bad[0])))

    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = state.m / (1.0 - state.beta1 ** state.step)
    v_hat = state.v / (1.0 - state.beta2 ** state.step)
    values -= lr * m_hat / (np.sqrt(v_hat) + state.eps)
    if isinstance(params, ModelParams):
        params.touch()
    return params, state


class PlateauSchedule:
    """
    Learning rate schedule of stage 1: halve the learning rate after patience epochs without improvement and stop
    when that happens again after max_decays halvings without improvement.
    """
    IMPROVED = 'improved'
    WAIT = 'wait'
    DECAY = 'decay'
    STOP = 'stop'

    def __init__(self, lr0: float, decay: float = 0.5, patience: int = 3, max_decays: int = 3) -> None:
        self.lr: float = lr0
        self.decay: float = decay
        self.patience: int = patience
        self.max_decays: int = max_decays
        self.best: float = math.inf
        self.bad_epochs: int = 0
        self.decays_without_improvement: int = 0
        self.n_decays: int = 0

    def step(self, val_loss: float) -> str:
        """
        Feeds the validation loss of one epoch

        :return: one of improved, wait, decay (the lr was halved) or stop
        """
        if val_loss < self.best:
            self.best = val_loss
            self.bad_epochs = 0
            self.decays_without_improvement = 0
            return self.IMPROVED
        self.bad_epochs += 1
        if self.bad_epochs < self.patience:
            return self.WAIT
        if self.decays_without_improvement >= self.max_decays:
            return self.STOP
        self.lr *= self.decay
        self.bad_epochs = 0
        self.decays_without_improvement += 1
        self.n_decays += 1
        return self.DECAY


@dataclass
class EpochRecord:
    epoch: int
    stage: str
    train_loss: float
    val_loss: float
    lr: float


class TrainingHistory:
    """
    Per epoch losses of both stages plus the BatchLossReports of stage 2
    """

    def __init__(self) -> None:
        self.epochs: List[EpochRecord] = []
        # (epoch, batch index, report)
        self.aft_reports: List[Tuple[int, int, BatchLossReport]] = []

    def __len__(self) -> int:
        return len(self.epochs)

    def add(self, record: EpochRecord) -> None:
        self.epochs.append(record)
        logger.info("[{}] epoch {}: train {:.4f}, val {:.4f}, lr {:g}".format(
            record.stage, record.epoch, record.train_loss, record.val_loss, record.lr))

    def stage(self, stage: str) -> List[EpochRecord]:
        return [e for e in self.epochs if e.stage == stage]

    def best(self, stage: Optional[str] = None) -> Optional[EpochRecord]:
        records = self.epochs if stage is None else self.stage(stage)
        return min(records, key=lambda e: e.val_loss) if len(records) > 0 else None

    def last_lr(self, stage: str) -> Optional[float]:
        records = self.stage(stage)
        return records[-1].lr if len(records) > 0 else None

    def to_csv(self, path: str) -> None:
        """ epoch, stage, train_loss, val_loss, lr """
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['epoch', 'stage', 'train_loss', 'val_loss', 'lr'])
            for e in self.epochs:
                writer.writerow([e.epoch, e.stage, repr(e.train_loss), repr(e.val_loss), repr(e.lr)])

    def aft_to_csv(self, path: str) -> None:
        """ epoch, batch, sample_id, l_tf, weight """
        with open(path, 'w', newline='') as f:
            writer = csv.writer(f)
            writer.writerow(['epoch', 'batch', 'sample_id', 'l_tf', 'weight'])
            for epoch, batch_index, report in self.aft_reports:
                for row in report.to_rows():
                    writer.writerow([epoch, batch_index] + row)


@lru_cache(maxsize=96)
def _read_version(path: str, mtime_ns: int, size: int) -> Waveform:
    return read_wav(path)


def _read_cached(path: str) -> Waveform:
    """
    Reads a wav file through a small cache. The cache key contains the modification time and the size of the file,
    a rewritten file is read again and a deleted one fails like an uncached read.
    """
    try:
        stat = os.stat(path)
    except OSError:
        return read_wav(path)
    return _read_version(path, stat.st_mtime_ns, stat.st_size)


def clear_read_cache() -> None:
    _read_version.cache_clear()


@dataclass
class BatchItem:
    """
    One example of a batch. noisy and clean are zero padded to the batch length, length is the original length.
    """
    record_id: str
    noisy: Waveform
    clean: Waveform
    enroll: Waveform
    length: int
    noisy_spec: Optional[Spectrogram] = None
    clean_spec: Optional[Spectrogram] = None

    def support(self, waveform: Waveform) -> Waveform:
        """ the unpadded part of a batch signal """
        return waveform.with_samples(waveform.samples[:self.length])

    def extract_features(self, config: StftConfig) -> 'BatchItem':
        self.noisy_spec = stft(self.support(self.noisy), config)
        self.clean_spec = stft(self.support(self.clean), config)
        return self


@dataclass
class Batch:
    items: List[BatchItem] = field(default_factory=list)
    length: int = 0

    def __len__(self) -> int:
        return len(self.items)

    @property
    def record_ids(self) -> List[str]:
        return [item.record_id for item in self.items]

    def extract_features(self, config: StftConfig) -> 'Batch':
        for item in self.items:
            item.extract_features(config)
        return self


def load_item(manifest: Manifest, record: MixtureRecord, dac_config: Optional[DacConfig] = None,
              rng: Optional[np.random.Generator] = None, max_samples: Optional[int] = None) -> BatchItem:
    """
    Reads one record and prepares its enrollment

    :param manifest: manifest the record belongs to (for path resolution)
    :param record:
    :param dac_config: DAC settings, None leaves the enrollment untouched
    :param rng: chooses the crop offset if the record is longer than max_samples
    :param max_samples: optional crop length
    :raises AudioFormatException: if a file can not be read or noisy and clean differ in length
    :raises TrainingException: if a file does not have the pipeline sample rate
    :return: unpadded BatchItem
    """
    noisy = _read_cached(manifest.resolve(record.noisy))
    clean = _read_cached(manifest.resolve(record.clean))
    enroll = _read_cached(manifest.resolve(record.enroll))
    for name, w in (('noisy', noisy), ('clean', clean), ('enroll', enroll)):
        if w.sample_rate != PIPELINE_SAMPLE_RATE:
            raise TrainingException("Record {}: {} file has {} Hz, training requires {} Hz".format(
                record.record_id, name, w.sample_rate, PIPELINE_SAMPLE_RATE))
    if len(noisy) != len(clean):
        raise AudioFormatException("Record {}: noisy has {} samples but clean has {}".format(
            record.record_id, len(noisy), len(clean)))
    noisy.require_nonempty('noisy input of record {}'.format(record.record_id))
    enroll.require_nonempty('enrollment of record {}'.format(record.record_id))

    if max_samples is not None and len(noisy) > max_samples:
        offset = int(rng.integers(0, len(noisy) - max_samples + 1)) if rng is not None else 0
        noisy = noisy.with_samples(noisy.samples[offset:offset + max_samples])
        clean = clean.with_samples(clean.samples[offset:offset + max_samples])

    if dac_config is not None:
        enroll = dac(enroll, noisy, dac_config)
    return BatchItem(record.record_id, noisy, clean, enroll, len(noisy))


def assemble_batch(records: Manifest, dac_config: Optional[DacConfig], stft_config: StftConfig,
                   rng: Optional[np.random.Generator] = None, refill: Optional[Iterator[MixtureRecord]] = None,
                   max_samples: Optional[int] = None) -> Batch:
    """
    Builds a batch from manifest records

    :param records: the records of the batch (a manifest slice)
    :param dac_config: DAC settings, None disables the compensation
    :param stft_config: STFT settings (used for the features and the DAC hop)
    :param rng: random generator for cropping
    :param refill: records that replace unreadable ones (or ones too short for DAC)
    :param max_samples: optional crop length
    :return: Batch with noisy and clean padded to the longest record and extracted features
    """
    items: List[BatchItem] = []
    pending = list(records)
    refill = refill if refill is not None else iter(())
    while len(pending) > 0:
        record = pending.pop(0)
        try:
            items.append(load_item(records, record, dac_config, rng, max_samples))
        except (AudioFormatException, PrepException) as e:
            logger.warning("Skipping record {}: {}".format(record.record_id, e))
            replacement = next(refill, None)
            if replacement is not None:
                pending.append(replacement)

    length = max([item.length for item in items], default=0)
    for item in items:
        if item.length < length:
            item.noisy = item.noisy.with_samples(np.pad(item.noisy.samples, (0, length - item.length)))
            item.clean = item.clean.with_samples(np.pad(item.clean.samples, (0, length - item.length)))
    return Batch(items, length).extract_features(stft_config)


def _chunks(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    # a single remaining record can not form a batch with statistics
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks[-1]])
        chunks.pop()
    return chunks


class BatchLoader:
    """
    Produces the shuffled batches of one epoch.
    With workers > 1 the batches are assembled in a producer thread and handed over through a bounded queue.
    The order of the batches and their content does not depend on the threading mode.
    """
    _DONE = object()

    def __init__(self, manifest: Manifest, config: TrainConfig, stft_config: StftConfig, stage: str) -> None:
        self.manifest: Manifest = manifest
        self.config: TrainConfig = config
        self.stft_config: StftConfig = stft_config
        self.stage_index: int = _STAGE_INDEX[stage]
        self.dac_config: Optional[DacConfig] = config.dac_config(stft_config)

    def _batches(self, epoch: int) -> Iterator[Batch]:
        order = derive_rng(self.config.seed, self.stage_index, epoch).permutation(len(self.manifest))
        # one cursor for the whole epoch: a record used as replacement is not drawn again by a later batch
        cursor = (self.manifest[int(i)] for i in order)
        for batch_index, chunk in enumerate(_chunks(order, self.config.batch_size)):
            records = list(islice(cursor, len(chunk)))
            if len(records) == 0:
                break
            rng = derive_rng(self.config.seed, self.stage_index, epoch, batch_index)
            batch = assemble_batch(Manifest(records, self.manifest.base_dir),
                                   self.dac_config, self.stft_config, rng, cursor, self.config.max_samples())
            if len(batch) == 0:
                logger.warning("Batch {} of epoch {} has no readable records".format(batch_index, epoch))
                continue
            yield batch

    def epoch(self, epoch: int) -> Iterator[Batch]:
        if self.config.single_threaded:
            yield from self._batches(epoch)
            return

        handoff: queue.Queue = queue.Queue(maxsize=self.config.workers)
        stop = threading.Event()

        def produce() -> None:
            try:
                for batch in self._batches(epoch):
                    if not self._put(handoff, batch, stop): return
                self._put(handoff, self._DONE, stop)
            except Exception as e:
                self._put(handoff, e, stop)

        producer = threading.Thread(target=produce, name='batch-producer', daemon=True)
        producer.start()
        try:
            while True:
                item = handoff.get()
                if item is self._DONE: break
                if isinstance(item, Exception): raise item
                yield item
        finally:
            stop.set()
            producer.join()

    @staticmethod
    def _put(handoff: queue.Queue, item, stop: threading.Event) -> bool:
        while not stop.is_set():
            try:
                handoff.put(item, timeout=0.1)
                return True
            except queue.Full:
                continue
        return False


def sample_loss(params: ModelParams, item: BatchItem, stft_config: StftConfig,
                with_grad: bool = True) -> Tuple[float, Optional[ModelParams]]:
    """
    TF-loss of one batch item and (optionally) the gradient of all parameters
    """
    if item.noisy_spec is None:
        item.extract_features(stft_config)
    emb = embed_speaker(item.enroll, params, stft_config)
    _, est_spec, cache = forward(item.noisy_spec, emb, params)
    loss, grad_spec = tf_loss(est_spec, item.clean_spec, istft(est_spec), item.support(item.clean))
    if not with_grad:
        return loss, None
    grads, _ = backward(cache, grad_spec, params)
    return loss, grads


def batch_losses(params: ModelParams, batch: Batch, stft_config: StftConfig) -> Tuple[List[float], List[np.ndarray]]:
    losses, grads = [], []
    for item in batch.items:
        loss, grad = sample_loss(params, item, stft_config)
        losses.append(loss)
        grads.append(grad.values)
    return losses, grads


def load_validation_set(manifest: Manifest, config: TrainConfig, stft_config: StftConfig) -> List[BatchItem]:
    """ reads all validation records once (uncropped, DAC as configured), unreadable records are skipped """
    dac_config = config.dac_config(stft_config)
    items = []
    for record in manifest:
        try:
            items.append(load_item(manifest, record, dac_config).extract_features(stft_config))
        except (AudioFormatException, PrepException) as e:
            logger.warning("Skipping validation record {}: {}".format(record.record_id, e))
    if len(items) == 0:
        raise TrainingException("The validation set has no readable records")
    return items


def validation_loss(params: ModelParams, items: List[BatchItem], stft_config: StftConfig) -> float:
    """ mean TF-loss over the validation items """
    return math.fsum(sample_loss(params, item, stft_config, with_grad=False)[0] for item in items) / len(items)


def fit_feature_stats(manifest: Manifest, stft_config: StftConfig) -> Tuple[np.ndarray, np.ndarray]:
    """ global mean and standard deviation of the noisy input features of a training manifest """
    spectrograms = []
    for record in manifest:
        try:
            spectrograms.append(stft(_read_cached(manifest.resolve(record.noisy)), stft_config))
        except AudioFormatException as e:
            logger.warning("Skipping record {} for the feature statistics: {}".format(record.record_id, e))
    return feature_stats(spectrograms)


def init_params(train: Manifest, config: TrainConfig, stft_config: StftConfig = StftConfig()) -> ModelParams:
    """ seeded initial parameters, with feature statistics of the training set if normalization is enabled """
    params = ModelParams.init(ModelDims.from_stft(stft_config, config.emb_dim, config.hidden), config.seed)
    if config.normalize_features:
        params.feat_mean, params.feat_std = fit_feature_stats(train, stft_config)
    return params


def _check_sets(train: Manifest, val: Manifest) -> None:
    if len(train) == 0:
        raise TrainingException("The training manifest is empty")
    if len(val) == 0:
        raise TrainingException("The validation manifest is empty")


def _run_epoch(params: ModelParams, loader: BatchLoader, state: AdamState, lr: float, epoch: int,
               stage: str, history: TrainingHistory, config: TrainConfig, stft_config: StftConfig) -> float:
    batch_losses_: List[float] = []
    for batch_index, batch in enumerate(loader.epoch(epoch)):
        losses, grads = batch_losses(params, batch, stft_config)
        try:
            if stage == STAGE_AFT and len(batch) >= 2:
                report = aft_loss(losses, grads, clamp=not config.unclamped, sample_ids=batch.record_ids)
                history.aft_reports.append((epoch, batch_index, report))
            else:
                report = mean_loss(losses, grads, sample_ids=batch.record_ids)
            adam_step(params, report.grad, state, lr)
        except (LossException, NonFiniteGradient) as e:
            raise TrainingDiverged("Training diverged in {} epoch {} batch {}: {}".format(
                stage, epoch, batch_index, e))
        batch_losses_.append(report.aggregate)
    if len(batch_losses_) == 0:
        raise TrainingException("Epoch {} did not produce a single batch".format(epoch))
    return math.fsum(batch_losses_) / len(batch_losses_)


def train_stage1(params: ModelParams, train: Manifest, val: Manifest, config: TrainConfig,
                 stft_config: StftConfig = StftConfig(),
                 history: Optional[TrainingHistory] = None) -> Tuple[ModelParams, TrainingHistory]:
    """
    Stage 1: minibatch optimization of the TF-loss with plateau learning rate decay and early stopping

    :param params: initial parameters (changed in place during training)
    :param train: training manifest
    :param val: validation manifest
    :param config:
    :param stft_config:
    :param history: history to append to
    :raises TrainingDiverged: if a loss or gradient becomes non-finite (carries the best parameters so far)
    :return: (parameters with the lowest validation loss, history)
    """
    _check_sets(train, val)
    history = history if history is not None else TrainingHistory()
    loader = BatchLoader(train, config, stft_config, STAGE_TF)
    val_items = load_validation_set(val, config, stft_config)
    schedule = PlateauSchedule(config.lr0, config.lr_decay, config.patience_epochs, config.max_decays)
    state = AdamState.for_params(params)
    best, best_val = params.copy(), math.inf

    for epoch in range(1, config.max_epochs + 1):
        lr = schedule.lr
        try:
            train_loss = _run_epoch(params, loader, state, lr, epoch, STAGE_TF, history, config, stft_config)
            val_loss = validation_loss(params, val_items, stft_config)
            if not math.isfinite(val_loss):
                raise TrainingDiverged("Validation loss of epoch {} is not finite".format(epoch))
        except TrainingDiverged as e:
            raise TrainingDiverged(str(e), best.copy(), history)
        history.add(EpochRecord(epoch, STAGE_TF, train_loss, val_loss, lr))
        if val_loss < best_val:
            best, best_val = params.copy(), val_loss
        action = schedule.step(val_loss)
        if action == PlateauSchedule.DECAY:
            logger.info("No improvement for {} epochs, learning rate {:g} -> {:g}".format(
                config.patience_epochs, lr, schedule.lr))
        elif action == PlateauSchedule.STOP:
            logger.info("Early stop after epoch {} ({} decays without improvement)".format(epoch, config.max_decays))
            break
    return best, history


def train_stage2(params: ModelParams, train: Manifest, val: Manifest, config: TrainConfig,
                 stft_config: StftConfig = StftConfig(),
                 history: Optional[TrainingHistory] = None) -> Tuple[ModelParams, TrainingHistory]:
    """
    Stage 2: continues a stage 1 model with the adaptive focal loss.
    The learning rate is stage2_lr if set, otherwise the last learning rate of stage 1 in the history
    (lr0 without stage 1 history). Validation uses the plain mean TF-loss.

    :raises TrainingDiverged: if a loss or gradient becomes non-finite (carries the best parameters so far)
    :return: (parameters with the lowest validation loss, history with the BatchLossReports of every batch)
    """
    _check_sets(train, val)
    if not config.stage2_max_epochs < STAGE_MAX_EPOCHS:
        raise TrainingException("Stage 2 must run less than {} epochs".format(STAGE_MAX_EPOCHS))
    history = history if history is not None else TrainingHistory()
    lr = config.stage2_lr
    if lr is None:
        lr = history.last_lr(STAGE_TF) or config.lr0
    loader = BatchLoader(train, config, stft_config, STAGE_AFT)
    val_items = load_validation_set(val, config, stft_config)
    state = AdamState.for_params(params)
    best, best_val = params.copy(), math.inf
    stalled = 0

    epoch = 0
    for epoch in range(1, config.stage2_max_epochs + 1):
        try:
            train_loss = _run_epoch(params, loader, state, lr, epoch, STAGE_AFT, history, config, stft_config)
            val_loss = validation_loss(params, val_items, stft_config)
            if not math.isfinite(val_loss):
                raise TrainingDiverged("Validation loss of epoch {} is not finite".format(epoch))
        except TrainingDiverged as e:
            raise TrainingDiverged(str(e), best.copy(), history)
        history.add(EpochRecord(epoch, STAGE_AFT, train_loss, val_loss, lr))
        stalled = stalled + 1 if best_val - val_loss < config.stage2_min_delta else 0
        if val_loss < best_val:
            best, best_val = params.copy(), val_loss
        if stalled >= config.stage2_patience:
            logger.info("Stage 2 converged after epoch {}".format(epoch))
            break
    assert epoch < STAGE_MAX_EPOCHS
    return best, history


def train(params: ModelParams, train_set: Manifest, val_set: Manifest, config: TrainConfig,
          stft_config: StftConfig = StftConfig(), stage: str = 'both',
          out_dir: Optional[str] = None) -> Tuple[ModelParams, TrainingHistory]:
    """
    Runs stage 1, stage 2 or both and writes the outputs of the run

    :param stage: tf, aft or both
    :param out_dir: if given: history.csv, aft_weights.csv (stage 2), stage1.json / stage2.json and model.json
    :return: (final parameters, history)
    """
    if stage not in (STAGE_TF, STAGE_AFT, 'both'):
        raise ConfigException("Unknown training stage '{}' (expected tf, aft or both)".format(stage))
    history = TrainingHistory()
    try:
        if stage in (STAGE_TF, 'both'):
            params, history = train_stage1(params, train_set, val_set, config, stft_config, history)
            if out_dir is not None: save_checkpoint(params, os.path.join(out_dir, 'stage1.json'))
        if stage in (STAGE_AFT, 'both'):
            params, history = train_stage2(params, train_set, val_set, config, stft_config, history)
            if out_dir is not None: save_checkpoint(params, os.path.join(out_dir, 'stage2.json'))
    except TrainingDiverged as e:
        if out_dir is not None:
            _write_outputs(e.params, history, out_dir)
        raise
    finally:
        clear_read_cache()
    if out_dir is not None:
        _write_outputs(params, history, out_dir)
    return params, history


def _write_outputs(params: Optional[ModelParams], history: TrainingHistory, out_dir: str) -> None:
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    history.to_csv(os.path.join(out_dir, 'history.csv'))
    if len(history.aft_reports) > 0:
        history.aft_to_csv(os.path.join(out_dir, 'aft_weights.csv'))
    if params is not None:
        save_checkpoint(params, os.path.join(out_dir, 'model.json'))
