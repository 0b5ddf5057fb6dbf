"""
This module contains the dataset simulator.

A dataset consists of three conditions:
    - noise: target speaker + background noise
    - mix:   target speaker + interfering speaker
    - nmix:  target speaker + interfering speaker + background noise

The clean speech pool is a directory with one sub directory per speaker (i.e. clean/spk01/utt1.wav). For every record
a target speaker is drawn and two different utterances of that speaker are picked: one is mixed, the other one is the
enrollment. Noise and interferer are mixed with an SNR drawn uniformly from the configured range (default -5 to 20 dB).
In nmix the interferer is mixed first, then the noise is added with an independent SNR draw (both relative to the
clean target).

Every record gets its own random generator derived from the master seed and the record index, so that the output
does not depend on the number of worker threads.

Output layout:
    out/manifest.jsonl
    out/noisy/NNNN.wav, out/clean/NNNN.wav, out/enroll/NNNN.wav
    out/noise/NNNN.wav        (noise and nmix, the scaled background noise of the mixture)
    out/interferer/NNNN.wav   (mix and nmix, the scaled interfering speech of the mixture)
"""
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve

from pse import SimulationException, ConfigException, PrepException, AudioFormatException
from pse.audio import Waveform, read_wav, write_wav, PIPELINE_SAMPLE_RATE
from pse.helper.seeding import derive_seed, derive_rng
from pse.manifest import Condition, Manifest, MixtureRecord, save_manifest
from pse.prep import mix_at_snr

logger = logging.getLogger(__name__)

MANIFEST_NAME = 'manifest.jsonl'
PEAK_LIMIT: float = 0.99
_CONDITION_ORDER = (Condition.NOISE, Condition.MIX, Condition.NMIX)


@dataclass
class SimSpec:
    """
    Settings of a simulation run (config section "simulate").
    The default counts are the sizes of the DNS test subsets: 500 noise, 200 mix and 100 nmix records.

    :param counts: number of records per condition (noise, mix, nmix)
    :param snr_range: (low, high) in dB
    :param seconds: duration of every record
    :param sample_rate: sample rate of all pool files and outputs
    :param seed: master seed
    :param clean_dir: clean speech pool, one sub directory per speaker
    :param noise_dir: noise pool (needed for noise and nmix)
    :param rir_dir: optional pool of impulse responses
    :param out_dir: output directory
    :param workers: number of threads rendering records
    """
    counts: Tuple[int, int, int] = (500, 200, 100)
    snr_range: Tuple[float, float] = (-5.0, 20.0)
    seconds: float = 10.0
    sample_rate: int = PIPELINE_SAMPLE_RATE
    seed: int = 0
    clean_dir: Optional[str] = None
    noise_dir: Optional[str] = None
    rir_dir: Optional[str] = None
    out_dir: Optional[str] = None
    workers: int = 1

    def __post_init__(self) -> None:
        self.counts = tuple(int(c) for c in self.counts)
        self.snr_range = tuple(float(s) for s in self.snr_range)
        if len(self.counts) != 3 or any(c < 0 for c in self.counts):
            raise ConfigException("counts must be three non negative numbers (noise, mix, nmix), got {}".format(
                self.counts))
        if len(self.snr_range) != 2 or self.snr_range[0] > self.snr_range[1]:
            raise ConfigException("snr_range must be (low, high) with low <= high, got {}".format(self.snr_range))
        if self.seconds <= 0:
            raise ConfigException("seconds must be positive, got {}".format(self.seconds))
        if self.workers < 1:
            raise ConfigException("workers must be >= 1, got {}".format(self.workers))

    @property
    def num_samples(self) -> int:
        return int(round(self.seconds * self.sample_rate))

    @property
    def total(self) -> int:
        return sum(self.counts)

    def condition_of(self, index: int) -> Condition:
        """ records are ordered by condition: first all noise, then mix, then nmix records """
        for condition, count in zip(_CONDITION_ORDER, self.counts):
            if index < count:
                return condition
            index -= count
        raise IndexError(index)


def _wav_files(directory: str) -> List[str]:
    files = []
    for root, _, names in os.walk(directory):
        files.extend(os.path.join(root, name) for name in names if name.lower().endswith('.wav'))
    return sorted(files)


@dataclass
class SourcePools:
    """
    The scanned input pools. speakers maps the speaker id (sub directory name) to its sorted utterance paths.
    """
    speakers: Dict[str, List[str]] = field(default_factory=dict)
    noises: List[str] = field(default_factory=list)
    rirs: List[str] = field(default_factory=list)
    clean_dir: str = '.'

    @staticmethod
    def scan(clean_dir: str, noise_dir: Optional[str] = None, rir_dir: Optional[str] = None) -> 'SourcePools':
        if clean_dir is None or not os.path.isdir(clean_dir):
            raise SimulationException("Clean speech directory {} does not exist".format(clean_dir))
        speakers = {}
        for name in sorted(os.listdir(clean_dir)):
            if os.path.isdir(os.path.join(clean_dir, name)):
                utterances = _wav_files(os.path.join(clean_dir, name))
                if len(utterances) > 0:
                    speakers[name] = utterances
        noises = _wav_files(noise_dir) if noise_dir is not None and os.path.isdir(noise_dir) else []
        rirs = _wav_files(rir_dir) if rir_dir is not None and os.path.isdir(rir_dir) else []
        if noise_dir is not None and not os.path.isdir(noise_dir):
            raise SimulationException("Noise directory {} does not exist".format(noise_dir))
        if rir_dir is not None and not os.path.isdir(rir_dir):
            raise SimulationException("Impulse response directory {} does not exist".format(rir_dir))
        return SourcePools(speakers, noises, rirs, clean_dir)

    @property
    def target_speakers(self) -> List[str]:
        """ speakers with at least two utterances (content + enrollment) """
        return [spk for spk, utterances in self.speakers.items() if len(utterances) >= 2]

    def check(self, spec: SimSpec) -> None:
        """
        :raises SimulationException: if the pools can not serve the requested conditions
        """
        n_noise, n_mix, n_nmix = spec.counts
        if spec.total == 0:
            return
        if len(self.target_speakers) == 0:
            raise SimulationException("Need a speaker with at least 2 utterances in {}".format(self.clean_dir))
        if n_noise + n_nmix > 0 and len(self.noises) == 0:
            raise SimulationException("Conditions noise / nmix need a non-empty noise pool")
        if n_mix + n_nmix > 0 and len(self.speakers) < 2:
            raise SimulationException("Conditions mix / nmix need at least 2 speakers, found {}".format(
                len(self.speakers)))

    def source_id(self, path: str) -> str:
        """ path relative to the clean speech pool """
        return os.path.relpath(path, self.clean_dir).replace(os.sep, '/')


@lru_cache(maxsize=512)
def _read_source(path: str) -> Waveform:
    return read_wav(path)


def _read_pool_file(path: str, sample_rate: int) -> Waveform:
    try:
        w = _read_source(path)
    except AudioFormatException as e:
        raise SimulationException("Could not read pool file: {}".format(e))
    if w.sample_rate != sample_rate:
        raise SimulationException("{} has {} Hz but the simulation runs at {} Hz (no resampling)".format(
            path, w.sample_rate, sample_rate))
    if len(w) == 0:
        raise SimulationException("{} is empty".format(path))
    return w


def fit_length(w: Waveform, n: int, rng: np.random.Generator, what: str = 'signal') -> Waveform:
    """
    Brings a signal to n samples: longer signals are cropped at a random offset, shorter ones are repeated
    (loop padding, logged as warning)
    """
    if len(w) > n:
        offset = int(rng.integers(0, len(w) - n + 1))
        return w.with_samples(w.samples[offset:offset + n])
    if len(w) < n:
        logger.warning("{} has {} samples, loop padding to {}".format(what, len(w), n))
        return w.with_samples(np.tile(w.samples, -(-n // len(w)))[:n])
    return w


def reverberate(w: Waveform, rir: Waveform) -> Waveform:
    """ convolution with an impulse response, truncated to the signal length """
    return w.with_samples(fftconvolve(w.samples, rir.samples)[:len(w)])


@dataclass
class RenderedRecord:
    """ all tracks of one simulated record (before writing) """
    index: int
    condition: Condition
    seed: int
    snr_db: float
    noisy: Waveform
    clean: Waveform
    enroll: Waveform
    noise: Optional[Waveform] = None
    interferer: Optional[Waveform] = None
    extra: dict = field(default_factory=dict)

    def protect_peaks(self) -> None:
        """ scales the mixture tracks jointly (and the enrollment alone) so that no written sample clips """
        tracks = [w for w in (self.noisy, self.clean, self.noise, self.interferer) if w is not None]
        peak = max(float(np.max(np.abs(w.samples))) for w in tracks)
        if peak > PEAK_LIMIT:
            gain = PEAK_LIMIT / peak
            self.noisy = self.noisy.with_samples(self.noisy.samples * gain)
            self.clean = self.clean.with_samples(self.clean.samples * gain)
            if self.noise is not None: self.noise = self.noise.with_samples(self.noise.samples * gain)
            if self.interferer is not None:
                self.interferer = self.interferer.with_samples(self.interferer.samples * gain)
        enroll_peak = float(np.max(np.abs(self.enroll.samples)))
        if enroll_peak > PEAK_LIMIT:
            self.enroll = self.enroll.with_samples(self.enroll.samples * PEAK_LIMIT / enroll_peak)


def render_record(spec: SimSpec, pools: SourcePools, index: int) -> RenderedRecord:
    """
    Simulates record number index (deterministic given spec.seed and index)

    :raises SimulationException: on unusable pool files
    """
    condition = spec.condition_of(index)
    seed = derive_seed(spec.seed, index)
    rng = derive_rng(spec.seed, index)
    n = spec.num_samples
    lo, hi = spec.snr_range

    targets = pools.target_speakers
    speaker = targets[int(rng.integers(0, len(targets)))]
    content_path, enroll_path = [pools.speakers[speaker][int(i)] for i in
                                 rng.choice(len(pools.speakers[speaker]), size=2, replace=False)]
    clean = fit_length(_read_pool_file(content_path, spec.sample_rate), n, rng, content_path)
    enroll = _read_pool_file(enroll_path, spec.sample_rate)
    if len(pools.rirs) > 0:
        clean = reverberate(clean, _read_pool_file(pools.rirs[int(rng.integers(0, len(pools.rirs)))],
                                                   spec.sample_rate))
    snr_db = float(rng.uniform(lo, hi))
    extra = {'speaker': speaker, 'source': pools.source_id(content_path),
             'enroll_source': pools.source_id(enroll_path)}

    interferer = None
    if condition in (Condition.MIX, Condition.NMIX):
        others = [spk for spk in pools.speakers if spk != speaker]
        other = others[int(rng.integers(0, len(others)))]
        interferer_path = pools.speakers[other][int(rng.integers(0, len(pools.speakers[other])))]
        interferer = fit_length(_read_pool_file(interferer_path, spec.sample_rate), n, rng, interferer_path)
        if len(pools.rirs) > 0:
            interferer = reverberate(interferer, _read_pool_file(
                pools.rirs[int(rng.integers(0, len(pools.rirs)))], spec.sample_rate))
        extra['interferer_speaker'] = other
        extra['interferer_source'] = pools.source_id(interferer_path)

    noise = None
    noise_snr_db = snr_db
    if condition in (Condition.NOISE, Condition.NMIX):
        noise_path = pools.noises[int(rng.integers(0, len(pools.noises)))]
        noise_source = _read_pool_file(noise_path, spec.sample_rate)
        if len(noise_source) < n:
            noise_source = fit_length(noise_source, n, rng, noise_path)
        if condition == Condition.NMIX:
            noise_snr_db = float(rng.uniform(lo, hi))
            extra['noise_snr_db'] = noise_snr_db

    try:
        noisy = clean
        if interferer is not None:
            noisy, interferer = mix_at_snr(clean, interferer, snr_db)
        if condition in (Condition.NOISE, Condition.NMIX):
            _, noise = mix_at_snr(clean, noise_source, noise_snr_db, rng)
            noisy = noisy.with_samples(noisy.samples + noise.samples)
    except PrepException as e:
        raise SimulationException("Record {}: {}".format(index, e))

    record = RenderedRecord(index, condition, seed, snr_db, noisy, clean, enroll, noise, interferer, extra)
    record.protect_peaks()
    return record


def _file_name(index: int, total: int) -> str:
    return '{:0{width}d}.wav'.format(index, width=max(4, len(str(max(total - 1, 0)))))


def write_record(record: RenderedRecord, out_dir: str, total: int) -> MixtureRecord:
    """ writes the tracks of a record and returns its manifest entry """
    name = _file_name(record.index, total)
    paths = {'noisy': 'noisy/' + name, 'clean': 'clean/' + name, 'enroll': 'enroll/' + name}
    write_wav(os.path.join(out_dir, 'noisy', name), record.noisy)
    write_wav(os.path.join(out_dir, 'clean', name), record.clean)
    write_wav(os.path.join(out_dir, 'enroll', name), record.enroll)
    if record.noise is not None:
        paths['noise'] = 'noise/' + name
        write_wav(os.path.join(out_dir, 'noise', name), record.noise)
    if record.interferer is not None:
        paths['interferer'] = 'interferer/' + name
        write_wav(os.path.join(out_dir, 'interferer', name), record.interferer)
    return MixtureRecord(noisy=paths['noisy'], clean=paths['clean'], enroll=paths['enroll'],
                         condition=record.condition, snr_db=record.snr_db, seed=record.seed,
                         noise=paths.get('noise'), interferer=paths.get('interferer'), extra=dict(record.extra))


def simulate(spec: SimSpec) -> Manifest:
    """
    Simulates a dataset and writes audio files and manifest.jsonl into spec.out_dir

    :param spec:
    :raises SimulationException: if the pools are missing or insufficient
    :return: the written manifest (records ordered noise, mix, nmix)
    """
    if spec.out_dir is None:
        raise ConfigException("The simulation needs an output directory")
    pools = SourcePools.scan(spec.clean_dir, spec.noise_dir, spec.rir_dir) if spec.total > 0 else SourcePools()
    pools.check(spec)
    if not os.path.isdir(spec.out_dir):
        os.makedirs(spec.out_dir)

    def job(index: int) -> MixtureRecord:
        return write_record(render_record(spec, pools, index), spec.out_dir, spec.total)

    if spec.workers > 1:
        with ThreadPoolExecutor(max_workers=spec.workers) as executor:
            records = list(executor.map(job, range(spec.total)))
    else:
        records = [job(i) for i in range(spec.total)]

    manifest = Manifest(records, spec.out_dir)
    save_manifest(manifest, os.path.join(spec.out_dir, MANIFEST_NAME))
    logger.info("Simulated {} records into {}".format(len(records), spec.out_dir))
    return manifest
