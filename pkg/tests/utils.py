"""
This module contains helper functions used by the unit test.
They generate small synthetic datasets: every "speaker" is a harmonic tone complex with its own fundamental
frequency and every background noise class is white noise through a different filter.
"""
import os
import shutil
from typing import Dict, List, Sequence

import numpy as np
from scipy.signal import butter, lfilter

from pse.audio import Waveform, write_wav, read_wav
from pse.dsp import StftConfig
from pse.evaluator import score_sample
from pse.manifest import Manifest, MixtureRecord, save_manifest
from pse.model import ModelParams, enhance
from pse.prep import DacConfig, dac

SAMPLE_RATE = 8000
SPEAKER_F0 = {'spk01': 140.0, 'spk02': 210.0, 'spk03': 320.0, 'spk04': 450.0}
NOISE_BANDS = {'low': ('lowpass', 700.0), 'band': ('bandpass', (900.0, 2000.0)), 'high': ('highpass', 2400.0)}


def random_waveform(n: int, rng: np.random.Generator, scale: float = 0.3) -> Waveform:
    return Waveform(scale * rng.standard_normal(n), SAMPLE_RATE)


def tone_speaker(f0: float, n: int, rng: np.random.Generator, rms: float = 0.1) -> Waveform:
    """ harmonic tone complex with a slow amplitude modulation (syllable like) and random phases """
    t = np.arange(n) / SAMPLE_RATE
    signal = np.zeros(n)
    for k in range(1, 5):
        if k * f0 < SAMPLE_RATE / 2:
            signal += np.sin(2 * np.pi * k * f0 * (1 + 0.01 * rng.standard_normal()) * t
                             + rng.uniform(0, 2 * np.pi)) / k
    envelope = 0.6 + 0.4 * np.sin(2 * np.pi * rng.uniform(2.0, 4.0) * t + rng.uniform(0, 2 * np.pi))
    signal *= envelope
    return Waveform(rms * signal / np.sqrt(np.mean(signal ** 2)), SAMPLE_RATE)


def filtered_noise(kind: str, n: int, rng: np.random.Generator, rms: float = 0.1) -> Waveform:
    btype, cutoff = NOISE_BANDS[kind]
    b, a = butter(4, cutoff, btype=btype, fs=SAMPLE_RATE)
    noise = lfilter(b, a, rng.standard_normal(n + 256))[256:]
    return Waveform(rms * noise / np.sqrt(np.mean(noise ** 2)), SAMPLE_RATE)


def write_speech_pool(clean_dir: str, seed: int = 0, n_utterances: int = 3, seconds: float = 1.0,
                      speakers: Dict[str, float] = None) -> Dict[str, List[str]]:
    """ clean_dir/<speaker>/uttN.wav for every speaker """
    rng = np.random.default_rng(seed)
    n = int(seconds * SAMPLE_RATE)
    pool = {}
    for speaker, f0 in (speakers or SPEAKER_F0).items():
        pool[speaker] = []
        for i in range(n_utterances):
            path = os.path.join(clean_dir, speaker, 'utt{}.wav'.format(i))
            write_wav(path, tone_speaker(f0, n, rng))
            pool[speaker].append(path)
    return pool


def write_noise_pool(noise_dir: str, seed: int = 0, seconds: float = 2.0,
                     kinds: Sequence[str] = tuple(NOISE_BANDS)) -> List[str]:
    rng = np.random.default_rng(seed)
    paths = []
    for kind in kinds:
        path = os.path.join(noise_dir, kind + '.wav')
        write_wav(path, filtered_noise(kind, int(seconds * SAMPLE_RATE), rng))
        paths.append(path)
    return paths


def write_rir_pool(rir_dir: str, seed: int = 0, count: int = 2, length: int = 400) -> List[str]:
    """ exponentially decaying noise bursts with a direct path at sample 0 """
    rng = np.random.default_rng(seed)
    paths = []
    for i in range(count):
        rir = 0.05 * rng.standard_normal(length) * np.exp(-np.arange(length) / (60.0 + 40 * i))
        rir[0] = 1.0
        path = os.path.join(rir_dir, 'rir{}.wav'.format(i))
        write_wav(path, Waveform(rir / np.max(np.abs(rir)) * 0.9, SAMPLE_RATE))
        paths.append(path)
    return paths


def merge_datasets(out_dir: str, parts: Dict[str, Manifest]) -> Manifest:
    """
    Copies several simulated datasets into one directory. The files of part p are renamed to <p><name>.wav so that
    the record ids stay unique.
    """
    records = []
    for prefix, manifest in parts.items():
        for record in manifest:
            d = record.to_dict()
            for key in ('noisy', 'clean', 'enroll', 'noise', 'interferer'):
                if d.get(key) is None: continue
                track, name = d[key].split('/')
                target = os.path.join(out_dir, track, prefix + name)
                os.makedirs(os.path.dirname(target), exist_ok=True)
                shutil.copyfile(manifest.resolve(d[key]), target)
                d[key] = track + '/' + prefix + name
            records.append(MixtureRecord.from_dict(d))
    merged = Manifest(records, out_dir)
    save_manifest(merged, os.path.join(out_dir, 'manifest.jsonl'))
    return merged


def score_manifest(params: ModelParams, manifest: Manifest, dac_config: DacConfig = None,
                   config: StftConfig = StftConfig()) -> List[float]:
    """ SISNR of the enhanced output of every record """
    scores = []
    for record in manifest:
        noisy = read_wav(manifest.resolve(record.noisy))
        enroll = read_wav(manifest.resolve(record.enroll))
        if dac_config is not None:
            enroll = dac(enroll, noisy, dac_config)
        scores.append(score_sample(enhance(noisy, enroll, params, config), read_wav(manifest.resolve(record.clean))))
    return scores


def tree_bytes(root: str) -> Dict[str, bytes]:
    """ relative path -> content of every file below root """
    content = {}
    for directory, _, names in os.walk(root):
        for name in names:
            path = os.path.join(directory, name)
            with open(path, 'rb') as f:
                content[os.path.relpath(path, root)] = f.read()
    return content
