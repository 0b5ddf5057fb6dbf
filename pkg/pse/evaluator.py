"""
This module contains the evaluation of enhanced outputs.

Every enhanced file is scored with the SISNR against its clean reference. From the scores the module computes
mean SISNR values (overall and per condition), hard sample rates and a histogram of the SNR distribution.

Hard sample rate:
HSR_t is the fraction of enhanced samples with a SISNR lower than t dB (strictly lower).

Hard subset:
The records a baseline system enhanced to less than 10 dB. Comparing models on that subset shows how they handle
the hard samples.
"""
import csv
import json
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

from pse import EvaluationException, NothingScored
from pse.audio import Waveform, read_wav
from pse.losses import neg_sisnr
from pse.manifest import Manifest, Condition

logger = logging.getLogger(__name__)

HSR_THRESHOLDS: Tuple[float, ...] = (0.0, 5.0, 10.0)
HARD_THRESHOLD: float = 10.0
DEFAULT_HOP: int = 128


@dataclass
class SampleScore:
    record_id: str
    condition: Condition
    sisnr_db: float


@dataclass
class Histogram:
    """ SNR distribution with 1 dB bins, bin i covers [edges[i], edges[i + 1]) """
    edges: np.ndarray
    counts: np.ndarray

    def __len__(self) -> int:
        return len(self.counts)

    def total(self) -> int:
        return int(np.sum(self.counts))

    def to_rows(self) -> List[list]:
        return [[float(self.edges[i]), float(self.edges[i + 1]), int(self.counts[i])] for i in range(len(self))]


@dataclass
class EvalReport:
    """
    :param per_sample: scores in manifest order
    :param aggregates: mean SISNR, key 'overall' plus one key per condition present
    :param hsr: threshold -> rate
    :param histogram: 1 dB histogram of all scores
    :param missing: record ids without enhanced file
    """
    per_sample: List[SampleScore]
    aggregates: Dict[str, float]
    hsr: Dict[float, float]
    histogram: Histogram
    missing: List[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.per_sample)

    def scores(self) -> Dict[str, float]:
        return {s.record_id: s.sisnr_db for s in self.per_sample}

    def to_dict(self) -> dict:
        return {
            'count': len(self.per_sample),
            'aggregates': self.aggregates,
            'hsr': {'HSR{:g}'.format(t): rate for t, rate in self.hsr.items()},
            'missing': list(self.missing),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def summary_table(self) -> str:
        lines = ['{:<10} {:>8} {:>12}'.format('subset', 'count', 'SISNR [dB]')]
        counts = {'overall': len(self.per_sample)}
        for s in self.per_sample:
            counts[s.condition.value] = counts.get(s.condition.value, 0) + 1
        for key, value in self.aggregates.items():
            lines.append('{:<10} {:>8} {:>12.2f}'.format(key, counts.get(key, 0), value))
        lines.append(', '.join('HSR{:g} {:.2f}%'.format(t, 100 * rate) for t, rate in self.hsr.items()))
        if len(self.missing) > 0:
            lines.append('{} enhanced file(s) missing'.format(len(self.missing)))
        return '\n'.join(lines)


def score_sample(enhanced: Waveform, clean: Waveform, hop: int = DEFAULT_HOP) -> float:
    """
    SISNR of an enhanced signal in dB (limited to +-60 dB)

    :param enhanced:
    :param clean: reference
    :param hop: length differences smaller than hop are truncated (with a warning)
    :raises EvaluationException: if the lengths differ by hop samples or more
    :return: -neg_sisnr(enhanced, clean)
    """
    if len(enhanced) != len(clean):
        diff = abs(len(enhanced) - len(clean))
        if diff >= hop:
            raise EvaluationException("Enhanced signal has {} samples but the reference has {}".format(
                len(enhanced), len(clean)))
        logger.warning("Truncating signals of {} and {} samples to a common length".format(len(enhanced), len(clean)))
        n = min(len(enhanced), len(clean))
        enhanced = enhanced.with_samples(enhanced.samples[:n])
        clean = clean.with_samples(clean.samples[:n])
    return -neg_sisnr(enhanced, clean)[0]


def hsr(scores: Sequence[float], threshold: float) -> float:
    """
    Hard sample rate: fraction of scores strictly lower than threshold

    :raises EvaluationException: if scores is empty
    """
    if len(scores) == 0:
        raise EvaluationException("Can not compute a hard sample rate of zero scores")
    return sum(1 for s in scores if s < threshold) / len(scores)


def histogram(scores: Sequence[float], bin_width: float = 1.0) -> Histogram:
    """ histogram with bin edges floor(min), floor(min) + 1, ..., floor(max) + 1 """
    if len(scores) == 0:
        raise EvaluationException("Can not compute a histogram of zero scores")
    values = np.asarray(scores, dtype=np.float64)
    lo = math.floor(values.min() / bin_width) * bin_width
    n_bins = int(math.floor(values.max() / bin_width) - math.floor(values.min() / bin_width)) + 1
    edges = lo + bin_width * np.arange(n_bins + 1)
    counts = np.zeros(n_bins, dtype=int)
    for v in values:
        counts[min(int(math.floor((v - lo) / bin_width)), n_bins - 1)] += 1
    return Histogram(edges, counts)


def hsr_from_histogram(hist: Histogram, threshold: float) -> float:
    """
    Hard sample rate recomputed from a histogram. The threshold has to be a bin edge (or outside of the edges).

    :raises EvaluationException: if the threshold falls inside of a bin
    """
    if hist.total() == 0:
        raise EvaluationException("Can not compute a hard sample rate of an empty histogram")
    if threshold <= hist.edges[0]:
        return 0.0
    if threshold >= hist.edges[-1]:
        return 1.0
    matches = np.flatnonzero(np.isclose(hist.edges, threshold, rtol=0.0, atol=1e-9))
    if len(matches) == 0:
        raise EvaluationException("Threshold {} is not a bin edge of the histogram".format(threshold))
    return float(np.sum(hist.counts[:matches[0]])) / hist.total()


def _mean(values: Sequence[float]) -> float:
    # sorted before the reduction, the result does not depend on the sample order
    return math.fsum(sorted(values)) / len(values)


def build_report(per_sample: List[SampleScore], missing: List[str] = None,
                 thresholds: Sequence[float] = HSR_THRESHOLDS) -> EvalReport:
    if len(per_sample) == 0:
        raise EvaluationException("No sample could be scored")
    scores = [s.sisnr_db for s in per_sample]
    aggregates = {'overall': _mean(scores)}
    for condition in Condition:
        subset = [s.sisnr_db for s in per_sample if s.condition == condition]
        if len(subset) > 0:
            aggregates[condition.value] = _mean(subset)
    return EvalReport(per_sample, aggregates, {float(t): hsr(scores, t) for t in thresholds}, histogram(scores),
                      list(missing or []))


def enhanced_path(enhanced_dir: str, record_id: str) -> str:
    return os.path.join(enhanced_dir, record_id + '.wav')


def condition_report(manifest: Manifest, enhanced_dir: str, thresholds: Sequence[float] = HSR_THRESHOLDS,
                     workers: int = 1) -> EvalReport:
    """
    Scores all enhanced files of a manifest. The enhanced file of a record is <enhanced_dir>/<record_id>.wav.
    Records without enhanced file are listed in report.missing and excluded from all numbers.

    :raises NothingScored: if no record has an enhanced file
    :raises EvaluationException: if no record could be scored
    """
    def score(record) -> float:
        return score_sample(read_wav(enhanced_path(enhanced_dir, record.record_id)),
                            read_wav(manifest.resolve(record.clean)))

    present, missing = [], []
    for record in manifest:
        if os.path.isfile(enhanced_path(enhanced_dir, record.record_id)):
            present.append(record)
        else:
            logger.warning("Missing enhanced file for record {}".format(record.record_id))
            missing.append(record.record_id)
    if len(present) == 0 and len(missing) > 0:
        raise NothingScored(missing)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            values = list(executor.map(score, present))
    else:
        values = [score(record) for record in present]
    per_sample = [SampleScore(r.record_id, r.condition, v) for r, v in zip(present, values)]
    return build_report(per_sample, missing, thresholds)


def hard_subset(scores_baseline: Dict[str, float], manifest: Manifest, threshold: float = HARD_THRESHOLD) -> Manifest:
    """
    Records whose baseline score is lower than threshold, in manifest order

    :param scores_baseline: record id -> SISNR of the baseline
    :raises EvaluationException: if a record of the manifest has no baseline score
    """
    uncovered = [r.record_id for r in manifest if r.record_id not in scores_baseline]
    if len(uncovered) > 0:
        raise EvaluationException("Baseline scores are missing for {} record(s): {}".format(
            len(uncovered), ', '.join(uncovered[:10])))
    return Manifest([r for r in manifest if scores_baseline[r.record_id] < threshold], manifest.base_dir)


def write_report(report: EvalReport, out_dir: str, prefix: str = '') -> None:
    """ writes <prefix>per_sample.csv, <prefix>summary.json and <prefix>histogram.csv """
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    with open(os.path.join(out_dir, prefix + 'per_sample.csv'), 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['record_id', 'condition', 'sisnr_db'])
        for s in report.per_sample:
            writer.writerow([s.record_id, s.condition.value, repr(float(s.sisnr_db))])
    with open(os.path.join(out_dir, prefix + 'summary.json'), 'w', encoding='utf-8', newline='\n') as f:
        f.write(report.to_json() + '\n')
    with open(os.path.join(out_dir, prefix + 'histogram.csv'), 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['bin_lo', 'bin_hi', 'count'])
        writer.writerows(report.histogram.to_rows())


def write_missing_summary(missing: List[str], out_dir: str) -> None:
    """ summary.json of a run in which not a single enhanced file was found """
    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)
    summary = {'count': 0, 'aggregates': {}, 'hsr': {}, 'missing': list(missing)}
    with open(os.path.join(out_dir, 'summary.json'), 'w', encoding='utf-8', newline='\n') as f:
        f.write(json.dumps(summary, indent=2) + '\n')


def load_scores_csv(path: str) -> Dict[str, float]:
    """ reads a per_sample.csv written by write_report (record id -> sisnr_db) """
    if not os.path.isfile(path):
        raise EvaluationException("Could not find score file {}".format(path))
    scores = {}
    with open(path, 'r', newline='') as f:
        for row in csv.DictReader(f):
            try:
                scores[row['record_id']] = float(row['sisnr_db'])
            except (KeyError, TypeError, ValueError) as e:
                raise EvaluationException("Malformed score file {}: {}".format(path, e))
    return scores
