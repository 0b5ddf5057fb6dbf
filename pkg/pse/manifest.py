"""
This module contains the classes and functions for reading and writing experiment manifests.

A manifest is a UTF-8 text file with one json object per line. Every line describes one MixtureRecord.
Required keys are noisy, clean, enroll and condition. All paths are relative to the directory of the manifest.
Keys that this module does not know are kept and written back unchanged.

Example line:
{"noisy": "noisy/0001.wav", "clean": "clean/0001.wav", "enroll": "enroll/0001.wav", "condition": "nmix",
 "snr_db": 3.2, "seed": 4711}
"""
import json
import logging
import os
from dataclasses import dataclass, field
from enum import Enum
from typing import List, Optional, Iterator

from pse import ManifestParseException, UnknownCondition
from pse.helper.path_helper import resolve_path

logger = logging.getLogger(__name__)

REQUIRED_KEYS = ('noisy', 'clean', 'enroll', 'condition')
OPTIONAL_KEYS = ('snr_db', 'seed', 'noise', 'interferer')


class Condition(Enum):
    """ Enum of the three PSE conditions """
    NOISE = 'noise'  # target speaker + background noise
    MIX = 'mix'  # target speaker + interfering speaker
    NMIX = 'nmix'  # target speaker + interfering speaker + background noise

    @staticmethod
    def from_tag(tag: str, line_number: int = 0) -> 'Condition':
        try:
            return Condition(str(tag))
        except ValueError:
            raise UnknownCondition(line_number, tag)


@dataclass
class MixtureRecord:
    """
    Class representing one simulated example of a manifest.

    :param noisy: path of the noisy input (relative to the manifest directory)
    :param clean: path of the clean target
    :param enroll: path of the enrollment utterance of the target speaker
    :param condition: noise, mix or nmix
    :param snr_db: SNR used for mixing
    :param seed: seed the record was generated with
    :param noise: optional path of the true background noise component (used for DAC(UB))
    :param interferer: optional path of the interfering utterance (mix, nmix)
    :param extra: all other keys of the json line, in their original order
    """
    noisy: str
    clean: str
    enroll: str
    condition: Condition
    snr_db: Optional[float] = None
    seed: Optional[int] = None
    noise: Optional[str] = None
    interferer: Optional[str] = None
    extra: dict = field(default_factory=dict)

    @property
    def record_id(self) -> str:
        """ identifier of the record, the file name of the noisy input without extension """
        return os.path.splitext(os.path.basename(self.noisy.replace('\\', '/')))[0]

    def to_dict(self) -> dict:
        record = {
            'noisy': self.noisy,
            'clean': self.clean,
            'enroll': self.enroll,
            'condition': self.condition.value,
        }
        if self.snr_db is not None: record['snr_db'] = self.snr_db
        if self.seed is not None: record['seed'] = self.seed
        if self.noise is not None: record['noise'] = self.noise
        if self.interferer is not None: record['interferer'] = self.interferer
        record.update(self.extra)
        return record

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False)

    @staticmethod
    def from_dict(obj: dict, line_number: int = 0) -> 'MixtureRecord':
        if not isinstance(obj, dict):
            raise ManifestParseException(line_number, "expected a json object, got {}".format(type(obj).__name__))
        missing = [key for key in REQUIRED_KEYS if key not in obj]
        if len(missing) > 0:
            raise ManifestParseException(line_number, "missing required key(s) {}".format(', '.join(missing)))

        snr_db = obj.get('snr_db')
        seed = obj.get('seed')
        try:
            snr_db = None if snr_db is None else float(snr_db)
            seed = None if seed is None else int(seed)
        except (TypeError, ValueError) as e:
            raise ManifestParseException(line_number, "invalid snr_db or seed: {}".format(e))

        extra = {key: value for key, value in obj.items() if key not in REQUIRED_KEYS + OPTIONAL_KEYS}
        return MixtureRecord(noisy=str(obj['noisy']), clean=str(obj['clean']), enroll=str(obj['enroll']),
                             condition=Condition.from_tag(obj['condition'], line_number),
                             snr_db=snr_db, seed=seed,
                             noise=None if obj.get('noise') is None else str(obj['noise']),
                             interferer=None if obj.get('interferer') is None else str(obj['interferer']),
                             extra=extra)


class Manifest:
    """
    Ordered collection of MixtureRecords. The base_dir is the directory all record paths are relative to.
    """

    def __init__(self, records: List[MixtureRecord] = None, base_dir: str = '.') -> None:
        self.records: List[MixtureRecord] = list(records) if records else []
        self.base_dir: str = str(base_dir)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self) -> Iterator[MixtureRecord]:
        return iter(self.records)

    def __getitem__(self, item):
        if isinstance(item, slice):
            return Manifest(self.records[item], self.base_dir)
        return self.records[item]

    def __eq__(self, other) -> bool:
        # the base directory is a property of where the file lives, not of its content
        return isinstance(other, Manifest) and self.records == other.records

    def __str__(self) -> str:
        return "Manifest with {} records ({})".format(len(self.records), ', '.join(
            '{} {}'.format(n, c.value) for c, n in self.condition_counts().items()))

    def resolve(self, relative_path: str) -> str:
        """ absolute path of a file referenced by a record """
        return resolve_path(self.base_dir, relative_path)

    def condition_counts(self) -> dict:
        counts = {condition: 0 for condition in Condition}
        for record in self.records:
            counts[record.condition] += 1
        return counts

    def filter(self, condition: Condition) -> 'Manifest':
        return Manifest([r for r in self.records if r.condition == condition], self.base_dir)


def load_manifest(path: str) -> Manifest:
    """
    Parses a manifest file

    :param path: path to the manifest (one json object per line, empty lines are ignored)
    :raises ManifestParseException: if a line is malformed (the exception names the line number)
    :return: Manifest with the records in file order
    """
    records: List[MixtureRecord] = []
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            if len(line.strip()) == 0: continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestParseException(line_number, "malformed json ({})".format(e.msg))
            records.append(MixtureRecord.from_dict(obj, line_number))
    logger.debug("Loaded {} records from {}".format(len(records), path))
    return Manifest(records, os.path.dirname(os.path.abspath(path)))


def save_manifest(manifest: Manifest, path: str) -> None:
    """
    Writes a manifest, one record per line in record order

    :param manifest:
    :param path: target file, missing parent directories are created
    """
    parent = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(parent):
        os.makedirs(parent)
    with open(path, 'w', encoding='utf-8', newline='\n') as f:
        for record in manifest.records:
            f.write(record.to_json() + '\n')
