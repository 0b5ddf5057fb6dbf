"""
This unittest tests parsing and writing of manifests
"""
import json
import logging
import os
import sys
import tempfile
import unittest

from pse import ManifestParseException, UnknownCondition
from pse.manifest import load_manifest, save_manifest, Manifest, MixtureRecord, Condition

logging.basicConfig(stream=sys.stdout, level=logging.INFO)


def synthetic_records(n: int) -> list:
    conditions = [Condition.NOISE, Condition.MIX, Condition.NMIX]
    records = []
    for i in range(n):
        records.append(MixtureRecord(
            noisy='noisy/{:04d}.wav'.format(i), clean='clean/{:04d}.wav'.format(i),
            enroll='enroll/{:04d}.wav'.format(i), condition=conditions[i % 3],
            snr_db=-5 + 0.5 * i, seed=1000 + i,
            noise='noise/{:04d}.wav'.format(i) if i % 3 != 1 else None,
            extra={'speaker': 'spk{:02d}'.format(i % 7), 'note': {'nested': [i, i + 1]}}))
    return records


class ManifestTest(unittest.TestCase):

    def setUp(self) -> None:
        self.tmp = tempfile.TemporaryDirectory()

    def tearDown(self) -> None:
        self.tmp.cleanup()

    def write(self, name: str, text: str) -> str:
        path = os.path.join(self.tmp.name, name)
        with open(path, 'w', encoding='utf-8') as f:
            f.write(text)
        return path

    def test_empty_file(self):
        manifest = load_manifest(self.write('empty.jsonl', ''))
        self.assertEqual(len(manifest), 0)

    def test_condition_tag(self):
        line = '{"noisy": "n/1.wav", "clean": "c/1.wav", "enroll": "e/1.wav", "condition": "nmix", "snr_db": 3.2}\n'
        manifest = load_manifest(self.write('one.jsonl', line))
        self.assertEqual(manifest[0].condition, Condition.NMIX)
        self.assertEqual(manifest[0].snr_db, 3.2)
        self.assertEqual(manifest[0].record_id, '1')
        self.assertEqual(manifest.resolve(manifest[0].noisy), os.path.join(self.tmp.name, 'n', '1.wav'))

    def test_round_trip(self):
        manifest = Manifest(synthetic_records(50), self.tmp.name)
        path = os.path.join(self.tmp.name, 'sub', 'manifest.jsonl')
        save_manifest(manifest, path)
        loaded = load_manifest(path)
        self.assertEqual(loaded, manifest)
        self.assertEqual(loaded[7].extra['note'], {'nested': [7, 8]})

    def test_unknown_keys_preserved(self):
        line = '{"noisy": "a.wav", "clean": "b.wav", "enroll": "c.wav", "condition": "mix", "room": "r1", "z": 1}'
        path = self.write('m.jsonl', line + '\n')
        manifest = load_manifest(path)
        save_manifest(manifest, path)
        with open(path, 'r', encoding='utf-8') as f:
            rewritten = json.loads(f.readline())
        self.assertEqual(rewritten['room'], 'r1')
        self.assertEqual(rewritten['z'], 1)
        self.assertEqual(list(rewritten.keys()), ['noisy', 'clean', 'enroll', 'condition', 'room', 'z'])

    def test_errors(self):
        good = '{"noisy": "a.wav", "clean": "b.wav", "enroll": "c.wav", "condition": "noise"}\n'
        with self.assertRaises(ManifestParseException) as ctx:
            load_manifest(self.write('bad.jsonl', good + '{"noisy": \n'))
        self.assertEqual(ctx.exception.line_number, 2)
        self.assertIn('line 2', str(ctx.exception))

        with self.assertRaises(UnknownCondition) as ctx:
            load_manifest(self.write('cond.jsonl', good + good.replace('noise', 'babble')))
        self.assertEqual(ctx.exception.line_number, 2)

        with self.assertRaises(ManifestParseException) as ctx:
            load_manifest(self.write('keys.jsonl', '{"noisy": "a.wav", "condition": "mix"}\n'))
        self.assertIn('clean', str(ctx.exception))

    def test_filter_and_counts(self):
        manifest = Manifest(synthetic_records(9))
        counts = manifest.condition_counts()
        self.assertEqual([counts[c] for c in Condition], [3, 3, 3])
        self.assertEqual(len(manifest.filter(Condition.MIX)), 3)
        self.assertEqual(len(manifest[2:5]), 3)


if __name__ == '__main__':
    unittest.main()
