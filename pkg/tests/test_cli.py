"""
This unittest runs the command line interface end to end on a tiny synthetic dataset
"""
import json
import logging
import os
import sys
import tempfile
import unittest

import numpy as np

from pse.audio import read_wav
from pse.cli import main, EXIT_OK, EXIT_PARTIAL, EXIT_INVALID
from pse.dsp import StftConfig
from pse.manifest import load_manifest, Condition
from pse.model import load_checkpoint, enhance
from pse.prep import DacConfig, dac, spectral_subtract, SS_ALPHA, SS_BETA
from pse.helper.config import SNAPSHOT_NAME
from tests.utils import write_speech_pool, write_noise_pool, tree_bytes

logging.basicConfig(stream=sys.stdout, level=logging.INFO)


class CliTest(unittest.TestCase):

    @classmethod
    def setUpClass(cls) -> None:
        cls.tmp = tempfile.TemporaryDirectory()
        root = cls.tmp.name
        cls.clean_dir = os.path.join(root, 'pool', 'clean')
        cls.noise_dir = os.path.join(root, 'pool', 'noise')
        write_speech_pool(cls.clean_dir, seed=2, n_utterances=3, seconds=0.5)
        write_noise_pool(cls.noise_dir, seed=2, seconds=1.0)
        for name, seed in (('train', 1), ('val', 2)):
            code = main(['simulate', '--clean-dir', cls.clean_dir, '--noise-dir', cls.noise_dir, '--counts', '4,2,2',
                         '--snr=-5:20', '--seconds', '0.5', '--seed', str(seed), '--out', os.path.join(root, name)])
            assert code == EXIT_OK
        cls.model_dir = os.path.join(root, 'model')
        code = main(['train', '--manifest', os.path.join(root, 'train', 'manifest.jsonl'),
                     '--val-manifest', os.path.join(root, 'val', 'manifest.jsonl'), '--stage', 'tf', '--epochs', '1',
                     '--batch-size', '4', '--emb-dim', '4', '--hidden', '8', '--out', cls.model_dir])
        assert code == EXIT_OK

    @classmethod
    def tearDownClass(cls) -> None:
        cls.tmp.cleanup()

    def path(self, *parts) -> str:
        return os.path.join(self.tmp.name, *parts)

    def test_invalid_invocations(self):
        self.assertEqual(main([]), EXIT_INVALID)
        self.assertEqual(main(['frobnicate']), EXIT_INVALID)
        self.assertEqual(main(['simulate', '--out', self.path('no_clean')]), EXIT_INVALID)
        self.assertEqual(main(['simulate', '--clean-dir', self.clean_dir, '--counts', '1,2',
                               '--out', self.path('bad_counts')]), EXIT_INVALID)
        self.assertEqual(main(['prep', '--method', 'dac', '--noisy', self.path('train', 'noisy', '0000.wav'),
                               '--out', self.path('prep', 'x.wav')]), EXIT_INVALID)

    def test_simulate(self):
        manifest = load_manifest(self.path('train', 'manifest.jsonl'))
        counts = manifest.condition_counts()
        self.assertEqual([counts[Condition.NOISE], counts[Condition.MIX], counts[Condition.NMIX]], [4, 2, 2])
        with open(self.path('train', SNAPSHOT_NAME), 'r', encoding='utf-8') as f:
            snapshot = json.load(f)
        self.assertEqual(snapshot['command'], 'simulate')
        self.assertEqual(snapshot['sections']['simulate']['snr_range'], [-5.0, 20.0])

    def test_simulate_deterministic(self):
        outputs = []
        for name in ('det_a', 'det_b'):
            code = main(['simulate', '--clean-dir', self.clean_dir, '--noise-dir', self.noise_dir, '--counts', '2,1,1',
                         '--seconds', '0.5', '--seed', '5', '--out', self.path(name)])
            self.assertEqual(code, EXIT_OK)
            files = tree_bytes(self.path(name))
            # the snapshot names the output directory
            files.pop(SNAPSHOT_NAME)
            outputs.append(files)
        self.assertEqual(outputs[0], outputs[1])

    def test_train_outputs(self):
        for name in ('history.csv', 'stage1.json', 'model.json', SNAPSHOT_NAME):
            self.assertTrue(os.path.isfile(os.path.join(self.model_dir, name)), msg=name)
        self.assertFalse(os.path.isfile(os.path.join(self.model_dir, 'aft_weights.csv')))

    def test_train_deterministic(self):
        outputs = []
        for name in ('train_a', 'train_b'):
            code = main(['train', '--manifest', self.path('train', 'manifest.jsonl'),
                         '--val-manifest', self.path('val', 'manifest.jsonl'), '--stage', 'tf', '--epochs', '1',
                         '--batch-size', '4', '--emb-dim', '4', '--hidden', '8', '--seed', '7',
                         '--out', self.path(name)])
            self.assertEqual(code, EXIT_OK)
            files = tree_bytes(self.path(name))
            files.pop(SNAPSHOT_NAME)
            outputs.append(files)
        self.assertEqual(sorted(outputs[0]), ['history.csv', 'model.json', 'stage1.json'])
        self.assertEqual(outputs[0], outputs[1])

    def test_config_file(self):
        config = self.path('bad_config.json')
        with open(config, 'w', encoding='utf-8') as f:
            json.dump({'train': {'learning_rate': 0.1}}, f)
        code = main(['train', '--config', config, '--manifest', self.path('train', 'manifest.jsonl'),
                     '--val-manifest', self.path('val', 'manifest.jsonl'), '--out', self.path('bad_train')])
        self.assertEqual(code, EXIT_INVALID)

    def test_enhance_and_eval(self):
        manifest_path = self.path('val', 'manifest.jsonl')
        checkpoint = os.path.join(self.model_dir, 'model.json')
        for method in ('none', 'dac', 'dac-ub', 'ss', 'lsa'):
            out = self.path('enhanced', method)
            code = main(['enhance', '--checkpoint', checkpoint, '--manifest', manifest_path, '--prep', method,
                         '--out', out])
            self.assertEqual(code, EXIT_OK, msg=method)
            self.assertEqual(len([n for n in os.listdir(out) if n.endswith('.wav')]), 8, msg=method)

        code = main(['eval', '--manifest', manifest_path, '--enhanced-dir', self.path('enhanced', 'none'),
                     '--out', self.path('eval', 'none')])
        self.assertEqual(code, EXIT_OK)
        self.assertTrue(os.path.isfile(self.path('eval', 'none', 'per_sample.csv')))

        code = main(['eval', '--manifest', manifest_path, '--enhanced-dir', self.path('enhanced', 'dac'),
                     '--baseline-scores', self.path('eval', 'none', 'per_sample.csv'), '--threshold', '100',
                     '--out', self.path('eval', 'dac')])
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(load_manifest(self.path('eval', 'dac', 'hard_subset.jsonl'))), 8)
        self.assertTrue(os.path.isfile(self.path('eval', 'dac', 'hard_summary.json')))

        os.remove(self.path('enhanced', 'lsa', '0000.wav'))
        code = main(['eval', '--manifest', manifest_path, '--enhanced-dir', self.path('enhanced', 'lsa'),
                     '--out', self.path('eval', 'lsa')])
        self.assertEqual(code, EXIT_PARTIAL)
        with open(self.path('eval', 'lsa', 'summary.json'), 'r', encoding='utf-8') as f:
            self.assertEqual(json.load(f)['missing'], ['0000'])

    def test_eval_without_enhanced_files(self):
        manifest = load_manifest(self.path('val', 'manifest.jsonl'))
        os.makedirs(self.path('enhanced', 'empty'), exist_ok=True)
        code = main(['eval', '--manifest', self.path('val', 'manifest.jsonl'),
                     '--enhanced-dir', self.path('enhanced', 'empty'), '--out', self.path('eval', 'empty')])
        self.assertEqual(code, EXIT_PARTIAL)
        with open(self.path('eval', 'empty', 'summary.json'), 'r', encoding='utf-8') as f:
            summary = json.load(f)
        self.assertEqual(summary['count'], 0)
        self.assertEqual(summary['missing'], [r.record_id for r in manifest])

    def test_enhance_prep_paths(self):
        """ SS only changes the model input, DAC and DAC(UB) only change the enrollment """
        manifest = load_manifest(self.path('val', 'manifest.jsonl'))
        record = manifest[0]
        self.assertEqual(record.condition, Condition.NOISE)
        noisy = read_wav(manifest.resolve(record.noisy))
        enroll = read_wav(manifest.resolve(record.enroll))
        noise = read_wav(manifest.resolve(record.noise))
        params = load_checkpoint(os.path.join(self.model_dir, 'model.json'))
        config = StftConfig()
        dac_config = DacConfig(4, 2, config.hop)
        expected = {
            'none': enhance(noisy, enroll, params, config),
            'ss': enhance(spectral_subtract(noisy, 4, 0, SS_ALPHA, SS_BETA, config), enroll, params, config),
            'dac': enhance(noisy, dac(enroll, noisy, dac_config), params, config),
            'dac-ub': enhance(noisy, dac(enroll, noisy, dac_config, true_noise=noise), params, config),
        }
        for i, (method, waveform) in enumerate(expected.items()):
            out = self.path('enhanced_paths', method)
            code = main(['enhance', '--checkpoint', os.path.join(self.model_dir, 'model.json'),
                         '--manifest', self.path('val', 'manifest.jsonl'), '--prep', method, '--out', out])
            self.assertEqual(code, EXIT_OK, msg=f'Failed at test elem {i}')
            written = read_wav(os.path.join(out, record.record_id + '.wav'))
            reference = np.clip(waveform.samples, -1.0, 32767 / 32768)
            self.assertEqual(len(written), len(noisy), msg=f'Failed at test elem {i}')
            self.assertTrue(np.allclose(written.samples, reference, rtol=0.0, atol=1.0 / 32768),
                            msg=f'Failed at test elem {i}')
        for method in ('ss', 'dac', 'dac-ub'):
            self.assertFalse(np.array_equal(expected[method].samples, expected['none'].samples), msg=method)

    def test_enhance_wrong_stft(self):
        config = self.path('wide_stft.json')
        with open(config, 'w', encoding='utf-8') as f:
            json.dump({'stft': {'fft_size': 256, 'hop': 64}}, f)
        code = main(['enhance', '--config', config, '--checkpoint', os.path.join(self.model_dir, 'model.json'),
                     '--manifest', self.path('val', 'manifest.jsonl'), '--out', self.path('enhanced', 'wide')])
        self.assertEqual(code, EXIT_INVALID)

    def test_prep(self):
        noisy = self.path('train', 'noisy', '0000.wav')
        for method in ('ss', 'lsa'):
            out = self.path('prep', method + '.wav')
            self.assertEqual(main(['prep', '--method', method, '--noisy', noisy, '--out', out]), EXIT_OK)
            self.assertTrue(os.path.isfile(out))
        out = self.path('prep', 'dac.wav')
        code = main(['prep', '--method', 'dac', '--j', '2', '--k', '1', '--noisy', noisy,
                     '--enroll', self.path('train', 'enroll', '0000.wav'), '--out', out])
        self.assertEqual(code, EXIT_OK)
        with open(self.path('prep', SNAPSHOT_NAME), 'r', encoding='utf-8') as f:
            snapshot = json.load(f)
        self.assertEqual(snapshot['sections']['prep']['j_frames'], 2)


if __name__ == '__main__':
    unittest.main()
