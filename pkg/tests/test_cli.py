from advseg.cli import build_parser, main
from advseg.data import load_mask, load_volume, save_mask

import contextlib
import csv
import glob
import io
import os
import os.path
import shutil
import tempfile
import numpy as np

from unittest import TestCase


TINY = ['--size', '16', '--depth', '2', '--epochs', '1', '--batch-size', '2',
        '--base-channels', '2', '--seed', '3']


def run(argv):
    "Run the command quietly, returning (exit code, stdout)"
    out = io.StringIO()
    with contextlib.redirect_stdout(out):
        code = main(argv)
    return code, out.getvalue()


def read_bytes(path):
    with open(path, 'rb') as fd:
        return fd.read()


class CliTestCase(TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()
        self.config = self.path('run.cfg')
        with open(self.config, 'w') as fd:
            fd.write('disc_channels = 4, 8, 16, 32\n')

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def path(self, *names):
        return os.path.join(self.tmp, *names)

    def phantoms(self, name='cases', count=3):
        code, _ = run(['phantom', '--count', str(count), '--size', '16', '--depth', '2',
                       '--seed', '1', '--out', self.path(name)])
        self.assertEqual(code, 0)
        return self.path(name)


class build_parser_Test(TestCase):

    def test_subcommands(self):
        parser = build_parser()
        for command in ['train', 'predict', 'evaluate', 'gradcheck', 'phantom', 'crossval']:
            self.assertEqual(parser.parse_args([command]).command, command)

    def test_flag_names(self):
        "Flags should land on configuration keys"
        args = build_parser().parse_args(['train', '--lr', '0.01', '--lambda-adv', '0', '--baseline'])
        self.assertEqual(args.learning_rate, 0.01)
        self.assertEqual(args.lambda_adv, 0.0)
        self.assertTrue(args.baseline)


class phantom_Test(CliTestCase):

    def test_deterministic(self):
        "One seed should write byte-identical cases"
        a = self.phantoms('a')
        b = self.phantoms('b')
        names = sorted(os.listdir(a))
        self.assertEqual(names, ['phantom_000.vol', 'phantom_001.vol', 'phantom_002.vol'])
        self.assertEqual(names, sorted(os.listdir(b)))
        for name in names:
            self.assertEqual(read_bytes(os.path.join(a, name)), read_bytes(os.path.join(b, name)))
        case = load_volume(os.path.join(a, names[0]))
        self.assertEqual(case.shape, (2, 16, 16))

    def test_bad_size(self):
        "A size that is not a multiple of 16 is a configuration error"
        code, _ = run(['phantom', '--count', '1', '--size', '100', '--out', self.path('bad')])
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(self.path('bad')))


class train_Test(CliTestCase):

    def train(self, name):
        code, stdout = run(['train', '--phantom', '4', '--config', self.config,
                            '--out', self.path(name)] + TINY)
        self.assertEqual(code, 0)
        return stdout

    def test_artifacts(self):
        "Training should write both checkpoints and the history"
        stdout = self.train('run')
        self.assertEqual(sorted(os.listdir(self.path('run'))),
                         ['best.ckpt', 'final.ckpt', 'history.csv'])
        self.assertIn('best epoch 1', stdout)

    def test_reproducible(self):
        "Two runs with one seed should write identical histories"
        self.train('a')
        self.train('b')
        self.assertEqual(read_bytes(self.path('a', 'history.csv')),
                         read_bytes(self.path('b', 'history.csv')))
        self.assertEqual(read_bytes(self.path('a', 'final.ckpt')),
                         read_bytes(self.path('b', 'final.ckpt')))

    def test_lambda_zero(self):
        "With --lambda-adv 0 the total loss column should equal the segmentation loss"
        code, _ = run(['train', '--phantom', '4', '--config', self.config, '--lambda-adv', '0',
                       '--epochs', '2', '--out', self.path('run')] + TINY[:4] + TINY[6:])
        self.assertEqual(code, 0)
        with open(self.path('run', 'history.csv')) as fd:
            rows = list(csv.DictReader(fd))
        self.assertEqual(len(rows), 2)
        for row in rows:
            self.assertEqual(row['chi'], row['chi_seg'])

    def test_missing_data(self):
        "A missing data directory is a data error and writes nothing"
        code, _ = run(['train', '--data', self.path('absent'), '--out', self.path('run')])
        self.assertEqual(code, 3)
        self.assertFalse(os.path.exists(self.path('run')))

    def test_no_source(self):
        code, _ = run(['train', '--out', self.path('run')])
        self.assertEqual(code, 2)


class predict_Test(CliTestCase):

    def test_predict(self):
        "Predictions should have the case geometry"
        cases = self.phantoms()
        code, _ = run(['train', '--data', cases, '--config', self.config,
                       '--out', self.path('run')] + TINY)
        self.assertEqual(code, 0)
        code, _ = run(['predict', '--checkpoint', self.path('run', 'best.ckpt'),
                       '--data', cases, '--out', self.path('pred')])
        self.assertEqual(code, 0)
        self.assertEqual(sorted(os.listdir(self.path('pred'))), sorted(os.listdir(cases)))
        mask = load_mask(self.path('pred', 'phantom_000.vol'))
        self.assertEqual(mask.shape, (2, 16, 16))
        self.assertTrue(set(mask.ravel().tolist()) <= {0, 1})

    def test_repeatable(self):
        "Predicting twice with one checkpoint should write identical masks"
        cases = self.phantoms()
        code, _ = run(['train', '--data', cases, '--config', self.config,
                       '--out', self.path('run')] + TINY)
        self.assertEqual(code, 0)
        for out in ['a', 'b']:
            code, _ = run(['predict', '--checkpoint', self.path('run', 'best.ckpt'),
                           '--data', cases, '--out', self.path(out)])
            self.assertEqual(code, 0)
        for name in sorted(os.listdir(cases)):
            self.assertEqual(read_bytes(self.path('a', name)), read_bytes(self.path('b', name)))

    def test_corrupt_checkpoint(self):
        "A corrupt checkpoint is a configuration error"
        cases = self.phantoms()
        with open(self.path('bad.ckpt'), 'wb') as fd:
            fd.write(b'not a checkpoint')
        code, _ = run(['predict', '--checkpoint', self.path('bad.ckpt'),
                       '--data', cases, '--out', self.path('pred')])
        self.assertEqual(code, 2)
        self.assertFalse(os.path.exists(self.path('pred')))


class evaluate_Test(CliTestCase):

    def test_perfect(self):
        "Scoring the ground truth against itself should give mean dice 1"
        cases = self.phantoms()
        code, stdout = run(['evaluate', '--pred', cases, '--data', cases, '--out', self.path('eval')])
        self.assertEqual(code, 0)
        with open(self.path('eval', 'metrics.csv')) as fd:
            rows = list(csv.reader(fd))
        self.assertEqual([r[0] for r in rows[1:]],
                         ['phantom_000', 'phantom_001', 'phantom_002', 'mean'])
        self.assertEqual(float(rows[-1][1]), 1.0)
        self.assertIn('mean', stdout)

    def test_fixture_values(self):
        "Scores of hand-built masks should match their worked-out values"
        shape = (1, 4, 4)
        fixtures = {
            # shifted by one voxel: TP 1, FP 1, FN 1
            'a': ([(0, 0, 1), (0, 0, 2)], [(0, 0, 0), (0, 0, 1)]),
            'b': ([(0, 2, 2)], [(0, 2, 2)]),
            # missed lesion
            'c': ([], [(0, 3, 3)]),
        }
        for name, (pred, gt) in fixtures.items():
            for folder, voxels in [('pred', pred), ('gt', gt)]:
                mask = np.zeros(shape, np.uint8)
                for v in voxels:
                    mask[v] = 1
                os.makedirs(self.path(folder), exist_ok=True)
                save_mask(self.path(folder, name + '.vol'), mask)

        code, _ = run(['evaluate', '--pred', self.path('pred'), '--data', self.path('gt'),
                       '--out', self.path('eval')])
        self.assertEqual(code, 0)
        with open(self.path('eval', 'metrics.csv')) as fd:
            rows = dict((r['case_id'], r) for r in csv.DictReader(fd))

        inf = float('inf')
        expected = {
            'a': dict(dice=0.5, hausdorff=1.0, avg_distance=0.5, precision=0.5, recall=0.5, avd=0.0,
                      pred_empty='0', gt_empty='0'),
            'b': dict(dice=1.0, hausdorff=0.0, avg_distance=0.0, precision=1.0, recall=1.0, avd=0.0,
                      pred_empty='0', gt_empty='0'),
            'c': dict(dice=0.0, hausdorff=inf, avg_distance=inf, precision=0.0, recall=0.0, avd=1.0,
                      pred_empty='1', gt_empty='0'),
            'mean': dict(dice=0.5, hausdorff=0.5, avg_distance=0.25, precision=0.5, recall=0.5,
                         avd=1 / 3.0, pred_empty='0', gt_empty='0'),
        }
        self.assertEqual(sorted(rows), sorted(expected))
        for case_id, values in expected.items():
            for field, value in values.items():
                got = rows[case_id][field]
                if isinstance(value, str):
                    self.assertEqual(got, value, (case_id, field))
                elif value == inf:
                    self.assertEqual(got, 'inf', (case_id, field))
                else:
                    self.assertAlmostEqual(float(got), value, places=12, msg=(case_id, field))

    def test_unmatched(self):
        "A case missing from the predictions is a data error"
        cases = self.phantoms()
        partial = self.path('partial')
        shutil.copytree(cases, partial)
        os.remove(sorted(glob.glob(os.path.join(partial, '*.vol')))[0])
        code, _ = run(['evaluate', '--pred', partial, '--data', cases, '--out', self.path('eval')])
        self.assertEqual(code, 3)
        self.assertFalse(os.path.exists(self.path('eval')))


class gradcheck_Test(TestCase):

    def test_passes(self):
        code, stdout = run(['gradcheck', '--seed', '0'])
        self.assertEqual(code, 0)
        self.assertNotIn('FAIL', stdout)
        lines = stdout.splitlines()
        self.assertEqual(lines[0], 'gradient checks (seed 0)')
        self.assertTrue(all(line.startswith('  ') for line in lines[1:]))
