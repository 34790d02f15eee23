import advseg.config as C
from advseg.errors import InvalidConfig

import os
import shutil
import tempfile
from unittest import TestCase

import hypothesis.strategies as st
from hypothesis import given


class parse_config_text_Test(TestCase):

    def test_values(self):
        "Keys should be normalized and values typed"
        text = '\n'.join(['# comment', '', 'epochs = 12', 'lambda-adv=0.25', 'lr = 1e-3',
                          'disc_channels = 8, 16, 32, 64', 'modalities = CT, CBF',
                          'skip-empty-slices = yes', 'data = /tmp/cases'])
        values = C.parse_config_text(text)
        self.assertEqual(values['epochs'], 12)
        self.assertEqual(values['lambda_adv'], 0.25)
        self.assertEqual(values['learning_rate'], 1e-3)
        self.assertEqual(values['disc_channels'], (8, 16, 32, 64))
        self.assertEqual(values['modalities'], ('CT', 'CBF'))
        self.assertIs(values['skip_empty_slices'], True)
        self.assertEqual(values['data'], '/tmp/cases')

    def test_unknown_key(self):
        with self.assertRaises(InvalidConfig) as ctx:
            C.parse_config_text('epochs = 1\ncolour = red\n')
        self.assertIn('line 2', str(ctx.exception))

    def test_malformed_line(self):
        with self.assertRaises(InvalidConfig):
            C.parse_config_text('epochs 12')

    def test_bad_value(self):
        with self.assertRaises(InvalidConfig):
            C.parse_config_text('epochs = many')

    @given(st.integers(1, 10 ** 6))
    def test_integer_roundtrip(self, n):
        self.assertEqual(C.parse_config_text('batch-size = {}'.format(n))['batch_size'], n)


class resolve_Test(TestCase):

    def test_precedence(self):
        "Flags should override the file, which overrides the defaults"
        file_values = {'epochs': 7, 'lambda_adv': 0.5, 'seed': 3}
        run = C.resolve('train', {'epochs': 9, 'seed': None}, file_values)
        self.assertEqual(run.train.epochs, 9)
        self.assertEqual(run.train.lambda_adv, 0.5)
        self.assertEqual(run.train.seed, 3)
        self.assertEqual(run.train.batch_size, 4)
        self.assertEqual(run.command, 'train')
        self.assertEqual(run.size, 256)

    def test_validation(self):
        "Out-of-range values should be configuration errors"
        with self.assertRaises(InvalidConfig):
            C.resolve('train', {'split_ratio': 1.5})
        with self.assertRaises(InvalidConfig):
            C.resolve('phantom', {'count': -1})

    def test_load_file(self):
        tmp = tempfile.mkdtemp()
        try:
            path = os.path.join(tmp, 'run.cfg')
            with open(path, 'w') as fd:
                fd.write('epochs = 4\n')
            self.assertEqual(C.load_config_file(path), {'epochs': 4})
            with self.assertRaises(InvalidConfig):
                C.load_config_file(os.path.join(tmp, 'absent.cfg'))
        finally:
            shutil.rmtree(tmp)
