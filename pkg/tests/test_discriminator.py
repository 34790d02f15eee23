import advseg.discriminator as D
from advseg.errors import InvalidConfig, InvalidGeometry, ShapeMismatch

import numpy as np
from unittest import TestCase

import hypothesis.strategies as st
from hypothesis import given, settings


class build_discriminator_Test(TestCase):

    def test_conv_count(self):
        "The discriminator should have 5 convolutions"
        net = D.build_discriminator()
        self.assertEqual(net.conv_count(), D.DISC_CONV_COUNT)
        self.assertEqual(net.conv_count(), 5)
        self.assertEqual(net.params['conv4.weight'].shape, (512, 256, 4, 4))
        self.assertEqual(net.params['classifier.weight'].shape, (2, 512, 3, 3))
        self.assertEqual(D.reduction(net), 16)

    def test_channels_increase(self):
        with self.assertRaises(InvalidConfig):
            D.build_discriminator(channels=(8, 8, 16, 32))

    def test_slope(self):
        with self.assertRaises(InvalidConfig):
            D.build_discriminator(slope=0)


class disc_forward_Test(TestCase):

    @settings(max_examples=10, deadline=None)
    @given(st.integers(1, 3), st.integers(1, 3))
    def test_shape_preserved(self, a, b):
        "(n, 2, h, w) maps should give (n, 2, h, w) confidences"
        net = D.build_discriminator(channels=(4, 8, 16, 32), seed=1)
        x = np.full((2, 2, 16 * a, 16 * b), 0.5, dtype=np.float32)
        out = D.disc_forward(net, x)
        self.assertEqual(out.shape, x.shape)
        self.assertEqual(out.dtype, np.float32)

    def test_indivisible(self):
        net = D.build_discriminator(channels=(4, 8, 16, 32))
        with self.assertRaises(InvalidGeometry):
            D.disc_forward(net, np.zeros((1, 2, 24, 16), np.float32))

    def test_channels(self):
        net = D.build_discriminator(channels=(4, 8, 16, 32))
        with self.assertRaises(ShapeMismatch):
            D.disc_forward(net, np.zeros((1, 3, 16, 16), np.float32))

    def test_input_gradient(self):
        "Backward should return a gradient for the judged maps"
        net = D.build_discriminator(channels=(4, 8, 16, 32), seed=2)
        x = np.random.default_rng(0).random((1, 2, 32, 32)).astype(np.float32)
        out = D.disc_forward(net, x)
        d_x = D.disc_backward(net, np.ones_like(out))
        self.assertEqual(d_x.shape, x.shape)
        self.assertTrue(np.abs(d_x).sum() > 0)
