"""
The fully convolutional discriminator.

Four 4x4 stride-2 convolutions with leaky-ReLU grow the channels
64 -> 128 -> 256 -> 512 while shrinking the map 16-fold, a 3x3 convolution
turns the 512 channels into 2 confidence maps (fake = 0, real = 1), and
four x2 bilinear upsamplings restore the input resolution.

The discriminator only sees 2-channel label maps: segmentor probabilities
or one-hot ground truth.
"""
from __future__ import absolute_import

from .errors import InvalidConfig, InvalidGeometry, ShapeMismatch
from .network import Activation, Conv, Network, Upsample
from .tensor import check_tensor

import logging
logger = logging.getLogger('advseg')


DISC_CHANNELS = (64, 128, 256, 512)
DISC_CONV_COUNT = 5


def build_discriminator(in_channels=2, channels=DISC_CHANNELS, slope=0.2, seed=0):
    """Assemble the discriminator.

    :param int in_channels: channels of the judged maps
    :param channels: widths of the strided convolutions, strictly increasing
    :param float slope: leaky-ReLU slope in (0, 1)
    :param int seed: weight initialization seed
    :raises: :class:`InvalidConfig`
    """
    channels = tuple(int(c) for c in channels)
    if in_channels < 1:
        raise InvalidConfig('in_channels must be >= 1, got {}'.format(in_channels))
    if not channels or any(c < 1 for c in channels):
        raise InvalidConfig('discriminator channels must be positive, got {}'.format(channels))
    if any(b <= a for a, b in zip(channels, channels[1:])):
        raise InvalidConfig('discriminator channels must increase, got {}'.format(channels))
    if not 0 < slope < 1:
        raise InvalidConfig('leaky-ReLU slope must be in (0, 1), got {}'.format(slope))

    layers = []
    previous = in_channels
    for index, width in enumerate(channels, 1):
        layers.append(Conv('conv{}'.format(index), previous, width, 4, stride=2, padding=1))
        layers.append(Activation('leaky_relu', slope))
        previous = width
    layers.append(Conv('classifier', previous, 2, 3, padding=1))
    for _ in channels:
        layers.append(Upsample(2))

    return Network('discriminator', layers, seed=seed, in_channels=in_channels,
                   channels=channels, slope=slope)


def reduction(net):
    "Factor by which the strided convolutions shrink the map"
    return 2 ** len(net.config['channels'])


def disc_forward(net, prob_map):
    """Confidence maps (n, 2, h, w) for label maps (n, in_channels, h, w)

    :raises: :class:`InvalidGeometry` unless h and w are divisible by the
             reduction factor (16 by default)
    """
    check_tensor(prob_map, 'discriminator input')
    if prob_map.shape[1] != net.config['in_channels']:
        raise ShapeMismatch('discriminator expects {} channels, got {}'
                            .format(net.config['in_channels'], prob_map.shape[1]))
    factor = reduction(net)
    if prob_map.shape[2] % factor or prob_map.shape[3] % factor:
        raise InvalidGeometry('discriminator input {}x{} is not divisible by {}'
                              .format(prob_map.shape[2], prob_map.shape[3], factor))
    return net.forward(prob_map, training=True)


def disc_backward(net, d_conf, accumulate=False):
    """Fill ``net.grads`` from `d_conf` and return the gradient w.r.t. the
    judged maps, which carries the adversarial signal into the segmentor.
    """
    return net.backward(d_conf, accumulate=accumulate)
