"""
The U-Net segmentor.

Four contracting stages (two 3x3 same-padded convolutions with ReLU, then
2x2 max pooling) double the channels from `base_channels` up to
16 * `base_channels` at the bottleneck, which ends in dropout. Four
expanding stages (2x2 up-convolution halving the channels, concatenation
with the matching contracting stage, two 3x3 convolutions with ReLU) mirror
them, and a final 1x1 convolution maps to `num_classes` logits. With the
default depth that is 23 convolutions counting the up-convolutions and the
1x1 head.
"""
from __future__ import absolute_import

from .errors import CheckpointError, InvalidConfig, InvalidGeometry, ShapeMismatch
from .network import Activation, Concat, Conv, Dropout, MaxPool, Network, UpConv, read_checkpoint
from .tensor import check_tensor

import logging
logger = logging.getLogger('advseg')


DEPTH = 4
UNET_CONV_COUNT = 23


def build_unet(in_channels=3, num_classes=2, base_channels=64, dropout_rate=0.5, seed=0):
    """Assemble the segmentor.

    :param int in_channels: input modalities
    :param int num_classes: output logit channels
    :param int base_channels: width of the first stage
    :param float dropout_rate: bottleneck dropout rate in [0, 1)
    :param int seed: weight initialization seed
    :rtype: :class:`advseg.network.Network`
    :raises: :class:`InvalidConfig`
    """
    if in_channels < 1:
        raise InvalidConfig('in_channels must be >= 1, got {}'.format(in_channels))
    if num_classes < 2:
        raise InvalidConfig('num_classes must be >= 2, got {}'.format(num_classes))
    if base_channels < 1:
        raise InvalidConfig('base_channels must be >= 1, got {}'.format(base_channels))
    if not 0 <= dropout_rate < 1:
        raise InvalidConfig('dropout_rate must be in [0, 1), got {}'.format(dropout_rate))

    layers = []
    skips = []

    def double_conv(prefix, c_in, c_out):
        layers.append(Conv(prefix + '.conv1', c_in, c_out, 3, padding=1))
        layers.append(Activation('relu'))
        layers.append(Conv(prefix + '.conv2', c_out, c_out, 3, padding=1))
        layers.append(Activation('relu'))

    channels = in_channels
    for stage in range(1, DEPTH + 1):
        width = base_channels * 2 ** (stage - 1)
        double_conv('down{}'.format(stage), channels, width)
        skips.append((len(layers) - 1, width))
        layers.append(MaxPool())
        channels = width

    width = base_channels * 2 ** DEPTH
    double_conv('bottleneck', channels, width)
    layers.append(Dropout(dropout_rate))
    channels = width

    for stage in range(1, DEPTH + 1):
        source, skip_width = skips.pop()
        width = channels // 2
        layers.append(UpConv('up{}.upconv'.format(stage), channels, width))
        layers.append(Concat(source))
        double_conv('up{}'.format(stage), skip_width + width, width)
        channels = width

    layers.append(Conv('head', channels, num_classes, 1))

    return Network('unet', layers, seed=seed, in_channels=in_channels,
                   num_classes=num_classes, base_channels=base_channels,
                   dropout_rate=dropout_rate)


def check_unet_input(net, x):
    check_tensor(x, 'segmentor input')
    expected = net.config['in_channels']
    if x.shape[1] != expected:
        raise ShapeMismatch('segmentor expects {} channels, got {}'.format(expected, x.shape[1]))
    factor = 2 ** DEPTH
    if x.shape[2] % factor or x.shape[3] % factor:
        raise InvalidGeometry('segmentor input {}x{} is not divisible by {}'
                              .format(x.shape[2], x.shape[3], factor))


def unet_forward(net, x, training=False, seed=0):
    """Logits (n, num_classes, h, w) for images (n, in_channels, h, w)

    :raises: :class:`InvalidGeometry` unless h and w are divisible by 16
    """
    check_unet_input(net, x)
    return net.forward(x, training=training, seed=seed)


def unet_backward(net, d_logits):
    """Fill ``net.grads`` from `d_logits`; returns the input gradient

    :raises: :class:`advseg.errors.StateError` without a prior forward pass
    """
    return net.backward(d_logits)


def load_unet(path):
    """Rebuild a segmentor from an ADVSEG1 checkpoint.

    Widths are read from the stored shapes: the first convolution gives the
    input channels and base width, the head gives the class count.
    """
    params = read_checkpoint(path)
    try:
        first = params['down1.conv1.weight']
        head = params['head.weight']
    except KeyError as e:
        raise CheckpointError('not a segmentor checkpoint, missing {}'.format(e), path=path)
    net = build_unet(in_channels=first.shape[1], num_classes=head.shape[0],
                     base_channels=first.shape[0])
    net.load_params(params)
    logger.info('Loaded segmentor (base %d) from %s', first.shape[0], path)
    return net
