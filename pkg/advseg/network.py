"""
Layer graphs with parameter and gradient stores.

A :class:`Network` is an ordered list of layer descriptors. Every layer
reads the output of the layer before it; a :class:`Concat` layer also
reads the output of an earlier layer (its skip source). Parameters live in
``net.params`` and gradients in ``net.grads``, two ordered dicts keyed by
the same parameter names in build order.

A network is single-writer: forward, backward and optimizer updates must
not run concurrently on one instance.

Checkpoints use the ADVSEG1 layout: the magic ``ADVSEG1`` followed, for
each parameter in build order, by the name length (u32), the UTF-8 name,
the shape as four u32 and the raw float32 data, all little-endian. Bias
vectors are stored with shape (out_c, 1, 1, 1).
"""
from __future__ import absolute_import

import collections
import io
import math
import struct

import numpy as np

from . import layers as L
from .errors import CheckpointError, StateError
from .tensor import DTYPE, concat_channels, derive_seed, make_rng

import logging
logger = logging.getLogger('advseg')


CHECKPOINT_MAGIC = b'ADVSEG1'


class Layer(object):
    """A node of a :class:`Network`.

    Subclasses cache whatever their backward pass needs during forward.
    """
    kind = None
    source = None

    def parameters(self):
        "Yield (name, shape, fan_in) for each parameter this layer owns"
        return ()

    def forward(self, net, x, skip, training, seed):
        raise NotImplementedError

    def backward(self, net, d_out):
        "Return (d_input, d_skip)"
        raise NotImplementedError

    def clear(self):
        "Drop cached activations"
        for name in list(vars(self)):
            if name.startswith('_cache'):
                setattr(self, name, None)

    def __repr__(self):
        return '{}({})'.format(type(self).__name__, self.describe())

    def describe(self):
        return ''


class Conv(Layer):
    "Square-kernel convolution with bias"
    kind = 'conv'

    def __init__(self, name, in_channels, out_channels, kernel, stride=1, padding=0):
        self.name = name
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        self._cache_x = None

    @property
    def weight_name(self):
        return self.name + '.weight'

    @property
    def bias_name(self):
        return self.name + '.bias'

    def parameters(self):
        fan_in = self.in_channels * self.kernel * self.kernel
        yield self.weight_name, (self.out_channels, self.in_channels, self.kernel, self.kernel), fan_in
        yield self.bias_name, (self.out_channels,), None

    def conv_params(self, net):
        return L.ConvParams(net.params[self.weight_name], net.params[self.bias_name],
                            self.stride, self.padding)

    def forward(self, net, x, skip, training, seed):
        self._cache_x = x
        return L.conv2d_forward(x, self.conv_params(net))

    def backward(self, net, d_out):
        grads = L.conv2d_backward(self._cache_x, self.conv_params(net), d_out)
        net.grads[self.weight_name] += grads.d_weights
        net.grads[self.bias_name] += grads.d_bias
        return grads.d_input, None

    def describe(self):
        return '{}: {}->{}, {}x{}/{} pad {}'.format(self.name, self.in_channels, self.out_channels,
                                                    self.kernel, self.kernel, self.stride, self.padding)


class UpConv(Conv):
    "2x2 stride-2 transposed convolution halving the channel count"
    kind = 'upconv'

    def __init__(self, name, in_channels, out_channels):
        super(UpConv, self).__init__(name, in_channels, out_channels, 2, stride=2)

    def parameters(self):
        yield self.weight_name, (self.out_channels, self.in_channels, 2, 2), self.in_channels
        yield self.bias_name, (self.out_channels,), None

    def forward(self, net, x, skip, training, seed):
        self._cache_x = x
        return L.upconv2x2_forward(x, self.conv_params(net))

    def backward(self, net, d_out):
        grads = L.upconv2x2_backward(self._cache_x, self.conv_params(net), d_out)
        net.grads[self.weight_name] += grads.d_weights
        net.grads[self.bias_name] += grads.d_bias
        return grads.d_input, None


class Activation(Layer):
    "ReLU or leaky-ReLU"

    def __init__(self, kind='relu', slope=0.2):
        self.kind = kind
        self.slope = slope
        self._cache_x = None

    def forward(self, net, x, skip, training, seed):
        self._cache_x = x
        return L.activation_forward(self.kind, x, self.slope)

    def backward(self, net, d_out):
        return L.activation_backward(self.kind, self._cache_x, d_out, self.slope), None

    def describe(self):
        return self.kind if self.kind == 'relu' else '{} {}'.format(self.kind, self.slope)


class MaxPool(Layer):
    kind = 'maxpool'

    def __init__(self):
        self._cache_record = None

    def forward(self, net, x, skip, training, seed):
        out, self._cache_record = L.maxpool2x2_forward(x)
        return out

    def backward(self, net, d_out):
        return L.maxpool2x2_backward(self._cache_record, d_out), None


class Dropout(Layer):
    kind = 'dropout'

    def __init__(self, rate):
        self.rate = rate
        self._cache_record = None

    def forward(self, net, x, skip, training, seed):
        out, self._cache_record = L.dropout_forward(x, self.rate, seed, training)
        return out

    def backward(self, net, d_out):
        return L.dropout_backward(self._cache_record, d_out), None

    def describe(self):
        return str(self.rate)


class Concat(Layer):
    "Concatenate the skip source's channels before the incoming channels"
    kind = 'concat'

    def __init__(self, source):
        self.source = source
        self._cache_split = None

    def forward(self, net, x, skip, training, seed):
        self._cache_split = skip.shape[1]
        return concat_channels(skip, x)

    def backward(self, net, d_out):
        split = self._cache_split
        return d_out[:, split:], d_out[:, :split]

    def describe(self):
        return 'from {}'.format(self.source)


class Upsample(Layer):
    "Bilinear upsampling by an integer factor"
    kind = 'upsample'

    def __init__(self, scale=2):
        self.scale = scale

    def forward(self, net, x, skip, training, seed):
        return L.bilinear_upsample(x, self.scale)

    def backward(self, net, d_out):
        return L.bilinear_upsample_backward(d_out, self.scale), None

    def describe(self):
        return 'x{}'.format(self.scale)


def he_normal(rng, shape, fan_in):
    """Normal weights with std sqrt(2 / fan_in); zeros when fan_in is None"""
    if fan_in is None:
        return np.zeros(shape, dtype=DTYPE)
    return rng.normal(0.0, math.sqrt(2.0 / fan_in), size=shape).astype(DTYPE)


class Network(object):
    """An ordered layer graph with parameter and gradient stores.

    :param str name: used in log messages
    :param layers: list of :class:`Layer`
    :param int seed: seed of the weight initialization
    """

    def __init__(self, name, layers, seed=0, **config):
        self.name = name
        self.layers = list(layers)
        self.config = config
        self.params = collections.OrderedDict()
        self.grads = collections.OrderedDict()
        self._recorded = False

        rng = make_rng(seed)
        for layer in self.layers:
            for pname, shape, fan_in in layer.parameters():
                self.params[pname] = he_normal(rng, shape, fan_in)
                self.grads[pname] = np.zeros(shape, dtype=DTYPE)
        logger.debug('Built %s with %d layers and %d parameters', name,
                     len(self.layers), self.parameter_count())

    def parameter_count(self):
        return sum(p.size for p in self.params.values())

    def conv_layers(self):
        "Convolutions and up-convolutions in build order"
        return [l for l in self.layers if l.kind in ('conv', 'upconv')]

    def conv_count(self):
        return len(self.conv_layers())

    def forward(self, x, training=False, seed=0):
        """Run every layer, recording what backward needs.

        Dropout layer `i` draws its mask from ``derive_seed(seed, i)``.
        """
        outputs = []
        h = x
        for index, layer in enumerate(self.layers):
            skip = outputs[layer.source] if layer.source is not None else None
            h = layer.forward(self, h, skip, training, derive_seed(seed, index))
            outputs.append(h)
        self._recorded = True
        return h

    def backward(self, d_out, accumulate=False):
        """Back-propagate `d_out` through the recorded forward pass.

        Fills ``self.grads`` (added to the existing values when `accumulate`
        is set) and returns the gradient w.r.t. the network input.

        :raises: :class:`StateError` without a recorded forward pass
        """
        if not self._recorded:
            raise StateError('{}: backward called without a forward pass'.format(self.name))
        if not accumulate:
            self.zero_grad()

        pending = [None] * len(self.layers)
        pending[-1] = d_out
        d_input = None
        for index in reversed(range(len(self.layers))):
            layer = self.layers[index]
            d_x, d_skip = layer.backward(self, pending[index])
            pending[index] = None
            if d_skip is not None:
                pending[layer.source] = _accumulate(pending[layer.source], d_skip)
            if index > 0:
                pending[index - 1] = _accumulate(pending[index - 1], d_x)
            else:
                d_input = d_x
            layer.clear()
        self._recorded = False
        return d_input

    def zero_grad(self):
        for grad in self.grads.values():
            grad.fill(0)

    def copy_params(self):
        "Deep copy of the parameter store"
        return collections.OrderedDict((k, v.copy()) for k, v in self.params.items())

    def load_params(self, params):
        """Copy `params` into the store, checking names and shapes.

        :raises: :class:`CheckpointError` on any disagreement
        """
        if list(params) != list(self.params):
            missing = set(self.params) ^ set(params)
            raise CheckpointError('parameter names do not match {}: {}'
                                  .format(self.name, sorted(missing) or 'order differs'))
        for name, value in params.items():
            if value.size != self.params[name].size:
                raise CheckpointError('{} has {} values, expected shape {}'
                                      .format(name, value.size, self.params[name].shape))
            self.params[name][...] = np.reshape(value, self.params[name].shape)

    def astype(self, dtype):
        "Cast parameters and gradients in place (used by gradient checks)"
        for store in (self.params, self.grads):
            for name in store:
                store[name] = store[name].astype(dtype)
        return self

    def __repr__(self):
        return 'Network({!r}, {} layers)'.format(self.name, len(self.layers))


def _accumulate(current, grad):
    return grad if current is None else current + grad


######################################################################
# checkpoints

def checkpoint_bytes(params):
    "Serialize an ordered parameter dict in the ADVSEG1 layout"
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    for name, value in params.items():
        encoded = name.encode('utf-8')
        shape = tuple(value.shape) + (1,) * (4 - value.ndim)
        buf.write(struct.pack('<I', len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack('<4I', *shape))
        buf.write(np.ascontiguousarray(value, dtype='<f4').tobytes())
    return buf.getvalue()


def parse_checkpoint(data, path=None):
    """Parse ADVSEG1 bytes into an ordered dict of 4-D float32 arrays

    :raises: :class:`CheckpointError`
    """
    if not data.startswith(CHECKPOINT_MAGIC):
        msg = 'bad checkpoint magic'
        logger.error('%s: %s', path, msg)
        raise CheckpointError(msg, path=path)
    params = collections.OrderedDict()
    offset = len(CHECKPOINT_MAGIC)
    try:
        while offset < len(data):
            (length,) = struct.unpack_from('<I', data, offset)
            offset += 4
            name = data[offset:offset + length].decode('utf-8')
            if len(name.encode('utf-8')) != length:
                raise ValueError('truncated name')
            offset += length
            shape = struct.unpack_from('<4I', data, offset)
            offset += 16
            count = int(np.prod(shape))
            end = offset + 4 * count
            if end > len(data):
                raise ValueError('truncated data for {}'.format(name))
            params[name] = np.frombuffer(data[offset:end], dtype='<f4').astype(DTYPE).reshape(shape)
            offset = end
    except (struct.error, ValueError, UnicodeDecodeError) as e:
        logger.error('%s: corrupt checkpoint: %s', path, e)
        raise CheckpointError('corrupt checkpoint: {}'.format(e), path=path)
    return params


def save_checkpoint(net, path):
    "Write `net`'s parameters to `path`"
    with open(path, 'wb') as fd:
        fd.write(checkpoint_bytes(net.params))
    logger.debug('Wrote %s checkpoint to %s', net.name, path)


def read_checkpoint(path):
    try:
        with open(path, 'rb') as fd:
            data = fd.read()
    except (IOError, OSError) as e:
        raise CheckpointError('cannot read checkpoint: {}'.format(e), path=path)
    return parse_checkpoint(data, path=path)


def load_checkpoint(net, path):
    "Load the parameters stored at `path` into `net`"
    params = read_checkpoint(path)
    try:
        net.load_params(params)
    except CheckpointError as e:
        raise CheckpointError(e.message, path=path)
    return net
