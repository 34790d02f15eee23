"""
Forward and backward kernels for every layer the segmentor and the
discriminator use.

Each forward function is a pure function of its inputs; whatever the
backward pass needs is either recomputed from the forward inputs or carried
in an explicit record (:class:`ArgmaxRecord`, :class:`MaskRecord`).
Convolutions are evaluated one sample at a time, so the result for a sample
never depends on the other samples in the batch.

Convolutions are cross-correlations over sliding windows; the input
gradient of a strided convolution is the stride-1 correlation of the
zero-dilated output gradient with the flipped, transposed kernel.
"""
from __future__ import absolute_import

import collections
import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import InvalidConfig, InvalidGeometry, InvalidLabel, ShapeMismatch
from .tensor import check_tensor, make_rng

import logging
logger = logging.getLogger('advseg')


class ConvParams(collections.namedtuple('ConvParams',
                                        ['weights', 'bias', 'stride', 'padding'])):
    """Weights (out_c, in_c, kh, kw), bias (out_c,), stride and padding.

    Up-convolutions use the same layout with a 2x2 kernel.
    """
    __slots__ = ()

    def __new__(cls, weights, bias, stride=1, padding=0):
        return super(ConvParams, cls).__new__(cls, weights, bias, stride, padding)

    @property
    def out_channels(self):
        return self.weights.shape[0]

    @property
    def in_channels(self):
        return self.weights.shape[1]

    @property
    def kernel(self):
        return self.weights.shape[2:]


LayerGrads = collections.namedtuple('LayerGrads', ['d_input', 'd_weights', 'd_bias'])
ArgmaxRecord = collections.namedtuple('ArgmaxRecord', ['argmax', 'input_shape'])
MaskRecord = collections.namedtuple('MaskRecord', ['keep', 'scale'])


######################################################################
# convolution

def conv_output_size(size, kernel, stride, padding):
    """Output extent of a convolution along one axis.

    :raises: :class:`InvalidGeometry` if the extent is not a positive integer
    """
    span = size + 2 * padding - kernel
    if span < 0 or span % stride != 0:
        raise InvalidGeometry('size {} with kernel {}, stride {}, padding {} '
                              'does not tile'.format(size, kernel, stride, padding))
    return span // stride + 1


def _pad(x, pad):
    "Zero-pad (pad > 0) or crop (pad < 0) both spatial axes"
    if pad > 0:
        return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    if pad < 0:
        return x[:, :, -pad:pad, -pad:pad]
    return x


def _windows(xp, kh, kw, stride):
    "View of shape (n, c, oh, ow, kh, kw)"
    view = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return view[:, :, ::stride, ::stride]


def _correlate(xp, weights, stride):
    "Cross-correlate an already padded input, sample by sample"
    kh, kw = weights.shape[2:]
    windows = _windows(xp, kh, kw, stride)
    n, _, oh, ow = windows.shape[:4]
    out = np.empty((n, weights.shape[0], oh, ow), dtype=np.result_type(xp, weights))
    for i in range(n):
        out[i] = np.tensordot(weights, windows[i], axes=([1, 2, 3], [0, 3, 4]))
    return out


def _check_conv(x, p):
    check_tensor(x, 'conv input')
    if x.shape[1] != p.in_channels:
        raise ShapeMismatch('conv expects {} input channels, got {}'
                            .format(p.in_channels, x.shape[1]))
    if p.bias.shape != (p.out_channels,):
        raise ShapeMismatch('bias shape {} does not match {} output channels'
                            .format(p.bias.shape, p.out_channels))
    if p.stride < 1 or p.padding < 0:
        raise InvalidGeometry('stride must be >= 1 and padding >= 0')
    kh, kw = p.kernel
    return (conv_output_size(x.shape[2], kh, p.stride, p.padding),
            conv_output_size(x.shape[3], kw, p.stride, p.padding))


def conv2d_forward(x, p):
    """Cross-correlation plus bias.

    :param x: input (n, in_c, h, w)
    :param p: :class:`ConvParams`
    :returns: output (n, out_c, h', w')
    :raises: :class:`ShapeMismatch`, :class:`InvalidGeometry`
    """
    _check_conv(x, p)
    out = _correlate(_pad(x, p.padding), p.weights, p.stride)
    out += p.bias.reshape(1, -1, 1, 1).astype(out.dtype)
    return out


def conv2d_backward(x, p, d_out):
    """Exact gradients of :func:`conv2d_forward` w.r.t. input, weights, bias.

    :rtype: :class:`LayerGrads`
    """
    oh, ow = _check_conv(x, p)
    n = x.shape[0]
    if d_out.shape != (n, p.out_channels, oh, ow):
        raise ShapeMismatch('d_out {} does not match conv output {}'
                            .format(d_out.shape, (n, p.out_channels, oh, ow)))
    kh, kw = p.kernel
    s = p.stride

    windows = _windows(_pad(x, p.padding), kh, kw, s)
    d_weights = np.zeros(p.weights.shape, dtype=np.result_type(x, p.weights))
    for i in range(n):
        d_weights += np.tensordot(d_out[i], windows[i], axes=([1, 2], [1, 2]))
    d_bias = d_out.sum(axis=(0, 2, 3))

    if s > 1:
        dilated = np.zeros((n, p.out_channels, (oh - 1) * s + 1, (ow - 1) * s + 1),
                           dtype=d_out.dtype)
        dilated[:, :, ::s, ::s] = d_out
    else:
        dilated = d_out
    flipped = p.weights[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    d_input = _correlate(_pad(dilated, kh - 1 - p.padding), flipped, 1)
    return LayerGrads(d_input=d_input, d_weights=d_weights, d_bias=d_bias)


######################################################################
# 2x2 up-convolution (transposed convolution, stride 2)

def _check_upconv(x, p):
    check_tensor(x, 'up-conv input')
    if x.shape[1] % 2 != 0:
        raise InvalidGeometry('up-conv needs an even channel count, got {}'.format(x.shape[1]))
    if p.kernel != (2, 2):
        raise InvalidGeometry('up-conv kernel must be 2x2, got {}'.format(p.kernel))
    if p.in_channels != x.shape[1] or p.out_channels != x.shape[1] // 2:
        raise ShapeMismatch('up-conv weights {} do not halve {} channels'
                            .format(p.weights.shape, x.shape[1]))


def upconv2x2_forward(x, p):
    """Transposed 2x2 stride-2 convolution halving the channels.

    ``out[n, o, 2i+a, 2j+b] = sum_c x[n, c, i, j] * W[o, c, a, b] + bias[o]``
    """
    _check_upconv(x, p)
    n, c, h, w = x.shape
    out = np.empty((n, p.out_channels, 2 * h, 2 * w), dtype=np.result_type(x, p.weights))
    for i in range(n):
        blocks = np.tensordot(p.weights, x[i], axes=([1], [0]))  # o, a, b, i, j
        out[i] = blocks.transpose(0, 3, 1, 4, 2).reshape(p.out_channels, 2 * h, 2 * w)
    out += p.bias.reshape(1, -1, 1, 1).astype(out.dtype)
    return out


def upconv2x2_backward(x, p, d_out):
    "Exact gradients of :func:`upconv2x2_forward`"
    _check_upconv(x, p)
    n, c, h, w = x.shape
    if d_out.shape != (n, p.out_channels, 2 * h, 2 * w):
        raise ShapeMismatch('d_out {} does not match up-conv output'.format(d_out.shape))
    blocks = d_out.reshape(n, p.out_channels, h, 2, w, 2)
    d_input = np.empty(x.shape, dtype=np.result_type(d_out, p.weights))
    d_weights = np.zeros(p.weights.shape, dtype=np.result_type(d_out, x))
    for i in range(n):
        d_input[i] = np.tensordot(p.weights, blocks[i], axes=([0, 2, 3], [0, 2, 4]))
        d_weights += np.tensordot(blocks[i], x[i], axes=([1, 3], [1, 2])).transpose(0, 3, 1, 2)
    d_bias = d_out.sum(axis=(0, 2, 3))
    return LayerGrads(d_input=d_input, d_weights=d_weights, d_bias=d_bias)


######################################################################
# pooling

def maxpool2x2_forward(x):
    """2x2 stride-2 max pooling.

    Ties go to the first element in row-major window order.

    :returns: (output, :class:`ArgmaxRecord`)
    :raises: :class:`InvalidGeometry` for odd spatial sizes
    """
    check_tensor(x, 'max-pool input')
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise InvalidGeometry('max-pool needs even sizes, got {}x{}'.format(h, w))
    windows = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    windows = windows.reshape(n, c, h // 2, w // 2, 4)
    argmax = windows.argmax(axis=-1)
    out = np.take_along_axis(windows, argmax[..., None], axis=-1)[..., 0]
    return out, ArgmaxRecord(argmax=argmax, input_shape=x.shape)


def maxpool2x2_backward(rec, d_out):
    "Route `d_out` to the winning positions recorded in `rec`"
    if d_out.shape != rec.argmax.shape:
        raise ShapeMismatch('d_out {} does not match pooled shape {}'
                            .format(d_out.shape, rec.argmax.shape))
    n, c, h, w = rec.input_shape
    routed = np.zeros(d_out.shape + (4,), dtype=d_out.dtype)
    np.put_along_axis(routed, rec.argmax[..., None], d_out[..., None], axis=-1)
    routed = routed.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    return routed.reshape(n, c, h, w)


######################################################################
# activations

def _check_activation(kind, slope):
    if kind == 'relu':
        return
    if kind == 'leaky_relu':
        if not 0 < slope < 1:
            raise InvalidConfig('leaky-ReLU slope must be in (0, 1), got {}'.format(slope))
        return
    raise InvalidConfig('unknown activation {!r}'.format(kind))


def activation_forward(kind, x, slope=0.2):
    """``'relu'``: max(0, v); ``'leaky_relu'``: v if v > 0 else slope * v"""
    _check_activation(kind, slope)
    if kind == 'relu':
        return np.maximum(x, 0).astype(x.dtype)
    return np.where(x > 0, x, x * x.dtype.type(slope))


def activation_backward(kind, x, d_out, slope=0.2):
    "Gradient of :func:`activation_forward` given its input `x`"
    _check_activation(kind, slope)
    if d_out.shape != x.shape:
        raise ShapeMismatch('d_out {} does not match input {}'.format(d_out.shape, x.shape))
    if kind == 'relu':
        return np.where(x > 0, d_out, d_out.dtype.type(0))
    return np.where(x > 0, d_out, d_out * d_out.dtype.type(slope))


######################################################################
# dropout

def dropout_forward(x, rate, seed, training):
    """Inverted dropout.

    In training each element is zeroed with probability `rate` and the
    survivors are scaled by 1 / (1 - rate); in inference it is the identity.

    :returns: (output, :class:`MaskRecord`)
    :raises: :class:`InvalidConfig` unless 0 <= rate < 1
    """
    if not 0 <= rate < 1:
        raise InvalidConfig('dropout rate must be in [0, 1), got {}'.format(rate))
    if not training or rate == 0:
        return x, MaskRecord(keep=None, scale=1.0)
    keep = make_rng(seed).random(x.shape) >= rate
    scale = 1.0 / (1.0 - rate)
    return x * keep * x.dtype.type(scale), MaskRecord(keep=keep, scale=scale)


def dropout_backward(rec, d_out):
    "Apply the recorded mask to `d_out`"
    if rec.keep is None:
        return d_out
    if rec.keep.shape != d_out.shape:
        raise ShapeMismatch('d_out {} does not match mask {}'.format(d_out.shape, rec.keep.shape))
    return d_out * rec.keep * d_out.dtype.type(rec.scale)


######################################################################
# bilinear upsampling

def interpolation_matrix(size, scale, dtype=np.float64):
    """Matrix A of shape (scale*size, size) with ``upsampled = A @ x``.

    Align-corners-false: destination index d samples source coordinate
    ``s = (d + 0.5) / scale - 0.5`` clamped below at 0, blending
    ``x[floor(s)]`` and ``x[min(floor(s) + 1, size - 1)]`` with weight
    ``t = s - floor(s)`` on the latter.
    """
    out = size * scale
    matrix = np.zeros((out, size), dtype=dtype)
    for d in range(out):
        s = max((d + 0.5) / scale - 0.5, 0.0)
        i0 = min(int(math.floor(s)), size - 1)
        i1 = min(i0 + 1, size - 1)
        t = s - i0
        matrix[d, i0] += 1.0 - t
        matrix[d, i1] += t
    return matrix


def bilinear_upsample(x, scale):
    """Upsample (n, c, h, w) to (n, c, scale*h, scale*w)"""
    check_tensor(x, 'upsample input')
    if scale < 1:
        raise InvalidConfig('scale must be >= 1, got {}'.format(scale))
    if scale == 1:
        return x
    rows = interpolation_matrix(x.shape[2], scale, x.dtype)
    cols = interpolation_matrix(x.shape[3], scale, x.dtype)
    return np.matmul(np.matmul(rows, x), cols.T)


def bilinear_upsample_backward(d_out, scale):
    "Gradient of :func:`bilinear_upsample` w.r.t. its input"
    check_tensor(d_out, 'd_out')
    if scale == 1:
        return d_out
    if d_out.shape[2] % scale or d_out.shape[3] % scale:
        raise ShapeMismatch('d_out {} is not a x{} upsampling'.format(d_out.shape, scale))
    rows = interpolation_matrix(d_out.shape[2] // scale, scale, d_out.dtype)
    cols = interpolation_matrix(d_out.shape[3] // scale, scale, d_out.dtype)
    return np.matmul(np.matmul(rows.T, d_out), cols)


######################################################################
# softmax and loss

def softmax(logits):
    "Channel-wise softmax of (n, k, h, w) logits"
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_backward(probs, d_probs):
    "Gradient w.r.t. the logits given the softmax output and its gradient"
    inner = (probs * d_probs).sum(axis=1, keepdims=True)
    return probs * (d_probs - inner)


def softmax_cross_entropy(logits, targets):
    """Mean pixel-wise cross-entropy of 2-class logits.

    :param logits: (n, 2, h, w)
    :param targets: (n, h, w) label map of {0, 1}
    :returns: (loss as a Python float, d_logits)
    :raises: :class:`ShapeMismatch`, :class:`InvalidLabel`
    """
    check_tensor(logits, 'logits')
    n, c, h, w = logits.shape
    if c != 2:
        raise ShapeMismatch('expected 2 logit channels, got {}'.format(c))
    targets = np.asarray(targets)
    if targets.shape != (n, h, w):
        raise ShapeMismatch('targets {} do not match logits {}'.format(targets.shape, logits.shape))
    if not np.isin(targets, (0, 1)).all():
        raise InvalidLabel('targets must be 0 or 1')

    wide = logits.astype(np.float64)
    shifted = wide - wide.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_norm
    picked = np.take_along_axis(log_probs, targets[:, None].astype(np.intp), axis=1)
    count = n * h * w
    loss = -float(picked.sum()) / count

    d_logits = np.exp(log_probs)
    np.put_along_axis(d_logits, targets[:, None].astype(np.intp),
                      np.take_along_axis(d_logits, targets[:, None].astype(np.intp), axis=1) - 1.0,
                      axis=1)
    d_logits /= count
    return loss, d_logits.astype(logits.dtype)
