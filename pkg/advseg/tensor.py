"""
Dense NCHW tensors.

A tensor is a 4-D :class:`numpy.ndarray` laid out as (batch, channel,
height, width), row-major with width fastest. Public constructors always
produce 32-bit floats; operations preserve the dtype they are given so the
gradient checker can run the same code in 64-bit.

Randomness goes through :func:`make_rng`, a counter-based Philox generator,
and :func:`derive_seed`, which turns a seed plus integer keys into an
independent stream. Both are fully determined by their inputs, so a seed
reproduces bit-identical tensors on every machine.

USAGE:

>>> x = tensor_new((1, 2, 4, 4), SeededUniform(0, 1, seed=42))
>>> y = concat_channels(x, tensor_new((1, 3, 4, 4), Constant(0)))
>>> y.shape
(1, 5, 4, 4)
"""
from __future__ import absolute_import

import collections

import numpy as np

from .errors import InvalidShape, ShapeMismatch

DTYPE = np.float32


Constant = collections.namedtuple('Constant', ['value'])
SeededUniform = collections.namedtuple('SeededUniform', ['lo', 'hi', 'seed'])
SeededNormal = collections.namedtuple('SeededNormal', ['mean', 'std', 'seed'])
Scale = collections.namedtuple('Scale', ['k'])


def make_rng(seed):
    """Create the deterministic generator used everywhere in advseg.

    :param int seed: a non-negative integer
    :rtype: :class:`numpy.random.Generator` backed by Philox
    """
    return np.random.Generator(np.random.Philox(int(seed)))


def derive_seed(seed, *keys):
    """Derive an independent 64-bit seed from `seed` and integer `keys`.

    >>> derive_seed(1, 3, 0) == derive_seed(1, 3, 0)
    True
    """
    entropy = [int(seed)] + [int(k) for k in keys]
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)
    return int(state[0])


def check_shape(shape):
    """Raise :class:`InvalidShape` unless `shape` is four positive ints"""
    shape = tuple(shape)
    if len(shape) != 4:
        raise InvalidShape('expected a 4-D shape, got {}'.format(shape))
    if any(int(d) < 1 for d in shape):
        raise InvalidShape('dimensions must be >= 1, got {}'.format(shape))
    return tuple(int(d) for d in shape)


def check_tensor(x, name='tensor'):
    """Raise :class:`InvalidShape` unless `x` is a 4-D floating array"""
    if not isinstance(x, np.ndarray) or x.ndim != 4:
        raise InvalidShape('{} must be a 4-D array'.format(name))
    if not np.issubdtype(x.dtype, np.floating):
        raise InvalidShape('{} must hold floats, got {}'.format(name, x.dtype))
    check_shape(x.shape)
    return x


def tensor_new(shape, fill):
    """Allocate a float32 tensor.

    :param shape: (n, c, h, w), every entry >= 1
    :param fill: a :class:`Constant`, :class:`SeededUniform` or
                 :class:`SeededNormal`
    :raises: :class:`InvalidShape` for non-positive dimensions
    """
    shape = check_shape(shape)
    if isinstance(fill, Constant):
        return np.full(shape, fill.value, dtype=DTYPE)
    if isinstance(fill, SeededUniform):
        rng = make_rng(fill.seed)
        return rng.uniform(fill.lo, fill.hi, size=shape).astype(DTYPE)
    if isinstance(fill, SeededNormal):
        rng = make_rng(fill.seed)
        return rng.normal(fill.mean, fill.std, size=shape).astype(DTYPE)
    raise TypeError('unknown fill {!r}'.format(fill))


def concat_channels(a, b):
    """Stack `b`'s channels after `a`'s.

    :raises: :class:`ShapeMismatch` if batch or spatial sizes differ
    """
    check_tensor(a, 'a')
    check_tensor(b, 'b')
    if (a.shape[0], a.shape[2], a.shape[3]) != (b.shape[0], b.shape[2], b.shape[3]):
        raise ShapeMismatch('cannot concatenate {} and {}'.format(a.shape, b.shape))
    return np.concatenate([a, b], axis=1)


def slice_channels(x, start, stop):
    "Copy of channels [start, stop)"
    check_tensor(x)
    if not 0 <= start < stop <= x.shape[1]:
        raise InvalidShape('channel range [{}, {}) outside {}'.format(start, stop, x.shape[1]))
    return x[:, start:stop].copy()


def elementwise(op, a, b=None):
    """Pointwise arithmetic on equal-shape tensors.

    :param op: ``'add'``, ``'sub'``, ``'mul'`` or :class:`Scale`
    :raises: :class:`ShapeMismatch` if the operands differ in shape
    """
    check_tensor(a, 'a')
    if isinstance(op, Scale):
        return (a * a.dtype.type(op.k)).astype(a.dtype)

    check_tensor(b, 'b')
    if a.shape != b.shape:
        raise ShapeMismatch('operands differ: {} vs {}'.format(a.shape, b.shape))
    if op == 'add':
        return a + b
    if op == 'sub':
        return a - b
    if op == 'mul':
        return a * b
    raise ValueError('unknown elementwise op {!r}'.format(op))


def one_hot(labels, num_classes=2, dtype=DTYPE):
    """Expand an (n, h, w) label map into (n, num_classes, h, w)"""
    labels = np.asarray(labels)
    classes = np.arange(num_classes).reshape(1, num_classes, 1, 1)
    return (labels[:, None, :, :] == classes).astype(dtype)
