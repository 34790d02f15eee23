"""
Finite-difference verification of every backward pass.

Each check builds a scalar objective ``L = sum(forward(...) * R)`` with a
fixed random projection R (or the loss itself for the cross-entropy), so
the analytic gradient is ``backward(R)``. Numeric gradients are central
differences ``(L(v + eps) - L(v - eps)) / (2 eps)`` taken in float64, and
the error of one entry is::

    |analytic - numeric| / max(|analytic|, |numeric|, 1e-6)

Layer checks cover every entry and must stay below 1e-3. ReLU-family inputs
are kept at least 0.1 away from the kink and max-pool inputs are tie-free
with a spacing larger than 2 eps. The end-to-end checks of a tiny
segmentor and discriminator sample a few entries of every parameter and
must stay below 1e-2; entries whose perturbation flips a ReLU sign or a
pooling winner anywhere in the network are skipped (see :class:`KinkWatch`).
"""
from __future__ import absolute_import

import collections

import numpy as np

from . import layers as L
from .discriminator import build_discriminator
from .tensor import make_rng
from .unet import build_unet

import logging
logger = logging.getLogger('advseg')


LAYER_TOLERANCE = 1e-3
NETWORK_TOLERANCE = 1e-2

GradCheckResult = collections.namedtuple('GradCheckResult', ['name', 'max_rel_error', 'passed'])


def relative_error(analytic, numeric):
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6)


def check_gradient(name, loss, value, analytic, eps, tolerance, indices=None, kinks=None):
    """Compare `analytic` against central differences of `loss`.

    :param loss: callable of no arguments reading `value`
    :param value: float64 array perturbed in place, restored afterwards
    :param indices: entries to check, every entry by default
    :param kinks: optional :class:`KinkWatch`; entries whose perturbation
                  switches an activation or pooling winner are skipped
    :rtype: :class:`GradCheckResult`
    """
    if indices is None:
        indices = list(np.ndindex(value.shape))
    worst = 0.0
    skipped = 0
    for index in indices:
        if kinks is not None:
            kinks.reset()
        original = value[index]
        value[index] = original + eps
        plus = loss()
        value[index] = original - eps
        minus = loss()
        value[index] = original
        if kinks is not None and kinks.crossed:
            skipped += 1
            continue
        numeric = (plus - minus) / (2.0 * eps)
        worst = max(worst, relative_error(float(analytic[index]), numeric))
    result = GradCheckResult(name, worst, worst < tolerance)
    logger.debug('%s: max relative error %.3e (%d kink-adjacent entries skipped)', name, worst, skipped)
    return result


class KinkWatch(object):
    """Track whether a forward pass of `net` leaves the activation pattern
    of a reference pass.

    The pattern is the sign of every ReLU-family input and the winner of
    every pooling window.
    """

    def __init__(self, net):
        self.net = net
        self.reference = None
        self.crossed = False

    def pattern(self):
        pattern = []
        for layer in self.net.layers:
            if layer.kind in ('relu', 'leaky_relu'):
                pattern.append(layer._cache_x > 0)
            elif layer.kind == 'maxpool':
                pattern.append(layer._cache_record.argmax)
        return pattern

    def record(self):
        "Take the pattern of the forward pass just run as the reference"
        self.reference = self.pattern()

    def reset(self):
        self.crossed = False

    def observe(self):
        "Compare the forward pass just run against the reference"
        if any(not np.array_equal(a, b) for a, b in zip(self.pattern(), self.reference)):
            self.crossed = True


def sample_indices(rng, shape, count):
    "Up to `count` distinct entries of an array of `shape`"
    size = int(np.prod(shape))
    flat = rng.choice(size, size=min(count, size), replace=False)
    return [np.unravel_index(int(i), shape) for i in sorted(flat)]


def _away_from_kink(rng, shape, gap=0.1):
    u = rng.uniform(-1.0, 1.0, size=shape)
    return np.sign(u) * (np.abs(u) + gap)


######################################################################
# layer checks

def check_conv(rng, name, kernel, stride, padding, eps=1e-2):
    x = rng.standard_normal((2, 3, 8, 8))
    p = L.ConvParams(0.5 * rng.standard_normal((4, 3, kernel, kernel)),
                     rng.standard_normal(4), stride, padding)
    proj = rng.standard_normal(L.conv2d_forward(x, p).shape)
    grads = L.conv2d_backward(x, p, proj)

    def loss():
        return float((L.conv2d_forward(x, p) * proj).sum())

    return [check_gradient(name + ' input', loss, x, grads.d_input, eps, LAYER_TOLERANCE),
            check_gradient(name + ' weights', loss, p.weights, grads.d_weights, eps, LAYER_TOLERANCE),
            check_gradient(name + ' bias', loss, p.bias, grads.d_bias, eps, LAYER_TOLERANCE)]


def check_upconv(rng, eps=1e-2):
    x = rng.standard_normal((2, 4, 4, 4))
    p = L.ConvParams(0.5 * rng.standard_normal((2, 4, 2, 2)), rng.standard_normal(2), 2, 0)
    proj = rng.standard_normal(L.upconv2x2_forward(x, p).shape)
    grads = L.upconv2x2_backward(x, p, proj)

    def loss():
        return float((L.upconv2x2_forward(x, p) * proj).sum())

    return [check_gradient('upconv input', loss, x, grads.d_input, eps, LAYER_TOLERANCE),
            check_gradient('upconv weights', loss, p.weights, grads.d_weights, eps, LAYER_TOLERANCE),
            check_gradient('upconv bias', loss, p.bias, grads.d_bias, eps, LAYER_TOLERANCE)]


def check_maxpool(rng, eps=1e-2):
    shape = (2, 3, 6, 6)
    x = (rng.permutation(int(np.prod(shape))) * 0.05).reshape(shape).astype(np.float64)
    out, record = L.maxpool2x2_forward(x)
    proj = rng.standard_normal(out.shape)
    analytic = L.maxpool2x2_backward(record, proj)

    def loss():
        return float((L.maxpool2x2_forward(x)[0] * proj).sum())

    return [check_gradient('maxpool', loss, x, analytic, eps, LAYER_TOLERANCE)]


def check_activation(rng, kind, eps=1e-2):
    x = _away_from_kink(rng, (2, 3, 5, 5))
    proj = rng.standard_normal(x.shape)
    analytic = L.activation_backward(kind, x, proj)

    def loss():
        return float((L.activation_forward(kind, x) * proj).sum())

    return [check_gradient(kind, loss, x, analytic, eps, LAYER_TOLERANCE)]


def check_dropout(rng, eps=1e-2, rate=0.5, seed=11):
    x = rng.standard_normal((2, 3, 5, 5))
    proj = rng.standard_normal(x.shape)
    _, record = L.dropout_forward(x, rate, seed, training=True)
    analytic = L.dropout_backward(record, proj)

    def loss():
        return float((L.dropout_forward(x, rate, seed, training=True)[0] * proj).sum())

    return [check_gradient('dropout', loss, x, analytic, eps, LAYER_TOLERANCE)]


def check_upsample(rng, eps=1e-2):
    x = rng.standard_normal((2, 2, 4, 5))
    proj = rng.standard_normal(L.bilinear_upsample(x, 2).shape)
    analytic = L.bilinear_upsample_backward(proj, 2)

    def loss():
        return float((L.bilinear_upsample(x, 2) * proj).sum())

    return [check_gradient('bilinear upsample', loss, x, analytic, eps, LAYER_TOLERANCE)]


def check_softmax(rng, eps=1e-5):
    logits = rng.standard_normal((2, 2, 4, 4))
    targets = rng.integers(0, 2, size=(2, 4, 4))
    _, d_logits = L.softmax_cross_entropy(logits, targets)

    def ce():
        return L.softmax_cross_entropy(logits, targets)[0]

    proj = rng.standard_normal(logits.shape)
    d_softmax = L.softmax_backward(L.softmax(logits), proj)

    def projected():
        return float((L.softmax(logits) * proj).sum())

    return [check_gradient('softmax cross-entropy', ce, logits, d_logits, eps, LAYER_TOLERANCE),
            check_gradient('softmax', projected, logits, d_softmax, eps, LAYER_TOLERANCE)]


######################################################################
# networks

def check_network(rng, name, net, x, targets, per_param=3, eps=1e-5, dropout_seed=5):
    """Sampled check of every parameter and of the input of `net`.

    `net` is cast to float64; dropout runs in training mode with a fixed
    seed so every evaluation uses the same mask.
    """
    net.astype(np.float64)
    kinks = KinkWatch(net)

    def loss():
        logits = net.forward(x, training=True, seed=dropout_seed)
        kinks.observe()
        return L.softmax_cross_entropy(logits, targets)[0]

    logits = net.forward(x, training=True, seed=dropout_seed)
    kinks.record()
    _, d_logits = L.softmax_cross_entropy(logits, targets)
    d_input = net.backward(d_logits)
    analytic = collections.OrderedDict((k, v.copy()) for k, v in net.grads.items())

    worst = 0.0
    for pname, value in net.params.items():
        indices = sample_indices(rng, value.shape, per_param)
        result = check_gradient('{} {}'.format(name, pname), loss, value, analytic[pname],
                                eps, NETWORK_TOLERANCE, indices, kinks)
        worst = max(worst, result.max_rel_error)
    result = check_gradient('{} input'.format(name), loss, x, d_input, eps, NETWORK_TOLERANCE,
                            sample_indices(rng, x.shape, 4 * per_param), kinks)
    worst = max(worst, result.max_rel_error)
    return [GradCheckResult(name, worst, worst < NETWORK_TOLERANCE)]


def check_unet(rng, size=32):
    net = build_unet(in_channels=3, num_classes=2, base_channels=4, dropout_rate=0.5,
                     seed=int(rng.integers(2 ** 32)))
    x = rng.standard_normal((2, 3, size, size))
    targets = rng.integers(0, 2, size=(2, size, size))
    return check_network(rng, 'unet', net, x, targets)


def check_discriminator(rng, size=16):
    net = build_discriminator(in_channels=2, channels=(4, 8, 16, 32), seed=int(rng.integers(2 ** 32)))
    x = L.softmax(rng.standard_normal((2, 2, size, size)))
    targets = np.ones((2, size, size), dtype=np.uint8)
    return check_network(rng, 'discriminator', net, x, targets)


def run_suite(seed=0, networks=True):
    """Run every layer check, then the end-to-end checks.

    :returns: list of :class:`GradCheckResult`
    """
    rng = make_rng(seed)
    results = []
    results += check_conv(rng, 'conv 3x3', 3, 1, 1)
    results += check_conv(rng, 'conv 1x1', 1, 1, 0)
    results += check_conv(rng, 'conv 4x4/2', 4, 2, 1)
    results += check_upconv(rng)
    results += check_maxpool(rng)
    results += check_activation(rng, 'relu')
    results += check_activation(rng, 'leaky_relu')
    results += check_dropout(rng)
    results += check_upsample(rng)
    results += check_softmax(rng)
    if networks:
        results += check_unet(rng)
        results += check_discriminator(rng)
    for result in results:
        if not result.passed:
            logger.warning('%s failed with relative error %.3e', result.name, result.max_rel_error)
    return results


def suite_passed(results):
    return all(r.passed for r in results)
