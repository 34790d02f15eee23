"""
Adam updates over a network's parameter store.

For every parameter θ with gradient g, step t = 1, 2, ...::

    m <- β1 m + (1 - β1) g
    v <- β2 v + (1 - β2) g²
    m̂ = m / (1 - β1^t)
    v̂ = v / (1 - β2^t)
    θ <- θ - lr m̂ / (sqrt(v̂) + ε)

Moments are kept in float64; the step is rounded to the parameter dtype
before it is subtracted.
"""
from __future__ import absolute_import

import numpy as np

from .errors import InvalidConfig, ShapeMismatch


class AdamState(object):
    """Moments and hyperparameters of one optimizer.

    :param float lr: learning rate
    :param float beta1: first-moment decay
    :param float beta2: second-moment decay
    :param float eps: denominator offset
    """

    def __init__(self, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        if lr <= 0:
            raise InvalidConfig('learning rate must be > 0, got {}'.format(lr))
        if not (0 <= beta1 < 1 and 0 <= beta2 < 1):
            raise InvalidConfig('betas must be in [0, 1), got {}, {}'.format(beta1, beta2))
        if eps <= 0:
            raise InvalidConfig('eps must be > 0, got {}'.format(eps))
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step = 0
        self.m = {}
        self.v = {}

    @classmethod
    def from_config(cls, cfg):
        "Optimizer state for a :class:`advseg.train.TrainConfig`"
        return cls(lr=cfg.learning_rate, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)


def optimizer_update(params, grads, state):
    """Apply one Adam step to `params` in place and return them.

    :param params: ordered dict of parameter arrays
    :param grads: gradients with the same names and shapes
    :param state: :class:`AdamState`, advanced by one step
    :raises: :class:`ShapeMismatch` if the stores are not congruent
    """
    if list(params) != list(grads):
        raise ShapeMismatch('parameter and gradient stores hold different names')
    for name, value in params.items():
        if grads[name].shape != value.shape:
            raise ShapeMismatch('{}: gradient {} vs parameter {}'
                                .format(name, grads[name].shape, value.shape))

    state.step += 1
    t = state.step
    correction1 = 1.0 - state.beta1 ** t
    correction2 = 1.0 - state.beta2 ** t
    for name, value in params.items():
        g = grads[name].astype(np.float64)
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(value.shape)
            v = np.zeros(value.shape)
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(value.dtype)
    return params
