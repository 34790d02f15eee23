"""
Adversarial training of the segmentor.

Every batch takes two updates. The discriminator goes first: it learns to
label one-hot ground truth as real (1) and the segmentor's probability maps
as fake (0). Then the segmentor is updated on::

    chi = chi_seg + lambda_adv * chi_adv

where ``chi_seg`` is the pixel-wise cross-entropy against the ground truth
and ``chi_adv`` the cross-entropy of the discriminator's verdict on the
segmentor's probabilities against the all-real label map. The adversarial
gradient flows back through the discriminator into the segmentor; the
discriminator's own parameters are left alone in that step.

USAGE::

    >>> cases = [generate_phantom(s, depth=2, size=32) for s in range(4)]
    >>> cfg = TrainConfig(epochs=2, base_channels=4, disc_channels=(4, 8, 16, 32))
    >>> G, D, history = fit(cases, cfg)                        # doctest: +SKIP
    >>> history.best_epoch                                     # doctest: +SKIP
    2
"""
from __future__ import absolute_import

import collections
import csv
import math
import time

import numpy as np

from . import layers as L
from .data import MODALITIES, SEGMENTOR_MODALITIES, kfold_splits, make_batch, reassemble, slice_volume, split_train_valid
from .discriminator import DISC_CHANNELS, build_discriminator, disc_backward, disc_forward
from .errors import InvalidConfig, InvalidData, InvalidValue, ShapeMismatch, StateError
from .metrics import dice
from .optim import AdamState, optimizer_update
from .tensor import derive_seed, make_rng, one_hot
from .unet import build_unet, unet_backward, unet_forward

import logging
logger = logging.getLogger('advseg')


SEGMENTOR_STREAM = 1
DISCRIMINATOR_STREAM = 2
SHUFFLE_STREAM = 3
DROPOUT_STREAM = 4

HISTORY_HEADER = ('epoch', 'chi', 'chi_seg', 'chi_adv', 'disc_loss', 'val_dice')

_TRAIN_DEFAULTS = collections.OrderedDict([
    ('lambda_adv', 0.1),
    ('learning_rate', 1e-4),
    ('beta1', 0.9),
    ('beta2', 0.999),
    ('eps', 1e-8),
    ('epochs', 50),
    ('batch_size', 4),
    ('split_ratio', 0.8),
    ('seed', 0),
    ('dropout_rate', 0.5),
    ('base_channels', 64),
    ('disc_channels', DISC_CHANNELS),
    ('leaky_slope', 0.2),
    ('skip_empty_slices', False),
    ('modalities', SEGMENTOR_MODALITIES),
])


class TrainConfig(collections.namedtuple('TrainConfig', list(_TRAIN_DEFAULTS),
                                         defaults=list(_TRAIN_DEFAULTS.values()))):
    """Hyperparameters of a training run.

    Immutable; derive variants with ``cfg._replace(...)``.
    """
    __slots__ = ()

    def validate(self):
        """Return self if every field is in range

        :raises: :class:`InvalidConfig` naming the first offending field
        """
        def fail(field, expected):
            msg = '{} must be {}, got {!r}'.format(field, expected, getattr(self, field))
            logger.error(msg)
            raise InvalidConfig(msg)

        if not (math.isfinite(self.lambda_adv) and self.lambda_adv >= 0):
            fail('lambda_adv', '>= 0')
        if not self.learning_rate > 0:
            fail('learning_rate', '> 0')
        if not 0 <= self.beta1 < 1:
            fail('beta1', 'in [0, 1)')
        if not 0 <= self.beta2 < 1:
            fail('beta2', 'in [0, 1)')
        if not self.eps > 0:
            fail('eps', '> 0')
        if self.epochs < 1:
            fail('epochs', '>= 1')
        if self.batch_size < 1:
            fail('batch_size', '>= 1')
        if not 0 < self.split_ratio < 1:
            fail('split_ratio', 'in (0, 1)')
        if self.seed < 0:
            fail('seed', '>= 0')
        if not 0 <= self.dropout_rate < 1:
            fail('dropout_rate', 'in [0, 1)')
        if self.base_channels < 1:
            fail('base_channels', '>= 1')
        channels = tuple(self.disc_channels)
        if not channels or any(b <= a for a, b in zip(channels, channels[1:])) or channels[0] < 1:
            fail('disc_channels', 'positive and strictly increasing')
        if not 0 < self.leaky_slope < 1:
            fail('leaky_slope', 'in (0, 1)')
        mods = tuple(self.modalities)
        if not mods or len(set(mods)) != len(mods) or any(m not in MODALITIES for m in mods):
            fail('modalities', 'distinct names from {}'.format(', '.join(MODALITIES)))
        return self


LossBreakdown = collections.namedtuple('LossBreakdown',
                                       ['chi', 'chi_seg', 'chi_adv', 'lambda_adv', 'disc_loss'])

EpochRecord = collections.namedtuple('EpochRecord',
                                     ['epoch', 'chi', 'chi_seg', 'chi_adv', 'disc_loss',
                                      'val_dice', 'seconds'])

FoldResult = collections.namedtuple('FoldResult', ['fold', 'best_epoch', 'best_val_dice'])


class TrainHistory(object):
    """Per-epoch means, per-step losses and the best validation epoch.

    `best_params` is a snapshot of the segmentor parameters taken at the
    epoch with the highest validation Dice (the earliest on ties).
    """

    def __init__(self):
        self.epochs = []
        self.steps = []
        self.best_epoch = None
        self.best_val_dice = None
        self.best_params = None

    def record(self, record, params):
        if self.epochs and record.epoch <= self.epochs[-1].epoch:
            raise StateError('epoch {} recorded after {}'.format(record.epoch, self.epochs[-1].epoch))
        self.epochs.append(record)
        if self.best_val_dice is None or record.val_dice > self.best_val_dice:
            self.best_epoch = record.epoch
            self.best_val_dice = record.val_dice
            self.best_params = collections.OrderedDict((k, v.copy()) for k, v in params.items())

    def column(self, name):
        return [getattr(r, name) for r in self.epochs]

    def rows(self):
        "CSV rows; floats use their shortest round-tripping repr"
        for r in self.epochs:
            yield [str(r.epoch)] + [repr(float(getattr(r, k))) for k in HISTORY_HEADER[1:]]

    def to_csv(self, path):
        with open(path, 'w', newline='') as fd:
            writer = csv.writer(fd, lineterminator='\n')
            writer.writerow(HISTORY_HEADER)
            writer.writerows(self.rows())

    def __len__(self):
        return len(self.epochs)


def total_loss(chi_seg, chi_adv, lambda_adv):
    """``chi_seg + lambda_adv * chi_adv`` in 64-bit floats

    :raises: :class:`InvalidValue` for non-finite inputs,
             :class:`InvalidConfig` for a negative `lambda_adv`
    """
    values = (float(chi_seg), float(chi_adv), float(lambda_adv))
    if not all(math.isfinite(v) for v in values):
        raise InvalidValue('non-finite loss term in {}'.format(values))
    if values[2] < 0:
        raise InvalidConfig('lambda_adv must be >= 0, got {}'.format(lambda_adv))
    return values[0] + values[2] * values[1]


def _label_map(n, h, w, value):
    return np.full((n, h, w), value, dtype=np.uint8)


def discriminator_step(D, gt_onehot, pred_probs, opt_state):
    """One discriminator update.

    The real term pushes D(gt_onehot) towards the all-1 label map, the fake
    term pushes D(pred_probs) towards all-0. `pred_probs` is a plain array,
    so nothing reaches the segmentor.

    :returns: the summed loss of both terms, before the update
    :raises: :class:`ShapeMismatch` if the two maps differ in shape
    """
    if D is None:
        raise StateError('discriminator is not built')
    if gt_onehot.shape != pred_probs.shape:
        raise ShapeMismatch('ground truth {} vs prediction {}'.format(gt_onehot.shape, pred_probs.shape))
    n, _, h, w = gt_onehot.shape

    conf = disc_forward(D, gt_onehot.astype(pred_probs.dtype))
    real_loss, d_conf = L.softmax_cross_entropy(conf, _label_map(n, h, w, 1))
    disc_backward(D, d_conf)

    conf = disc_forward(D, pred_probs)
    fake_loss, d_conf = L.softmax_cross_entropy(conf, _label_map(n, h, w, 0))
    disc_backward(D, d_conf, accumulate=True)

    optimizer_update(D.params, D.grads, opt_state)
    return real_loss + fake_loss


def segmentor_step(G, D, batch, cfg, opt_state, seed=0, logits=None):
    """One segmentor update on `batch`.

    :param D: the discriminator, or None for discriminator-free training
    :param seed: dropout seed of the forward pass
    :param logits: output of a training-mode forward pass of `G` on
                   ``batch.images`` that has not been back-propagated yet;
                   computed here when omitted
    :returns: :class:`LossBreakdown` with ``disc_loss`` left at 0
    :raises: :class:`StateError` if `G` is not built
    """
    if G is None:
        raise StateError('segmentor is not built')
    if batch.labels is None:
        raise InvalidData('segmentor step needs labelled slices')
    if logits is None:
        logits = unet_forward(G, batch.images, training=True, seed=seed)

    chi_seg, d_logits = L.softmax_cross_entropy(logits, batch.labels)
    chi_adv = 0.0
    lambda_adv = cfg.lambda_adv if D is not None else 0.0

    if D is not None:
        n, _, h, w = logits.shape
        probs = L.softmax(logits)
        conf = disc_forward(D, probs)
        chi_adv, d_conf = L.softmax_cross_entropy(conf, _label_map(n, h, w, 1))
        d_probs = disc_backward(D, d_conf)
        if lambda_adv != 0:
            d_logits = d_logits + (lambda_adv * L.softmax_backward(probs, d_probs)).astype(d_logits.dtype)

    unet_backward(G, d_logits)
    optimizer_update(G.params, G.grads, opt_state)
    chi = total_loss(chi_seg, chi_adv, lambda_adv)
    return LossBreakdown(chi, chi_seg, chi_adv, lambda_adv, 0.0)


def predict_volume(G, case, batch_size=4, modalities=SEGMENTOR_MODALITIES):
    """Segment every slice of `case` and re-stack the slices.

    Runs the segmentor in inference mode (dropout off, no discriminator)
    and takes the per-pixel argmax; ties go to the background class.

    :returns: uint8 mask of the case's (depth, h, w)
    :raises: :class:`InvalidData` for a missing modality
    """
    records = slice_volume(case, training=False, modalities=modalities)
    masks = []
    for start in range(0, len(records), batch_size):
        batch = make_batch(records[start:start + batch_size])
        logits = unet_forward(G, batch.images, training=False)
        masks.extend(np.argmax(logits, axis=1).astype(np.uint8))
    return reassemble(masks, case.depth)


def validation_dice(G, cases, cfg):
    "Mean Dice of `G`'s predictions over labelled `cases`"
    scores = [dice(predict_volume(G, case, cfg.batch_size, cfg.modalities), case.mask)
              for case in cases]
    return float(np.mean(scores))


def _training_slices(cases, cfg):
    records = []
    for case in cases:
        records.extend(slice_volume(case, training=True, modalities=cfg.modalities,
                                    skip_empty=cfg.skip_empty_slices))
    if not records:
        raise InvalidData('no training slices left')
    return records


def build_networks(cfg, in_channels):
    "Segmentor and discriminator for `cfg`, seeded from their own streams"
    G = build_unet(in_channels=in_channels, num_classes=2, base_channels=cfg.base_channels,
                   dropout_rate=cfg.dropout_rate, seed=derive_seed(cfg.seed, SEGMENTOR_STREAM))
    D = build_discriminator(in_channels=2, channels=cfg.disc_channels, slope=cfg.leaky_slope,
                            seed=derive_seed(cfg.seed, DISCRIMINATOR_STREAM))
    return G, D


def fit(cases, cfg, adversarial=True):
    """Split `cases` and train on them.

    :param cases: list of labelled :class:`advseg.data.VolumeCase`
    :param cfg: :class:`TrainConfig`
    :param bool adversarial: train without a discriminator when False
    :returns: (G, D, :class:`TrainHistory`); D is None when not adversarial
    :raises: :class:`InvalidData` for fewer than 2 cases or missing masks
    """
    cfg = cfg.validate()
    cases = list(cases)
    if not cases:
        raise InvalidData('empty dataset')
    train, valid = split_train_valid(cases, cfg.split_ratio, cfg.seed)
    logger.info('Split %d cases into %d train / %d valid', len(cases), len(train), len(valid))
    return fit_split(train, valid, cfg, adversarial=adversarial)


def fit_split(train, valid, cfg, adversarial=True):
    """Train on `train`, selecting the best epoch by Dice on `valid`.

    Per epoch the training slices are shuffled with a seed derived from
    ``(cfg.seed, epoch)``; every batch then takes one discriminator step
    followed by one segmentor step.
    """
    cfg = cfg.validate()
    if not train or not valid:
        raise InvalidData('need at least one training and one validation case')
    for case in list(train) + list(valid):
        if case.mask is None:
            raise InvalidData('{}: training needs a ground-truth mask'.format(case.case_id))

    records = _training_slices(train, cfg)
    G, D = build_networks(cfg, len(cfg.modalities))
    if not adversarial:
        D = None
    g_state = AdamState.from_config(cfg)
    d_state = AdamState.from_config(cfg)
    history = TrainHistory()

    for epoch in range(1, cfg.epochs + 1):
        started = time.time()
        order = make_rng(derive_seed(cfg.seed, SHUFFLE_STREAM, epoch)).permutation(len(records))
        seg_losses, adv_losses, disc_losses = [], [], []
        for step, start in enumerate(range(0, len(order), cfg.batch_size)):
            batch = make_batch([records[i] for i in order[start:start + cfg.batch_size]])
            seed = derive_seed(cfg.seed, DROPOUT_STREAM, epoch, step)
            logits = unet_forward(G, batch.images, training=True, seed=seed)

            disc_loss = 0.0
            if D is not None:
                gt = one_hot(batch.labels, 2, dtype=logits.dtype)
                disc_loss = discriminator_step(D, gt, L.softmax(logits), d_state)

            losses = segmentor_step(G, D, batch, cfg, g_state, seed=seed, logits=logits)
            losses = losses._replace(disc_loss=disc_loss)
            if not math.isfinite(disc_loss):
                raise InvalidValue('discriminator loss diverged at epoch {} step {}'.format(epoch, step))
            history.steps.append(losses)
            seg_losses.append(losses.chi_seg)
            adv_losses.append(losses.chi_adv)
            disc_losses.append(disc_loss)
            logger.debug('epoch %d step %d: chi %.6f seg %.6f adv %.6f disc %.6f',
                         epoch, step, losses.chi, losses.chi_seg, losses.chi_adv, disc_loss)

        chi_seg = float(np.mean(seg_losses))
        chi_adv = float(np.mean(adv_losses))
        lambda_adv = cfg.lambda_adv if D is not None else 0.0
        val_dice = validation_dice(G, valid, cfg)
        record = EpochRecord(epoch, total_loss(chi_seg, chi_adv, lambda_adv), chi_seg, chi_adv,
                             float(np.mean(disc_losses)), val_dice, time.time() - started)
        history.record(record, G.params)
        logger.info('epoch %d: chi %.5f seg %.5f adv %.5f disc %.5f val dice %.4f (%.1fs)',
                    epoch, record.chi, chi_seg, chi_adv, record.disc_loss, val_dice, record.seconds)

    logger.info('Best epoch %d with validation dice %.4f', history.best_epoch, history.best_val_dice)
    return G, D, history


def cross_validate(cases, cfg, folds=5, adversarial=True):
    """Train once per fold of :func:`advseg.data.kfold_splits`.

    :returns: list of :class:`FoldResult`, one per fold
    """
    cfg = cfg.validate()
    results = []
    for fold, (train, valid) in enumerate(kfold_splits(cases, folds, cfg.seed), 1):
        logger.info('Fold %d/%d: %d train / %d valid', fold, folds, len(train), len(valid))
        _, _, history = fit_split(train, valid, cfg, adversarial=adversarial)
        results.append(FoldResult(fold, history.best_epoch, history.best_val_dice))
    scores = [r.best_val_dice for r in results]
    logger.info('Cross-validation dice %.4f +- %.4f', np.mean(scores), np.std(scores))
    return results


def write_folds_csv(path, results):
    with open(path, 'w', newline='') as fd:
        writer = csv.writer(fd, lineterminator='\n')
        writer.writerow(FoldResult._fields)
        for r in results:
            writer.writerow([r.fold, r.best_epoch, repr(float(r.best_val_dice))])
