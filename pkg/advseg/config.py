"""
Run configuration: plain ``key = value`` files merged with command-line
flags.

Precedence for every key is: command-line flag, then config file, then
the built-in default. Config files hold one assignment per line; blank
lines and lines starting with ``#`` are ignored and keys may be spelled
with ``-`` or ``_``::

    # phantom experiment
    epochs = 300
    lambda-adv = 0.1
    disc_channels = 64, 128, 256, 512
    modalities = CT, DPWI, CBF
"""
from __future__ import absolute_import

import collections

from .errors import InvalidConfig
from .train import TrainConfig

import logging
logger = logging.getLogger('advseg')


def _bool(text):
    lowered = text.lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError('not a boolean: {!r}'.format(text))


def _ints(text):
    return tuple(int(part) for part in text.split(',') if part.strip())


def _names(text):
    return tuple(part.strip() for part in text.split(',') if part.strip())


TRAIN_KEYS = {
    'lambda_adv': float,
    'learning_rate': float,
    'beta1': float,
    'beta2': float,
    'eps': float,
    'epochs': int,
    'batch_size': int,
    'split_ratio': float,
    'seed': int,
    'dropout_rate': float,
    'base_channels': int,
    'disc_channels': _ints,
    'leaky_slope': float,
    'skip_empty_slices': _bool,
    'modalities': _names,
}

RUN_DEFAULTS = collections.OrderedDict([
    ('data', None),
    ('out', '.'),
    ('checkpoint', None),
    ('pred', None),
    ('phantom', 0),
    ('size', 256),
    ('depth', None),
    ('count', 1),
    ('lesions', 1),
    ('folds', 5),
])

RUN_KEYS = {
    'data': str,
    'out': str,
    'checkpoint': str,
    'pred': str,
    'phantom': int,
    'size': int,
    'depth': int,
    'count': int,
    'lesions': int,
    'folds': int,
}

ALIASES = {
    'lr': 'learning_rate',
    'dropout': 'dropout_rate',
}


RunConfig = collections.namedtuple('RunConfig', ['command', 'train'] + list(RUN_DEFAULTS))


def normalize_key(key):
    key = key.strip().replace('-', '_')
    return ALIASES.get(key, key)


def convert(key, text, where='value'):
    """Parse the string `text` for `key`

    :raises: :class:`InvalidConfig` for unknown keys and malformed values
    """
    parser = TRAIN_KEYS.get(key) or RUN_KEYS.get(key)
    if parser is None:
        raise InvalidConfig('{}: unknown key {!r}'.format(where, key))
    try:
        return parser(text.strip())
    except ValueError as e:
        raise InvalidConfig('{}: bad value for {}: {}'.format(where, key, e))


def parse_config_text(text, path=None):
    """Parse ``key = value`` lines into a dict of typed values.

    :raises: :class:`InvalidConfig` naming the offending line
    """
    values = collections.OrderedDict()
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith('#'):
            continue
        where = 'line {}'.format(lineno)
        if '=' not in stripped:
            msg = '{}: expected key = value, got {!r}'.format(where, stripped)
            logger.error('%s: %s', path, msg)
            raise InvalidConfig(msg, path=path)
        key, value = stripped.split('=', 1)
        key = normalize_key(key)
        try:
            values[key] = convert(key, value, where)
        except InvalidConfig as e:
            logger.error('%s: %s', path, e)
            raise InvalidConfig(e.message, path=path)
    return values


def load_config_file(path):
    try:
        with open(path) as fd:
            text = fd.read()
    except (IOError, OSError) as e:
        raise InvalidConfig('cannot read config file: {}'.format(e), path=path)
    return parse_config_text(text, path=path)


def resolve(command, flags=None, file_values=None):
    """Merge defaults, config-file values and flags into a :class:`RunConfig`.

    :param flags: dict of flag values; None means "not given"
    :param file_values: dict from :func:`parse_config_text`
    :raises: :class:`InvalidConfig` for unknown keys or out-of-range values
    """
    merged = collections.OrderedDict()
    for source in (file_values or {}, flags or {}):
        for key, value in source.items():
            if value is None:
                continue
            key = normalize_key(key)
            if key not in TRAIN_KEYS and key not in RUN_KEYS:
                raise InvalidConfig('unknown key {!r}'.format(key))
            merged[key] = value

    train = TrainConfig(**{k: v for k, v in merged.items() if k in TRAIN_KEYS})
    run = dict(RUN_DEFAULTS)
    run.update((k, v) for k, v in merged.items() if k in RUN_KEYS)
    for key in ('phantom', 'count', 'lesions'):
        if run[key] < 0:
            raise InvalidConfig('{} must be >= 0, got {}'.format(key, run[key]))
    if run['depth'] is not None and run['depth'] < 1:
        raise InvalidConfig('depth must be >= 1, got {}'.format(run['depth']))
    return RunConfig(command=command, train=train.validate(), **run)
