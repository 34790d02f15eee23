"""
Filesystem and environment helpers for the command-line surface.

USAGE:

>>> with staged_dir('runs/exp1') as tmp:              # doctest: +SKIP
...   history.to_csv(os.path.join(tmp, 'history.csv'))
>>> os.path.exists('runs/exp1/history.csv')           # doctest: +SKIP
True
"""
from __future__ import absolute_import

import glob
import os
import shutil
import tempfile

from .errors import InvalidConfig, InvalidData

import logging
logger = logging.getLogger('advseg')


THREADS_VARIABLE = 'ADVSEG_THREADS'


def fullpath(path):
    """
    Get the absolute path, expanding any variables
    """
    return os.path.abspath(os.path.expandvars(os.path.expanduser(path)))


def ensure_dir(path):
    """
    Make sure the `path` is a directory by creating it if needed.
    """
    if not os.path.exists(path):
        logger.debug('Creating missing directory %s', path)
        os.makedirs(path)
    return path


def find_cases(dirpath, suffix='.vol'):
    """Sorted paths of the case files directly under `dirpath`

    :raises: :class:`InvalidData` if `dirpath` is not a directory
    """
    dirpath = fullpath(dirpath)
    if not os.path.isdir(dirpath):
        msg = 'no such data directory'
        logger.error('%s: %s', dirpath, msg)
        raise InvalidData(msg, path=dirpath)
    return sorted(glob.glob(os.path.join(dirpath, '*' + suffix)))


class staged_dir(object):
    """Build an output directory out of sight and publish it on success.

    Entering the context creates a temporary sibling of `path` and returns
    it. A clean exit moves every entry of the temporary directory into
    `path` (created if needed, existing files replaced); an exception
    discards it, so a failed command leaves `path` untouched.
    """

    def __init__(self, path):
        self.path = fullpath(path)
        self._tmp = None

    def __enter__(self):
        parent = os.path.dirname(self.path)
        ensure_dir(parent)
        self._tmp = tempfile.mkdtemp(prefix='.' + os.path.basename(self.path) + '-', dir=parent)
        logger.debug('Staging %s in %s', self.path, self._tmp)
        return self._tmp

    def __exit__(self, exc_type, exc_value, traceback):
        try:
            if exc_type is None:
                ensure_dir(self.path)
                for name in sorted(os.listdir(self._tmp)):
                    os.replace(os.path.join(self._tmp, name), os.path.join(self.path, name))
                logger.debug('Published %s', self.path)
        finally:
            shutil.rmtree(self._tmp, ignore_errors=True)
        return False


def thread_count(environ=None):
    """Worker threads allowed by ``ADVSEG_THREADS`` (default 1)

    :raises: :class:`InvalidConfig` for a non-positive or non-integer value
    """
    environ = os.environ if environ is None else environ
    value = environ.get(THREADS_VARIABLE, '').strip()
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        threads = 0
    if threads < 1:
        msg = '{} must be a positive integer, got {!r}'.format(THREADS_VARIABLE, value)
        logger.error(msg)
        raise InvalidConfig(msg)
    return threads
