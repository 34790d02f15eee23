"""
Exceptions raised by advseg.

Every exception carries the process exit code the command-line surface
reports for it:

- 2: configuration problems (bad flags, config files, checkpoints)
- 3: data problems (volumes, shapes, labels, formats)

USAGE:

>>> try:
...   load_volume('missing.vol')
... except AdvsegError as e:
...   sys.exit(e.exit_code)
"""


class AdvsegError(Exception):
    "Base class of every error raised by advseg"

    _exit_code = 3

    def __init__(self, message, path=None):
        super(AdvsegError, self).__init__(message)
        self._message = message
        self._path = path

    @property
    def message(self):
        "Human readable description"
        return self._message

    @property
    def path(self):
        "The file the error refers to, if any"
        return self._path

    @property
    def exit_code(self):
        "The exit code the CLI reports for this error"
        return self._exit_code

    def __str__(self):
        if self._path is None:
            return self._message
        return '{}: {}'.format(self._path, self._message)


class InvalidShape(AdvsegError):
    "A tensor shape has a zero or negative dimension, or the wrong rank"
    pass


class ShapeMismatch(AdvsegError):
    "Two operands disagree on a dimension they must share"
    pass


class InvalidGeometry(AdvsegError):
    "Spatial sizes are incompatible with a layer's kernel, stride or pooling"
    pass


class InvalidConfig(AdvsegError):
    "A configuration value is out of range or malformed"
    _exit_code = 2


class InvalidLabel(AdvsegError):
    "A label map holds a value outside {0, 1}"
    pass


class InvalidValue(AdvsegError):
    "A numeric input is NaN or infinite"
    pass


class InvalidData(AdvsegError):
    "A volume, case list or dataset violates its invariants"
    pass


class FormatError(AdvsegError):
    "A file does not follow its binary layout"
    pass


class CheckpointError(FormatError):
    "An ADVSEG1 checkpoint is corrupt or does not fit the network"
    _exit_code = 2


class StateError(AdvsegError):
    "An operation was called out of order, e.g. backward before forward"
    pass
