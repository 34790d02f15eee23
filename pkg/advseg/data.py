"""
Volumes, slices, splits and synthetic phantoms.

A :class:`VolumeCase` holds one patient's CT-perfusion maps as float32
grids of shape (depth, h, w) and an optional binary lesion mask of the same
shape. The segmentor never sees volumes: :func:`slice_volume` cuts a case
into axial slices, stacks the selected modalities (CT, DPWI, CBF by
default) as channels and z-scores every channel of every slice.

VOL1 files (little-endian)::

    b'VOL1'
    u32 modality_count
    per modality, in sorted name order:
        u8 name length, name bytes, u32 depth, h, w, float32 data
    u8 has_mask
    if has_mask: u32 depth, h, w, u8 mask bytes in {0, 1}

Mask-only files (modality_count = 0) hold predictions.
"""
from __future__ import absolute_import

import collections
import io
import math
import os
import struct

import numpy as np
import scipy.ndimage

from .errors import FormatError, InvalidConfig, InvalidData
from .tensor import DTYPE, derive_seed, make_rng

import logging
logger = logging.getLogger('advseg')


MODALITIES = ('CT', 'DPWI', 'CBF', 'CBV', 'MTT', 'Tmax')
SEGMENTOR_MODALITIES = ('CT', 'DPWI', 'CBF')
VOLUME_MAGIC = b'VOL1'
VOLUME_SUFFIX = '.vol'

PHANTOM_DEPTHS = (2, 18)
LESION_STREAM = 5
TEXTURE_STREAM = 6
SPLIT_STREAM = 7


def check_mask(mask, name='mask'):
    """Return `mask` as a uint8 (depth, h, w) array of {0, 1}

    :raises: :class:`InvalidData`
    """
    mask = np.asarray(mask)
    if mask.ndim != 3 or min(mask.shape) < 1:
        raise InvalidData('{} must be a non-empty 3-D grid, got shape {}'.format(name, mask.shape))
    if not np.isin(mask, (0, 1)).all():
        raise InvalidData('{} values must be 0 or 1'.format(name))
    return mask.astype(np.uint8)


class VolumeCase(object):
    """One patient case.

    :param str case_id: identifier, the file stem for cases read from disk
    :param modalities: mapping of modality name to (depth, h, w) grids
    :param mask: optional (depth, h, w) grid of {0, 1}
    :raises: :class:`InvalidData` if grids disagree on shape or the mask
             is not binary
    """

    def __init__(self, case_id, modalities, mask=None):
        self.case_id = case_id
        self.modalities = collections.OrderedDict()
        shape = None
        for name in sorted(modalities):
            if name not in MODALITIES:
                raise InvalidData('{}: unknown modality {!r}'.format(case_id, name))
            grid = np.asarray(modalities[name], dtype=DTYPE)
            if grid.ndim != 3 or min(grid.shape) < 1:
                raise InvalidData('{}: {} must be a non-empty 3-D grid, got {}'
                                  .format(case_id, name, grid.shape))
            if shape is not None and grid.shape != shape:
                raise InvalidData('{}: {} has shape {}, expected {}'
                                  .format(case_id, name, grid.shape, shape))
            shape = grid.shape
            self.modalities[name] = grid
        self.mask = None
        if mask is not None:
            self.mask = check_mask(mask, '{} mask'.format(case_id))
            if shape is not None and self.mask.shape != shape:
                raise InvalidData('{}: mask has shape {}, volumes have {}'
                                  .format(case_id, self.mask.shape, shape))

    @property
    def shape(self):
        "(depth, h, w)"
        if self.modalities:
            return next(iter(self.modalities.values())).shape
        return self.mask.shape

    @property
    def depth(self):
        return self.shape[0]

    def __repr__(self):
        return 'VolumeCase({!r}, {}, shape={})'.format(self.case_id, list(self.modalities), self.shape)


######################################################################
# VOL1 files

def volume_bytes(modalities, mask=None):
    "Serialize grids in the VOL1 layout"
    buf = io.BytesIO()
    buf.write(VOLUME_MAGIC)
    buf.write(struct.pack('<I', len(modalities)))
    for name in sorted(modalities):
        grid = modalities[name]
        encoded = name.encode('ascii')
        buf.write(struct.pack('<B', len(encoded)))
        buf.write(encoded)
        buf.write(struct.pack('<3I', *grid.shape))
        buf.write(np.ascontiguousarray(grid, dtype='<f4').tobytes())
    if mask is None:
        buf.write(struct.pack('<B', 0))
    else:
        buf.write(struct.pack('<B', 1))
        buf.write(struct.pack('<3I', *mask.shape))
        buf.write(np.ascontiguousarray(mask, dtype=np.uint8).tobytes())
    return buf.getvalue()


def parse_volume(data, path=None):
    """Parse VOL1 bytes into (modalities dict, mask or None)

    :raises: :class:`FormatError`
    """
    if not data.startswith(VOLUME_MAGIC):
        msg = 'bad VOL1 magic'
        logger.error('%s: %s', path, msg)
        raise FormatError(msg, path=path)
    reader = _Reader(data, len(VOLUME_MAGIC), path)
    modalities = collections.OrderedDict()
    (count,) = reader.unpack('<I')
    for _ in range(count):
        (length,) = reader.unpack('<B')
        name = reader.take(length).decode('ascii', 'replace')
        modalities[name] = reader.grid('<f4').astype(DTYPE)
    (has_mask,) = reader.unpack('<B')
    mask = None
    if has_mask == 1:
        mask = reader.grid(np.uint8).copy()
    elif has_mask != 0:
        raise FormatError('has_mask flag must be 0 or 1, got {}'.format(has_mask), path=path)
    if reader.offset != len(data):
        raise FormatError('{} trailing bytes'.format(len(data) - reader.offset), path=path)
    return modalities, mask


class _Reader(object):
    "Bounds-checked cursor over a byte string"

    def __init__(self, data, offset, path):
        self.data = data
        self.offset = offset
        self.path = path

    def take(self, count):
        end = self.offset + count
        if end > len(self.data):
            raise FormatError('truncated file', path=self.path)
        chunk = self.data[self.offset:end]
        self.offset = end
        return chunk

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def grid(self, dtype):
        "A (depth, h, w) shape header followed by its voxels"
        shape = self.unpack('<3I')
        dtype = np.dtype(dtype)
        # python ints: three u32 sizes overflow int64
        count = shape[0] * shape[1] * shape[2]
        if count * dtype.itemsize > len(self.data) - self.offset:
            raise FormatError('grid {} exceeds the file'.format(shape), path=self.path)
        raw = self.take(count * dtype.itemsize)
        return np.frombuffer(raw, dtype=dtype).reshape(shape)


def case_id_of(path):
    "The case identifier of a volume file: its name without the suffix"
    name = os.path.basename(path)
    if name.endswith(VOLUME_SUFFIX):
        name = name[:-len(VOLUME_SUFFIX)]
    return name


def _read(path):
    try:
        with open(path, 'rb') as fd:
            return fd.read()
    except (IOError, OSError) as e:
        raise InvalidData('cannot read volume: {}'.format(e), path=path)


def load_volume(path):
    """Read a VOL1 case.

    :raises: :class:`FormatError` for a bad layout, :class:`InvalidData`
             for an empty modality map or inconsistent grids
    """
    modalities, mask = parse_volume(_read(path), path=path)
    if not modalities:
        raise InvalidData('volume holds no modalities', path=path)
    try:
        return VolumeCase(case_id_of(path), modalities, mask)
    except InvalidData as e:
        logger.error('%s: %s', path, e)
        raise InvalidData(e.message, path=path)


def save_volume(path, case):
    "Write `case` as VOL1, modalities in sorted name order"
    with open(path, 'wb') as fd:
        fd.write(volume_bytes(case.modalities, case.mask))
    logger.debug('Wrote %s to %s', case.case_id, path)


def load_mask(path):
    """Read the mask of a VOL1 file, with or without modalities

    :raises: :class:`InvalidData` if the file has no mask
    """
    modalities, mask = parse_volume(_read(path), path=path)
    if mask is None:
        raise InvalidData('volume holds no mask', path=path)
    return check_mask(mask)


def save_mask(path, mask):
    "Write a mask-only VOL1 file"
    mask = check_mask(mask)
    with open(path, 'wb') as fd:
        fd.write(volume_bytes({}, mask))


######################################################################
# slices

SliceRecord = collections.namedtuple('SliceRecord', ['image', 'label', 'case_id', 'index'])
SliceBatch = collections.namedtuple('SliceBatch', ['images', 'labels', 'provenance'])


def normalize_slice(plane):
    """Z-score a 2-D plane, clamping the std at 1e-6.

    Constant planes map to zeros.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.max() == plane.min():
        return np.zeros(plane.shape, dtype=DTYPE)
    mean = plane.mean()
    std = max(plane.std(), 1e-6)
    return ((plane - mean) / std).astype(DTYPE)


def slice_volume(case, training=False, modalities=SEGMENTOR_MODALITIES, skip_empty=False):
    """Cut `case` into per-slice records.

    :param case: :class:`VolumeCase`
    :param bool training: require a mask and attach per-slice labels
    :param modalities: channel order of the stacked image
    :param bool skip_empty: in training, drop slices whose mask is empty
    :returns: list of :class:`SliceRecord` with image (len(modalities), h, w)
              and label (h, w) or None, in depth order
    :raises: :class:`InvalidData` for a missing modality or, in training,
             a missing mask
    """
    missing = [m for m in modalities if m not in case.modalities]
    if missing:
        raise InvalidData('{}: missing modalities {}'.format(case.case_id, ', '.join(missing)))
    if training and case.mask is None:
        raise InvalidData('{}: training needs a ground-truth mask'.format(case.case_id))

    records = []
    for index in range(case.depth):
        label = case.mask[index] if case.mask is not None else None
        if training and skip_empty and not label.any():
            continue
        image = np.stack([normalize_slice(case.modalities[m][index]) for m in modalities])
        records.append(SliceRecord(image, label, case.case_id, index))
    return records


def make_batch(records):
    """Stack slice records into a :class:`SliceBatch`

    :raises: :class:`InvalidData` for an empty list
    """
    if not records:
        raise InvalidData('a batch needs at least one slice')
    images = np.stack([r.image for r in records])
    labels = None
    if all(r.label is not None for r in records):
        labels = np.stack([r.label for r in records]).astype(np.uint8)
    provenance = [(r.case_id, r.index) for r in records]
    return SliceBatch(images, labels, provenance)


def reassemble(masks, depth):
    """Stack per-slice (h, w) masks back into a (depth, h, w) volume"""
    if len(masks) != depth:
        raise InvalidData('expected {} slices, got {}'.format(depth, len(masks)))
    return np.stack(masks).astype(np.uint8)


######################################################################
# splits

def _check_cases(cases):
    cases = list(cases)
    if len(cases) < 2:
        raise InvalidData('need at least 2 cases, got {}'.format(len(cases)))
    return cases


def split_train_valid(cases, ratio=0.8, seed=0):
    """Seeded case-level split.

    The cases are shuffled, the first ``floor(ratio * N)`` train and the
    rest validate. The cut is clamped so both sides keep at least one case.

    :raises: :class:`InvalidData` for fewer than 2 cases,
             :class:`InvalidConfig` unless 0 < ratio < 1
    """
    cases = _check_cases(cases)
    if not 0 < ratio < 1:
        raise InvalidConfig('split ratio must be in (0, 1), got {}'.format(ratio))
    order = make_rng(derive_seed(seed, SPLIT_STREAM)).permutation(len(cases))
    cut = min(max(int(math.floor(ratio * len(cases))), 1), len(cases) - 1)
    train = [cases[i] for i in order[:cut]]
    valid = [cases[i] for i in order[cut:]]
    return train, valid


def kfold_splits(cases, folds=5, seed=0):
    """Seeded k-fold partition of the cases.

    Fold k validates on the cases whose shuffled position is congruent to
    k modulo `folds` and trains on the rest.

    :returns: list of (train, valid) pairs
    """
    cases = _check_cases(cases)
    if not 2 <= folds <= len(cases):
        raise InvalidConfig('folds must be in [2, {}], got {}'.format(len(cases), folds))
    order = make_rng(derive_seed(seed, SPLIT_STREAM, folds)).permutation(len(cases))
    splits = []
    for k in range(folds):
        valid = [cases[i] for pos, i in enumerate(order) if pos % folds == k]
        train = [cases[i] for pos, i in enumerate(order) if pos % folds != k]
        splits.append((train, valid))
    return splits


######################################################################
# phantoms

Ellipsoid = collections.namedtuple('Ellipsoid', ['center', 'axes'])

# (base intensity, texture amplitude, lesion shift); negative shifts are
# hypo-, positive hyper-intense lesions.
PHANTOM_SIGNATURES = {
    'CT': (40.0, 3.0, -10.0),
    'DPWI': (100.0, 8.0, 45.0),
    'CBF': (50.0, 6.0, -30.0),
    'CBV': (4.0, 0.5, -2.0),
    'MTT': (6.0, 0.8, 4.0),
    'Tmax': (2.0, 0.5, 6.0),
}


def phantom_lesions(seed, depth, size, lesion_count):
    """Ellipsoid parameters of a phantom, in voxel units (z, y, x)"""
    rng = make_rng(derive_seed(seed, LESION_STREAM))
    lesions = []
    for _ in range(lesion_count):
        center = (rng.uniform(0, depth - 1),
                  rng.uniform(0.25 * size, 0.75 * size),
                  rng.uniform(0.25 * size, 0.75 * size))
        axes = (rng.uniform(1.0, max(1.0, depth / 2.0)),
                rng.uniform(size / 16.0, size / 6.0),
                rng.uniform(size / 16.0, size / 6.0))
        lesions.append(Ellipsoid(center, axes))
    return lesions


def rasterize_ellipsoids(ellipsoids, shape):
    """Binary mask of the voxel centers inside any ellipsoid.

    A voxel (z, y, x) is inside when
    ``dz*dz + dy*dy + dx*dx <= 1`` with ``dz = (z - cz) / az`` etc.
    """
    mask = np.zeros(shape, dtype=bool)
    zz, yy, xx = np.indices(shape, dtype=np.float64)
    for (cz, cy, cx), (az, ay, ax) in ellipsoids:
        dz = (zz - cz) / az
        dy = (yy - cy) / ay
        dx = (xx - cx) / ax
        mask |= dz * dz + dy * dy + dx * dx <= 1.0
    return mask.astype(np.uint8)


def phantom_depth(seed):
    "A depth drawn from the 2..18 slice range of real acquisitions"
    lo, hi = PHANTOM_DEPTHS
    return int(make_rng(derive_seed(seed, LESION_STREAM, 1)).integers(lo, hi + 1))


def generate_phantom(seed, depth, size=256, lesion_count=1, modalities=MODALITIES, case_id=None):
    """Synthesize a stroke-like case.

    Each modality is a smooth, seeded low-frequency texture around a base
    intensity; voxels inside the lesion ellipsoids are shifted by the
    modality's signature (CT slightly hypodense, DPWI hyperintense, CBF
    hypointense, ...). The mask is the exact rasterization of the
    ellipsoids.

    :raises: :class:`InvalidConfig` for depth < 1, a size not divisible by
             16 or a negative lesion count
    """
    if depth < 1:
        raise InvalidConfig('depth must be >= 1, got {}'.format(depth))
    if size < 16 or size % 16:
        raise InvalidConfig('size must be a positive multiple of 16, got {}'.format(size))
    if lesion_count < 0:
        raise InvalidConfig('lesion_count must be >= 0, got {}'.format(lesion_count))

    shape = (depth, size, size)
    mask = rasterize_ellipsoids(phantom_lesions(seed, depth, size, lesion_count), shape)
    inside = mask.astype(bool)

    grids = {}
    for index, name in enumerate(sorted(modalities)):
        base, amplitude, shift = PHANTOM_SIGNATURES[name]
        rng = make_rng(derive_seed(seed, TEXTURE_STREAM, index))
        texture = scipy.ndimage.gaussian_filter(rng.standard_normal(shape),
                                                sigma=(0, size / 16.0, size / 16.0), mode='wrap')
        texture /= max(texture.std(), 1e-12)
        grid = base + amplitude * texture + 0.1 * amplitude * rng.standard_normal(shape)
        grid[inside] += shift
        grids[name] = grid.astype(DTYPE)

    if case_id is None:
        case_id = 'phantom_{}'.format(seed)
    return VolumeCase(case_id, grids, mask)
