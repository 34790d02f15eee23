"""
Segmentation quality of 3-D binary masks.

Conventions:

- voxel spacing is isotropic 1.0 and distances are Euclidean between voxel
  centers;
- a boundary voxel is a foreground voxel with at least one background
  face-neighbor (6-connectivity), voxels outside the grid count as
  background;
- when either mask is empty the surface distances are ``inf`` and the
  report carries ``pred_empty`` / ``gt_empty`` flags;
- AVD is ``||P| - |G|| / |G|``, ``inf`` when only the ground truth is empty
  and 0 when both are.

All values are Python floats.
"""
from __future__ import absolute_import

import collections
import csv
import math
from multiprocessing.pool import ThreadPool

import numpy as np
import scipy.ndimage

from .data import check_mask
from .errors import InvalidData, ShapeMismatch

import logging
logger = logging.getLogger('advseg')


INF = float('inf')

FACE_NEIGHBORS = scipy.ndimage.generate_binary_structure(3, 1)

METRIC_FIELDS = ('dice', 'hausdorff', 'avg_distance', 'precision', 'recall', 'avd')
CSV_HEADER = ('case_id',) + METRIC_FIELDS + ('pred_empty', 'gt_empty')


MetricsReport = collections.namedtuple(
    'MetricsReport', METRIC_FIELDS + ('pred_empty', 'gt_empty', 'n_cases', 'n_sentinel'))


def _pair(pred, gt):
    pred = check_mask(pred, 'prediction')
    gt = check_mask(gt, 'ground truth')
    if pred.shape != gt.shape:
        raise ShapeMismatch('prediction {} vs ground truth {}'.format(pred.shape, gt.shape))
    return pred.astype(bool), gt.astype(bool)


def _counts(pred, gt):
    tp = int(np.count_nonzero(pred & gt))
    fp = int(np.count_nonzero(pred & ~gt))
    fn = int(np.count_nonzero(~pred & gt))
    return tp, fp, fn


def dice(pred, gt):
    """``2 |P & G| / (|P| + |G|)``, 1.0 when both masks are empty

    :raises: :class:`ShapeMismatch`
    """
    pred, gt = _pair(pred, gt)
    tp, fp, fn = _counts(pred, gt)
    total = 2 * tp + fp + fn
    if total == 0:
        return 1.0
    return 2.0 * tp / total


def precision_recall(pred, gt):
    """(TP / (TP + FP), TP / (TP + FN)).

    A zero denominator gives 1 when both masks are empty and 0 otherwise.
    """
    pred, gt = _pair(pred, gt)
    tp, fp, fn = _counts(pred, gt)
    both_empty = tp + fp + fn == 0
    if tp + fp:
        precision = tp / float(tp + fp)
    else:
        precision = 1.0 if both_empty else 0.0
    if tp + fn:
        recall = tp / float(tp + fn)
    else:
        recall = 1.0 if both_empty else 0.0
    return precision, recall


def avd(pred, gt):
    "Absolute volume difference relative to the ground-truth volume"
    pred, gt = _pair(pred, gt)
    p = int(np.count_nonzero(pred))
    g = int(np.count_nonzero(gt))
    if g == 0:
        return 0.0 if p == 0 else INF
    return abs(p - g) / float(g)


def boundary(mask):
    "Foreground voxels with a background face-neighbor"
    mask = np.asarray(mask, dtype=bool)
    eroded = scipy.ndimage.binary_erosion(mask, structure=FACE_NEIGHBORS, border_value=0)
    return mask & ~eroded


def _directed(source, target):
    "Distances from every `source` voxel to the nearest `target` voxel"
    to_target = scipy.ndimage.distance_transform_edt(~target)
    return to_target[source]


def surface_distances(pred, gt):
    """(Hausdorff distance, average symmetric surface distance)

    Both are ``inf`` when either mask is empty.
    """
    pred, gt = _pair(pred, gt)
    if not pred.any() or not gt.any():
        return INF, INF
    bp = boundary(pred)
    bg = boundary(gt)
    d_pg = _directed(bp, bg)
    d_gp = _directed(bg, bp)
    hausdorff = max(float(d_pg.max()), float(d_gp.max()))
    average = (float(d_pg.mean()) + float(d_gp.mean())) / 2.0
    return hausdorff, average


def evaluate_case(pred, gt):
    "All six metrics of one case as a :class:`MetricsReport`"
    pred_b, gt_b = _pair(pred, gt)
    precision, recall = precision_recall(pred_b, gt_b)
    hausdorff, average = surface_distances(pred_b, gt_b)
    pred_empty = not pred_b.any()
    gt_empty = not gt_b.any()
    return MetricsReport(dice=dice(pred_b, gt_b), hausdorff=hausdorff, avg_distance=average,
                         precision=precision, recall=recall, avd=avd(pred_b, gt_b),
                         pred_empty=pred_empty, gt_empty=gt_empty, n_cases=1,
                         n_sentinel=int(pred_empty or gt_empty))


def _mean(values):
    return float(math.fsum(values) / len(values))


def mean_report(reports):
    """Unweighted mean of case reports.

    Dice, precision and recall average over every case. Hausdorff and
    average distance average over the cases without an empty mask, AVD over
    the cases with a non-empty ground truth; when no case qualifies they
    average over all cases (so they stay ``inf`` if any is). The empty
    flags are set only when every case sets them.

    :raises: :class:`InvalidData` for an empty list
    """
    reports = list(reports)
    if not reports:
        raise InvalidData('no cases to evaluate')
    clean = [r for r in reports if not (r.pred_empty or r.gt_empty)] or reports
    with_truth = [r for r in reports if not r.gt_empty] or reports
    return MetricsReport(
        dice=_mean([r.dice for r in reports]),
        hausdorff=_mean([r.hausdorff for r in clean]),
        avg_distance=_mean([r.avg_distance for r in clean]),
        precision=_mean([r.precision for r in reports]),
        recall=_mean([r.recall for r in reports]),
        avd=_mean([r.avd for r in with_truth]),
        pred_empty=all(r.pred_empty for r in reports),
        gt_empty=all(r.gt_empty for r in reports),
        n_cases=sum(r.n_cases for r in reports),
        n_sentinel=sum(r.n_sentinel for r in reports))


def evaluate_cases(pairs, threads=1):
    """Case reports for (pred, gt) pairs, in input order.

    :param int threads: worker threads; cases are independent
    """
    pairs = list(pairs)
    if not pairs:
        raise InvalidData('no cases to evaluate')
    if threads <= 1 or len(pairs) == 1:
        return [evaluate_case(p, g) for p, g in pairs]
    pool = ThreadPool(min(threads, len(pairs)))
    try:
        return pool.starmap(evaluate_case, pairs)
    finally:
        pool.close()
        pool.join()


def evaluate_set(pairs, threads=1):
    "Mean :class:`MetricsReport` over (pred, gt) pairs"
    return mean_report(evaluate_cases(pairs, threads))


def format_value(value):
    if isinstance(value, (bool, np.bool_)):
        return '1' if value else '0'
    return repr(float(value))


def metrics_row(case_id, report):
    return [case_id] + [format_value(getattr(report, f)) for f in CSV_HEADER[1:]]


def write_metrics_csv(path, rows, mean=None):
    """Write per-case reports, optionally followed by a ``mean`` row.

    :param rows: iterable of (case_id, :class:`MetricsReport`)
    """
    with open(path, 'w', newline='') as fd:
        writer = csv.writer(fd, lineterminator='\n')
        writer.writerow(CSV_HEADER)
        for case_id, report in rows:
            writer.writerow(metrics_row(case_id, report))
        if mean is not None:
            writer.writerow(metrics_row('mean', mean))
    logger.debug('Wrote metrics to %s', path)
