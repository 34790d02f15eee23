import advseg.metrics as M
from advseg.errors import InvalidData, ShapeMismatch

import csv
import itertools
import math
import os
import shutil
import tempfile
import numpy as np
from unittest import TestCase

import hypothesis.strategies as st
from hypothesis import given, settings


def mask_from(shape, voxels):
    mask = np.zeros(shape, dtype=np.uint8)
    for v in voxels:
        mask[v] = 1
    return mask


def random_pair(seed, shape, density=None):
    rng = np.random.default_rng(seed)
    if density is None:
        density = rng.uniform(0.05, 0.6)
    return ((rng.random(shape) < density).astype(np.uint8),
            (rng.random(shape) < density).astype(np.uint8))


######################################################################
# an independent O(n^2) implementation

def oracle_boundary(mask):
    points = []
    d, h, w = mask.shape
    for z, y, x in itertools.product(range(d), range(h), range(w)):
        if not mask[z, y, x]:
            continue
        for dz, dy, dx in [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]:
            nz, ny, nx = z + dz, y + dy, x + dx
            outside = not (0 <= nz < d and 0 <= ny < h and 0 <= nx < w)
            if outside or not mask[nz, ny, nx]:
                points.append((z, y, x))
                break
    return points


def oracle_directed(a, b):
    return [min(math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2) for q in b)
            for p in a]


def oracle(pred, gt):
    p = set(zip(*np.nonzero(pred)))
    g = set(zip(*np.nonzero(gt)))
    tp, fp, fn = len(p & g), len(p - g), len(g - p)
    both_empty = not p and not g
    dice = 1.0 if both_empty else 2.0 * tp / (len(p) + len(g))
    precision = tp / (tp + fp) if tp + fp else (1.0 if both_empty else 0.0)
    recall = tp / (tp + fn) if tp + fn else (1.0 if both_empty else 0.0)
    if not g:
        avd = 0.0 if not p else float('inf')
    else:
        avd = abs(len(p) - len(g)) / len(g)
    if not p or not g:
        hausdorff = average = float('inf')
    else:
        d_pg = oracle_directed(oracle_boundary(pred), oracle_boundary(gt))
        d_gp = oracle_directed(oracle_boundary(gt), oracle_boundary(pred))
        hausdorff = max(max(d_pg), max(d_gp))
        average = (sum(d_pg) / len(d_pg) + sum(d_gp) / len(d_gp)) / 2
    return dict(dice=dice, hausdorff=hausdorff, avg_distance=average,
                precision=precision, recall=recall, avd=avd)


class dice_Test(TestCase):

    def test_identity(self):
        mask = mask_from((2, 4, 4), [(0, 1, 1), (1, 2, 2)])
        self.assertEqual(M.dice(mask, mask), 1.0)

    def test_disjoint(self):
        a = mask_from((1, 4, 4), [(0, 0, 0)])
        b = mask_from((1, 4, 4), [(0, 3, 3)])
        self.assertEqual(M.dice(a, b), 0.0)

    def test_half_overlap(self):
        "|P| = |G| = 4 with overlap 2 should give 0.5"
        a = mask_from((1, 4, 4), [(0, 0, 0), (0, 0, 1), (0, 0, 2), (0, 0, 3)])
        b = mask_from((1, 4, 4), [(0, 0, 0), (0, 0, 1), (0, 1, 0), (0, 1, 1)])
        self.assertEqual(M.dice(a, b), 0.5)

    def test_both_empty(self):
        empty = np.zeros((1, 2, 2), np.uint8)
        self.assertEqual(M.dice(empty, empty), 1.0)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeMismatch):
            M.dice(np.zeros((1, 2, 2)), np.zeros((1, 2, 3)))

    def test_not_binary(self):
        with self.assertRaises(InvalidData):
            M.dice(np.full((1, 2, 2), 2), np.zeros((1, 2, 2)))


class precision_recall_Test(TestCase):

    def test_identity(self):
        mask = mask_from((1, 3, 3), [(0, 1, 1)])
        self.assertEqual(M.precision_recall(mask, mask), (1.0, 1.0))

    def test_counts(self):
        "TP=2, FP=2, FN=4 should give (0.5, 1/3)"
        gt = mask_from((1, 4, 4), [(0, 0, i) for i in range(4)] + [(0, 1, 0), (0, 1, 1)])
        pred = mask_from((1, 4, 4), [(0, 0, 0), (0, 0, 1), (0, 3, 0), (0, 3, 1)])
        precision, recall = M.precision_recall(pred, gt)
        self.assertEqual(precision, 0.5)
        self.assertAlmostEqual(recall, 1 / 3.0)

    def test_superset(self):
        "A strict superset of the ground truth has full recall"
        gt = mask_from((1, 3, 3), [(0, 1, 1)])
        pred = mask_from((1, 3, 3), [(0, 1, 1), (0, 0, 0)])
        precision, recall = M.precision_recall(pred, gt)
        self.assertEqual(recall, 1.0)
        self.assertLess(precision, 1.0)

    def test_empty_prediction(self):
        gt = mask_from((1, 3, 3), [(0, 1, 1)])
        self.assertEqual(M.precision_recall(np.zeros_like(gt), gt), (0.0, 0.0))


class avd_Test(TestCase):

    def test_values(self):
        "|P| = 30, |G| = 20 should give 0.5"
        pred = np.zeros((1, 10, 10), np.uint8)
        gt = np.zeros((1, 10, 10), np.uint8)
        pred.flat[:30] = 1
        gt.flat[50:70] = 1
        self.assertEqual(M.avd(pred, gt), 0.5)
        self.assertEqual(M.avd(gt, gt), 0.0)

    def test_empty_ground_truth(self):
        pred = mask_from((1, 2, 2), [(0, 0, 0)])
        self.assertEqual(M.avd(pred, np.zeros_like(pred)), float('inf'))


class surface_distances_Test(TestCase):

    def test_identity(self):
        mask = mask_from((3, 5, 5), [(1, 2, 2), (1, 2, 3)])
        self.assertEqual(M.surface_distances(mask, mask), (0.0, 0.0))

    def test_single_voxels(self):
        "Two single voxels 3 apart should be 3 apart both ways"
        a = mask_from((1, 1, 8), [(0, 0, 1)])
        b = mask_from((1, 1, 8), [(0, 0, 4)])
        self.assertEqual(M.surface_distances(a, b), (3.0, 3.0))

    def test_empty(self):
        a = mask_from((1, 3, 3), [(0, 1, 1)])
        hausdorff, average = M.surface_distances(a, np.zeros_like(a))
        self.assertEqual(hausdorff, float('inf'))
        self.assertEqual(average, float('inf'))

    def test_interior_not_boundary(self):
        "Only voxels touching the background are boundary voxels"
        mask = np.zeros((3, 3, 3), np.uint8)
        mask[...] = 1
        inner = M.boundary(np.pad(mask, 1))
        self.assertFalse(inner[2, 2, 2])
        self.assertEqual(int(inner.sum()), 26)

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_symmetry(self, seed):
        a, b = random_pair(seed, (3, 6, 6))
        self.assertEqual(M.dice(a, b), M.dice(b, a))
        self.assertEqual(M.surface_distances(a, b), M.surface_distances(b, a))


class oracle_Test(TestCase):

    def test_fifty_random_pairs(self):
        "Every metric should match the brute-force implementation"
        rng = np.random.default_rng(2024)
        for seed in range(50):
            shape = (int(rng.integers(1, 9)), int(rng.integers(1, 17)), int(rng.integers(1, 17)))
            pred, gt = random_pair(seed, shape)
            report = M.evaluate_case(pred, gt)
            expected = oracle(pred, gt)
            for field, value in expected.items():
                got = getattr(report, field)
                if math.isinf(value):
                    self.assertEqual(got, value, field)
                else:
                    self.assertAlmostEqual(got, value, places=9, msg=field)
            self.assertEqual(report.pred_empty, not pred.any())
            self.assertEqual(report.gt_empty, not gt.any())

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10 ** 6))
    def test_dice_identity(self, seed):
        "dice should equal 2 TP / (2 TP + FP + FN) from the precision-recall counts"
        pred, gt = random_pair(seed, (2, 5, 5))
        p, g = pred.astype(bool), gt.astype(bool)
        tp, fp, fn = (p & g).sum(), (p & ~g).sum(), (~p & g).sum()
        if tp + fp + fn:
            self.assertAlmostEqual(M.dice(pred, gt), 2.0 * tp / (2 * tp + fp + fn))

    def test_hausdorff_bounds(self):
        "The Hausdorff distance should bound every directed boundary distance"
        pred, gt = random_pair(7, (4, 8, 8))
        hausdorff, _ = M.surface_distances(pred, gt)
        for d in oracle_directed(oracle_boundary(pred), oracle_boundary(gt)):
            self.assertLessEqual(d, hausdorff + 1e-12)


class evaluate_set_Test(TestCase):

    def test_identical(self):
        "Identical masks across a set should average to dice 1"
        pairs = [(m, m) for m in (random_pair(s, (2, 6, 6))[0] for s in range(3))]
        report = M.evaluate_set(pairs)
        self.assertEqual(report.dice, 1.0)
        self.assertEqual(report.n_cases, 3)

    def test_single_case(self):
        "The set report of one case should equal the case report"
        pred, gt = random_pair(3, (2, 6, 6), density=0.4)
        self.assertEqual(M.evaluate_set([(pred, gt)]), M.evaluate_case(pred, gt))

    def test_sentinel_excluded(self):
        "Cases with an empty mask should not enter the distance means"
        a, b = random_pair(5, (2, 6, 6), density=0.4)
        empty = np.zeros_like(a)
        clean = M.evaluate_case(a, b)
        report = M.evaluate_set([(a, b), (empty, b)], threads=2)
        self.assertEqual(report.n_sentinel, 1)
        self.assertEqual(report.hausdorff, clean.hausdorff)
        self.assertAlmostEqual(report.dice, clean.dice / 2)

    def test_empty_list(self):
        with self.assertRaises(InvalidData):
            M.evaluate_set([])


class mean_report_Test(TestCase):

    def test_missed_lesion_counts_in_avd(self):
        "An empty prediction of a real lesion should enter the AVD mean"
        gt = mask_from((1, 4, 4), [(0, 1, 1), (0, 1, 2)])
        reports = [M.evaluate_case(gt, gt), M.evaluate_case(np.zeros_like(gt), gt)]
        self.assertEqual([r.avd for r in reports], [0.0, 1.0])
        mean = M.mean_report(reports)
        self.assertEqual(mean.avd, 0.5)
        self.assertEqual(mean.hausdorff, 0.0)
        self.assertEqual(mean.n_sentinel, 1)

    def test_empty_truth_skipped_in_avd(self):
        "A false positive on an empty ground truth should not make the AVD mean inf"
        gt = mask_from((1, 4, 4), [(0, 1, 1)])
        empty = np.zeros_like(gt)
        mean = M.mean_report([M.evaluate_case(gt, gt), M.evaluate_case(gt, empty)])
        self.assertEqual(mean.avd, 0.0)

    def test_all_truth_empty(self):
        "With no ground-truth lesion anywhere the AVD mean falls back to every case"
        empty = np.zeros((1, 3, 3), np.uint8)
        pred = mask_from((1, 3, 3), [(0, 0, 0)])
        mean = M.mean_report([M.evaluate_case(empty, empty), M.evaluate_case(pred, empty)])
        self.assertEqual(mean.avd, float('inf'))
        self.assertTrue(mean.gt_empty)


class write_metrics_csv_Test(TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_layout(self):
        "Rows should follow the header and write infinities as inf"
        a = mask_from((1, 3, 3), [(0, 1, 1)])
        rows = [('c1', M.evaluate_case(a, a)), ('c2', M.evaluate_case(np.zeros_like(a), a))]
        path = os.path.join(self.tmp, 'metrics.csv')
        M.write_metrics_csv(path, rows, M.mean_report([r for _, r in rows]))
        with open(path) as fd:
            lines = list(csv.reader(fd))
        self.assertEqual(lines[0], list(M.CSV_HEADER))
        self.assertEqual(lines[1][:2], ['c1', '1.0'])
        self.assertEqual(lines[2][2], 'inf')
        self.assertEqual(lines[2][-2:], ['1', '0'])
        self.assertEqual(lines[3][0], 'mean')
