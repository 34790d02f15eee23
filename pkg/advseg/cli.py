"""
The ``advseg`` command.

Subcommands::

    advseg train     --data DIR | --phantom N  --out DIR  [training flags]
    advseg predict   --checkpoint FILE --data DIR|FILE --out DIR
    advseg evaluate  --pred DIR --data DIR --out DIR
    advseg gradcheck [--seed S]
    advseg phantom   --count N --out DIR [--size S] [--depth D] [--seed S]
    advseg crossval  --data DIR | --phantom N  --folds K --out DIR

Exit codes: 0 success, 1 failed gradient check, 2 configuration error,
3 data error. Logs go to standard error; artifacts are written to files,
and every output directory is published only once the command succeeds.
"""
from __future__ import absolute_import

import argparse
import os
import sys
from multiprocessing.pool import ThreadPool

from . import gradcheck
from .data import case_id_of, generate_phantom, load_mask, load_volume, phantom_depth, save_mask, save_volume
from .errors import AdvsegError, InvalidConfig, InvalidData
from .metrics import evaluate_cases, mean_report, metrics_row, CSV_HEADER, write_metrics_csv
from .network import save_checkpoint
from .report import Report
from .train import cross_validate, fit, predict_volume, write_folds_csv
from .unet import load_unet
from . import config as C
from . import workspace

import logging
logger = logging.getLogger('advseg')


EXIT_OK = 0
EXIT_CHECK_FAILED = 1

# argparse destinations that are not configuration keys
_NOT_KEYS = ('command', 'config', 'verbose', 'handler', 'baseline')


######################################################################
# helpers

def _threaded_map(func, items):
    items = list(items)
    threads = min(workspace.thread_count(), max(len(items), 1))
    if threads <= 1:
        return [func(item) for item in items]
    pool = ThreadPool(threads)
    try:
        return pool.map(func, items)
    finally:
        pool.close()
        pool.join()


def phantom_cases(run):
    "The seeded phantom cases requested by `run`"
    cases = []
    for index in range(run.count if run.command == 'phantom' else run.phantom):
        seed = run.train.seed + index
        depth = run.depth if run.depth is not None else phantom_depth(seed)
        cases.append(generate_phantom(seed, depth, size=run.size, lesion_count=run.lesions,
                                      case_id='phantom_{:03d}'.format(index)))
    return cases


def volume_paths(path):
    "A single volume file or every case file of a directory"
    if path is None:
        raise InvalidConfig('--data is required')
    if os.path.isfile(path):
        return [workspace.fullpath(path)]
    return workspace.find_cases(path)


def training_cases(run):
    if run.phantom:
        return phantom_cases(run)
    if run.data is None:
        raise InvalidConfig('either --data or --phantom is required')
    paths = volume_paths(run.data)
    if len(paths) < 2:
        raise InvalidData('need at least 2 cases, found {}'.format(len(paths)), path=run.data)
    return _threaded_map(load_volume, paths)


def _format(value):
    return '{:.6f}'.format(value)


######################################################################
# commands

def cmd_train(run, args):
    cases = training_cases(run)
    G, _, history = fit(cases, run.train, adversarial=not args.baseline)

    with workspace.staged_dir(run.out) as tmp:
        save_checkpoint(G, os.path.join(tmp, 'final.ckpt'))
        G.load_params(history.best_params)
        save_checkpoint(G, os.path.join(tmp, 'best.ckpt'))
        history.to_csv(os.path.join(tmp, 'history.csv'))

    with Report() as out:
        out.table(['epoch', 'chi', 'chi_seg', 'chi_adv', 'disc_loss', 'val_dice'],
                  [[r.epoch, _format(r.chi), _format(r.chi_seg), _format(r.chi_adv),
                    _format(r.disc_loss), _format(r.val_dice)] for r in history.epochs])
        out.writeln('best epoch {} (validation dice {})'.format(history.best_epoch,
                                                                 _format(history.best_val_dice)))
        sys.stdout.write(out.getvalue())
    return EXIT_OK


def cmd_predict(run, args):
    if run.checkpoint is None:
        raise InvalidConfig('--checkpoint is required')
    G = load_unet(run.checkpoint)
    modalities = run.train.modalities
    if len(modalities) != G.config['in_channels']:
        raise InvalidConfig('checkpoint expects {} modalities, configured {}'
                            .format(G.config['in_channels'], ', '.join(modalities)))
    cases = _threaded_map(load_volume, volume_paths(run.data))

    with workspace.staged_dir(run.out) as tmp:
        for case in cases:
            mask = predict_volume(G, case, run.train.batch_size, modalities)
            save_mask(os.path.join(tmp, case.case_id + '.vol'), mask)
            logger.info('%s: %d lesion voxels in %d slices', case.case_id, int(mask.sum()), case.depth)
    return EXIT_OK


def matched_pairs(pred_dir, gt_dir):
    """(case_id, pred path, gt path) for every case present in both
    directories.

    :raises: :class:`InvalidData` listing unmatched case ids
    """
    preds = dict((case_id_of(p), p) for p in workspace.find_cases(pred_dir))
    truths = dict((case_id_of(p), p) for p in workspace.find_cases(gt_dir))
    unmatched = sorted(set(preds) ^ set(truths))
    if unmatched:
        msg = 'unmatched case ids: {}'.format(', '.join(unmatched))
        logger.error(msg)
        raise InvalidData(msg)
    if not preds:
        raise InvalidData('no cases to evaluate', path=pred_dir)
    return [(case_id, preds[case_id], truths[case_id]) for case_id in sorted(preds)]


def cmd_evaluate(run, args):
    if run.pred is None:
        raise InvalidConfig('--pred is required')
    if run.data is None:
        raise InvalidConfig('--data is required')
    matched = matched_pairs(run.pred, run.data)
    masks = _threaded_map(lambda m: (load_mask(m[1]), load_mask(m[2])), matched)
    reports = evaluate_cases(masks, threads=workspace.thread_count())
    rows = [(case_id, report) for (case_id, _, _), report in zip(matched, reports)]
    mean = mean_report(reports)

    with workspace.staged_dir(run.out) as tmp:
        write_metrics_csv(os.path.join(tmp, 'metrics.csv'), rows, mean)

    with Report() as out:
        out.table(CSV_HEADER, [metrics_row('mean', mean)])
        if mean.n_sentinel:
            out.indent(2)
            out.writeln('{} of {} cases have an empty mask'.format(mean.n_sentinel, mean.n_cases))
        sys.stdout.write(out.getvalue())
    return EXIT_OK


def cmd_gradcheck(run, args):
    results = gradcheck.run_suite(seed=run.train.seed)
    with Report() as out:
        out.writeln('gradient checks (seed {})'.format(run.train.seed))
        out.indent(2)
        out.table(['check', 'max_rel_error', 'status'],
                  [[r.name, '{:.3e}'.format(r.max_rel_error), 'ok' if r.passed else 'FAIL']
                   for r in results])
        sys.stdout.write(out.getvalue())
    if gradcheck.suite_passed(results):
        return EXIT_OK
    logger.error('%d gradient checks failed', sum(not r.passed for r in results))
    return EXIT_CHECK_FAILED


def cmd_phantom(run, args):
    with workspace.staged_dir(run.out) as tmp:
        for case in phantom_cases(run):
            save_volume(os.path.join(tmp, case.case_id + '.vol'), case)
            logger.info('%s: depth %d, %d lesion voxels', case.case_id, case.depth, int(case.mask.sum()))
    return EXIT_OK


def cmd_crossval(run, args):
    cases = training_cases(run)
    results = cross_validate(cases, run.train, folds=run.folds, adversarial=not args.baseline)
    with workspace.staged_dir(run.out) as tmp:
        write_folds_csv(os.path.join(tmp, 'folds.csv'), results)
    with Report() as out:
        out.table(['fold', 'best_epoch', 'best_val_dice'],
                  [[r.fold, r.best_epoch, _format(r.best_val_dice)] for r in results])
        sys.stdout.write(out.getvalue())
    return EXIT_OK


######################################################################
# argument parsing

def _add_training_flags(p):
    p.add_argument('--epochs', type=int)
    p.add_argument('--batch-size', dest='batch_size', type=int)
    p.add_argument('--lr', dest='learning_rate', type=float)
    p.add_argument('--lambda-adv', dest='lambda_adv', type=float)
    p.add_argument('--split-ratio', dest='split_ratio', type=float)
    p.add_argument('--base-channels', dest='base_channels', type=int)
    p.add_argument('--dropout', dest='dropout_rate', type=float)
    p.add_argument('--baseline', action='store_true',
                   help='train the segmentor alone, without a discriminator')


def _add_phantom_flags(p):
    p.add_argument('--size', type=int, help='phantom in-plane size, a multiple of 16')
    p.add_argument('--depth', type=int, help='phantom depth; drawn from 2..18 by default')
    p.add_argument('--lesions', type=int, help='lesions per phantom')


def build_parser():
    parser = argparse.ArgumentParser(prog='advseg',
                                     description='Adversarial stroke-lesion segmentation')
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument('--config', help='plain key = value configuration file')
    common.add_argument('-v', '--verbose', action='store_true')
    common.add_argument('--seed', type=int)
    common.add_argument('--out', help='output directory')

    sub = parser.add_subparsers(dest='command')
    sub.required = True

    p = sub.add_parser('train', parents=[common], help='train the segmentor')
    p.add_argument('--data', help='directory of VOL1 cases')
    p.add_argument('--phantom', type=int, help='train on N phantom cases instead')
    _add_training_flags(p)
    _add_phantom_flags(p)
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser('predict', parents=[common], help='segment VOL1 cases')
    p.add_argument('--checkpoint', required=False)
    p.add_argument('--data', help='a VOL1 file or a directory of them')
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser('evaluate', parents=[common], help='score predictions')
    p.add_argument('--pred', help='directory of predicted masks')
    p.add_argument('--data', help='directory of ground-truth cases')
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser('gradcheck', parents=[common], help='finite-difference gradient checks')
    p.set_defaults(handler=cmd_gradcheck)

    p = sub.add_parser('phantom', parents=[common], help='write synthetic cases')
    p.add_argument('--count', type=int)
    _add_phantom_flags(p)
    p.set_defaults(handler=cmd_phantom)

    p = sub.add_parser('crossval', parents=[common], help='k-fold cross-validation')
    p.add_argument('--data', help='directory of VOL1 cases')
    p.add_argument('--phantom', type=int, help='use N phantom cases instead')
    p.add_argument('--folds', type=int)
    _add_training_flags(p)
    _add_phantom_flags(p)
    p.set_defaults(handler=cmd_crossval)

    return parser


def run_config(args):
    "Resolve parsed arguments and the optional config file into a RunConfig"
    flags = dict((k, v) for k, v in vars(args).items() if k not in _NOT_KEYS)
    file_values = C.load_config_file(args.config) if args.config else None
    return C.resolve(args.command, flags, file_values)


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, format='%(levelname)s %(name)s: %(message)s',
                        level=logging.DEBUG if args.verbose else logging.INFO)
    args.baseline = getattr(args, 'baseline', False)
    try:
        run = run_config(args)
        return args.handler(run, args)
    except AdvsegError as e:
        logger.error('%s', e)
        return e.exit_code
