# Copyright 2026 The cnfit Authors
#
#    Licensed under the Apache License, Version 2.0 (the "License"); you may
#    not use this file except in compliance with the License. You may obtain
#    a copy of the License at
#
#         http://www.apache.org/licenses/LICENSE-2.0
#
#    Unless required by applicable law or agreed to in writing, software
#    distributed under the License is distributed on an "AS IS" BASIS, WITHOUT
#    WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied. See the
#    License for the specific language governing permissions and limitations
#    under the License.

import collections
import logging
import os

import numpy as np

from cnfit import base
from cnfit import checkpoint
from cnfit import config
from cnfit import dataset
from cnfit import evaluation
from cnfit import exceptions
from cnfit import layers
from cnfit import training
from cnfit import tuning
from cnfit import utils

CHECKPOINT_FILE = 'model.ckpt'
HISTORY_FILE = 'history.csv'
TRIAL_LOG_FILE = 'trials.csv'
BEST_CONFIG_FILE = 'best.cfg'

logger = logging.getLogger(__name__)


class LayerRow(base.Record):
    FIELDS = ('layer', 'output_shape', 'params')


class TrainingData(object):

    def __init__(self, train, val, class_names, stats):
        self.train = train
        self.val = val
        self.class_names = class_names
        self.stats = stats


def _format_shape(shape):
    return '(%s)' % ', '.join(str(d) for d in shape)


def _resolve(base_path, path):
    if not path or os.path.isabs(path):
        return path
    return os.path.join(os.path.dirname(os.path.abspath(base_path)), path)


def _ensure_dir(path):
    if not os.path.isdir(path):
        os.makedirs(path)
    return path


def _output_dir(args, cfg):
    out = getattr(args, 'out', None)
    if out:
        return _ensure_dir(out)
    return _ensure_dir(_resolve(args.config,
                                cfg.get('output', 'directory')))


def _load_training_data(cfg, cfg_path):
    """Samples for training and validation, normalized as configured."""
    side = cfg.get('data', 'side')
    names = cfg.get('data', 'class_names') or None
    stats_path = _resolve(cfg_path, cfg.get('data', 'stats'))
    summary = dataset.read_stats(stats_path) if stats_path else {}
    names = names or summary.get('class_names')
    threads = utils.thread_count()

    train_path = _resolve(cfg_path, cfg.get('data', 'train_manifest'))
    val_path = _resolve(cfg_path, cfg.get('data', 'val_manifest'))
    raw_path = _resolve(cfg_path, cfg.get('data', 'manifest'))
    if train_path and val_path:
        train_manifest = dataset.read_manifest(train_path, names)
        val_manifest = dataset.read_manifest(val_path,
                                             train_manifest.class_names)
        train = dataset.load_samples(train_manifest, side, threads)
        val = dataset.load_samples(val_manifest, side, threads)
        names = train_manifest.class_names
    elif raw_path:
        manifest = dataset.read_manifest(raw_path, names)
        samples = dataset.load_samples(manifest, side, threads)
        rng = np.random.default_rng(cfg.get('data', 'seed'))
        train, val = dataset.split_dataset(
            samples, cfg.get('data', 'train_fraction'), rng,
            cfg.get('data', 'stratified'))
        augment_cfg = cfg.augment_config()
        if augment_cfg.enabled:
            for sample in list(train):
                train.extend(dataset.augment(sample, augment_cfg, rng))
        names = manifest.class_names
    else:
        raise exceptions.ConfigError(
            "[data] needs either manifest or train_manifest and "
            "val_manifest", section='data')

    stats = dataset.NormalizationStats(mean=0.0, std=1.0)
    if cfg.get('data', 'normalize'):
        if 'mean' in summary:
            stats = dataset.NormalizationStats(mean=summary['mean'],
                                               std=summary['std'])
            train, _ = dataset.normalize_dataset(train, stats)
        else:
            train, stats = dataset.normalize_dataset(train)
        val, _ = dataset.normalize_dataset(val, stats)
    return TrainingData(train, val, list(names), stats)


def _train_config(cfg):
    train_cfg = cfg.train_config()
    train_cfg.threads = utils.thread_count()
    return train_cfg


def _print_epoch(record):
    print("epoch %3d  loss %.4f  acc %.4f  val_loss %.4f  val_acc %.4f  "
          "(%.1fs)" % (record.epoch, record.train_loss, record.train_acc,
                       record.val_loss, record.val_acc, record.seconds))


@utils.arg('--out', metavar='<directory>', required=True,
           help='Directory receiving the images and manifest.csv.')
@utils.arg('--n', metavar='<count>', type=int, default=50,
           help='Images per class (default 50).')
@utils.arg('--side', metavar='<pixels>', type=int, default=32,
           help='Image side length (default 32).')
@utils.arg('--seed', metavar='<seed>', type=int, default=0,
           help='Random seed (default 0).')
def do_synth_data(args):
    """Draw the synthetic four-class shape dataset."""
    manifest = dataset.gen_synthetic(args.out, args.n, args.side, args.seed)
    counts = manifest.class_counts()
    utils.print_dict(collections.OrderedDict(
        [(name, counts[k]) for k, name in enumerate(manifest.class_names)]),
        property='Class')


@utils.arg('--config', metavar='<file>', required=True,
           help='Run configuration file.')
@utils.arg('--out', metavar='<directory>', default=None,
           help='Output directory (defaults to [output] directory).')
def do_prepare(args):
    """Split, augment and measure the [data] manifest."""
    cfg = config.load_config(args.config)
    raw_path = _resolve(args.config, cfg.get('data', 'manifest'))
    if not raw_path:
        raise exceptions.ConfigError("[data] manifest is not set",
                                     section='data', key='manifest')
    manifest = dataset.read_manifest(
        raw_path, cfg.get('data', 'class_names') or None)
    out = _output_dir(args, cfg)
    prepared = dataset.prepare(
        manifest, out, side=cfg.get('data', 'side'),
        train_fraction=cfg.get('data', 'train_fraction'),
        augment_cfg=cfg.augment_config(), seed=cfg.get('data', 'seed'),
        stratified=cfg.get('data', 'stratified'),
        threads=utils.thread_count())
    rows = [base.Record(name=name, train=prepared.counts['train'][k],
                        val=prepared.counts['val'][k])
            for k, name in enumerate(manifest.class_names)]
    utils.print_list(rows, ['Name', 'Train', 'Val'])
    utils.print_dict({'mean': utils.format_float(prepared.stats.mean),
                      'std': utils.format_float(prepared.stats.std),
                      'output': out})


@utils.arg('--config', metavar='<file>', required=True,
           help='Run configuration file.')
@utils.arg('--out', metavar='<directory>', default=None,
           help='Output directory (defaults to [output] directory).')
def do_train(args):
    """Train a model and write its checkpoint and learning curve."""
    cfg = config.load_config(args.config)
    out = _output_dir(args, cfg)
    data = _load_training_data(cfg, args.config)
    train_set = dataset.stack_samples(data.train)
    val_set = dataset.stack_samples(data.val)
    model = cfg.model_spec(train_set[0].shape[1:], len(data.class_names),
                           data.class_names, data.stats.mean,
                           data.stats.std)
    params, history, best = training.train(
        model, (train_set, val_set), _train_config(cfg),
        hooks={'epoch_end': _print_epoch})

    ckpt_path = os.path.join(out, CHECKPOINT_FILE)
    history_path = os.path.join(out, HISTORY_FILE)
    checkpoint.checkpoint_save(best, ckpt_path)
    training.write_history(history, history_path)
    record = history[best.epoch - 1]
    utils.print_dict(collections.OrderedDict([
        ('epochs run', len(history)),
        ('best epoch', best.epoch),
        ('best val_loss', utils.format_float(record.val_loss, 6)),
        ('best val_acc', utils.format_float(record.val_acc, 6)),
        ('parameters', layers.count_params(model)[1]),
        ('checkpoint', ckpt_path),
        ('history', history_path),
    ]))


@utils.arg('--config', metavar='<file>', required=True,
           help='Run configuration file with a [tune] search space.')
@utils.arg('--out', metavar='<directory>', default=None,
           help='Output directory (defaults to [output] directory).')
@utils.arg('--resume', action='store_true', default=False,
           help='Continue from an existing trial log.')
def do_tune(args):
    """Search hyperparameters with short training runs."""
    cfg = config.load_config(args.config)
    out = _output_dir(args, cfg)
    space = cfg.search_space()
    data = _load_training_data(cfg, args.config)
    train_set = dataset.stack_samples(data.train)
    val_set = dataset.stack_samples(data.val)
    short_epochs = cfg.get('tune', 'epochs')

    def objective(trial_config):
        run_cfg = cfg.apply_trial(trial_config)
        run_cfg.set('train', 'epochs_max', short_epochs)
        model = run_cfg.model_spec(train_set[0].shape[1:],
                                   len(data.class_names), data.class_names,
                                   data.stats.mean, data.stats.std)
        _, history, _ = training.train(model, (train_set, val_set),
                                       _train_config(run_cfg))
        return history[-1].val_loss

    def report(record):
        print("trial %3d  %-6s  loss %.6g  %s" % (
            record.trial, record.status, record.loss,
            ', '.join('%s=%s' % (n, tuning.format_value(record.config[n]))
                      for n in space.names)))

    best, records = tuning.tune(
        objective, space, budget=cfg.get('tune', 'budget'),
        init=cfg.get('tune', 'init'), seed=cfg.get('tune', 'seed'),
        kind=cfg.get('tune', 'kernel'),
        log_path=os.path.join(out, TRIAL_LOG_FILE), resume=args.resume,
        hooks={'trial_end': report})

    best_cfg = cfg.apply_trial(best.config)
    best_path = os.path.join(out, BEST_CONFIG_FILE)
    with open(best_path, 'w', encoding='utf-8') as f:
        f.write(config.format_config(best_cfg))

    trace = tuning.best_so_far(records)
    rows = [base.Record(trial=r.trial, status=r.status,
                        loss=utils.format_float(r.loss, 6),
                        best=utils.format_float(b, 6))
            for r, b in zip(records, trace)]
    utils.print_list(rows, ['Trial', 'Status', 'Loss', 'Best'])
    summary = collections.OrderedDict([('best trial', best.trial),
                                       ('best loss',
                                        utils.format_float(best.loss, 6))])
    for name in space.names:
        summary[name] = tuning.format_value(best.config[name])
    summary['best config'] = best_path
    utils.print_dict(summary)


@utils.arg('--checkpoint', metavar='<file>', required=True,
           help='Checkpoint written by train.')
@utils.arg('--manifest', metavar='<file>', required=True,
           help='Manifest of the images to evaluate.')
@utils.arg('--out', metavar='<file>', default='confusion.csv',
           help='Where to write the confusion matrix CSV '
                '(default confusion.csv).')
@utils.arg('--epsilon', metavar='<margin>', type=float, default=0.05,
           help='Required margin over the majority-class prior '
                '(default 0.05).')
def do_eval(args):
    """Evaluate a checkpoint and print the classification report."""
    ckpt = checkpoint.checkpoint_load(args.checkpoint)
    model = ckpt.model
    manifest = dataset.read_manifest(args.manifest, model.class_names)
    samples = dataset.load_samples(manifest, model.input_shape[-1],
                                   utils.thread_count())
    samples, _ = dataset.normalize_dataset(
        samples, dataset.NormalizationStats(mean=model.input_mean,
                                            std=model.input_std))
    inputs, labels = dataset.stack_samples(samples)
    loss, _, predictions = training.evaluate_model(ckpt.params, model,
                                                   (inputs, labels))
    cm = evaluation.confusion_matrix(labels, predictions, model.class_count,
                                     model.class_names)
    report = evaluation.classification_report(cm)
    print(evaluation.render_report(report))
    skew = evaluation.skew_check(cm, args.epsilon)
    cm.write_csv(args.out)
    utils.print_dict(collections.OrderedDict([
        ('loss', utils.format_float(loss, 6)),
        ('accuracy', utils.format_float(report.accuracy, 6)),
        ('skew check', '%s (prior %.4f, margin %.4f)'
         % (skew.decision, skew.prior, skew.margin)),
        ('confusion matrix', args.out),
    ]))


def _print_layers(model):
    chain = layers.infer_shapes(model)[1:]
    counts, total = layers.count_params(model)
    rows = [LayerRow(layer=layer.to_text(), output_shape=_format_shape(shape),
                     params=count)
            for (layer, shape), count in zip(chain, counts)]
    utils.print_list(rows, ['Layer', 'Output shape', 'Params'])
    print("Total parameters: %d" % total)


@utils.arg('--checkpoint', metavar='<file>', default=None,
           help='Checkpoint to describe.')
@utils.arg('--config', metavar='<file>', default=None,
           help='Describe the [model] of a run configuration instead.')
@utils.arg('--classes', metavar='<count>', type=int, default=None,
           help='Class count for --config (defaults to the number of '
                '[data] class_names).')
def do_inspect(args):
    """Show a model's layers, output shapes and parameter counts."""
    if bool(args.checkpoint) == bool(args.config):
        raise exceptions.CommandError(
            "inspect needs exactly one of --checkpoint or --config")
    if args.checkpoint:
        ckpt = checkpoint.checkpoint_load(args.checkpoint)
        model = ckpt.model
        utils.print_dict(collections.OrderedDict([
            ('input', _format_shape(model.input_shape)),
            ('classes', ', '.join(model.class_names)),
            ('normalize', '%s, %s' % (utils.format_float(model.input_mean),
                                      utils.format_float(model.input_std))),
            ('epoch', ckpt.epoch),
            ('optimizer', '%s (step %d)' % (ckpt.optimizer_state.kind,
                                            ckpt.optimizer_state.step_count)),
            ('config digest', ckpt.config_digest),
        ]))
    else:
        cfg = config.load_config(args.config)
        names = cfg.get('data', 'class_names') or None
        count = args.classes or (len(names) if names else None)
        if not count:
            raise exceptions.CommandError(
                "set [data] class_names or pass --classes")
        if names and len(names) != count:
            names = None
        side = cfg.get('data', 'side')
        model = cfg.model_spec((1, side, side), count, names)
    _print_layers(model)
