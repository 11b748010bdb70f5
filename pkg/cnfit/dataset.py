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

"""
Datasets on disk: manifests of PGM files, sample loading, normalization,
augmentation, train/validation splitting and the synthetic shape set.
"""

import collections
import csv
import logging
import math
import os

from concurrent import futures
import numpy as np
import simplejson as json

from cnfit import base
from cnfit import exceptions
from cnfit import images

MANIFEST_FIELDS = ('path', 'label')
SYNTHETIC_CLASSES = ('disk', 'square', 'cross', 'stripes')
STD_FLOOR = 1e-8

logger = logging.getLogger(__name__)


class Sample(object):
    """One labelled ``(1, H, W)`` image."""

    def __init__(self, image, label, source_id):
        self.image = image
        self.label = int(label)
        self.source_id = source_id

    def replace(self, **kwargs):
        values = dict(image=self.image, label=self.label,
                      source_id=self.source_id)
        values.update(kwargs)
        return Sample(**values)

    def __repr__(self):
        return "<Sample %s label=%d shape=%s>" % (
            self.source_id, self.label, np.shape(self.image))


class DatasetManifest(object):
    """``(relative path, label)`` entries below ``root``."""

    def __init__(self, entries, class_names, root='.'):
        self.entries = [(path, int(label)) for path, label in entries]
        self.class_names = list(class_names)
        self.root = root
        for row, (path, label) in enumerate(self.entries):
            if not 0 <= label < len(self.class_names):
                raise exceptions.DataError(
                    "label %d of '%s' outside [0, %d)"
                    % (label, path, len(self.class_names)), row=row)

    def __len__(self):
        return len(self.entries)

    @property
    def class_count(self):
        return len(self.class_names)

    def full_path(self, path):
        return os.path.join(self.root, *path.split('/'))

    def class_counts(self):
        counts = collections.Counter(label for _, label in self.entries)
        return [counts.get(k, 0) for k in range(self.class_count)]


def read_manifest(path, class_names=None):
    """Read a ``path,label`` CSV; entry paths are relative to its folder.

    Without ``class_names`` the classes are named by their index.
    """
    entries = []
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if tuple(header or ()) != MANIFEST_FIELDS:
            raise exceptions.DataError(
                "%s: expected header 'path,label', got %s" % (path, header),
                line=1)
        for line, row in enumerate(reader, 2):
            if not row:
                continue
            if len(row) != 2:
                raise exceptions.DataError(
                    "%s:%d: expected 2 columns, got %d"
                    % (path, line, len(row)), line=line)
            try:
                label = int(row[1])
            except ValueError:
                raise exceptions.DataError(
                    "%s:%d: label '%s' is not an integer"
                    % (path, line, row[1]), line=line)
            entries.append((row[0], label))
    if class_names is None:
        top = max([label for _, label in entries] or [-1])
        class_names = [str(k) for k in range(top + 1)]
    return DatasetManifest(entries, class_names,
                           os.path.dirname(os.path.abspath(path)))


def write_manifest(manifest, path):
    """Write ``manifest`` with paths rewritten relative to ``path``."""
    folder = os.path.dirname(os.path.abspath(path))
    with open(path, 'w', newline='', encoding='utf-8') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(MANIFEST_FIELDS)
        for entry, label in manifest.entries:
            rel = os.path.relpath(os.path.abspath(manifest.full_path(entry)),
                                  folder)
            writer.writerow([rel.replace(os.sep, '/'), label])


def _load_one(manifest, entry, side):
    path, label = entry
    image = images.load_pgm(manifest.full_path(path))
    if side is not None and image.shape[1:] != (side, side):
        image = images.resize_bilinear(image, side, side)
    return Sample(image, label, path)


def load_samples(manifest, side=None, threads=0):
    """Load every manifest entry, resized to ``side x side`` when given.

    Files may load in parallel; the result follows manifest order.
    """
    if threads > 0:
        with futures.ThreadPoolExecutor(max_workers=threads) as pool:
            samples = list(pool.map(
                lambda e: _load_one(manifest, e, side), manifest.entries))
    else:
        samples = [_load_one(manifest, e, side) for e in manifest.entries]
    logger.debug("loaded %d samples from %s", len(samples), manifest.root)
    return samples


def stack_samples(samples):
    """``(inputs, labels)`` arrays for training and evaluation."""
    if not samples:
        return np.zeros((0, 1, 1, 1)), np.zeros(0, dtype=np.int64)
    shapes = set(np.shape(s.image) for s in samples)
    if len(shapes) != 1:
        raise exceptions.ShapeError(
            "samples have differing shapes %s" % sorted(shapes))
    inputs = np.stack([s.image for s in samples]).astype(np.float64)
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return inputs, labels


class NormalizationStats(base.Record):
    FIELDS = ('mean', 'std')


def normalize_dataset(samples, stats=None):
    """Standardize with the global pixel mean and std of ``samples``.

    Pass the training ``stats`` to normalize validation or test samples
    with the same transform.
    """
    if stats is None:
        if not samples:
            raise exceptions.DataError("cannot normalize an empty dataset")
        pixels = np.concatenate([np.ravel(s.image) for s in samples])
        stats = NormalizationStats(
            mean=float(pixels.mean()),
            std=max(float(pixels.std()), STD_FLOOR))
    normalized = [s.replace(image=(s.image - stats.mean) / stats.std)
                  for s in samples]
    return normalized, stats


class AugmentConfig(object):
    """Which transforms ``augment`` applies and their parameter ranges."""

    def __init__(self, hflip=False, vflip=False, crop=False,
                 crop_range=(0.8, 1.0), stretch=False,
                 scale_range=(0.9, 1.1), shear=False,
                 shear_range=(-10.0, 10.0), multiplier=0):
        self.hflip = bool(hflip)
        self.vflip = bool(vflip)
        self.crop = bool(crop)
        self.crop_range = self._range('crop_range', crop_range, 0.0, 1.0,
                                      open_low=True)
        self.stretch = bool(stretch)
        self.scale_range = self._range('scale_range', scale_range, 0.5, 2.0)
        self.shear = bool(shear)
        self.shear_range = self._range('shear_range', shear_range, -45.0,
                                       45.0)
        if multiplier < 0:
            raise exceptions.ConfigError("multiplier must be >= 0",
                                         field='multiplier')
        self.multiplier = int(multiplier)

    @staticmethod
    def _range(name, value, low, high, open_low=False):
        lo, hi = (float(v) for v in value)
        if lo > hi or hi > high or (lo <= low if open_low else lo < low):
            raise exceptions.ConfigError(
                "%s (%g, %g) must lie within %s%g, %g]"
                % (name, lo, hi, '(' if open_low else '[', low, high),
                field=name)
        return lo, hi

    @property
    def enabled(self):
        return self.multiplier > 0 and (self.hflip or self.vflip or
                                        self.crop or self.stretch or
                                        self.shear)


def augment(sample, cfg, rng):
    """``cfg.multiplier`` transformed copies of ``sample``.

    Each enabled flip fires with probability 1/2; crop, stretch and shear
    draw their parameters uniformly from the configured ranges.
    """
    copies = []
    for k in range(cfg.multiplier):
        image = sample.image
        if cfg.hflip and rng.random() < 0.5:
            image = images.hflip(image)
        if cfg.vflip and rng.random() < 0.5:
            image = images.vflip(image)
        if cfg.crop:
            _, height, width = np.shape(image)
            fraction = rng.uniform(*cfg.crop_range)
            h = max(1, int(round(height * fraction)))
            w = max(1, int(round(width * fraction)))
            top = int(rng.integers(0, height - h + 1))
            left = int(rng.integers(0, width - w + 1))
            image = images.crop_resize(image, top, left, h, w)
        if cfg.stretch or cfg.shear:
            scale_x = scale_y = 1.0
            shear = 0.0
            if cfg.stretch:
                scale_x = rng.uniform(*cfg.scale_range)
                scale_y = rng.uniform(*cfg.scale_range)
            if cfg.shear:
                shear = rng.uniform(*cfg.shear_range)
            image = images.affine_warp(image, scale_x, scale_y, shear)
        copies.append(sample.replace(
            image=image, source_id='%s#aug%d' % (sample.source_id, k + 1)))
    return copies


def _train_count(n, fraction):
    count = int(math.ceil(fraction * n - 1e-9))
    return min(max(count, 1), n - 1)


def split_dataset(samples, train_fraction, rng, stratified=True):
    """Partition ``samples`` into (train, validation).

    Per-class train counts round up; both outputs keep input order.
    """
    if not 0.0 < train_fraction < 1.0:
        raise exceptions.ConfigError(
            "train_fraction must be in (0, 1), got %r" % train_fraction,
            field='train_fraction')
    n = len(samples)
    if stratified:
        by_class = collections.OrderedDict()
        for index, sample in enumerate(samples):
            by_class.setdefault(sample.label, []).append(index)
        chosen = []
        for label in sorted(by_class):
            members = by_class[label]
            if len(members) < 2:
                raise exceptions.DataError(
                    "class %d has %d sample(s); stratified splitting needs "
                    "at least 2" % (label, len(members)), label=label)
            order = rng.permutation(len(members))
            take = _train_count(len(members), train_fraction)
            chosen.extend(members[i] for i in order[:take])
    else:
        if n < 2:
            raise exceptions.DataError(
                "cannot split %d sample(s) into two sets" % n)
        chosen = rng.permutation(n)[:_train_count(n, train_fraction)]
    in_train = np.zeros(n, dtype=bool)
    in_train[np.asarray(chosen, dtype=np.intp)] = True
    train = [s for s, t in zip(samples, in_train) if t]
    val = [s for s, t in zip(samples, in_train) if not t]
    return train, val


def _draw_shape(label, side, rng):
    centre = (side - 1) / 2.0 + rng.uniform(-0.12, 0.12, size=2) * side
    radius = side * rng.uniform(0.22, 0.36)
    angle = rng.uniform(-math.pi, math.pi)
    yy, xx = np.meshgrid(np.arange(side) - centre[0],
                         np.arange(side) - centre[1], indexing='ij')
    cos, sin = math.cos(angle), math.sin(angle)
    u = cos * xx + sin * yy
    v = -sin * xx + cos * yy
    name = SYNTHETIC_CLASSES[label]
    if name == 'disk':
        mask = xx ** 2 + yy ** 2 <= radius ** 2
    elif name == 'square':
        edge = np.maximum(np.abs(u), np.abs(v))
        mask = (edge <= radius) & (edge >= radius * 0.7)
    elif name == 'cross':
        # arms along the diagonals, jittered around 45 degrees
        tilt = math.pi / 4 + rng.uniform(-0.3, 0.3)
        c, s = math.cos(tilt), math.sin(tilt)
        a = c * xx + s * yy
        b = -s * xx + c * yy
        width = max(1.0, radius * 0.2)
        mask = (((np.abs(a) <= width) | (np.abs(b) <= width)) &
                (np.maximum(np.abs(a), np.abs(b)) <= radius * 1.2))
    else:
        period = rng.uniform(4.0, 8.0)
        tilt = rng.uniform(-0.2, 0.2)
        rows = -math.sin(tilt) * xx + math.cos(tilt) * yy
        mask = np.sin(2 * math.pi * rows / period) > 0
    background = rng.uniform(0.0, 0.2)
    foreground = rng.uniform(0.7, 1.0)
    image = np.where(mask, foreground, background)
    image = image + rng.normal(0.0, 0.05, size=image.shape)
    return np.clip(image, 0.0, 1.0)[np.newaxis]


def gen_synthetic(out_dir, n_per_class, side, seed):
    """Draw ``n_per_class`` images of each synthetic class into
    ``out_dir`` and write ``out_dir/manifest.csv``."""
    if n_per_class < 1:
        raise exceptions.ConfigError("n_per_class must be >= 1",
                                     field='n_per_class')
    if side < 16:
        raise exceptions.ConfigError("side must be >= 16", field='side')
    rng = np.random.default_rng(seed)
    for name in SYNTHETIC_CLASSES:
        folder = os.path.join(out_dir, name)
        if not os.path.isdir(folder):
            os.makedirs(folder)
    entries = []
    for index in range(n_per_class):
        for label, name in enumerate(SYNTHETIC_CLASSES):
            rel = '%s/%s_%05d.pgm' % (name, name, index)
            images.write_pgm(os.path.join(out_dir, name,
                                          '%s_%05d.pgm' % (name, index)),
                             _draw_shape(label, side, rng))
            entries.append((rel, label))
    manifest = DatasetManifest(entries, SYNTHETIC_CLASSES, out_dir)
    write_manifest(manifest, os.path.join(out_dir, 'manifest.csv'))
    logger.info("wrote %d synthetic images to %s", len(entries), out_dir)
    return manifest


class PreparedDataset(object):

    def __init__(self, train_manifest, val_manifest, stats, counts):
        self.train_manifest = train_manifest
        self.val_manifest = val_manifest
        self.stats = stats
        self.counts = counts


def prepare(manifest, out_dir, side=32, train_fraction=0.8,
            augment_cfg=None, seed=0, stratified=True, threads=0):
    """Split, augment and measure a dataset.

    Writes ``train.csv``, ``val.csv``, augmented PGMs under
    ``augmented/`` and ``stats.json`` (training pixel mean and std, side,
    class names and per-class counts) into ``out_dir``.
    """
    augment_cfg = augment_cfg or AugmentConfig()
    rng = np.random.default_rng(seed)
    samples = load_samples(manifest, side=side, threads=threads)
    train, val = split_dataset(samples, train_fraction, rng, stratified)

    if not os.path.isdir(out_dir):
        os.makedirs(out_dir)

    def relative(path):
        return os.path.relpath(os.path.abspath(path),
                               os.path.abspath(out_dir)).replace(os.sep, '/')

    entries = [(relative(manifest.full_path(s.source_id)), s.label)
               for s in train]
    if augment_cfg.enabled:
        aug_dir = os.path.join(out_dir, 'augmented')
        if not os.path.isdir(aug_dir):
            os.makedirs(aug_dir)
        extra = []
        for sample in train:
            stem = os.path.splitext(sample.source_id.replace('/', '_'))[0]
            for copy in augment(sample, augment_cfg, rng):
                suffix = copy.source_id.rsplit('#', 1)[1]
                name = '%s_%s.pgm' % (stem, suffix)
                images.write_pgm(os.path.join(aug_dir, name), copy.image,
                                 maxval=65535)
                entries.append(('augmented/' + name, copy.label))
                extra.append(copy)
        train = train + extra

    train_manifest = DatasetManifest(entries, manifest.class_names, out_dir)
    val_manifest = DatasetManifest(
        [(relative(manifest.full_path(s.source_id)), s.label) for s in val],
        manifest.class_names, out_dir)
    write_manifest(train_manifest, os.path.join(out_dir, 'train.csv'))
    write_manifest(val_manifest, os.path.join(out_dir, 'val.csv'))

    _, stats = normalize_dataset(train)
    counts = {
        'train': collections.Counter(s.label for s in train),
        'val': collections.Counter(s.label for s in val),
    }
    summary = {
        'mean': stats.mean,
        'std': stats.std,
        'side': side,
        'class_names': list(manifest.class_names),
        'counts': dict((split, [c.get(k, 0)
                                for k in range(manifest.class_count)])
                       for split, c in counts.items()),
    }
    with open(os.path.join(out_dir, 'stats.json'), 'w',
              encoding='utf-8') as f:
        json.dump(summary, f, sort_keys=True, indent=2)
    logger.info("prepared %d training and %d validation samples in %s",
                len(train), len(val), out_dir)
    return PreparedDataset(
        read_manifest(os.path.join(out_dir, 'train.csv'),
                      manifest.class_names),
        read_manifest(os.path.join(out_dir, 'val.csv'),
                      manifest.class_names),
        stats, summary['counts'])


def read_stats(path):
    with open(path, encoding='utf-8') as f:
        try:
            data = json.load(f)
        except ValueError as e:
            raise exceptions.DataError("%s: %s" % (path, e))
    return data
