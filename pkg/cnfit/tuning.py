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
Sequential model-based hyperparameter search.

A SearchSpace maps configurations onto the unit hypercube; the tuner
evaluates a few quasi-random configurations, then repeatedly fits a GP to
all results and evaluates the candidate with the highest expected
improvement.
"""

import collections
import csv
import logging
import math
import os
import re
import time

import numpy as np
from scipy import special
from scipy.stats import qmc

from cnfit import base
from cnfit import exceptions
from cnfit import gp
from cnfit import utils

OK = 'ok'
FAILED = 'failed'
LOG_FIELDS = ('trial', 'status', 'loss', 'seconds')

CANDIDATES = 2048
REFINE_STARTS = 8
REFINE_PASSES = 16
DUPLICATE_TOLERANCE = 1e-9

DEFAULT_SEARCH_SPACE = """\
conv_layers = int(1,6,1)
conv_kernels = choice(32,64,128,512)
kernel_size = fixed(3)
dense_layers = int(1,6,1)
dense_units = choice(128,256,512,1024)
dropout = linear(0,0.2)
lambda_l1 = linear(0,0.2)
lambda_l2 = linear(0,0.2)
learning_rate = log(1e-5,1e-2)
"""

_SPEC_RE = re.compile(r'^\s*(int|choice|linear|log|fixed)\s*\((.*)\)\s*$')

logger = logging.getLogger(__name__)


def parse_value(token):
    """``'3'`` -> 3, ``'0.5'`` -> 0.5, anything else stays a string."""
    token = token.strip()
    for cast in (int, float):
        try:
            return cast(token)
        except ValueError:
            pass
    return token


def format_value(value):
    if isinstance(value, float):
        return repr(value)
    return str(value)


class Dimension(object):
    free = True

    def __init__(self, name):
        self.name = name

    def _invalid(self, value):
        return exceptions.ConfigError(
            "value %r is outside dimension '%s' (%s)"
            % (value, self.name, self.to_text()), dimension=self.name)

    def __eq__(self, other):
        return (type(self) is type(other) and
                self.to_text() == other.to_text() and
                self.name == other.name)

    def __ne__(self, other):
        return not self.__eq__(other)

    def __repr__(self):
        return '<%s %s = %s>' % (self.__class__.__name__, self.name,
                                 self.to_text())


class _Cells(Dimension):
    """A finite ordered set of values; value ``i`` of ``n`` encodes to the
    midpoint of cell ``i`` of the unit interval."""

    def encode(self, value):
        for index, candidate in enumerate(self.values):
            if candidate == value:
                return (index + 0.5) / len(self.values)
        raise self._invalid(value)

    def decode(self, x):
        n = len(self.values)
        index = min(max(int(math.floor(x * n)), 0), n - 1)
        return self.values[index]


class IntRange(_Cells):

    def __init__(self, name, lo, hi, step=1):
        super(IntRange, self).__init__(name)
        lo, hi, step = int(lo), int(hi), int(step)
        if lo >= hi or step <= 0:
            raise exceptions.ConfigError(
                "int(%d,%d,%d) for '%s' needs lo < hi and step > 0"
                % (lo, hi, step, name), dimension=name)
        self.lo, self.hi, self.step = lo, hi, step
        self.values = list(range(lo, hi + 1, step))

    def to_text(self):
        return 'int(%d,%d,%d)' % (self.lo, self.hi, self.step)


class Choice(_Cells):

    def __init__(self, name, values):
        super(Choice, self).__init__(name)
        self.values = list(values)
        if not self.values:
            raise exceptions.ConfigError(
                "choice for '%s' needs at least one value" % name,
                dimension=name)

    def to_text(self):
        return 'choice(%s)' % ','.join(format_value(v) for v in self.values)


class Continuous(Dimension):
    LINEAR = 'linear'
    LOG = 'log'

    def __init__(self, name, lo, hi, scale=LINEAR):
        super(Continuous, self).__init__(name)
        lo, hi = float(lo), float(hi)
        if scale not in (self.LINEAR, self.LOG):
            raise exceptions.ConfigError(
                "unknown scale '%s' for '%s'" % (scale, name),
                dimension=name)
        if not lo < hi or (scale == self.LOG and lo <= 0):
            raise exceptions.ConfigError(
                "%s(%r,%r) for '%s' needs %slo < hi"
                % (scale, lo, hi, name, '0 < ' if scale == self.LOG else ''),
                dimension=name)
        self.lo, self.hi, self.scale = lo, hi, scale

    def _bounds(self):
        if self.scale == self.LOG:
            return math.log(self.lo), math.log(self.hi)
        return self.lo, self.hi

    def encode(self, value):
        if not self.lo <= value <= self.hi:
            raise self._invalid(value)
        lo, hi = self._bounds()
        v = math.log(value) if self.scale == self.LOG else float(value)
        return (v - lo) / (hi - lo)

    def decode(self, x):
        lo, hi = self._bounds()
        v = lo + min(max(float(x), 0.0), 1.0) * (hi - lo)
        if self.scale == self.LOG:
            v = math.exp(v)
        return min(max(v, self.lo), self.hi)

    def to_text(self):
        return '%s(%r,%r)' % (self.scale, self.lo, self.hi)


class Fixed(Dimension):
    free = False

    def __init__(self, name, value):
        super(Fixed, self).__init__(name)
        self.value = value

    def to_text(self):
        return 'fixed(%s)' % format_value(self.value)


def parse_dimension(name, text):
    match = _SPEC_RE.match(text)
    if not match:
        raise exceptions.ConfigError(
            "cannot parse '%s' for '%s'; expected int(lo,hi,step), "
            "choice(v,...), linear(lo,hi), log(lo,hi) or fixed(v)"
            % (text.strip(), name), dimension=name)
    kind, raw = match.groups()
    args = [parse_value(a) for a in raw.split(',')] if raw.strip() else []
    try:
        if kind == 'int':
            if len(args) not in (2, 3):
                raise TypeError()
            return IntRange(name, *args)
        if kind == 'choice':
            return Choice(name, args)
        if kind == 'fixed':
            if len(args) != 1:
                raise TypeError()
            return Fixed(name, args[0])
        if len(args) != 2:
            raise TypeError()
        return Continuous(name, args[0], args[1], scale=kind)
    except (TypeError, ValueError):
        raise exceptions.ConfigError(
            "wrong arguments in '%s' for '%s'" % (text.strip(), name),
            dimension=name)


class SearchSpace(object):
    """Ordered dimensions; only the free ones appear in encoded points."""

    def __init__(self, dimensions):
        self.dimensions = list(dimensions)
        names = [d.name for d in self.dimensions]
        duplicates = sorted(set(n for n in names if names.count(n) > 1))
        if duplicates:
            raise exceptions.ConfigError(
                "duplicate dimensions: %s" % ', '.join(duplicates))
        self.free = [d for d in self.dimensions if d.free]
        self.fixed = [d for d in self.dimensions if not d.free]

    @classmethod
    def parse(cls, source):
        """Build a space from ``name = spec`` lines or ``(name, spec)``
        pairs."""
        if isinstance(source, str):
            source = source.splitlines()
        items = []
        for line in source:
            if isinstance(line, tuple):
                items.append(line)
                continue
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            name, sep, spec = line.partition('=')
            if not sep:
                raise exceptions.ConfigError(
                    "expected 'name = spec', got '%s'" % line)
            items.append((name.strip(), spec))
        return cls(parse_dimension(name, spec) for name, spec in items)

    def to_text(self):
        return ''.join('%s = %s\n' % (d.name, d.to_text())
                       for d in self.dimensions)

    @property
    def dim(self):
        return len(self.free)

    @property
    def names(self):
        return [d.name for d in self.free]

    def snap(self, points):
        """Move points to the encodings of the configurations they decode
        to."""
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        snapped = np.empty_like(points)
        for j, d in enumerate(self.free):
            snapped[:, j] = [d.encode(d.decode(x)) for x in points[:, j]]
        return snapped


def encode_config(config, space):
    """Point in [0,1]^d for a configuration dict."""
    point = []
    for d in space.free:
        if d.name not in config:
            raise exceptions.ConfigError(
                "configuration lacks dimension '%s'" % d.name,
                dimension=d.name)
        point.append(d.encode(config[d.name]))
    return np.array(point, dtype=np.float64)


def decode_config(point, space):
    point = np.asarray(point, dtype=np.float64).ravel()
    if point.size != space.dim:
        raise exceptions.ShapeError(
            "point has %d coordinates, space has %d free dimensions"
            % (point.size, space.dim))
    config = collections.OrderedDict()
    values = iter(point)
    for d in space.dimensions:
        config[d.name] = d.decode(next(values)) if d.free else d.value
    return config


def expected_improvement(mean, variance, f_best):
    """Closed-form EI for minimization; negative variances count as 0."""
    mean = np.asarray(mean, dtype=np.float64)
    sigma = np.sqrt(np.maximum(np.asarray(variance, dtype=np.float64), 0.0))
    safe = np.where(sigma < 1e-12, 1.0, sigma)
    gamma = (f_best - mean) / safe
    cdf = 0.5 * special.erfc(-gamma / math.sqrt(2.0))
    pdf = np.exp(-0.5 * gamma * gamma) / math.sqrt(2.0 * math.pi)
    ei = np.where(sigma < 1e-12, 0.0,
                  np.maximum(sigma * (gamma * cdf + pdf), 0.0))
    return float(ei) if ei.ndim == 0 else ei


def _halton(d, rng):
    try:
        return qmc.Halton(d, scramble=True, rng=rng)
    except TypeError:
        # scipy releases before the rng keyword
        return qmc.Halton(d, scramble=True, seed=rng)


def initial_points(space, count, seed):
    """Scrambled Halton points, snapped to valid configurations."""
    sampler = _halton(space.dim, np.random.default_rng(seed))
    return space.snap(sampler.random(count))


def propose_next(model, space, rng, f_best=None, candidates=CANDIDATES,
                 refine_starts=REFINE_STARTS, refine_passes=REFINE_PASSES):
    """The snapped point maximizing EI under ``model``.

    Candidates come from a scrambled Halton sequence; the best few are then
    refined by coordinate steps that halve after each unproductive pass.
    Points already observed in ``model.X`` are skipped.
    """
    if f_best is None:
        f_best = float(np.min(model.y))
    # standardized units: same ranking, and offsets added to y cancel
    f_best = (f_best - model.y_mean) / model.y_scale

    def score(points):
        mean, var = model.predict(points, standardized=True)
        return np.atleast_1d(expected_improvement(mean, var, f_best))

    points = space.snap(_halton(space.dim, rng).random(candidates))
    scores = score(points)
    seen_points = [points]
    seen_scores = [scores]

    for start in np.argsort(-scores, kind='stable')[:refine_starts]:
        best, best_score = points[start], scores[start]
        step = 0.1
        for _ in range(refine_passes):
            moves = []
            for j in range(space.dim):
                for direction in (1.0, -1.0):
                    move = best.copy()
                    move[j] = min(max(move[j] + direction * step, 0.0), 1.0)
                    moves.append(move)
            moves = space.snap(np.array(moves))
            move_scores = score(moves)
            seen_points.append(moves)
            seen_scores.append(move_scores)
            top = int(np.argmax(move_scores))
            if move_scores[top] > best_score:
                best, best_score = moves[top], move_scores[top]
            else:
                step /= 2.0

    points = np.concatenate(seen_points)
    scores = np.concatenate(seen_scores)
    for index in np.argsort(-scores, kind='stable'):
        gaps = np.abs(model.X - points[index]).max(axis=1)
        if not np.any(gaps <= DUPLICATE_TOLERANCE):
            return points[index]
    logger.warning("every candidate duplicates an observed point")
    return points[int(np.argmax(scores))]


class TrialRecord(base.Record):
    FIELDS = ('trial', 'status', 'loss', 'seconds', 'point', 'config')


def write_trial_header(path, space):
    with open(path, 'w', newline='', encoding='utf-8') as f:
        csv.writer(f, lineterminator='\n').writerow(
            list(LOG_FIELDS) + space.names)


def append_trial(path, record, space):
    with open(path, 'a', newline='', encoding='utf-8') as f:
        csv.writer(f, lineterminator='\n').writerow(
            [record.trial, record.status, repr(record.loss),
             utils.format_float(record.seconds)] +
            [format_value(record.config[name]) for name in space.names])
        f.flush()


def read_trial_log(path, space):
    """TrialRecords from a trial log written for ``space``."""
    records = []
    with open(path, newline='', encoding='utf-8') as f:
        reader = csv.reader(f)
        header = next(reader, None)
        expected = list(LOG_FIELDS) + space.names
        if header != expected:
            raise exceptions.DataError(
                "%s: header %s does not match the search space %s"
                % (path, header, expected))
        for line, row in enumerate(reader, 2):
            if len(row) != len(expected):
                raise exceptions.DataError(
                    "%s:%d: expected %d columns" % (path, line,
                                                    len(expected)),
                    line=line)
            config = decode_config(np.full(space.dim, 0.5), space)
            for name, raw in zip(space.names, row[len(LOG_FIELDS):]):
                config[name] = parse_value(raw)
            try:
                records.append(TrialRecord(
                    trial=int(row[0]), status=row[1], loss=float(row[2]),
                    seconds=float(row[3]),
                    point=tuple(encode_config(config, space)),
                    config=dict(config)))
            except ValueError as e:
                raise exceptions.DataError("%s:%d: %s" % (path, line, e),
                                           line=line)
    return records


def best_so_far(records):
    """Running minimum of the trial losses."""
    trace = []
    best = float('inf')
    for record in records:
        best = min(best, record.loss)
        trace.append(best)
    return trace


def default_init_count(space):
    return max(5, space.dim + 1)


class Tuner(utils.HookableMixin):
    """Runs the search loop.

    Hooks: ``trial_end(record)`` once a trial's loss is final.
    """

    def __init__(self, objective, space, budget=None, init=None, seed=0,
                 kind=gp.MATERN52, log_path=None):
        if space.dim < 1:
            raise exceptions.ConfigError(
                "the search space has no free dimensions")
        self.init = default_init_count(space) if init is None else init
        if budget is None:
            budget = max(10 * space.dim, self.init)
        self.budget = budget
        if not self.budget >= self.init >= 2:
            raise exceptions.ConfigError(
                "tuning needs budget >= init >= 2 (budget %d, init %d)"
                % (self.budget, self.init))
        self.objective = objective
        self.space = space
        self.seed = int(seed)
        self.kind = kind
        self.log_path = log_path
        self.records = []
        self._pending = []

    def _evaluate(self, trial, point):
        config = decode_config(point, self.space)
        started = time.time()
        try:
            loss = float(self.objective(dict(config)))
            if not math.isfinite(loss):
                raise exceptions.NumericalError(
                    "objective returned %r" % loss)
            status = OK
        except Exception as e:
            logger.warning("trial %d failed: %s", trial, e)
            logger.debug(e, exc_info=1)
            loss, status = None, FAILED
        return TrialRecord(trial=trial, status=status, loss=loss,
                           seconds=time.time() - started,
                           point=tuple(encode_config(config, self.space)),
                           config=dict(config))

    def _penalty(self):
        return max(r.loss for r in self.records + self._pending
                   if r.status == OK) + 1.0

    def _finish(self, record):
        self.records.append(record)
        if self.log_path:
            append_trial(self.log_path, record, self.space)
        logger.info("trial %d: %s loss %.6g (%.1fs)", record.trial,
                    record.status, record.loss, record.seconds)
        self.run_hooks('trial_end', record)

    def _record(self, record):
        if record.status == FAILED and not any(
                r.status == OK for r in self.records):
            # no penalty is known until something succeeds
            self._pending.append(record)
            return
        if record.status == OK and self._pending:
            self._pending.append(record)
            penalty = self._penalty()
            for waiting in self._pending[:-1]:
                waiting.loss = penalty
                self._finish(waiting)
            self._pending = []
        elif record.status == FAILED:
            record.loss = self._penalty()
        self._finish(record)

    def _propose(self, trial):
        X = np.array([r.point for r in self.records])
        y = np.array([r.loss for r in self.records])
        model = gp.gp_fit(X, y, kind=self.kind,
                          rng=np.random.default_rng((self.seed, trial, 0)))
        return propose_next(model, self.space,
                            np.random.default_rng((self.seed, trial, 1)))

    def run(self, resume=False):
        if resume and self.log_path and os.path.exists(self.log_path):
            self.records = read_trial_log(self.log_path, self.space)
            logger.info("resuming after %d logged trials", len(self.records))
        elif self.log_path:
            write_trial_header(self.log_path, self.space)

        starts = initial_points(self.space, self.init, self.seed)
        for trial in range(len(self.records) + 1, self.budget + 1):
            if trial <= self.init:
                point = starts[trial - 1]
            else:
                point = self._propose(trial)
            self._record(self._evaluate(trial, point))
            if trial == self.init and self._pending:
                raise exceptions.TuningError(
                    "all %d initial trials failed" % self.init)

        best = None
        for record in self.records:
            if record.status == OK and (best is None or
                                        record.loss < best.loss):
                best = record
        if best is None:
            raise exceptions.TuningError("no trial succeeded")
        return best, list(self.records)


def tune(objective, space, budget=None, init=None, seed=0, kind=gp.MATERN52,
         log_path=None, resume=False, hooks=None):
    """Minimize ``objective(config)`` over ``space``.

    Returns the best TrialRecord and all TrialRecords in trial order.
    Failed evaluations are logged with a penalty loss one above the worst
    successful loss.
    """
    tuner = Tuner(objective, space, budget, init, seed, kind, log_path)
    for hook_type, func in (hooks or {}).items():
        tuner.add_hook(hook_type, func)
    return tuner.run(resume=resume)
