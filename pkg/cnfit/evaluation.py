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
Confusion matrices and the metrics derived from them.
"""

import csv
import io
import logging

import numpy as np
import prettytable

from cnfit import base
from cnfit import exceptions

# Returned by sensitivity and class_confusion for a class with no samples.
UNDEFINED = None

PASS = 'pass'
FAIL = 'fail'

REPORT_FIELDS = ('precision', 'recall', 'f1-score', 'support')

logger = logging.getLogger(__name__)


class ConfusionMatrix(object):
    """``counts[i][j]``: samples of true class i predicted as class j."""

    def __init__(self, counts, class_names=None):
        counts = np.asarray(counts)
        if (counts.ndim != 2 or counts.shape[0] != counts.shape[1] or
                counts.shape[0] < 1):
            raise exceptions.ShapeError(
                "confusion matrix must be square, got shape %s"
                % (counts.shape,))
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise exceptions.DataError(
                "confusion counts must be non-negative integers")
        self.counts = counts.astype(np.int64)
        k = self.counts.shape[0]
        self.class_names = (list(class_names) if class_names is not None
                            else [str(i) for i in range(k)])
        if len(self.class_names) != k:
            raise exceptions.DataError(
                "%d class names for %d classes" % (len(self.class_names), k))

    @classmethod
    def from_rows(cls, rows, class_names=None):
        return cls([list(r) for r in rows], class_names)

    @property
    def class_count(self):
        return self.counts.shape[0]

    @property
    def total(self):
        return int(self.counts.sum())

    def supports(self):
        return self.counts.sum(axis=1)

    def normalized(self):
        """Row-normalized matrix; rows of empty classes are NaN."""
        rows = self.supports().astype(np.float64)
        with np.errstate(invalid='ignore', divide='ignore'):
            return self.counts / rows[:, np.newaxis]

    def to_csv(self):
        out = io.StringIO()
        writer = csv.writer(out, lineterminator='\n')
        writer.writerow(['true\\predicted'] + self.class_names)
        for name, row in zip(self.class_names, self.counts):
            writer.writerow([name] + [int(c) for c in row])
        return out.getvalue()

    def write_csv(self, path):
        with open(path, 'w', newline='', encoding='utf-8') as f:
            f.write(self.to_csv())

    def __eq__(self, other):
        return (isinstance(other, ConfusionMatrix) and
                np.array_equal(self.counts, other.counts) and
                self.class_names == other.class_names)

    def __ne__(self, other):
        return not self.__eq__(other)


def confusion_matrix(y_true, y_pred, class_count, class_names=None):
    y_true = np.asarray(y_true).ravel()
    y_pred = np.asarray(y_pred).ravel()
    if y_true.shape != y_pred.shape:
        raise exceptions.ShapeError(
            "%d true labels and %d predictions" % (y_true.size, y_pred.size))
    for name, labels in (('true', y_true), ('predicted', y_pred)):
        bad = np.nonzero((labels < 0) | (labels >= class_count))[0]
        if bad.size:
            index = int(bad[0])
            raise exceptions.DataError(
                "%s label %s at index %d is outside [0, %d)"
                % (name, labels[index], index, class_count), index=index)
    counts = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(counts, (y_true.astype(np.intp), y_pred.astype(np.intp)), 1)
    return ConfusionMatrix(counts, class_names)


def accuracy(cm):
    if cm.total == 0:
        raise exceptions.DataError("accuracy of an empty confusion matrix")
    return float(np.trace(cm.counts)) / cm.total


class SkewResult(base.Record):
    FIELDS = ('decision', 'accuracy', 'prior', 'epsilon', 'margin')


def skew_check(cm, epsilon=0.0):
    """Pass when accuracy >= majority-class prior + epsilon."""
    if epsilon < 0:
        raise exceptions.ConfigError("epsilon must be >= 0")
    acc = accuracy(cm)
    prior = float(cm.supports().max()) / cm.total
    margin = acc - prior - epsilon
    return SkewResult(decision=PASS if margin >= 0 else FAIL, accuracy=acc,
                      prior=prior, epsilon=float(epsilon), margin=margin)


def _check_class(cm, k):
    if not 0 <= k < cm.class_count:
        raise exceptions.DataError(
            "class %d is outside [0, %d)" % (k, cm.class_count))


def class_confusion(cm, k1, k2):
    """Fraction of true-``k1`` samples predicted as ``k2``, or UNDEFINED
    when class ``k1`` has no samples."""
    _check_class(cm, k1)
    _check_class(cm, k2)
    support = int(cm.counts[k1].sum())
    if support == 0:
        return UNDEFINED
    return float(cm.counts[k1, k2]) / support


def sensitivity(cm, k):
    return class_confusion(cm, k, k)


class ClassMetrics(base.Record):
    FIELDS = ('name', 'precision', 'recall', 'f1', 'support')


class ClassReport(object):
    """Per-class precision, recall and F1 plus the aggregate rows."""

    def __init__(self, classes, accuracy, macro, weighted, total,
                 empty_columns=()):
        self.classes = classes
        self.accuracy = accuracy
        self.macro = macro
        self.weighted = weighted
        self.total = total
        self.empty_columns = list(empty_columns)


def _f1(precision, recall):
    if precision + recall == 0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def classification_report(cm):
    total = cm.total
    if total == 0:
        raise exceptions.DataError("report of an empty confusion matrix")
    predicted = cm.counts.sum(axis=0)
    classes = []
    empty = []
    for k, name in enumerate(cm.class_names):
        support = int(cm.counts[k].sum())
        if predicted[k] == 0:
            empty.append(k)
            precision = 0.0
        else:
            precision = float(cm.counts[k, k]) / int(predicted[k])
        recall = sensitivity(cm, k) or 0.0
        classes.append(ClassMetrics(name=name, precision=precision,
                                    recall=recall,
                                    f1=_f1(precision, recall),
                                    support=support))
    if empty:
        logger.warning("no predictions for class(es) %s; their precision "
                       "is reported as 0",
                       ', '.join(cm.class_names[k] for k in empty))

    def average(weights, name):
        weights = np.asarray(weights, dtype=np.float64)
        weights = weights / weights.sum()
        return ClassMetrics(
            name=name,
            precision=float(sum(w * c.precision
                                for w, c in zip(weights, classes))),
            recall=float(sum(w * c.recall for w, c in zip(weights, classes))),
            f1=float(sum(w * c.f1 for w, c in zip(weights, classes))),
            support=total)

    return ClassReport(
        classes, accuracy(cm),
        average([1.0] * len(classes), 'macro avg'),
        average([c.support for c in classes], 'weighted avg'),
        total, empty)


def render_report(report, digits=2):
    """The report as a text table: one row per class, then the accuracy,
    macro average and weighted average rows."""
    fmt = '%.*f'
    pt = prettytable.PrettyTable([''] + list(REPORT_FIELDS))
    pt.align = 'r'
    pt.align[''] = 'l'
    for c in report.classes + [None, report.macro, report.weighted]:
        if c is None:
            pt.add_row(['accuracy', '', '', fmt % (digits, report.accuracy),
                        report.total])
            continue
        pt.add_row([c.name, fmt % (digits, c.precision),
                    fmt % (digits, c.recall), fmt % (digits, c.f1),
                    c.support])
    return pt.get_string()


def report_csv(report):
    out = io.StringIO()
    writer = csv.writer(out, lineterminator='\n')
    writer.writerow(['class'] + list(REPORT_FIELDS))
    for c in report.classes + [report.macro, report.weighted]:
        writer.writerow([c.name, repr(c.precision), repr(c.recall),
                         repr(c.f1), c.support])
    writer.writerow(['accuracy', '', '', repr(report.accuracy),
                     report.total])
    return out.getvalue()
