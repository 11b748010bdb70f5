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
Cross-entropy losses and weight penalties.
"""

import numpy as np

from cnfit import base
from cnfit import exceptions
from cnfit import layers

# Probabilities are clamped to [PROB_CLAMP, 1 - PROB_CLAMP] before logs.
PROB_CLAMP = 1e-12


class RegConfig(object):
    """Weights of the L1 (smoothed) and L2 penalties."""

    def __init__(self, lambda_l1=0.0, lambda_l2=0.0, epsilon_l1=1e-8):
        for name, value in (('lambda_l1', lambda_l1),
                            ('lambda_l2', lambda_l2),
                            ('epsilon_l1', epsilon_l1)):
            if value < 0:
                raise exceptions.ConfigError(
                    "%s must be >= 0, got %r" % (name, value), field=name)
        self.lambda_l1 = float(lambda_l1)
        self.lambda_l2 = float(lambda_l2)
        self.epsilon_l1 = float(epsilon_l1)

    @property
    def active(self):
        return self.lambda_l1 > 0 or self.lambda_l2 > 0


class LossValue(base.Record):
    FIELDS = ('data_loss', 'reg_loss', 'total')


def _clamp(p):
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def _check_labels(labels, class_count):
    labels = np.asarray(labels)
    bad = np.nonzero((labels < 0) | (labels >= class_count))[0]
    if bad.size:
        row = int(bad[0])
        raise exceptions.DataError(
            "label %s at row %d is outside [0, %d)"
            % (labels[row], row, class_count), row=row)
    return labels.astype(np.int64)


def binary_cross_entropy(predicted, actual):
    p = layers.as_tensor(predicted).ravel()
    y = layers.as_tensor(actual).ravel()
    if p.shape != y.shape or p.size == 0:
        raise exceptions.ShapeError(
            "predictions %s and labels %s differ in length"
            % (p.shape, y.shape))
    p = _clamp(p)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


def categorical_cross_entropy(predicted, actual):
    """Mean negative log-probability of the true class."""
    p = np.atleast_2d(layers.as_tensor(predicted))
    batch, class_count = p.shape
    labels = _check_labels(np.atleast_1d(actual), class_count)
    if labels.shape != (batch,):
        raise exceptions.ShapeError(
            "%d prediction rows for %d labels" % (batch, labels.size))
    sums = p.sum(axis=1)
    off = np.nonzero(np.abs(sums - 1.0) > 1e-6)[0]
    if off.size:
        raise exceptions.DataError(
            "prediction row %d sums to %r, not 1" % (off[0], sums[off[0]]),
            row=int(off[0]))
    picked = _clamp(p[np.arange(batch), labels])
    return float(-np.mean(np.log(picked)))


def softmax_cross_entropy(logits, actual):
    """Categorical cross-entropy of softmax(logits) and its gradient with
    respect to the logits, ``(softmax(logits) - onehot) / batch``."""
    z = np.atleast_2d(layers.as_tensor(logits))
    batch, class_count = z.shape
    labels = _check_labels(np.atleast_1d(actual), class_count)
    if labels.shape != (batch,):
        raise exceptions.ShapeError(
            "%d logit rows for %d labels" % (batch, labels.size))
    probs = layers.softmax(z)
    rows = np.arange(batch)
    loss = float(-np.mean(np.log(_clamp(probs[rows, labels]))))
    grad = probs.copy()
    grad[rows, labels] -= 1.0
    return loss, grad / batch


def softmax_ce_gradient(logits, actual):
    return softmax_cross_entropy(logits, actual)[1]


def _tensors(weights):
    if isinstance(weights, np.ndarray):
        return [weights.astype(np.float64)]
    weights = list(weights)
    if weights and all(np.ndim(w) == 0 for w in weights):
        return [layers.as_tensor(weights)]
    return [layers.as_tensor(w) for w in weights]


def l2_penalty(weights):
    return float(sum(np.sum(w * w) for w in _tensors(weights)))


def l1_penalty(weights):
    return float(sum(np.sum(np.abs(w)) for w in _tensors(weights)))


def l1_smoothed(weights, epsilon):
    """Differentiable L1 approximation sum(sqrt(w**2 + epsilon))."""
    if epsilon < 0:
        raise exceptions.ConfigError("epsilon must be >= 0")
    return float(sum(np.sum(np.sqrt(w * w + epsilon))
                     for w in _tensors(weights)))


def penalty_gradient(weight, cfg):
    """Gradient of lambda_l1 * l1_smoothed + lambda_l2 * l2 for one tensor.
    """
    w = layers.as_tensor(weight)
    grad = 2.0 * cfg.lambda_l2 * w
    if cfg.lambda_l1 > 0:
        if cfg.epsilon_l1 > 0:
            grad = grad + cfg.lambda_l1 * w / np.sqrt(w * w + cfg.epsilon_l1)
        else:
            grad = grad + cfg.lambda_l1 * np.sign(w)
    return grad


def regularized_loss(data_loss, weights, cfg):
    """data_loss + lambda_l1 * l1_smoothed(w) + lambda_l2 * l2(w)."""
    weights = _tensors(weights) if cfg.active else []
    reg = 0.0
    if cfg.lambda_l1 > 0:
        reg += cfg.lambda_l1 * l1_smoothed(weights, cfg.epsilon_l1)
    if cfg.lambda_l2 > 0:
        reg += cfg.lambda_l2 * l2_penalty(weights)
    data_loss = float(data_loss)
    return LossValue(data_loss=data_loss, reg_loss=reg,
                     total=data_loss + reg)
